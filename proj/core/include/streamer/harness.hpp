#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streamer/kernels.hpp"
#include "streamer/placement.hpp"
#include "streamer/topology.hpp"

namespace streamer {

/// One cell family of the benchmark matrix: a placement plus the thread
/// counts to sweep over it.
struct RunConfig {
  std::string label;
  std::uint64_t array_size = 100'000'000;
  std::uint64_t offset = 0;
  std::size_t ntimes = kDefaultNtimes;
  double scalar = kDefaultScalar;
  std::vector<KernelKind> kernels{kAllKernels.begin(), kAllKernels.end()};
  /// Empty: 1..(CPUs of compute_nodes).
  std::vector<std::size_t> threads;
  AffinityPolicy affinity;
  PlacementSpec placement;
  /// Empty: every node with CPUs.
  std::vector<int> compute_nodes;
  /// Pmem only; 0 selects default_pool_size().
  std::uint64_t pool_size = 0;
};

/// Parses the run-config format:
///
///   [label]
///   mode = pmem
///   mem_node = 1
///   ...
///
/// Keys: mode, mem_node, compute_nodes, affinity, threads, array_size,
/// ntimes, scalar, kernels, pool_path, pool_size. Unknown keys, duplicate
/// labels and malformed values throw ConfigError naming label and key.
std::vector<RunConfig> parse_run_configs(std::string_view text);
std::vector<RunConfig> load_run_configs(const std::filesystem::path& path);
std::string format_run_configs(std::span<const RunConfig> configs);

/// Topology-dependent checks: nodes exist, compute nodes have CPUs, thread
/// counts fit. Throws ConfigError.
void validate_config(const RunConfig& config, const TopologyMap& topo);

std::vector<int> effective_compute_nodes(const RunConfig& config, const TopologyMap& topo);
std::vector<std::size_t> effective_threads(const RunConfig& config, const TopologyMap& topo);

inline constexpr std::array<std::string_view, 6> kPresetNames{
    "class1a", "class1b", "class1c-close", "class1c-spread", "class2a", "class2b"};

struct PresetExpansion {
  std::vector<RunConfig> configs;
  std::vector<std::string> notices;
};

/// The full five-group matrix, restricted to what the topology supports.
PresetExpansion expand_class_presets(const TopologyMap& topo);
/// One group by name; "class1c" selects both affinity variants and "all"
/// every group. Throws ConfigError on unknown names.
PresetExpansion expand_preset(const TopologyMap& topo, std::string_view name);

struct RunMetadata {
  std::string host;
  std::string timestamp;
  std::string topology;  // descriptor text
  std::vector<std::string> notices;
  bool unpinned = false;
};

RunMetadata make_metadata(const TopologyMap& topo);

struct MatrixRun {
  std::vector<RunConfig> configs;
  RunMetadata metadata;
};

struct CellResult {
  RunConfig config;
  std::size_t threads = 0;
  std::uint64_t n = 0;
  std::vector<KernelResult> results;
  bool unpinned = false;
  bool unbound = false;
  bool failed = false;
  /// The failure came from the config not fitting the topology.
  bool config_error = false;
  std::string error;
};

struct MatrixOptions {
  bool fail_fast = false;
  bool allow_unbound = false;
  bool delete_pool_files = false;
  /// Human-readable progress and warnings.
  std::function<void(const std::string&)> notice;
  /// Sees the arrays after validation, before release.
  std::function<void(const CellResult&, const VectorTriple&)> inspect;
};

struct MatrixResult {
  std::vector<CellResult> cells;
  RunMetadata metadata;

  std::size_t failures() const noexcept;
  bool all_validated() const noexcept;
};

/// Runs every config and thread count in order: allocate + first-touch init,
/// one untimed warm-up pass, ntimes timed cycles of the enabled kernels in
/// Copy, Scale, Add, Triad order, validation, release.
MatrixResult run_matrix(const MatrixRun& run, const TopologyMap& topo,
                        const MatrixOptions& options = {});

}  // namespace streamer
