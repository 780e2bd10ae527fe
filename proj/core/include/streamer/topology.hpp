#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace streamer {

enum class NodeKind { OnNode, CxlAttached };

struct MemNode {
  int id = 0;
  std::vector<int> cpus;  // ordered; empty for CPU-less memory
  std::uint64_t mem_bytes = 0;
  NodeKind kind = NodeKind::OnNode;

  friend bool operator==(const MemNode&, const MemNode&) = default;
};

struct TopologyMap {
  std::vector<MemNode> nodes;  // ascending id
  /// Relative access cost, nodes.size() square; empty when unknown.
  std::vector<std::vector<int>> distances;

  const MemNode* find(int id) const noexcept;
  std::size_t cpu_count() const noexcept;
  bool has_cpu(int cpu) const noexcept;
  std::vector<int> nodes_with_cpus() const;
  /// Copy containing only the listed nodes (distances dropped).
  TopologyMap restricted_to(std::span<const int> node_ids) const;

  friend bool operator==(const TopologyMap&, const TopologyMap&) = default;
};

/// Throws Errc::InvalidArgument when ids repeat, a CPU appears twice, or a
/// CXL node lists CPUs. Sorts nodes by id.
void normalize_topology(TopologyMap& topo);

struct DetectOptions {
  /// Append SMT siblings after all physical cores of each node.
  bool include_smt = false;
  std::filesystem::path sysfs_root = "/sys/devices/system";
  /// Drop CPUs outside this process's affinity mask.
  bool respect_process_affinity = true;
};

/// Host NUMA layout from sysfs; a single node 0 holding every CPU when the
/// host exposes no NUMA information. CPU-less nodes come back CxlAttached.
TopologyMap detect_topology(const DetectOptions& options = {});

/// Descriptor format, one node per line:
///   node <id> kind=<onnode|cxl> cpus=<comma list|none> mem_gb=<number>
/// '#' starts a comment. mem_gb is decimal (10^9 bytes).
TopologyMap parse_topology(std::string_view text);
TopologyMap load_topology(const std::filesystem::path& path);
std::string format_topology(const TopologyMap& topo);

/// Descriptor named by $STREAMER_TOPOLOGY when set, otherwise detection.
TopologyMap resolve_topology(const DetectOptions& options = {});

inline constexpr const char* kTopologyEnv = "STREAMER_TOPOLOGY";

enum class AffinityKind { Close, Spread, Explicit };

struct AffinityPolicy {
  AffinityKind kind = AffinityKind::Close;
  std::vector<int> explicit_cpus;

  static AffinityPolicy close() { return {AffinityKind::Close, {}}; }
  static AffinityPolicy spread() { return {AffinityKind::Spread, {}}; }
  static AffinityPolicy explicit_list(std::vector<int> cpus) {
    return {AffinityKind::Explicit, std::move(cpus)};
  }

  friend bool operator==(const AffinityPolicy&, const AffinityPolicy&) = default;
};

std::string_view affinity_name(AffinityKind kind) noexcept;
/// "close", "spread", or "explicit:<cpu>,<cpu>,..."
AffinityPolicy parse_affinity(std::string_view text);
std::string format_affinity(const AffinityPolicy& policy);

/// CPUs for `nthreads` workers.
///   Close:  node CPU lists concatenated in ascending node id.
///   Spread: round-robin over nodes with CPUs, each node's CPUs in order.
///   Explicit: the given list.
/// Result is truncated to nthreads. Throws Errc::Oversubscription when
/// nthreads exceeds the available CPUs.
std::vector<int> assign_affinity(const TopologyMap& topo, const AffinityPolicy& policy,
                                 std::size_t nthreads);

/// Restricts the calling thread to `cpu`. Returns false (with a reason)
/// when the platform refuses.
bool pin_current_thread(int cpu, std::string* error = nullptr);

struct PinStatus {
  bool pinned = false;
  std::string warning;
};

/// Throws Errc::UnknownCpu when cpu is not in the topology; platform refusal
/// is reported through PinStatus.
PinStatus pin_worker(const TopologyMap& topo, int cpu);

std::vector<int> current_thread_affinity();

/// Parses "0-3,8,10-11" style lists.
std::vector<int> parse_cpu_list(std::string_view text);

}  // namespace streamer
