#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streamer/kernels.hpp"
#include "streamer/pmem_pool.hpp"
#include "streamer/topology.hpp"

namespace streamer {

class WorkerTeam;

/// Numa: plain arrays bound to a node (memory expansion, "numa#k").
/// Pmem: arrays inside a persistent pool (direct access, "pmem#k").
enum class PlacementMode { Numa, Pmem };

std::string_view placement_mode_name(PlacementMode mode) noexcept;
PlacementMode parse_placement_mode(std::string_view text);

struct PlacementSpec {
  PlacementMode mode = PlacementMode::Numa;
  int mem_node = 0;
  /// Pmem only. Defaults to AnonymousNumaBacking{mem_node} when unset.
  std::optional<BackingSpec> backing;
};

/// "numa#1", "pmem#2"
std::string placement_tag(const PlacementSpec& spec);

/// Throws Errc::UnknownNode / Errc::InvalidArgument when the spec does not fit
/// the topology.
void validate_placement(const PlacementSpec& spec, const TopologyMap& topo);

inline constexpr const char* kPoolLayout = "array";

struct AllocateOptions {
  /// 0 selects default_pool_size().
  std::uint64_t pool_size = 0;
  /// Continue unbound when strict NUMA binding is unavailable.
  bool allow_unbound = false;
  /// Remove a file-backed pool when the triple is released.
  bool delete_file_on_release = false;
};

/// max(2 * array bytes, 1 MiB)
std::uint64_t default_pool_size(std::size_t n, std::size_t offset) noexcept;

/// Smallest pool that holds three arrays of n + offset doubles plus the root
/// record, given the fixed header and the 1/16 undo log.
std::uint64_t minimum_pool_size(std::size_t n, std::size_t offset) noexcept;

/// Materializes and initializes a VectorTriple. The first `workers` members of
/// the team perform the first touch. Pmem placements create the pool (or open
/// it when a matching pool file already exists) and initialize inside a
/// transaction.
VectorTriple allocate_triple(const PlacementSpec& spec, const TopologyMap& topo, std::size_t n,
                             std::size_t offset, WorkerTeam& team, std::size_t workers,
                             const AllocateOptions& options = {});

/// Idempotent.
void release_triple(VectorTriple& v) noexcept;

/// Node holding each sampled page of `data` (at most max_samples pages,
/// evenly spaced). Negative entries are kernel error codes.
std::vector<int> page_nodes(std::span<const double> data, std::size_t max_samples = 256);

/// Pool behind a Pmem triple, or nullptr.
pmem::Pool* triple_pool(const VectorTriple& v) noexcept;

}  // namespace streamer
