#include "streamer/placement.hpp"

#include <numaif.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <system_error>

#include "numa_region.hpp"
#include "streamer/error.hpp"
#include "streamer/worker_team.hpp"
#include "text_util.hpp"

namespace streamer {

std::string_view placement_mode_name(PlacementMode mode) noexcept {
  return mode == PlacementMode::Numa ? "numa" : "pmem";
}

PlacementMode parse_placement_mode(std::string_view text) {
  const auto t = detail::lower(detail::trim(text));
  if (t == "numa") return PlacementMode::Numa;
  if (t == "pmem") return PlacementMode::Pmem;
  throw Error(Errc::InvalidArgument, "mode must be numa or pmem, got '" + std::string(text) + "'");
}

std::string placement_tag(const PlacementSpec& spec) {
  return std::string(placement_mode_name(spec.mode)) + "#" + std::to_string(spec.mem_node);
}

void validate_placement(const PlacementSpec& spec, const TopologyMap& topo) {
  if (!topo.find(spec.mem_node)) {
    throw Error(Errc::UnknownNode, "memory node " + std::to_string(spec.mem_node) +
                                       " not in topology");
  }
  if (spec.mode == PlacementMode::Numa && spec.backing) {
    throw Error(Errc::InvalidArgument, "numa placement takes no pool backing");
  }
  if (spec.backing) {
    if (const auto* file = std::get_if<FileBacking>(&*spec.backing)) {
      auto parent = file->path.parent_path();
      if (parent.empty()) parent = ".";
      std::error_code ec;
      if (!std::filesystem::is_directory(parent, ec)) {
        throw Error(Errc::InvalidArgument,
                    "pool directory " + parent.string() + " does not exist");
      }
    } else if (!topo.find(std::get<AnonymousNumaBacking>(*spec.backing).node)) {
      throw Error(Errc::UnknownNode, "pool backing node not in topology");
    }
  }
}

namespace {

constexpr std::uint64_t kRootRecordBytes = 32;

std::uint64_t array_bytes(std::size_t n, std::size_t offset) noexcept {
  return static_cast<std::uint64_t>(n + offset) * kElementBytes;
}

std::uint64_t aligned16(std::uint64_t v) noexcept { return (v + 15) / 16 * 16; }

class NumaStorage final : public TripleStorage {
 public:
  NumaStorage(std::size_t bytes, int node, bool allow_unbound)
      : a(bytes, node, allow_unbound), b(bytes, node, allow_unbound), c(bytes, node, allow_unbound) {}
  std::string_view backend() const noexcept override { return "numa"; }
  bool bound() const noexcept { return a.bound() && b.bound() && c.bound(); }

  detail::NumaRegion a, b, c;
};

class PoolStorage final : public TripleStorage {
 public:
  PoolStorage(pmem::Pool pool, bool delete_file) : pool(std::move(pool)), delete_file(delete_file) {}
  ~PoolStorage() override {
    const auto backing = pool.backing();
    pool.close();
    if (delete_file) {
      if (const auto* file = std::get_if<FileBacking>(&backing)) {
        std::error_code ec;
        std::filesystem::remove(file->path, ec);
      }
    }
  }
  std::string_view backend() const noexcept override { return "pmem"; }

  pmem::Pool pool;
  bool delete_file;
};

/// Root record: element count and the offsets of a, b, c.
struct RootRecord {
  std::uint64_t elements = 0;
  std::uint64_t a = 0, b = 0, c = 0;
};

std::optional<RootRecord> read_root(const pmem::Pool& pool) {
  if (pool.root_offset() == 0) return std::nullopt;
  try {
    auto raw = pool.bytes(pool.root_offset(), kRootRecordBytes);
    RootRecord r;
    std::memcpy(&r, raw.data(), sizeof(r));
    return r;
  } catch (const Error&) {
    return std::nullopt;
  }
}

VectorTriple allocate_numa(const PlacementSpec& spec, std::size_t n, std::size_t offset,
                           WorkerTeam& team, std::size_t workers, const AllocateOptions& options) {
  auto storage = std::make_unique<NumaStorage>(array_bytes(n, offset), spec.mem_node,
                                               options.allow_unbound);
  auto* s = storage.get();
  const bool bound = s->bound();
  VectorTriple v(static_cast<double*>(s->a.data()), static_cast<double*>(s->b.data()),
                 static_cast<double*>(s->c.data()), n, offset, std::move(storage));
  v.set_bound(bound);
  init_arrays(v, team, workers);
  return v;
}

VectorTriple allocate_pmem(const PlacementSpec& spec, std::size_t n, std::size_t offset,
                           WorkerTeam& team, std::size_t workers, const AllocateOptions& options) {
  const BackingSpec backing = spec.backing.value_or(AnonymousNumaBacking{spec.mem_node});
  const std::uint64_t bytes = array_bytes(n, offset);
  const std::uint64_t pool_size =
      options.pool_size ? options.pool_size : default_pool_size(n, offset);
  if (pool_size < minimum_pool_size(n, offset)) {
    throw Error(Errc::TooSmall, "too small: pool of " + std::to_string(pool_size) +
                                    " bytes cannot hold three arrays of " +
                                    std::to_string(bytes) + " bytes (need " +
                                    std::to_string(minimum_pool_size(n, offset)) + ")");
  }

  pmem::Pool pool;
  bool reopened = false;
  try {
    pmem::PoolCreateOptions create_options;
    create_options.allow_unbound = options.allow_unbound;
    pool = pmem::Pool::create(backing, kPoolLayout, pool_size, create_options);
  } catch (const Error& e) {
    if (e.code() != Errc::AlreadyExists) throw;
    pool = pmem::Pool::open(backing, kPoolLayout);
    reopened = true;
  }

  // Guard the allocation size so a zero-element triple still gets handles.
  const std::uint64_t alloc_bytes = std::max<std::uint64_t>(bytes, kElementBytes);
  RootRecord root;
  bool initialized = false;
  if (reopened) {
    if (auto existing = read_root(pool); existing && existing->elements == n + offset) {
      root = *existing;
      // Re-initializing existing arrays transactionally would need an undo
      // log as large as the data, so it runs untransacted and is persisted.
      const pmem::ObjectHandle ha{root.a, alloc_bytes}, hb{root.b, alloc_bytes},
          hc{root.c, alloc_bytes};
      VectorTriple probe(pool.as<double>(ha).data(), pool.as<double>(hb).data(),
                         pool.as<double>(hc).data(), n, offset, nullptr);
      init_arrays(probe, team, workers);
      for (const auto& h : {ha, hb, hc}) pool.persist(h, 0, h.length);
      initialized = true;
    }
  }
  if (!initialized) {
    auto tx = pool.begin();
    const auto ha = pool.alloc(alloc_bytes);
    const auto hb = pool.alloc(alloc_bytes);
    const auto hc = pool.alloc(alloc_bytes);
    const auto hroot = pool.alloc(kRootRecordBytes);
    root = {n + offset, ha.offset, hb.offset, hc.offset};
    tx.add_range(ha, 0, ha.length);
    tx.add_range(hb, 0, hb.length);
    tx.add_range(hc, 0, hc.length);
    tx.add_range(hroot, 0, hroot.length);
    std::memcpy(pool.bytes(hroot).data(), &root, sizeof(root));
    pool.set_root(hroot.offset);
    VectorTriple view(pool.as<double>(ha).data(), pool.as<double>(hb).data(),
                      pool.as<double>(hc).data(), n, offset, nullptr);
    init_arrays(view, team, workers);
    tx.commit();
  }

  const bool bound = pool.bound();
  auto storage = std::make_unique<PoolStorage>(std::move(pool), options.delete_file_on_release);
  auto& p = storage->pool;
  auto* a = p.as<double>({root.a, alloc_bytes}).data();
  auto* b = p.as<double>({root.b, alloc_bytes}).data();
  auto* c = p.as<double>({root.c, alloc_bytes}).data();
  VectorTriple v(a, b, c, n, offset, std::move(storage));
  v.set_bound(bound);
  return v;
}

}  // namespace

std::uint64_t default_pool_size(std::size_t n, std::size_t offset) noexcept {
  return std::max<std::uint64_t>(2 * 3 * array_bytes(n, offset), pmem::kMinPoolSize);
}

std::uint64_t minimum_pool_size(std::size_t n, std::size_t offset) noexcept {
  const std::uint64_t heap =
      3 * aligned16(std::max<std::uint64_t>(array_bytes(n, offset), kElementBytes)) +
      kRootRecordBytes;
  // Smallest page multiple whose heap (size - header - log) covers `heap`.
  std::uint64_t size = std::max<std::uint64_t>(
      pmem::kMinPoolSize, ((heap + pmem::kHeaderSize) * 16 / 15 + 4095) / 4096 * 4096);
  while (size - pmem::kHeaderSize - pmem::log_capacity_for(size) < heap) size += 4096;
  return size;
}

VectorTriple allocate_triple(const PlacementSpec& spec, const TopologyMap& topo, std::size_t n,
                             std::size_t offset, WorkerTeam& team, std::size_t workers,
                             const AllocateOptions& options) {
  validate_placement(spec, topo);
  if (spec.mode == PlacementMode::Numa) return allocate_numa(spec, n, offset, team, workers, options);
  return allocate_pmem(spec, n, offset, team, workers, options);
}

void release_triple(VectorTriple& v) noexcept { v.release(); }

std::vector<int> page_nodes(std::span<const double> data, std::size_t max_samples) {
  std::vector<int> out;
  if (data.empty() || max_samples == 0) return out;
  const std::size_t page = detail::page_size();
  const auto begin = reinterpret_cast<std::uintptr_t>(data.data()) / page * page;
  const auto end = reinterpret_cast<std::uintptr_t>(data.data() + data.size());
  const std::size_t pages = (end - begin + page - 1) / page;
  const std::size_t samples = std::min(pages, max_samples);
  std::vector<void*> addrs(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t p = samples == 1 ? 0 : i * (pages - 1) / (samples - 1);
    addrs[i] = reinterpret_cast<void*>(begin + p * page);
  }
  out.assign(samples, -1);
  if (::move_pages(0, static_cast<unsigned long>(samples), addrs.data(), nullptr, out.data(), 0) != 0) {
    std::fill(out.begin(), out.end(), -1);
  }
  return out;
}

pmem::Pool* triple_pool(const VectorTriple& v) noexcept {
  if (auto* s = dynamic_cast<PoolStorage*>(v.storage())) return &s->pool;
  return nullptr;
}

}  // namespace streamer
