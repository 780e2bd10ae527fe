#include "streamer/selftest.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>

#include "streamer/error.hpp"
#include "streamer/kernels.hpp"
#include "streamer/topology.hpp"
#include "streamer/worker_team.hpp"

namespace streamer {

namespace fs = std::filesystem;

bool SelftestReport::passed() const noexcept {
  return std::all_of(verdicts.begin(), verdicts.end(),
                     [](const PropertyVerdict& v) { return v.passed; });
}

namespace {

PropertyVerdict check_validation(std::size_t n) {
  PropertyVerdict v{"kernel-validation", true, {}};
  for (std::size_t threads : {std::size_t{1}, std::size_t{2}}) {
    WorkerTeam team(threads);
    for (std::size_t cycles = 1; cycles <= 5; ++cycles) {
      for (double scalar : {0.5, 1.0, 3.0}) {
        auto triple = VectorTriple::heap(n);
        init_arrays(triple, team, threads);
        for (std::size_t k = 0; k < cycles; ++k) {
          for (auto kind : kAllKernels) run_kernel(kind, triple, scalar, team, threads);
        }
        if (!validate(triple, cycles, scalar)) {
          v.passed = false;
          v.detail = "threads=" + std::to_string(threads) + " cycles=" + std::to_string(cycles) +
                     " scalar=" + std::to_string(scalar);
          return v;
        }
      }
    }
  }
  return v;
}

PropertyVerdict check_determinism(std::size_t n) {
  PropertyVerdict v{"kernel-determinism", true, {}};
  std::vector<std::vector<double>> finals;
  for (std::size_t threads : {std::size_t{1}, std::size_t{3}}) {
    WorkerTeam team(threads);
    auto triple = VectorTriple::heap(n);
    init_arrays(triple, team, threads);
    for (int k = 0; k < 3; ++k) {
      for (auto kind : kAllKernels) run_kernel(kind, triple, kDefaultScalar, team, threads);
    }
    std::vector<double> all(triple.a().begin(), triple.a().end());
    all.insert(all.end(), triple.b().begin(), triple.b().end());
    all.insert(all.end(), triple.c().begin(), triple.c().end());
    finals.push_back(std::move(all));
  }
  if (std::memcmp(finals[0].data(), finals[1].data(), finals[0].size() * sizeof(double)) != 0) {
    v.passed = false;
    v.detail = "1-thread and 3-thread results differ";
  }
  return v;
}

PropertyVerdict check_traffic() {
  PropertyVerdict v{"traffic-accounting", true, {}};
  for (auto kind : kAllKernels) {
    for (std::uint64_t n = 0; n <= 64; ++n) {
      // Per element: reads of the source operands plus one store.
      const std::uint64_t reads = kind == KernelKind::Add || kind == KernelKind::Triad ? 2 : 1;
      const std::uint64_t counted = (reads + 1) * 8 * n;
      if (bytes_moved(kind, n) != counted) {
        v.passed = false;
        v.detail = std::string(kernel_name(kind)) + " n=" + std::to_string(n);
        return v;
      }
    }
  }
  return v;
}

std::vector<char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct PoolImage {
  std::uint64_t heap_head = 0;
  std::uint64_t root = 0;
  std::vector<char> heap;  // [heap_start, heap_head)
};

PoolImage image_of(const fs::path& path) {
  PoolImage img;
  {
    auto pool = pmem::Pool::open(FileBacking{path}, "selftest");
    img.heap_head = pool.header().heap_head;
    img.root = pool.root_offset();
  }
  const auto raw = read_all(path);
  const auto start = pmem::kHeaderSize + pmem::log_capacity_for(pmem::kMinPoolSize);
  img.heap.assign(raw.begin() + static_cast<std::ptrdiff_t>(start),
                  raw.begin() + static_cast<std::ptrdiff_t>(img.heap_head));
  return img;
}

bool same(const PoolImage& x, const PoolImage& y) {
  return x.heap_head == y.heap_head && x.root == y.root && x.heap == y.heap;
}

PropertyVerdict check_tx_atomicity(const fs::path& dir, pmem::testing::Fault fault) {
  PropertyVerdict v{"tx-atomicity", true, {}};
  const fs::path pool_path = dir / "atomicity.pool";
  fs::remove(pool_path);
  std::vector<fs::path> crash_copies;
  {
    auto pool = pmem::Pool::create(FileBacking{pool_path}, "selftest", pmem::kMinPoolSize);
    const auto a = pool.alloc(4096);
    const auto b = pool.alloc(2048);
    auto abytes = pool.bytes(a);
    auto bbytes = pool.bytes(b);
    for (std::size_t i = 0; i < abytes.size(); ++i) abytes[i] = std::byte(i * 7 + 1);
    for (std::size_t i = 0; i < bbytes.size(); ++i) bbytes[i] = std::byte(i * 13 + 5);
    pool.persist(a, 0, a.length);
    pool.persist(b, 0, b.length);
    pool.set_root(a.offset);
    fs::copy_file(pool_path, dir / "pre.pool", fs::copy_options::overwrite_existing);

    pmem::testing::set_fault(fault);
    pool.on_durable_step([&] {
      auto copy = dir / ("crash-" + std::to_string(crash_copies.size()) + ".pool");
      fs::copy_file(pool_path, copy, fs::copy_options::overwrite_existing);
      crash_copies.push_back(copy);
    });
    {
      auto tx = pool.begin();
      for (std::uint64_t i = 0; i < 8; ++i) {
        tx.add_range(a, i * 512, 512);
        std::memset(abytes.data() + i * 512, 0xA0 + static_cast<int>(i), 512);
      }
      tx.add_range(b, 0, 1024);
      std::memset(bbytes.data(), 0x5C, 1024);
      const auto c = pool.alloc(256);
      tx.add_range(c, 0, c.length);
      std::memset(pool.bytes(c).data(), 0x77, c.length);
      pool.set_root(c.offset);
      tx.commit();
    }
    pool.on_durable_step(nullptr);
    pmem::testing::set_fault(pmem::testing::Fault::None);
  }
  fs::copy_file(pool_path, dir / "post.pool", fs::copy_options::overwrite_existing);

  const auto pre = image_of(dir / "pre.pool");
  const auto post = image_of(dir / "post.pool");
  if (crash_copies.size() < 20) {
    v.passed = false;
    v.detail = "only " + std::to_string(crash_copies.size()) + " crash points";
  }
  for (std::size_t i = 0; i < crash_copies.size() && v.passed; ++i) {
    const auto img = image_of(crash_copies[i]);
    if (!same(img, pre) && !same(img, post)) {
      v.passed = false;
      v.detail = "crash point " + std::to_string(i) + " recovered a mixed state";
    }
  }
  if (v.passed) v.detail = std::to_string(crash_copies.size()) + " crash points";
  for (const auto& p : crash_copies) fs::remove(p);
  fs::remove(dir / "pre.pool");
  fs::remove(dir / "post.pool");
  fs::remove(pool_path);
  return v;
}

PropertyVerdict check_layout_binding(const fs::path& dir) {
  PropertyVerdict v{"pool-layout-binding", true, {}};
  const fs::path path = dir / "layout.pool";
  fs::remove(path);
  {
    auto pool = pmem::Pool::create(FileBacking{path}, "array", pmem::kMinPoolSize);
    auto tx = pool.begin();
    const auto h = pool.alloc(64);
    tx.add_range(h, 0, 64);
    std::memset(pool.bytes(h).data(), 0x42, 64);
    pool.set_root(h.offset);
    tx.commit();
  }
  try {
    (void)pmem::Pool::open(FileBacking{path}, "wrong");
    v.passed = false;
    v.detail = "wrong layout opened";
  } catch (const Error& e) {
    if (e.code() != Errc::LayoutMismatch) {
      v.passed = false;
      v.detail = e.what();
    }
  }
  if (v.passed) {
    auto pool = pmem::Pool::open(FileBacking{path}, "array");
    const auto bytes = pool.bytes(pool.root_offset(), 64);
    if (std::any_of(bytes.begin(), bytes.end(), [](std::byte x) { return x != std::byte{0x42}; })) {
      v.passed = false;
      v.detail = "committed contents lost on reopen";
    }
  }
  fs::remove(path);
  return v;
}

TopologyMap random_topology(std::mt19937& rng) {
  std::uniform_int_distribution<int> node_count(1, 4), cpu_count(1, 32);
  TopologyMap topo;
  int next_cpu = 0;
  const int nodes = node_count(rng);
  for (int id = 0; id < nodes; ++id) {
    MemNode n;
    n.id = id;
    const int cpus = cpu_count(rng);
    for (int c = 0; c < cpus; ++c) n.cpus.push_back(next_cpu++);
    n.mem_bytes = 16'000'000'000ULL;
    topo.nodes.push_back(std::move(n));
  }
  return topo;
}

std::vector<PropertyVerdict> check_affinity(std::uint32_t seed) {
  PropertyVerdict prefix{"affinity-close-prefix", true, {}};
  PropertyVerdict balance{"affinity-spread-balance", true, {}};
  PropertyVerdict unique{"affinity-duplicate-free", true, {}};
  PropertyVerdict converge{"affinity-full-occupancy", true, {}};
  std::mt19937 rng(seed);
  for (int trial = 0; trial < 50; ++trial) {
    const auto topo = random_topology(rng);
    const std::size_t total = topo.cpu_count();
    const auto& first = topo.nodes.front().cpus;
    for (std::size_t t = 1; t <= total; ++t) {
      const auto close = assign_affinity(topo, AffinityPolicy::close(), t);
      const auto spread = assign_affinity(topo, AffinityPolicy::spread(), t);
      if (t <= first.size() && !std::equal(close.begin(), close.end(), first.begin())) {
        prefix.passed = false;
      }
      std::map<int, std::size_t> per_node;
      for (const auto& n : topo.nodes) per_node[n.id] = 0;
      for (int cpu : spread) {
        for (const auto& n : topo.nodes) {
          if (std::find(n.cpus.begin(), n.cpus.end(), cpu) != n.cpus.end()) ++per_node[n.id];
        }
      }
      // Nodes that still have spare CPUs must be within one of each other.
      std::size_t lo = SIZE_MAX, hi = 0;
      for (const auto& n : topo.nodes) {
        const auto count = per_node[n.id];
        hi = std::max(hi, count);
        if (count < n.cpus.size()) lo = std::min(lo, count);
      }
      if (lo != SIZE_MAX && hi > lo + 1) balance.passed = false;
      for (const auto* list : {&close, &spread}) {
        if (list->size() != t || std::set<int>(list->begin(), list->end()).size() != t) {
          unique.passed = false;
        }
      }
      if (t == total && std::set<int>(close.begin(), close.end()) !=
                            std::set<int>(spread.begin(), spread.end())) {
        converge.passed = false;
      }
    }
  }
  return {prefix, balance, unique, converge};
}

}  // namespace

SelftestReport run_selftest(const SelftestOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  SelftestReport report;

  fs::path dir = options.scratch_dir;
  bool own_dir = false;
  if (dir.empty()) {
    dir = fs::temp_directory_path() / ("streamer-selftest-" + std::to_string(::getpid()));
    own_dir = true;
  }
  fs::create_directories(dir);

  auto guarded = [&](const std::string& name, auto&& fn) {
    try {
      report.verdicts.push_back(fn());
    } catch (const std::exception& e) {
      report.verdicts.push_back({name, false, e.what()});
    }
  };
  guarded("kernel-validation", [&] { return check_validation(options.n); });
  guarded("kernel-determinism", [&] { return check_determinism(options.n); });
  guarded("traffic-accounting", [] { return check_traffic(); });
  guarded("tx-atomicity", [&] { return check_tx_atomicity(dir, options.fault); });
  guarded("pool-layout-binding", [&] { return check_layout_binding(dir); });
  try {
    for (auto& v : check_affinity(options.seed)) report.verdicts.push_back(std::move(v));
  } catch (const std::exception& e) {
    report.verdicts.push_back({"affinity", false, e.what()});
  }
  pmem::testing::set_fault(pmem::testing::Fault::None);

  if (own_dir) {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace streamer
