#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "oracles.hpp"
#include "streamer/error.hpp"
#include "streamer/topology.hpp"

using namespace streamer;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

/// sysfs tree for two 10-core sockets with SMT (siblings cpu+20) and a
/// CPU-less memory node.
void fake_sysfs(const fs::path& root) {
  write(root / "node/node0/cpulist", "0-9,20-29\n");
  write(root / "node/node1/cpulist", "10-19,30-39\n");
  write(root / "node/node2/cpulist", "\n");
  write(root / "node/node0/meminfo", "Node 0 MemTotal:       67108864 kB\n");
  write(root / "node/node1/meminfo", "Node 1 MemTotal:       67108864 kB\n");
  write(root / "node/node2/meminfo", "Node 2 MemTotal:       16777216 kB\n");
  write(root / "node/node0/distance", "10 21 24\n");
  write(root / "node/node1/distance", "21 10 24\n");
  write(root / "node/node2/distance", "24 24 10\n");
  write(root / "node/possible", "0-2\n");
  for (int c = 0; c < 20; ++c) {
    const std::string pair = std::to_string(c) + "," + std::to_string(c + 20);
    write(root / ("cpu/cpu" + std::to_string(c)) / "topology/thread_siblings_list", pair);
    write(root / ("cpu/cpu" + std::to_string(c + 20)) / "topology/thread_siblings_list", pair);
  }
}

std::vector<int> range(int from, int to) {
  std::vector<int> out;
  for (int c = from; c < to; ++c) out.push_back(c);
  return out;
}

TopologyMap two_by_ten() {
  TopologyMap t;
  t.nodes.push_back({0, range(0, 10), 64'000'000'000, NodeKind::OnNode});
  t.nodes.push_back({1, range(10, 20), 64'000'000'000, NodeKind::OnNode});
  return t;
}

}  // namespace

TEST(DetectTopology, TwoSocketsAndCxlNode) {
  oracle::ScratchDir dir;
  fake_sysfs(dir.path());
  DetectOptions options;
  options.sysfs_root = dir.path();
  options.respect_process_affinity = false;
  const auto topo = detect_topology(options);

  ASSERT_EQ(topo.nodes.size(), 3u);
  EXPECT_EQ(topo.nodes[0].cpus, range(0, 10));
  EXPECT_EQ(topo.nodes[1].cpus, range(10, 20));
  EXPECT_TRUE(topo.nodes[2].cpus.empty());
  EXPECT_EQ(topo.nodes[0].kind, NodeKind::OnNode);
  EXPECT_EQ(topo.nodes[2].kind, NodeKind::CxlAttached);
  EXPECT_EQ(topo.nodes[2].mem_bytes, 16777216ull * 1024);
  ASSERT_EQ(topo.distances.size(), 3u);
  EXPECT_EQ(topo.distances[0][2], 24);
}

TEST(DetectTopology, SmtSiblingsAppendedOnRequest) {
  oracle::ScratchDir dir;
  fake_sysfs(dir.path());
  DetectOptions options;
  options.sysfs_root = dir.path();
  options.respect_process_affinity = false;
  options.include_smt = true;
  const auto topo = detect_topology(options);
  auto want = range(0, 10);
  const auto siblings = range(20, 30);
  want.insert(want.end(), siblings.begin(), siblings.end());
  EXPECT_EQ(topo.nodes[0].cpus, want);
}

TEST(DetectTopology, NoNumaInfoMeansOneNode) {
  oracle::ScratchDir dir;
  DetectOptions options;
  options.sysfs_root = dir.path();
  const auto topo = detect_topology(options);
  ASSERT_EQ(topo.nodes.size(), 1u);
  EXPECT_EQ(topo.nodes[0].id, 0);
  EXPECT_FALSE(topo.nodes[0].cpus.empty());
}

TEST(DetectTopology, HostHasAtLeastOneCpu) {
  const auto topo = detect_topology();
  ASSERT_FALSE(topo.nodes.empty());
  EXPECT_GE(topo.cpu_count(), 1u);
}

TEST(Descriptor, RoundTrip) {
  const std::string text =
      "# setup\n"
      "node 0 kind=onnode cpus=0-9 mem_gb=64\n"
      "node 1 kind=onnode cpus=10,11,12 mem_gb=64\n"
      "node 2 kind=cxl cpus=none mem_gb=16\n";
  const auto topo = parse_topology(text);
  ASSERT_EQ(topo.nodes.size(), 3u);
  EXPECT_EQ(topo.nodes[0].cpus, range(0, 10));
  EXPECT_EQ(topo.nodes[1].cpus, (std::vector<int>{10, 11, 12}));
  EXPECT_EQ(topo.nodes[2].kind, NodeKind::CxlAttached);
  EXPECT_EQ(topo.nodes[2].mem_bytes, 16'000'000'000u);
  EXPECT_EQ(parse_topology(format_topology(topo)), topo);
}

TEST(Descriptor, Errors) {
  EXPECT_THROW(parse_topology("node 0 kind=cxl cpus=1 mem_gb=1\n"), Error);
  EXPECT_THROW(parse_topology("node 0 kind=onnode cpus=1 mem_gb=1\nnode 1 kind=onnode cpus=1 mem_gb=1\n"),
               Error);
  EXPECT_THROW(parse_topology("node 0 kind=onnode mem_gb=1\n"), Error);
  EXPECT_THROW(parse_topology("socket 0\n"), Error);
  EXPECT_THROW(load_topology("/nonexistent/setup.topo"), Error);
}

TEST(Descriptor, EnvironmentOverride) {
  oracle::ScratchDir dir;
  write(dir / "t.topo", "node 0 kind=onnode cpus=0 mem_gb=1\nnode 3 kind=cxl cpus=none mem_gb=2\n");
  ::setenv(kTopologyEnv, (dir / "t.topo").c_str(), 1);
  const auto topo = resolve_topology();
  ::unsetenv(kTopologyEnv);
  ASSERT_EQ(topo.nodes.size(), 2u);
  EXPECT_EQ(topo.nodes[1].id, 3);
}

TEST(CpuList, Ranges) {
  EXPECT_EQ(parse_cpu_list("0-3,8,10-11"), (std::vector<int>{0, 1, 2, 3, 8, 10, 11}));
  EXPECT_TRUE(parse_cpu_list("").empty());
  EXPECT_THROW(parse_cpu_list("3-1"), Error);
}

TEST(Affinity, CloseFillsFirstSocket) {
  const auto cpus = assign_affinity(two_by_ten(), AffinityPolicy::close(), 12);
  auto want = range(0, 10);
  want.push_back(10);
  want.push_back(11);
  EXPECT_EQ(cpus, want);
}

TEST(Affinity, SpreadAlternates) {
  const auto cpus = assign_affinity(two_by_ten(), AffinityPolicy::spread(), 4);
  EXPECT_EQ(cpus, (std::vector<int>{0, 10, 1, 11}));
}

TEST(Affinity, SingleThreadIsFirstCpu) {
  TopologyMap topo;
  topo.nodes.push_back({2, {1, 2}, 1, NodeKind::OnNode});
  topo.nodes.push_back({0, {}, 1, NodeKind::CxlAttached});
  topo.nodes.push_back({1, {3, 4}, 1, NodeKind::OnNode});
  normalize_topology(topo);
  EXPECT_EQ(assign_affinity(topo, AffinityPolicy::close(), 1), std::vector<int>{3});
}

TEST(Affinity, ExplicitAndOversubscription) {
  const auto topo = two_by_ten();
  EXPECT_EQ(assign_affinity(topo, AffinityPolicy::explicit_list({5, 15}), 2),
            (std::vector<int>{5, 15}));
  EXPECT_THROW(assign_affinity(topo, AffinityPolicy::explicit_list({5, 99}), 2), Error);
  try {
    assign_affinity(topo, AffinityPolicy::close(), 21);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Oversubscription);
    EXPECT_NE(std::string(e.what()).find("oversubscription unsupported"), std::string::npos);
  }
}

TEST(Affinity, ParseAndFormat) {
  EXPECT_EQ(parse_affinity("close"), AffinityPolicy::close());
  EXPECT_EQ(parse_affinity("Spread"), AffinityPolicy::spread());
  EXPECT_EQ(parse_affinity("explicit:0,2"), AffinityPolicy::explicit_list({0, 2}));
  EXPECT_EQ(format_affinity(AffinityPolicy::explicit_list({0, 2})), "explicit:0,2");
  EXPECT_THROW(parse_affinity("scatter"), Error);
}

// Randomized properties; the checks restate the policy definitions directly.
TEST(Affinity, RandomTopologyProperties) {
  std::mt19937 rng(7);
  for (int t = 0; t < 50; ++t) {
    TopologyMap topo;
    const int nodes = std::uniform_int_distribution<int>(1, 4)(rng);
    int next_cpu = 0;
    for (int id = 0; id < nodes; ++id) {
      const int ncpu = std::uniform_int_distribution<int>(1, 32)(rng);
      topo.nodes.push_back({id, range(next_cpu, next_cpu + ncpu), 1, NodeKind::OnNode});
      next_cpu += ncpu + std::uniform_int_distribution<int>(0, 3)(rng);
    }
    std::vector<int> all;
    for (const auto& n : topo.nodes) all.insert(all.end(), n.cpus.begin(), n.cpus.end());
    std::map<int, int> node_of;
    for (const auto& n : topo.nodes) {
      for (int c : n.cpus) node_of[c] = n.id;
    }

    std::vector<int> prev_close;
    for (std::size_t k = 1; k <= all.size(); ++k) {
      const auto close = assign_affinity(topo, AffinityPolicy::close(), k);
      ASSERT_EQ(close.size(), k);
      EXPECT_TRUE(std::equal(close.begin(), close.end(), all.begin()));
      EXPECT_TRUE(std::equal(prev_close.begin(), prev_close.end(), close.begin()));
      prev_close = close;

      const auto spread = assign_affinity(topo, AffinityPolicy::spread(), k);
      ASSERT_EQ(spread.size(), k);
      EXPECT_EQ(std::set<int>(spread.begin(), spread.end()).size(), k);
      std::map<int, std::size_t> per_node;
      for (int c : spread) ++per_node[node_of.at(c)];
      std::size_t lo = SIZE_MAX, hi = 0;
      for (const auto& n : topo.nodes) {
        const auto used = per_node[n.id];
        if (used < n.cpus.size()) lo = std::min(lo, used);
        hi = std::max(hi, used);
      }
      // Nodes that still have spare CPUs are never more than one behind.
      if (lo != SIZE_MAX) {
        EXPECT_LE(hi - lo, 1u);
      }
    }
    const auto full_close = assign_affinity(topo, AffinityPolicy::close(), all.size());
    const auto full_spread = assign_affinity(topo, AffinityPolicy::spread(), all.size());
    EXPECT_EQ(std::set<int>(full_close.begin(), full_close.end()),
              std::set<int>(all.begin(), all.end()));
    EXPECT_EQ(std::set<int>(full_spread.begin(), full_spread.end()),
              std::set<int>(all.begin(), all.end()));
    EXPECT_THROW(assign_affinity(topo, AffinityPolicy::spread(), all.size() + 1), Error);
  }
}

TEST(Pinning, RoundTripOnAllowedCpu) {
  const auto allowed = current_thread_affinity();
  ASSERT_FALSE(allowed.empty());
  const int cpu = allowed.back();
  std::vector<int> seen;
  std::thread([&] {
    ASSERT_TRUE(pin_current_thread(cpu));
    seen = current_thread_affinity();
  }).join();
  EXPECT_EQ(seen, std::vector<int>{cpu});
}

TEST(Pinning, UnknownCpuIsAnError) {
  TopologyMap topo = two_by_ten();
  EXPECT_THROW(pin_worker(topo, 77), Error);
}

TEST(Pinning, PlatformRefusalIsAWarning) {
  TopologyMap topo;
  topo.nodes.push_back({0, {4000}, 1, NodeKind::OnNode});
  PinStatus status;
  std::thread([&] { status = pin_worker(topo, 4000); }).join();
  EXPECT_FALSE(status.pinned);
  EXPECT_FALSE(status.warning.empty());
}
