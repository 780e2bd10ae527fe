#include "streamer/topology.hpp"

#include <pthread.h>
#include <sched.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "streamer/error.hpp"
#include "text_util.hpp"

namespace streamer {

namespace fs = std::filesystem;
using detail::trim;

// ---------------------------------------------------------------------------
// TopologyMap

const MemNode* TopologyMap::find(int id) const noexcept {
  for (const auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

std::size_t TopologyMap::cpu_count() const noexcept {
  std::size_t total = 0;
  for (const auto& n : nodes) total += n.cpus.size();
  return total;
}

bool TopologyMap::has_cpu(int cpu) const noexcept {
  for (const auto& n : nodes) {
    if (std::find(n.cpus.begin(), n.cpus.end(), cpu) != n.cpus.end()) return true;
  }
  return false;
}

std::vector<int> TopologyMap::nodes_with_cpus() const {
  std::vector<int> ids;
  for (const auto& n : nodes) {
    if (!n.cpus.empty()) ids.push_back(n.id);
  }
  return ids;
}

TopologyMap TopologyMap::restricted_to(std::span<const int> node_ids) const {
  TopologyMap out;
  for (const auto& n : nodes) {
    if (std::find(node_ids.begin(), node_ids.end(), n.id) != node_ids.end()) out.nodes.push_back(n);
  }
  return out;
}

void normalize_topology(TopologyMap& topo) {
  std::sort(topo.nodes.begin(), topo.nodes.end(),
            [](const MemNode& x, const MemNode& y) { return x.id < y.id; });
  std::set<int> cpus;
  for (std::size_t i = 0; i < topo.nodes.size(); ++i) {
    const auto& n = topo.nodes[i];
    if (n.id < 0) throw Error(Errc::InvalidArgument, "negative node id");
    if (i > 0 && topo.nodes[i - 1].id == n.id) {
      throw Error(Errc::InvalidArgument, "duplicate node id " + std::to_string(n.id));
    }
    if (n.kind == NodeKind::CxlAttached && !n.cpus.empty()) {
      throw Error(Errc::InvalidArgument,
                  "node " + std::to_string(n.id) + " is cxl but lists cpus");
    }
    for (int cpu : n.cpus) {
      if (cpu < 0) throw Error(Errc::InvalidArgument, "negative cpu id");
      if (!cpus.insert(cpu).second) {
        throw Error(Errc::InvalidArgument, "cpu " + std::to_string(cpu) + " listed twice");
      }
    }
  }
  if (!topo.distances.empty() && topo.distances.size() != topo.nodes.size()) {
    topo.distances.clear();
  }
}

std::vector<int> parse_cpu_list(std::string_view text) {
  std::vector<int> out;
  text = trim(text);
  if (text.empty() || text == "none") return out;
  for (auto item : detail::split(text, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash == std::string_view::npos) {
      const auto v = detail::parse_int<int>(item);
      if (!v) throw Error(Errc::InvalidArgument, "bad cpu id '" + std::string(item) + "'");
      out.push_back(*v);
    } else {
      const auto lo = detail::parse_int<int>(item.substr(0, dash));
      const auto hi = detail::parse_int<int>(item.substr(dash + 1));
      if (!lo || !hi || *lo > *hi) {
        throw Error(Errc::InvalidArgument, "bad cpu range '" + std::string(item) + "'");
      }
      for (int c = *lo; c <= *hi; ++c) out.push_back(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detection

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<int> allowed_cpus() {
  cpu_set_t set;
  CPU_ZERO(&set);
  std::vector<int> out;
  if (sched_getaffinity(0, sizeof(set), &set) != 0) return out;
  for (int c = 0; c < CPU_SETSIZE; ++c) {
    if (CPU_ISSET(c, &set)) out.push_back(c);
  }
  return out;
}

/// True when cpu is the lowest-numbered hardware thread of its core.
bool is_primary_thread(const fs::path& cpu_root, int cpu) {
  const auto text = read_file(cpu_root / ("cpu" + std::to_string(cpu)) / "topology" /
                              "thread_siblings_list");
  if (trim(text).empty()) return true;
  try {
    const auto siblings = parse_cpu_list(trim(text));
    return siblings.empty() || *std::min_element(siblings.begin(), siblings.end()) == cpu;
  } catch (const Error&) {
    return true;
  }
}

std::uint64_t node_mem_bytes(const fs::path& node_dir) {
  std::istringstream in(read_file(node_dir / "meminfo"));
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.find("MemTotal:");
    if (pos == std::string::npos) continue;
    std::istringstream fields(line.substr(pos + 9));
    std::uint64_t kb = 0;
    fields >> kb;
    return kb * 1024;
  }
  return 0;
}

}  // namespace

TopologyMap detect_topology(const DetectOptions& options) {
  const fs::path node_root = options.sysfs_root / "node";
  const fs::path cpu_root = options.sysfs_root / "cpu";
  std::vector<int> allowed;
  if (options.respect_process_affinity) allowed = allowed_cpus();
  auto usable = [&](int cpu) {
    return !options.respect_process_affinity || allowed.empty() ||
           std::binary_search(allowed.begin(), allowed.end(), cpu);
  };

  TopologyMap topo;
  std::error_code ec;
  if (fs::is_directory(node_root, ec)) {
    for (const auto& entry : fs::directory_iterator(node_root, ec)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("node", 0) != 0) continue;
      const auto id = detail::parse_int<int>(std::string_view(name).substr(4));
      if (!id) continue;

      MemNode node;
      node.id = *id;
      node.mem_bytes = node_mem_bytes(entry.path());
      std::vector<int> listed;
      try {
        listed = parse_cpu_list(trim(read_file(entry.path() / "cpulist")));
      } catch (const Error&) {
      }
      std::vector<int> primary, siblings;
      for (int cpu : listed) {
        if (!usable(cpu)) continue;
        (is_primary_thread(cpu_root, cpu) ? primary : siblings).push_back(cpu);
      }
      node.cpus = primary;
      if (options.include_smt) node.cpus.insert(node.cpus.end(), siblings.begin(), siblings.end());
      // A node whose CPUs were all filtered out still has CPUs; only a node
      // without any listed CPU is memory-only.
      node.kind = listed.empty() ? NodeKind::CxlAttached : NodeKind::OnNode;
      topo.nodes.push_back(std::move(node));
    }
  }

  if (topo.nodes.empty()) {
    MemNode node;
    node.id = 0;
    if (!allowed.empty()) {
      node.cpus = allowed;
    } else {
      const unsigned n = std::max(1u, std::thread::hardware_concurrency());
      for (unsigned c = 0; c < n; ++c) node.cpus.push_back(static_cast<int>(c));
    }
    topo.nodes.push_back(std::move(node));
    return topo;
  }

  normalize_topology(topo);
  std::vector<std::vector<int>> distances;
  for (const auto& n : topo.nodes) {
    std::vector<int> row;
    std::istringstream in(read_file(node_root / ("node" + std::to_string(n.id)) / "distance"));
    int d = 0;
    while (in >> d) row.push_back(d);
    distances.push_back(std::move(row));
  }
  // sysfs rows cover all online nodes, which matches topo.nodes when every
  // node directory was readable.
  const bool square = std::all_of(distances.begin(), distances.end(), [&](const auto& row) {
    return row.size() == topo.nodes.size();
  });
  if (square) topo.distances = std::move(distances);
  return topo;
}

// ---------------------------------------------------------------------------
// Descriptor files

TopologyMap parse_topology(std::string_view text) {
  TopologyMap topo;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line =
        text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    auto fail = [&](const std::string& why) -> Error {
      return Error(Errc::InvalidArgument,
                   "topology line " + std::to_string(line_no) + ": " + why);
    };
    const auto words = detail::split_ws(line);
    if (words.size() < 2 || words[0] != "node") throw fail("expected 'node <id> ...'");
    const auto id = detail::parse_int<int>(words[1]);
    if (!id) throw fail("bad node id '" + std::string(words[1]) + "'");

    MemNode node;
    node.id = *id;
    bool have_kind = false, have_cpus = false, have_mem = false;
    for (std::size_t i = 2; i < words.size(); ++i) {
      const auto eq = words[i].find('=');
      if (eq == std::string_view::npos) throw fail("expected key=value, got '" + std::string(words[i]) + "'");
      const auto key = words[i].substr(0, eq);
      const auto value = words[i].substr(eq + 1);
      if (key == "kind") {
        if (value == "onnode") node.kind = NodeKind::OnNode;
        else if (value == "cxl") node.kind = NodeKind::CxlAttached;
        else throw fail("kind must be onnode or cxl");
        have_kind = true;
      } else if (key == "cpus") {
        try {
          node.cpus = parse_cpu_list(value);
        } catch (const Error& e) {
          throw fail(e.what());
        }
        have_cpus = true;
      } else if (key == "mem_gb") {
        const auto gb = detail::parse_double(value);
        if (!gb || *gb < 0) throw fail("bad mem_gb '" + std::string(value) + "'");
        node.mem_bytes = static_cast<std::uint64_t>(std::llround(*gb * 1e9));
        have_mem = true;
      } else {
        throw fail("unknown key '" + std::string(key) + "'");
      }
    }
    if (!have_kind || !have_cpus || !have_mem) throw fail("node needs kind=, cpus= and mem_gb=");
    topo.nodes.push_back(std::move(node));
  }
  if (topo.nodes.empty()) throw Error(Errc::InvalidArgument, "topology lists no nodes");
  normalize_topology(topo);
  return topo;
}

TopologyMap load_topology(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot read topology file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_topology(ss.str());
}

std::string format_topology(const TopologyMap& topo) {
  std::ostringstream out;
  for (const auto& n : topo.nodes) {
    out << "node " << n.id << " kind=" << (n.kind == NodeKind::CxlAttached ? "cxl" : "onnode")
        << " cpus=";
    if (n.cpus.empty()) {
      out << "none";
    } else {
      for (std::size_t i = 0; i < n.cpus.size(); ++i) out << (i ? "," : "") << n.cpus[i];
    }
    out << " mem_gb=" << detail::shortest(static_cast<double>(n.mem_bytes) / 1e9) << '\n';
  }
  return out.str();
}

TopologyMap resolve_topology(const DetectOptions& options) {
  if (const char* path = std::getenv(kTopologyEnv); path && *path) return load_topology(path);
  return detect_topology(options);
}

// ---------------------------------------------------------------------------
// Affinity

std::string_view affinity_name(AffinityKind kind) noexcept {
  switch (kind) {
    case AffinityKind::Close: return "close";
    case AffinityKind::Spread: return "spread";
    case AffinityKind::Explicit: return "explicit";
  }
  return "?";
}

AffinityPolicy parse_affinity(std::string_view text) {
  const auto t = detail::lower(trim(text));
  if (t == "close") return AffinityPolicy::close();
  if (t == "spread") return AffinityPolicy::spread();
  if (t.rfind("explicit:", 0) == 0) {
    auto cpus = parse_cpu_list(std::string_view(t).substr(9));
    if (cpus.empty()) throw Error(Errc::InvalidArgument, "explicit affinity needs a cpu list");
    std::set<int> unique(cpus.begin(), cpus.end());
    if (unique.size() != cpus.size()) {
      throw Error(Errc::InvalidArgument, "explicit affinity lists a cpu twice");
    }
    return AffinityPolicy::explicit_list(std::move(cpus));
  }
  throw Error(Errc::InvalidArgument,
              "affinity must be close, spread or explicit:<cpus>, got '" + std::string(text) + "'");
}

std::string format_affinity(const AffinityPolicy& policy) {
  std::string out(affinity_name(policy.kind));
  if (policy.kind == AffinityKind::Explicit) {
    out += ':';
    for (std::size_t i = 0; i < policy.explicit_cpus.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(policy.explicit_cpus[i]);
    }
  }
  return out;
}

std::vector<int> assign_affinity(const TopologyMap& topo, const AffinityPolicy& policy,
                                 std::size_t nthreads) {
  if (nthreads == 0) throw Error(Errc::InvalidArgument, "nthreads must be at least 1");

  if (policy.kind == AffinityKind::Explicit) {
    const auto& cpus = policy.explicit_cpus;
    if (cpus.empty()) throw Error(Errc::InvalidArgument, "explicit affinity needs a cpu list");
    if (std::set<int>(cpus.begin(), cpus.end()).size() != cpus.size()) {
      throw Error(Errc::InvalidArgument, "explicit affinity lists a cpu twice");
    }
    for (int cpu : cpus) {
      if (!topo.has_cpu(cpu)) {
        throw Error(Errc::UnknownCpu, "cpu " + std::to_string(cpu) + " not in topology");
      }
    }
    if (nthreads > cpus.size()) {
      throw Error(Errc::Oversubscription, "oversubscription unsupported: " +
                                              std::to_string(nthreads) + " threads for " +
                                              std::to_string(cpus.size()) + " explicit cpus");
    }
    return {cpus.begin(), cpus.begin() + static_cast<std::ptrdiff_t>(nthreads)};
  }

  std::vector<const MemNode*> compute;
  for (const auto& n : topo.nodes) {
    if (!n.cpus.empty()) compute.push_back(&n);
  }
  std::sort(compute.begin(), compute.end(),
            [](const MemNode* x, const MemNode* y) { return x->id < y->id; });
  const std::size_t total = topo.cpu_count();
  if (compute.empty()) throw Error(Errc::InvalidArgument, "topology has no node with cpus");
  if (nthreads > total) {
    throw Error(Errc::Oversubscription, "oversubscription unsupported: " +
                                            std::to_string(nthreads) + " threads for " +
                                            std::to_string(total) + " cpus");
  }

  std::vector<int> out;
  out.reserve(nthreads);
  if (policy.kind == AffinityKind::Close) {
    for (const auto* n : compute) {
      for (int cpu : n->cpus) {
        if (out.size() == nthreads) return out;
        out.push_back(cpu);
      }
    }
    return out;
  }
  for (std::size_t round = 0; out.size() < nthreads; ++round) {
    for (const auto* n : compute) {
      if (round < n->cpus.size() && out.size() < nthreads) out.push_back(n->cpus[round]);
    }
  }
  return out;
}

bool pin_current_thread(int cpu, std::string* error) {
  if (cpu < 0) {
    if (error) *error = "negative cpu id";
    return false;
  }
  const auto ncpus = static_cast<std::size_t>(cpu) + 1;
  cpu_set_t* set = CPU_ALLOC(ncpus);
  if (!set) {
    if (error) *error = "CPU_ALLOC failed";
    return false;
  }
  const std::size_t size = CPU_ALLOC_SIZE(ncpus);
  CPU_ZERO_S(size, set);
  CPU_SET_S(static_cast<std::size_t>(cpu), size, set);
  const int rc = pthread_setaffinity_np(pthread_self(), size, set);
  CPU_FREE(set);
  if (rc != 0) {
    if (error) *error = "pin to cpu " + std::to_string(cpu) + " refused: " + std::strerror(rc);
    return false;
  }
  return true;
}

PinStatus pin_worker(const TopologyMap& topo, int cpu) {
  if (!topo.has_cpu(cpu)) {
    throw Error(Errc::UnknownCpu, "cpu " + std::to_string(cpu) + " not in topology");
  }
  PinStatus status;
  status.pinned = pin_current_thread(cpu, &status.warning);
  return status;
}

std::vector<int> current_thread_affinity() {
  cpu_set_t set;
  CPU_ZERO(&set);
  std::vector<int> out;
  if (pthread_getaffinity_np(pthread_self(), sizeof(set), &set) != 0) return out;
  for (int c = 0; c < CPU_SETSIZE; ++c) {
    if (CPU_ISSET(c, &set)) out.push_back(c);
  }
  return out;
}

}  // namespace streamer
