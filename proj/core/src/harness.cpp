#include "streamer/harness.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "streamer/error.hpp"
#include "streamer/worker_team.hpp"
#include "text_util.hpp"

namespace streamer {

using detail::trim;

// ---------------------------------------------------------------------------
// Config file

namespace {

constexpr std::array<std::string_view, 11> kConfigKeys{
    "mode",   "mem_node", "compute_nodes", "affinity",  "threads",  "array_size",
    "ntimes", "scalar",   "kernels",       "pool_path", "pool_size"};

std::vector<std::size_t> parse_thread_list(std::string_view text) {
  std::vector<std::size_t> out;
  if (detail::lower(trim(text)) == "auto") return out;
  for (auto item : detail::split(text, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string_view::npos) {
      const auto v = detail::parse_int<std::size_t>(item);
      if (!v || *v == 0) throw Error(Errc::InvalidArgument, "bad thread count '" + std::string(item) + "'");
      out.push_back(*v);
    } else {
      const auto lo = detail::parse_int<std::size_t>(item.substr(0, dash));
      const auto hi = detail::parse_int<std::size_t>(item.substr(dash + 1));
      if (!lo || !hi || *lo == 0 || *lo > *hi) {
        throw Error(Errc::InvalidArgument, "bad thread range '" + std::string(item) + "'");
      }
      for (auto t = *lo; t <= *hi; ++t) out.push_back(t);
    }
  }
  if (out.empty()) throw Error(Errc::InvalidArgument, "empty thread list");
  return out;
}

std::vector<int> parse_node_list(std::string_view text) {
  if (detail::lower(trim(text)) == "all") return {};
  std::vector<int> out;
  for (auto item : detail::split(text, ',')) {
    const auto v = detail::parse_int<int>(item);
    if (!v || *v < 0) throw Error(Errc::InvalidArgument, "bad node id '" + std::string(item) + "'");
    if (std::find(out.begin(), out.end(), *v) == out.end()) out.push_back(*v);
  }
  if (out.empty()) throw Error(Errc::InvalidArgument, "empty node list");
  return out;
}

std::vector<KernelKind> parse_kernel_list(std::string_view text) {
  std::set<KernelKind> chosen;
  if (detail::lower(trim(text)) == "all") return {kAllKernels.begin(), kAllKernels.end()};
  for (auto item : detail::split(text, ',')) chosen.insert(parse_kernel(item));
  if (chosen.empty()) throw Error(Errc::InvalidArgument, "empty kernel list");
  // Fixed cycle order regardless of how the list was written.
  return {chosen.begin(), chosen.end()};
}

struct Section {
  RunConfig config;
  std::set<std::string> seen;
  std::optional<std::string> pool_path;
  std::size_t line = 0;
};

void finish_section(Section& s) {
  const std::string& label = s.config.label;
  if (!s.seen.count("mode")) throw ConfigError(label, "mode", "missing required key");
  if (!s.seen.count("mem_node")) throw ConfigError(label, "mem_node", "missing required key");
  if (s.pool_path) {
    if (s.config.placement.mode != PlacementMode::Pmem) {
      throw ConfigError(label, "pool_path", "only valid with mode = pmem");
    }
    s.config.placement.backing = FileBacking{*s.pool_path};
  }
  if (s.seen.count("pool_size") && s.config.placement.mode != PlacementMode::Pmem) {
    throw ConfigError(label, "pool_size", "only valid with mode = pmem");
  }
}

void apply_key(Section& s, const std::string& key, std::string_view value) {
  RunConfig& c = s.config;
  const std::string& label = c.label;
  if (std::find(kConfigKeys.begin(), kConfigKeys.end(), key) == kConfigKeys.end()) {
    throw ConfigError(label, key, "unknown key");
  }
  if (!s.seen.insert(key).second) throw ConfigError(label, key, "key given twice");
  try {
    if (key == "mode") {
      c.placement.mode = parse_placement_mode(value);
    } else if (key == "mem_node") {
      const auto v = detail::parse_int<int>(value);
      if (!v || *v < 0) throw Error(Errc::InvalidArgument, "expected a node id");
      c.placement.mem_node = *v;
    } else if (key == "compute_nodes") {
      c.compute_nodes = parse_node_list(value);
    } else if (key == "affinity") {
      c.affinity = parse_affinity(value);
    } else if (key == "threads") {
      c.threads = parse_thread_list(value);
    } else if (key == "array_size") {
      const auto v = detail::parse_count(value);
      if (!v || *v == 0) throw Error(Errc::InvalidArgument, "expected a positive element count");
      c.array_size = *v;
    } else if (key == "ntimes") {
      const auto v = detail::parse_int<std::size_t>(value);
      if (!v || *v < 2) throw Error(Errc::InvalidArgument, "ntimes must be an integer >= 2");
      c.ntimes = *v;
    } else if (key == "scalar") {
      const auto v = detail::parse_double(value);
      if (!v || !std::isfinite(*v)) throw Error(Errc::InvalidArgument, "expected a finite number");
      c.scalar = *v;
    } else if (key == "kernels") {
      c.kernels = parse_kernel_list(value);
    } else if (key == "pool_path") {
      if (value.empty()) throw Error(Errc::InvalidArgument, "empty path");
      s.pool_path = std::string(value);
    } else if (key == "pool_size") {
      const auto v = detail::parse_count(value);
      if (!v) throw Error(Errc::InvalidArgument, "expected a byte count");
      c.pool_size = *v;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(label, key, e.what());
  }
}

}  // namespace

std::vector<RunConfig> parse_run_configs(std::string_view text) {
  std::vector<RunConfig> out;
  std::optional<Section> current;
  std::set<std::string> labels;
  std::size_t line_no = 0;
  std::size_t start = 0;

  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line =
        text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = line.find_first_of("#;"); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("", "", "line " + std::to_string(line_no) + ": unterminated section header");
      }
      if (current) {
        finish_section(*current);
        out.push_back(std::move(current->config));
      }
      const std::string label(trim(line.substr(1, line.size() - 2)));
      if (label.empty()) throw ConfigError("", "", "line " + std::to_string(line_no) + ": empty label");
      if (label.find_first_of(",\"") != std::string::npos) {
        throw ConfigError(label, "", "labels may not contain commas or quotes");
      }
      if (!labels.insert(label).second) throw ConfigError(label, "", "duplicate label");
      current.emplace();
      current->config.label = label;
      current->line = line_no;
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(current ? current->config.label : "", "",
                        "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (!current) throw ConfigError("", key, "key outside of a [label] section");
    apply_key(*current, key, trim(line.substr(eq + 1)));
  }
  if (current) {
    finish_section(*current);
    out.push_back(std::move(current->config));
  }
  if (out.empty()) throw ConfigError("", "", "no [label] sections found");
  return out;
}

std::vector<RunConfig> load_run_configs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "", "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_configs(ss.str());
}

std::string format_run_configs(std::span<const RunConfig> configs) {
  auto join = [](const auto& items, auto fmt) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) out += ',';
      out += fmt(items[i]);
    }
    return out;
  };
  std::ostringstream out;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    if (i) out << '\n';
    out << '[' << c.label << "]\n";
    out << "mode = " << placement_mode_name(c.placement.mode) << '\n';
    out << "mem_node = " << c.placement.mem_node << '\n';
    out << "compute_nodes = "
        << (c.compute_nodes.empty() ? std::string("all")
                                    : join(c.compute_nodes, [](int v) { return std::to_string(v); }))
        << '\n';
    out << "affinity = " << format_affinity(c.affinity) << '\n';
    out << "threads = "
        << (c.threads.empty() ? std::string("auto")
                              : join(c.threads, [](std::size_t v) { return std::to_string(v); }))
        << '\n';
    out << "array_size = " << c.array_size << '\n';
    out << "ntimes = " << c.ntimes << '\n';
    out << "scalar = " << detail::shortest(c.scalar) << '\n';
    out << "kernels = "
        << join(c.kernels, [](KernelKind k) { return detail::lower(kernel_name(k)); }) << '\n';
    if (c.placement.backing) {
      if (const auto* file = std::get_if<FileBacking>(&*c.placement.backing)) {
        out << "pool_path = " << file->path.string() << '\n';
      }
    }
    if (c.pool_size) out << "pool_size = " << c.pool_size << '\n';
  }
  return out.str();
}

std::vector<int> effective_compute_nodes(const RunConfig& config, const TopologyMap& topo) {
  return config.compute_nodes.empty() ? topo.nodes_with_cpus() : config.compute_nodes;
}

std::vector<std::size_t> effective_threads(const RunConfig& config, const TopologyMap& topo) {
  if (!config.threads.empty()) return config.threads;
  const auto nodes = effective_compute_nodes(config, topo);
  const std::size_t cpus = topo.restricted_to(nodes).cpu_count();
  std::vector<std::size_t> out;
  for (std::size_t t = 1; t <= cpus; ++t) out.push_back(t);
  return out;
}

void validate_config(const RunConfig& c, const TopologyMap& topo) {
  try {
    validate_placement(c.placement, topo);
  } catch (const Error& e) {
    throw ConfigError(c.label, "mem_node", e.what());
  }
  const auto nodes = effective_compute_nodes(c, topo);
  if (nodes.empty()) throw ConfigError(c.label, "compute_nodes", "no node with cpus");
  for (int id : nodes) {
    const auto* n = topo.find(id);
    if (!n) throw ConfigError(c.label, "compute_nodes", "node " + std::to_string(id) + " not in topology");
    if (n->cpus.empty()) {
      throw ConfigError(c.label, "compute_nodes", "node " + std::to_string(id) + " has no cpus");
    }
  }
  const auto compute = topo.restricted_to(nodes);
  const std::size_t available = c.affinity.kind == AffinityKind::Explicit
                                    ? c.affinity.explicit_cpus.size()
                                    : compute.cpu_count();
  if (c.affinity.kind == AffinityKind::Explicit) {
    for (int cpu : c.affinity.explicit_cpus) {
      if (!compute.has_cpu(cpu)) {
        throw ConfigError(c.label, "affinity",
                          "cpu " + std::to_string(cpu) + " not in compute_nodes");
      }
    }
  }
  for (std::size_t t : c.threads) {
    if (t > available) {
      throw ConfigError(c.label, "threads",
                        "oversubscription unsupported: " + std::to_string(t) + " threads for " +
                            std::to_string(available) + " cpus");
    }
  }
  if (c.ntimes < 2) throw ConfigError(c.label, "ntimes", "must be >= 2");
  if (c.kernels.empty()) throw ConfigError(c.label, "kernels", "no kernels enabled");
}

// ---------------------------------------------------------------------------
// Presets

namespace {

RunConfig preset_config(std::string label, PlacementMode mode, int mem_node,
                        std::vector<int> compute_nodes, AffinityPolicy affinity) {
  RunConfig c;
  c.label = std::move(label);
  c.placement.mode = mode;
  c.placement.mem_node = mem_node;
  c.compute_nodes = std::move(compute_nodes);
  c.affinity = std::move(affinity);
  return c;
}

std::string tag(PlacementMode mode, int node) {
  return std::string(placement_mode_name(mode)) + std::to_string(node);
}

void add_group(std::string_view group, const TopologyMap& topo, PresetExpansion& out) {
  const auto compute = topo.nodes_with_cpus();
  if (compute.empty()) {
    out.notices.push_back("group skipped: " + std::string(group) + " (no node with cpus)");
    return;
  }
  const int first = compute.front();
  std::vector<int> others;
  for (const auto& n : topo.nodes) {
    if (n.id != first) others.push_back(n.id);
  }

  if (group == "class1a") {
    for (int k : compute) {
      out.configs.push_back(preset_config("class1a-" + tag(PlacementMode::Pmem, k),
                                          PlacementMode::Pmem, k, {k}, AffinityPolicy::close()));
    }
  } else if (group == "class1b" || group == "class2a") {
    const auto mode = group == "class1b" ? PlacementMode::Pmem : PlacementMode::Numa;
    if (others.empty()) {
      out.notices.push_back("group skipped: no remote node (" + std::string(group) + ")");
      return;
    }
    for (int k : others) {
      out.configs.push_back(preset_config(std::string(group) + "-" + tag(mode, k), mode, k,
                                          {first}, AffinityPolicy::close()));
    }
  } else if (group == "class1c-close" || group == "class1c-spread") {
    if (compute.size() < 2) {
      out.notices.push_back("group skipped: " + std::string(group) +
                            " needs two nodes with cpus");
      return;
    }
    const auto policy =
        group == "class1c-close" ? AffinityPolicy::close() : AffinityPolicy::spread();
    for (const auto& n : topo.nodes) {
      out.configs.push_back(preset_config(std::string(group) + "-" + tag(PlacementMode::Pmem, n.id),
                                          PlacementMode::Pmem, n.id, compute, policy));
    }
  } else if (group == "class2b") {
    for (const auto& n : topo.nodes) {
      out.configs.push_back(preset_config("class2b-" + tag(PlacementMode::Numa, n.id),
                                          PlacementMode::Numa, n.id, compute,
                                          AffinityPolicy::close()));
    }
  }
}

}  // namespace

PresetExpansion expand_class_presets(const TopologyMap& topo) {
  PresetExpansion out;
  for (auto name : kPresetNames) add_group(name, topo, out);
  return out;
}

PresetExpansion expand_preset(const TopologyMap& topo, std::string_view name) {
  const auto n = detail::lower(trim(name));
  if (n == "all") return expand_class_presets(topo);
  PresetExpansion out;
  if (n == "class1c") {
    add_group("class1c-close", topo, out);
    add_group("class1c-spread", topo, out);
    return out;
  }
  if (std::find(kPresetNames.begin(), kPresetNames.end(), n) == kPresetNames.end()) {
    throw ConfigError(std::string(name), "preset",
                      "unknown preset; expected class1a, class1b, class1c, class1c-close, "
                      "class1c-spread, class2a, class2b or all");
  }
  add_group(n, topo, out);
  return out;
}

// ---------------------------------------------------------------------------
// Matrix execution

RunMetadata make_metadata(const TopologyMap& topo) {
  RunMetadata meta;
  char host[256] = {};
  if (::gethostname(host, sizeof(host) - 1) == 0) meta.host = host;
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &utc);
  meta.timestamp = stamp;
  meta.topology = format_topology(topo);
  return meta;
}

std::size_t MatrixResult::failures() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(cells.begin(), cells.end(), [](const CellResult& c) { return c.failed; }));
}

bool MatrixResult::all_validated() const noexcept {
  for (const auto& cell : cells) {
    if (cell.failed) return false;
    for (const auto& r : cell.results) {
      if (!r.validated) return false;
    }
  }
  return true;
}

namespace {

/// Caps the element count so the arrays fit the target node's capacity.
std::uint64_t capped_size(const RunConfig& c, const TopologyMap& topo, std::string* notice) {
  const auto* node = topo.find(c.placement.mem_node);
  if (!node || node->mem_bytes == 0) return c.array_size;
  const std::uint64_t per_element =
      3 * kElementBytes * (c.placement.mode == PlacementMode::Pmem && c.pool_size == 0 ? 2 : 1);
  const std::uint64_t need = per_element * (c.array_size + c.offset);
  if (need <= node->mem_bytes) return c.array_size;
  const std::uint64_t fit = node->mem_bytes / per_element;
  const std::uint64_t capped = fit > c.offset ? fit - c.offset : 1;
  if (notice) {
    *notice = "[" + c.label + "] array_size capped from " + std::to_string(c.array_size) + " to " +
              std::to_string(capped) + " to fit node " + std::to_string(node->id);
  }
  return capped;
}

void run_cell(CellResult& cell, const RunConfig& c, const TopologyMap& topo, WorkerTeam& team,
              const MatrixOptions& options) {
  AllocateOptions alloc;
  alloc.pool_size = c.pool_size;
  alloc.allow_unbound = options.allow_unbound;
  alloc.delete_file_on_release = options.delete_pool_files;

  VectorTriple v = allocate_triple(c.placement, topo, cell.n, c.offset, team, cell.threads, alloc);
  cell.unbound = !v.bound();

  for (KernelKind k : c.kernels) run_kernel(k, v, c.scalar, team, cell.threads);

  std::vector<TimingRecord> records;
  for (KernelKind k : c.kernels) records.push_back({k, {}});
  for (std::size_t iter = 0; iter < c.ntimes; ++iter) {
    for (std::size_t i = 0; i < c.kernels.size(); ++i) {
      records[i].iteration_times.push_back(run_kernel(c.kernels[i], v, c.scalar, team, cell.threads));
    }
  }

  // The warm-up pass counts as one more cycle after initialization.
  const auto check = check_arrays(v, c.ntimes + 1, c.scalar, kDefaultEpsilon, c.kernels);
  for (const auto& record : records) {
    auto result = compute_result(record, cell.n, cell.threads);
    result.validated = check.passed;
    cell.results.push_back(result);
  }
  if (options.inspect) options.inspect(cell, v);
  release_triple(v);
  if (!check.passed) {
    cell.failed = true;
    cell.error = "validation failed (avg rel err a=" + detail::shortest(check.a_avg_rel_error) +
                 " b=" + detail::shortest(check.b_avg_rel_error) +
                 " c=" + detail::shortest(check.c_avg_rel_error) + ")";
  }
}

}  // namespace

MatrixResult run_matrix(const MatrixRun& run, const TopologyMap& topo, const MatrixOptions& options) {
  MatrixResult out;
  out.metadata = run.metadata;
  auto notify = [&](const std::string& message) {
    out.metadata.notices.push_back(message);
    if (options.notice) options.notice(message);
  };
  if (run.configs.empty()) throw Error(Errc::InvalidArgument, "matrix has no configs");

  for (const auto& c : run.configs) {
    try {
      validate_config(c, topo);
      std::string cap_notice;
      const std::uint64_t n = capped_size(c, topo, &cap_notice);
      if (!cap_notice.empty()) notify(cap_notice);

      const auto threads = effective_threads(c, topo);
      const auto compute = topo.restricted_to(effective_compute_nodes(c, topo));
      const std::size_t max_threads = *std::max_element(threads.begin(), threads.end());
      WorkerTeam team(assign_affinity(compute, c.affinity, max_threads));
      for (const auto& w : team.pin_warnings()) notify("[" + c.label + "] " + w);
      if (team.unpinned()) out.metadata.unpinned = true;

      for (std::size_t t : threads) {
        CellResult cell;
        cell.config = c;
        cell.threads = t;
        cell.n = n;
        cell.unpinned = team.unpinned();
        notify("[" + c.label + "] " + placement_tag(c.placement) + " threads=" + std::to_string(t) +
               " n=" + std::to_string(n));
        try {
          run_cell(cell, c, topo, team, options);
        } catch (const Error& e) {
          if (options.fail_fast) throw;
          cell.failed = true;
          cell.error = e.what();
        }
        if (cell.unbound) notify("[" + c.label + "] memory not bound to node " +
                                 std::to_string(c.placement.mem_node));
        if (cell.failed) notify("[" + c.label + "] failed: " + cell.error);
        out.cells.push_back(std::move(cell));
      }
    } catch (const Error& e) {
      if (options.fail_fast) throw;
      CellResult cell;
      cell.config = c;
      cell.failed = true;
      cell.config_error = dynamic_cast<const ConfigError*>(&e) != nullptr;
      cell.error = e.what();
      notify("[" + c.label + "] failed: " + cell.error);
      out.cells.push_back(std::move(cell));
    }
  }
  return out;
}

}  // namespace streamer
