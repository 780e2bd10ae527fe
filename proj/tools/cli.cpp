#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "streamer/error.hpp"
#include "streamer/harness.hpp"
#include "streamer/report.hpp"
#include "streamer/selftest.hpp"
#include "streamer/topology.hpp"

namespace streamer::cli {
namespace {

struct TopoArgs {
  std::string file;
  bool json = false;
  bool smt = false;
};

struct PresetArgs {
  std::string preset = "all";
};

struct RunArgs {
  std::string config;
  std::string preset;
  std::string out;
  std::string format;
  std::size_t ntimes = 0;
  std::uint64_t size = 0;
  bool fail_fast = false;
  bool allow_unbound = false;
};

struct SelftestArgs {
  std::string inject_fault;
};

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string baseline;
  std::string candidate;
  std::string metric;
  std::size_t threads = 0;
  std::string kernel;
  double generation_ratio = kDefaultGenerationRatio;
  double tolerance = kDefaultSaturationTolerance;
};

std::string percent(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f%%", value);
  return buf;
}

std::string number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

TopologyMap topology_for(const std::string& file, bool smt) {
  if (!file.empty()) return load_topology(file);
  DetectOptions options;
  options.include_smt = smt;
  return resolve_topology(options);
}

int cmd_topo(const TopoArgs& args, std::ostream& out, std::ostream& err) {
  TopologyMap topo;
  try {
    topo = topology_for(args.file, args.smt);
  } catch (const Error& e) {
    err << "topo: " << e.what() << '\n';
    return kExitUsage;
  }
  if (args.json) {
    nlohmann::ordered_json doc;
    doc["nodes"] = nlohmann::ordered_json::array();
    for (const auto& n : topo.nodes) {
      doc["nodes"].push_back({{"id", n.id},
                              {"kind", n.kind == NodeKind::CxlAttached ? "cxl" : "onnode"},
                              {"cpus", n.cpus},
                              {"mem_bytes", n.mem_bytes}});
    }
    doc["distances"] = topo.distances;
    out << doc.dump(2) << '\n';
    return kExitOk;
  }
  out << "# " << topo.nodes.size() << " node(s), " << topo.cpu_count() << " cpu(s)\n";
  out << format_topology(topo);
  return kExitOk;
}

int cmd_presets(const PresetArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const auto topo = resolve_topology();
    const auto expansion = expand_preset(topo, args.preset);
    for (const auto& n : expansion.notices) err << "notice: " << n << '\n';
    out << format_run_configs(expansion.configs);
    return kExitOk;
  } catch (const Error& e) {
    err << "presets: " << e.what() << '\n';
    return kExitUsage;
  }
}

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
  if (args.config.empty() == args.preset.empty()) {
    err << "run: give exactly one of a config file or --preset\n";
    return kExitUsage;
  }

  TopologyMap topo;
  MatrixRun matrix;
  ReportFormat format = ReportFormat::Csv;
  try {
    topo = resolve_topology();
    if (!args.preset.empty()) {
      auto expansion = expand_preset(topo, args.preset);
      for (const auto& n : expansion.notices) err << "notice: " << n << '\n';
      matrix.configs = std::move(expansion.configs);
      matrix.metadata = make_metadata(topo);
      matrix.metadata.notices = std::move(expansion.notices);
    } else {
      matrix.configs = load_run_configs(args.config);
      matrix.metadata = make_metadata(topo);
    }
    for (auto& c : matrix.configs) {
      if (args.ntimes) {
        if (args.ntimes < 2) throw ConfigError(c.label, "ntimes", "must be >= 2");
        c.ntimes = args.ntimes;
      }
      if (args.size) c.array_size = args.size;
    }
    if (!args.format.empty()) {
      format = parse_format(args.format);
    } else if (args.out.size() >= 5 && args.out.substr(args.out.size() - 5) == ".json") {
      format = ReportFormat::Json;
    }
  } catch (const Error& e) {
    err << "run: " << e.what() << '\n';
    return kExitUsage;
  }

  MatrixResult result;
  result.metadata = matrix.metadata;
  if (!matrix.configs.empty()) {
    MatrixOptions options;
    options.fail_fast = args.fail_fast;
    options.allow_unbound = args.allow_unbound;
    options.notice = [&err](const std::string& message) { err << "notice: " << message << '\n'; };
    try {
      result = run_matrix(matrix, topo, options);
    } catch (const ConfigError& e) {
      err << "run: " << e.what() << '\n';
      return kExitUsage;
    } catch (const Error& e) {
      err << "run: " << e.what() << '\n';
      return kExitFailure;
    }
  }

  const auto rows = rows_from(result);
  const auto metrics = rows.empty() ? std::vector<DerivedMetrics>{} : saturation_summary(rows);
  const auto text = emit(rows, metrics, format, &result.metadata);
  if (args.out.empty()) {
    out << text;
  } else {
    std::ofstream file(args.out, std::ios::binary | std::ios::trunc);
    file << text;
    if (!file) {
      err << "run: cannot write " << args.out << '\n';
      return kExitFailure;
    }
  }

  bool config_error = false;
  for (const auto& cell : result.cells) config_error = config_error || cell.config_error;
  if (config_error) return kExitUsage;
  return result.all_validated() ? kExitOk : kExitFailure;
}

int cmd_selftest(const SelftestArgs& args, std::ostream& out, std::ostream& err) {
  SelftestOptions options;
  if (!args.inject_fault.empty()) {
    if (args.inject_fault != "skip-undo-snapshot") {
      err << "selftest: unknown fault '" << args.inject_fault << "'\n";
      return kExitUsage;
    }
    options.fault = pmem::testing::Fault::SkipUndoSnapshot;
  }
  const auto report = run_selftest(options);
  for (const auto& v : report.verdicts) {
    out << (v.passed ? "PASS " : "FAIL ") << v.name;
    if (!v.detail.empty()) out << " (" << v.detail << ")";
    out << '\n';
  }
  char secs[32];
  std::snprintf(secs, sizeof(secs), "%.2f", report.seconds);
  out << (report.passed() ? "selftest passed" : "selftest FAILED") << " in " << secs << " s\n";
  if (!report.passed()) {
    for (const auto& v : report.verdicts) {
      if (!v.passed) err << "failed property: " << v.name << '\n';
    }
  }
  return report.passed() ? kExitOk : kExitFailure;
}

int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err) {
  std::vector<ReportRow> rows;
  ComparisonOptions options;
  try {
    for (const auto& path : args.inputs) {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw Error(Errc::Io, "cannot read " + path);
      std::ostringstream ss;
      ss << in.rdbuf();
      auto parsed = parse_report(ss.str());
      rows.insert(rows.end(), parsed.rows.begin(), parsed.rows.end());
    }
    options.metric = parse_metric(args.metric);
    options.baseline = args.baseline;
    options.candidate = args.candidate;
    if (args.threads) options.threads = args.threads;
    if (!args.kernel.empty()) options.kernel = args.kernel;
    options.generation_ratio = args.generation_ratio;
    options.tolerance = args.tolerance;

    const auto metrics = derive(rows, options);
    for (const auto& m : metrics) {
      out << m.kernel;
      if (m.kernel != "mean" && options.metric != MetricKind::Saturation && m.saturation_threads) {
        out << " threads=" << *m.saturation_threads;
      }
      switch (options.metric) {
        case MetricKind::Degradation:
          out << " degradation=" << percent(*m.degradation_pct);
          break;
        case MetricKind::Fabric:
          out << " fabric_overhead=" << number(*m.fabric_overhead_gbps) << " GB/s (estimate)";
          break;
        case MetricKind::Mode:
          out << " mode_overhead=" << percent(*m.mode_overhead_pct);
          break;
        case MetricKind::Saturation:
          out << " saturation threads=" << *m.saturation_threads
              << " rate=" << number(*m.saturation_gbps) << " GB/s";
          break;
      }
      out << '\n';
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "report: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memory bandwidth benchmarking for local, remote-socket and CXL memory", "streamer"};
  app.require_subcommand(1, 1);

  TopoArgs topo;
  auto* topo_cmd = app.add_subcommand("topo", "Print the memory/CPU topology");
  topo_cmd->add_option("--file", topo.file, "Topology descriptor to load instead of detection");
  topo_cmd->add_flag("--json", topo.json, "Emit JSON");
  topo_cmd->add_flag("--smt", topo.smt, "Include SMT siblings after physical cores");

  PresetArgs presets;
  auto* presets_cmd = app.add_subcommand("presets", "Print preset run configs for this topology");
  presets_cmd->add_option("--preset", presets.preset, "Preset group (default: all)");

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run a benchmark matrix");
  run_cmd->add_option("config", run_args.config, "Run-config file");
  run_cmd->add_option("--preset", run_args.preset,
                      "class1a, class1b, class1c-close, class1c-spread, class1c, class2a, class2b, all");
  run_cmd->add_option("--out", run_args.out, "Report path (default: stdout)");
  run_cmd->add_option("--format", run_args.format, "csv or json (default from --out extension)");
  run_cmd->add_option("--ntimes", run_args.ntimes, "Timed iterations per kernel (>= 2)");
  run_cmd->add_option("--size", run_args.size, "Array elements");
  run_cmd->add_flag("--fail-fast", run_args.fail_fast, "Stop at the first failing cell");
  run_cmd->add_flag("--allow-unbound", run_args.allow_unbound,
                    "Run unbound when NUMA binding is unavailable");

  SelftestArgs selftest;
  auto* selftest_cmd = app.add_subcommand("selftest", "Run the desk-scale property suite");
  selftest_cmd->add_option("--inject-fault", selftest.inject_fault)->group("");

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Derive comparison metrics from results");
  report_cmd->add_option("--in", report.inputs, "Result file(s), CSV or JSON")->required();
  report_cmd->add_option("--baseline", report.baseline, "Baseline label");
  report_cmd->add_option("--candidate", report.candidate, "Candidate label");
  report_cmd->add_option("--metric", report.metric, "degradation, fabric, mode or saturation")
      ->required();
  report_cmd->add_option("--threads", report.threads, "Compare at this thread count");
  report_cmd->add_option("--kernel", report.kernel, "Restrict to one kernel");
  report_cmd->add_option("--generation-ratio", report.generation_ratio,
                         "Expected bandwidth ratio of the CXL memory generation (fabric)");
  report_cmd->add_option("--tolerance", report.tolerance, "Saturation tolerance (fraction)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*topo_cmd) return cmd_topo(topo, out, err);
    if (*presets_cmd) return cmd_presets(presets, out, err);
    if (*run_cmd) return cmd_run(run_args, out, err);
    if (*selftest_cmd) return cmd_selftest(selftest, out, err);
    if (*report_cmd) return cmd_report(report, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace streamer::cli
