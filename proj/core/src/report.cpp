#include "streamer/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "streamer/error.hpp"
#include "text_util.hpp"

namespace streamer {

using json = nlohmann::ordered_json;

ReportRow make_row(const CellResult& cell, const KernelResult& r) {
  ReportRow row;
  row.label = cell.config.label;
  row.kernel = std::string(kernel_name(r.kernel));
  row.threads = r.threads;
  row.affinity = std::string(affinity_name(cell.config.affinity.kind));
  row.mode = std::string(placement_mode_name(cell.config.placement.mode));
  row.mem_node = cell.config.placement.mem_node;
  row.best_rate_gbps = r.best_rate_mbps / 1000.0;
  row.avg_time_s = r.avg_time_s;
  row.min_time_s = r.min_time_s;
  row.max_time_s = r.max_time_s;
  row.validated = r.validated;
  row.unpinned = cell.unpinned;
  return row;
}

std::vector<ReportRow> rows_from(const MatrixResult& result) {
  std::vector<ReportRow> rows;
  for (const auto& cell : result.cells) {
    for (const auto& r : cell.results) rows.push_back(make_row(cell, r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Derived metrics

double degradation_pct(double baseline_gbps, double candidate_gbps) {
  if (!(baseline_gbps > 0.0)) {
    throw Error(Errc::InvalidArgument, "baseline bandwidth must be positive");
  }
  return 100.0 * (1.0 - candidate_gbps / baseline_gbps);
}

double fabric_overhead(double emulated_remote_gbps, double cxl_gbps, double generation_ratio) {
  if (!(generation_ratio > 0.0)) {
    throw Error(Errc::InvalidArgument, "generation ratio must be positive");
  }
  return emulated_remote_gbps * generation_ratio - cxl_gbps;
}

double mode_overhead_pct(double numa_gbps, double pmem_gbps) {
  if (!(numa_gbps > 0.0)) throw Error(Errc::InvalidArgument, "numa bandwidth must be positive");
  return 100.0 * (1.0 - pmem_gbps / numa_gbps);
}

double mode_overhead_pct(const ReportRow& numa, const ReportRow& pmem) {
  if (numa.kernel != pmem.kernel || numa.threads != pmem.threads ||
      numa.mem_node != pmem.mem_node) {
    throw Error(Errc::InvalidArgument,
                "mode overhead needs rows with the same kernel, threads and mem_node");
  }
  return mode_overhead_pct(numa.best_rate_gbps, pmem.best_rate_gbps);
}

CurvePoint saturation_point(std::span<const CurvePoint> curve, double tolerance) {
  if (curve.empty()) throw Error(Errc::InvalidArgument, "saturation of an empty curve");
  double peak = curve.front().gbps;
  for (const auto& p : curve) peak = std::max(peak, p.gbps);
  const double threshold = (1.0 - tolerance) * peak;
  for (const auto& p : curve) {
    if (p.gbps >= threshold) return p;
  }
  return curve.front();
}

namespace {

using RowKey = std::pair<std::string, std::size_t>;  // kernel, threads

std::map<RowKey, const ReportRow*> index_label(std::span<const ReportRow> rows,
                                               const std::string& label,
                                               const std::optional<std::string>& kernel) {
  std::map<RowKey, const ReportRow*> out;
  for (const auto& r : rows) {
    if (r.label != label) continue;
    if (kernel && detail::lower(r.kernel) != detail::lower(*kernel)) continue;
    out.emplace(RowKey{r.kernel, r.threads}, &r);
  }
  if (out.empty()) {
    throw Error(Errc::MissingLabel, "missing label: no rows for '" + label + "'" +
                                        (kernel ? " kernel " + *kernel : std::string()));
  }
  return out;
}

int kernel_rank(const std::string& name) {
  try {
    return static_cast<int>(parse_kernel(name));
  } catch (const Error&) {
    return 100;
  }
}

std::vector<std::string> kernels_in(const std::map<RowKey, const ReportRow*>& index) {
  std::vector<std::string> out;
  for (const auto& [key, row] : index) {
    if (std::find(out.begin(), out.end(), key.first) == out.end()) out.push_back(key.first);
  }
  std::stable_sort(out.begin(), out.end(), [](const std::string& x, const std::string& y) {
    return kernel_rank(x) < kernel_rank(y);
  });
  return out;
}

std::vector<CurvePoint> curve_of(const std::map<RowKey, const ReportRow*>& index,
                                 const std::string& kernel) {
  std::vector<CurvePoint> curve;
  for (const auto& [key, row] : index) {
    if (key.first == kernel) curve.push_back({key.second, row->best_rate_gbps});
  }
  std::sort(curve.begin(), curve.end(),
            [](const CurvePoint& x, const CurvePoint& y) { return x.threads < y.threads; });
  return curve;
}

}  // namespace

std::vector<DerivedMetrics> saturation_summary(std::span<const ReportRow> rows, double tolerance) {
  std::vector<std::string> labels;
  for (const auto& r : rows) {
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
  }
  std::vector<DerivedMetrics> out;
  for (const auto& label : labels) {
    const auto index = index_label(rows, label, std::nullopt);
    for (const auto& kernel : kernels_in(index)) {
      const auto curve = curve_of(index, kernel);
      const auto p = saturation_point(curve, tolerance);
      DerivedMetrics m;
      m.label = label;
      m.kernel = kernel;
      m.saturation_threads = p.threads;
      m.saturation_gbps = p.gbps;
      out.push_back(std::move(m));
    }
  }
  return out;
}

MetricKind parse_metric(std::string_view name) {
  const auto n = detail::lower(detail::trim(name));
  if (n == "degradation") return MetricKind::Degradation;
  if (n == "fabric") return MetricKind::Fabric;
  if (n == "mode") return MetricKind::Mode;
  if (n == "saturation") return MetricKind::Saturation;
  throw Error(Errc::InvalidArgument, "metric must be degradation, fabric, mode or saturation");
}

std::vector<DerivedMetrics> derive(std::span<const ReportRow> rows, const ComparisonOptions& o) {
  std::vector<DerivedMetrics> out;

  if (o.metric == MetricKind::Saturation) {
    std::string label = o.baseline.empty() ? o.candidate : o.baseline;
    if (label.empty()) {
      for (const auto& r : rows) {
        if (label.empty()) label = r.label;
        if (r.label != label) {
          throw Error(Errc::MissingLabel, "missing label: input holds several labels, pick one");
        }
      }
      if (label.empty()) throw Error(Errc::MissingLabel, "missing label: no rows");
    }
    const auto index = index_label(rows, label, o.kernel);
    for (const auto& kernel : kernels_in(index)) {
      const auto p = saturation_point(curve_of(index, kernel), o.tolerance);
      DerivedMetrics m;
      m.label = label;
      m.kernel = kernel;
      m.saturation_threads = p.threads;
      m.saturation_gbps = p.gbps;
      out.push_back(std::move(m));
    }
    return out;
  }

  if (o.baseline.empty() || o.candidate.empty()) {
    throw Error(Errc::MissingLabel, "missing label: metric needs --baseline and --candidate");
  }
  const auto base = index_label(rows, o.baseline, o.kernel);
  const auto cand = index_label(rows, o.candidate, o.kernel);

  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& kernel : kernels_in(base)) {
    std::optional<std::size_t> threads = o.threads;
    if (!threads) {
      for (const auto& [key, row] : base) {
        if (key.first == kernel && cand.count(key)) threads = std::max(threads.value_or(0), key.second);
      }
    }
    if (!threads) continue;
    const auto b = base.find({kernel, *threads});
    const auto c = cand.find({kernel, *threads});
    if (b == base.end() || c == cand.end()) continue;

    DerivedMetrics m;
    m.label = o.candidate;
    m.kernel = kernel;
    m.saturation_threads = *threads;
    double value = 0.0;
    switch (o.metric) {
      case MetricKind::Degradation:
        value = degradation_pct(b->second->best_rate_gbps, c->second->best_rate_gbps);
        m.degradation_pct = value;
        break;
      case MetricKind::Fabric:
        value = fabric_overhead(b->second->best_rate_gbps, c->second->best_rate_gbps,
                                o.generation_ratio);
        m.fabric_overhead_gbps = value;
        break;
      case MetricKind::Mode:
        value = mode_overhead_pct(*b->second, *c->second);
        m.mode_overhead_pct = value;
        break;
      case MetricKind::Saturation:
        break;
    }
    sum += value;
    ++count;
    out.push_back(std::move(m));
  }
  if (count == 0) {
    throw Error(Errc::MissingLabel, "missing label: '" + o.baseline + "' and '" + o.candidate +
                                        "' share no kernel/thread rows");
  }
  DerivedMetrics mean;
  mean.label = o.candidate;
  mean.kernel = "mean";
  const double avg = sum / static_cast<double>(count);
  switch (o.metric) {
    case MetricKind::Degradation: mean.degradation_pct = avg; break;
    case MetricKind::Fabric: mean.fabric_overhead_gbps = avg; break;
    case MetricKind::Mode: mean.mode_overhead_pct = avg; break;
    case MetricKind::Saturation: break;
  }
  out.push_back(std::move(mean));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

ReportFormat parse_format(std::string_view name) {
  const auto n = detail::lower(detail::trim(name));
  if (n == "csv") return ReportFormat::Csv;
  if (n == "json") return ReportFormat::Json;
  throw Error(Errc::InvalidArgument, "format must be csv or json");
}

std::string format_rate(double gbps) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", gbps);
  return buf;
}

std::string format_time(double seconds) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", seconds);
  return buf;
}

namespace {

double rounded_rate(double gbps) { return *detail::parse_double(format_rate(gbps)); }
double rounded_time(double s) { return *detail::parse_double(format_time(s)); }

json row_to_json(const ReportRow& r) {
  return json{{"label", r.label},
              {"kernel", r.kernel},
              {"threads", r.threads},
              {"affinity", r.affinity},
              {"mode", r.mode},
              {"mem_node", r.mem_node},
              {"best_rate_gbps", rounded_rate(r.best_rate_gbps)},
              {"avg_time_s", rounded_time(r.avg_time_s)},
              {"min_time_s", rounded_time(r.min_time_s)},
              {"max_time_s", rounded_time(r.max_time_s)},
              {"validated", r.validated},
              {"unpinned", r.unpinned}};
}

json metrics_to_json(const DerivedMetrics& m) {
  json j{{"label", m.label}, {"kernel", m.kernel}};
  if (m.degradation_pct) j["degradation_pct"] = *m.degradation_pct;
  if (m.fabric_overhead_gbps) {
    j["fabric_overhead_gbps"] = *m.fabric_overhead_gbps;
    j["fabric_overhead_is_estimate"] = true;
  }
  if (m.mode_overhead_pct) j["mode_overhead_pct"] = *m.mode_overhead_pct;
  if (m.saturation_threads) j["saturation_threads"] = *m.saturation_threads;
  if (m.saturation_gbps) j["saturation_gbps"] = *m.saturation_gbps;
  return j;
}

bool parse_bool(std::string_view s, const char* column) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw Error(Errc::InvalidArgument, std::string("column ") + column + ": expected true/false");
}

}  // namespace

std::string emit_csv(std::span<const ReportRow> rows) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.label + ',' + r.kernel + ',' + std::to_string(r.threads) + ',' + r.affinity + ',' +
           r.mode + ',' + std::to_string(r.mem_node) + ',' + format_rate(r.best_rate_gbps) + ',' +
           format_time(r.avg_time_s) + ',' + format_time(r.min_time_s) + ',' +
           format_time(r.max_time_s) + ',' + (r.validated ? "true" : "false") + ',' +
           (r.unpinned ? "true" : "false") + '\n';
  }
  return out;
}

std::string emit_json(std::span<const ReportRow> rows, std::span<const DerivedMetrics> metrics,
                      const RunMetadata* metadata) {
  json doc;
  json meta = json::object();
  if (metadata) {
    meta["host"] = metadata->host;
    meta["timestamp"] = metadata->timestamp;
    meta["topology"] = metadata->topology;
    meta["notices"] = metadata->notices;
    meta["unpinned"] = metadata->unpinned;
  }
  meta["units"] = {{"rate", "GB/s (1e9 bytes)"}, {"time", "s"}};
  doc["metadata"] = std::move(meta);
  json rows_json = json::array();
  for (const auto& r : rows) rows_json.push_back(row_to_json(r));
  doc["rows"] = std::move(rows_json);
  json derived = json::array();
  for (const auto& m : metrics) derived.push_back(metrics_to_json(m));
  doc["derived"] = std::move(derived);
  return doc.dump(2) + "\n";
}

std::string emit(std::span<const ReportRow> rows, std::span<const DerivedMetrics> metrics,
                 ReportFormat format, const RunMetadata* metadata) {
  return format == ReportFormat::Csv ? emit_csv(rows) : emit_json(rows, metrics, metadata);
}

std::vector<ReportRow> parse_csv(std::string_view text) {
  std::vector<ReportRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::InvalidArgument, "empty csv");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw Error(Errc::InvalidArgument, "csv header mismatch: '" + line + "'");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    auto fail = [&](const std::string& why) {
      return Error(Errc::InvalidArgument, "csv line " + std::to_string(line_no) + ": " + why);
    };
    if (f.size() != 12) throw fail("expected 12 fields, got " + std::to_string(f.size()));
    ReportRow r;
    r.label = std::string(f[0]);
    r.kernel = std::string(f[1]);
    const auto threads = detail::parse_int<std::size_t>(f[2]);
    const auto node = detail::parse_int<int>(f[5]);
    const auto rate = detail::parse_double(f[6]);
    const auto avg = detail::parse_double(f[7]);
    const auto mn = detail::parse_double(f[8]);
    const auto mx = detail::parse_double(f[9]);
    if (!threads || !node || !rate || !avg || !mn || !mx) throw fail("malformed number");
    r.threads = *threads;
    r.affinity = std::string(f[3]);
    r.mode = std::string(f[4]);
    r.mem_node = *node;
    r.best_rate_gbps = *rate;
    r.avg_time_s = *avg;
    r.min_time_s = *mn;
    r.max_time_s = *mx;
    try {
      r.validated = parse_bool(f[10], "validated");
      r.unpinned = parse_bool(f[11], "unpinned");
    } catch (const Error& e) {
      throw fail(e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

ParsedReport parse_json(std::string_view text) {
  ParsedReport out;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("json parse error: ") + e.what());
  }
  try {
    for (const auto& j : doc.at("rows")) {
      ReportRow r;
      r.label = j.at("label").get<std::string>();
      r.kernel = j.at("kernel").get<std::string>();
      r.threads = j.at("threads").get<std::size_t>();
      r.affinity = j.at("affinity").get<std::string>();
      r.mode = j.at("mode").get<std::string>();
      r.mem_node = j.at("mem_node").get<int>();
      r.best_rate_gbps = j.at("best_rate_gbps").get<double>();
      r.avg_time_s = j.at("avg_time_s").get<double>();
      r.min_time_s = j.at("min_time_s").get<double>();
      r.max_time_s = j.at("max_time_s").get<double>();
      r.validated = j.at("validated").get<bool>();
      r.unpinned = j.at("unpinned").get<bool>();
      out.rows.push_back(std::move(r));
    }
    if (doc.contains("derived")) {
      for (const auto& j : doc.at("derived")) {
        DerivedMetrics m;
        m.label = j.at("label").get<std::string>();
        m.kernel = j.at("kernel").get<std::string>();
        if (j.contains("degradation_pct")) m.degradation_pct = j["degradation_pct"].get<double>();
        if (j.contains("fabric_overhead_gbps")) {
          m.fabric_overhead_gbps = j["fabric_overhead_gbps"].get<double>();
        }
        if (j.contains("mode_overhead_pct")) m.mode_overhead_pct = j["mode_overhead_pct"].get<double>();
        if (j.contains("saturation_threads")) {
          m.saturation_threads = j["saturation_threads"].get<std::size_t>();
        }
        if (j.contains("saturation_gbps")) m.saturation_gbps = j["saturation_gbps"].get<double>();
        out.metrics.push_back(std::move(m));
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("json schema mismatch: ") + e.what());
  }
  return out;
}

ParsedReport parse_report(std::string_view text) {
  const auto t = detail::trim(text);
  if (!t.empty() && t.front() == '{') return parse_json(text);
  return {parse_csv(text), {}};
}

}  // namespace streamer
