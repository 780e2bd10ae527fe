#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streamer/harness.hpp"

namespace streamer {

/// One CSV line. Rates are GB/s with GB = 10^9 bytes.
struct ReportRow {
  std::string label;
  std::string kernel;
  std::size_t threads = 0;
  std::string affinity;
  std::string mode;
  int mem_node = 0;
  double best_rate_gbps = 0.0;
  double avg_time_s = 0.0;
  double min_time_s = 0.0;
  double max_time_s = 0.0;
  bool validated = false;
  bool unpinned = false;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

inline constexpr std::string_view kCsvHeader =
    "label,kernel,threads,affinity,mode,mem_node,best_rate_gbps,avg_time_s,min_time_s,max_time_s,"
    "validated,unpinned";

ReportRow make_row(const CellResult& cell, const KernelResult& result);
/// One row per kernel result; failed cells without results produce no rows.
std::vector<ReportRow> rows_from(const MatrixResult& result);

/// 100 * (1 - candidate / baseline). Throws on a non-positive baseline.
double degradation_pct(double baseline_gbps, double candidate_gbps);

/// Default DDR4:DDR5 bandwidth ratio used to discount a CXL/DDR4 result
/// against DDR5 remote memory.
inline constexpr double kDefaultGenerationRatio = 0.5;

/// emulated_remote * generation_ratio - cxl: the part of the CXL shortfall
/// not explained by the memory generation. An estimate, not a measurement.
double fabric_overhead(double emulated_remote_gbps, double cxl_gbps,
                       double generation_ratio = kDefaultGenerationRatio);

/// 100 * (1 - pmem / numa). Negative when the pool path is faster.
double mode_overhead_pct(double numa_gbps, double pmem_gbps);
/// Row form; throws unless both rows share kernel, threads and mem_node.
double mode_overhead_pct(const ReportRow& numa, const ReportRow& pmem);

struct CurvePoint {
  std::size_t threads = 0;
  double gbps = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

inline constexpr double kDefaultSaturationTolerance = 0.05;

/// First point (curve sorted by threads) reaching (1 - tolerance) * max.
CurvePoint saturation_point(std::span<const CurvePoint> curve,
                            double tolerance = kDefaultSaturationTolerance);

struct DerivedMetrics {
  std::string label;
  std::string kernel;
  std::optional<double> degradation_pct;
  std::optional<double> fabric_overhead_gbps;
  std::optional<double> mode_overhead_pct;
  std::optional<std::size_t> saturation_threads;
  std::optional<double> saturation_gbps;

  friend bool operator==(const DerivedMetrics&, const DerivedMetrics&) = default;
};

/// Saturation point of every (label, kernel) curve.
std::vector<DerivedMetrics> saturation_summary(std::span<const ReportRow> rows,
                                               double tolerance = kDefaultSaturationTolerance);

enum class MetricKind { Degradation, Fabric, Mode, Saturation };

MetricKind parse_metric(std::string_view name);

struct ComparisonOptions {
  MetricKind metric = MetricKind::Degradation;
  std::string baseline;
  std::string candidate;
  /// Compare at this thread count; default is the largest count both
  /// labels have.
  std::optional<std::size_t> threads;
  std::optional<std::string> kernel;
  double generation_ratio = kDefaultGenerationRatio;
  double tolerance = kDefaultSaturationTolerance;
};

/// Per-kernel metrics between two labels (or over one label's curves for
/// saturation), plus a "mean" entry over kernels for the pairwise metrics.
/// Throws Errc::MissingLabel when a label has no rows.
std::vector<DerivedMetrics> derive(std::span<const ReportRow> rows, const ComparisonOptions& options);

enum class ReportFormat { Csv, Json };

ReportFormat parse_format(std::string_view name);

/// Rates with 6 significant digits, times with 9 decimals.
std::string format_rate(double gbps);
std::string format_time(double seconds);

std::string emit_csv(std::span<const ReportRow> rows);
std::string emit_json(std::span<const ReportRow> rows, std::span<const DerivedMetrics> metrics,
                      const RunMetadata* metadata = nullptr);
std::string emit(std::span<const ReportRow> rows, std::span<const DerivedMetrics> metrics,
                 ReportFormat format, const RunMetadata* metadata = nullptr);

struct ParsedReport {
  std::vector<ReportRow> rows;
  std::vector<DerivedMetrics> metrics;
};

/// Throws Errc::InvalidArgument on schema mismatch.
std::vector<ReportRow> parse_csv(std::string_view text);
ParsedReport parse_json(std::string_view text);
/// Detects JSON by its leading '{'.
ParsedReport parse_report(std::string_view text);

}  // namespace streamer
