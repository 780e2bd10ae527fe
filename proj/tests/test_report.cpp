#include <gtest/gtest.h>

#include <sstream>

#include "json.hpp"
#include "streamer/error.hpp"
#include "streamer/report.hpp"

using namespace streamer;

namespace {

ReportRow row(std::string label, std::string kernel, std::size_t threads, double gbps,
              std::string mode = "pmem", int node = 0) {
  ReportRow r;
  r.label = std::move(label);
  r.kernel = std::move(kernel);
  r.threads = threads;
  r.affinity = "close";
  r.mode = std::move(mode);
  r.mem_node = node;
  r.best_rate_gbps = gbps;
  r.avg_time_s = 0.0123456789;
  r.min_time_s = 0.011;
  r.max_time_s = 0.013;
  r.validated = true;
  return r;
}

std::size_t line_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(Degradation, HeadlineRatios) {
  const double d = degradation_pct(21.0, 15.0);
  EXPECT_GE(d, 28.5);
  EXPECT_LE(d, 28.7);
  EXPECT_NEAR(d, 100.0 * 6.0 / 21.0, 1e-12);
  EXPECT_EQ(degradation_pct(15.0, 7.5), 50.0);
  EXPECT_EQ(degradation_pct(4.2, 4.2), 0.0);
  EXPECT_THROW(degradation_pct(0.0, 1.0), Error);
  EXPECT_THROW(degradation_pct(-1.0, 1.0), Error);
}

TEST(FabricOverhead, Arithmetic) {
  EXPECT_DOUBLE_EQ(fabric_overhead(15.0, 5.0, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(fabric_overhead(15.0, 7.5, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(fabric_overhead(10.0, 6.0, 1.0), 4.0);
  EXPECT_THROW(fabric_overhead(10.0, 6.0, 0.0), Error);
}

TEST(ModeOverhead, Arithmetic) {
  EXPECT_NEAR(mode_overhead_pct(10.0, 8.8), 12.0, 1e-12);
  EXPECT_EQ(mode_overhead_pct(5.0, 5.0), 0.0);
  EXPECT_LT(mode_overhead_pct(5.0, 6.0), 0.0);
  EXPECT_THROW(mode_overhead_pct(row("n", "Copy", 2, 10.0, "numa"), row("p", "Copy", 4, 8.8)),
               Error);
  EXPECT_THROW(mode_overhead_pct(row("n", "Copy", 2, 10.0, "numa"), row("p", "Add", 2, 8.8)),
               Error);
  EXPECT_NEAR(mode_overhead_pct(row("n", "Copy", 2, 10.0, "numa"), row("p", "Copy", 2, 8.8)),
              12.0, 1e-12);
}

TEST(Saturation, Scan) {
  const std::vector<CurvePoint> curve{{1, 8}, {2, 14}, {4, 20}, {8, 21}, {10, 21}};
  EXPECT_EQ(saturation_point(curve, 0.05), (CurvePoint{4, 20}));
  const std::vector<CurvePoint> one{{3, 9}};
  EXPECT_EQ(saturation_point(one), (CurvePoint{3, 9}));
  const std::vector<CurvePoint> falling{{1, 9}, {2, 7}, {4, 5}};
  EXPECT_EQ(saturation_point(falling), (CurvePoint{1, 9}));
  EXPECT_THROW(saturation_point(std::vector<CurvePoint>{}), Error);
}

TEST(Emit, CsvShapeAndHeader) {
  std::vector<ReportRow> rows{row("a", "Copy", 1, 20.5), row("a", "Triad", 1, 21.25)};
  rows[1].validated = false;
  const auto csv = emit_csv(rows);
  EXPECT_EQ(line_count(csv), 3u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
  EXPECT_NE(csv.find("a,Triad,1,close,pmem,0,21.25,0.012345679,0.011000000,0.013000000,false,false"),
            std::string::npos);
  EXPECT_EQ(line_count(emit_csv({})), 1u);
}

TEST(Emit, CsvRoundTrip) {
  std::vector<ReportRow> rows{row("a", "Copy", 1, 20.5), row("b", "Add", 8, 1.0 / 3.0, "numa", 2)};
  const auto back = parse_csv(emit_csv(rows));
  ASSERT_EQ(back.size(), 2u);
  auto expect0 = rows[0];
  expect0.avg_time_s = 0.012345679;  // 9 decimals on the wire
  EXPECT_EQ(back[0], expect0);
  EXPECT_EQ(back[1].best_rate_gbps, 0.333333);
  EXPECT_EQ(back[1].mem_node, 2);
  EXPECT_EQ(back[1].mode, "numa");
  EXPECT_EQ(back[0].avg_time_s, 0.012345679);
}

TEST(Emit, CsvSchemaMismatch) {
  EXPECT_THROW(parse_csv("label,kernel\nx,Copy\n"), Error);
  std::string text(kCsvHeader);
  text += "\na,Copy,1,close,pmem,0,1.0\n";
  EXPECT_THROW(parse_csv(text), Error);
}

TEST(Emit, JsonRoundTripIsExact) {
  std::vector<ReportRow> rows{row("numa", "Copy", 4, 10.0, "numa"), row("pmem", "Copy", 4, 8.8)};
  rows[1].validated = false;
  ComparisonOptions o;
  o.metric = MetricKind::Mode;
  o.baseline = "numa";
  o.candidate = "pmem";
  const auto metrics = derive(rows, o);
  RunMetadata meta;
  meta.host = "h";
  meta.notices = {"one"};
  const auto text = emit_json(rows, metrics, &meta);

  const auto doc = nlohmann::json::parse(text);
  EXPECT_TRUE(doc.contains("metadata"));
  EXPECT_TRUE(doc.contains("rows"));
  EXPECT_TRUE(doc.contains("derived"));

  // Parsing back reproduces what a CSV emit would produce.
  const auto parsed = parse_json(text);
  EXPECT_EQ(parsed.rows, parse_csv(emit_csv(rows)));
  ASSERT_EQ(parsed.metrics.size(), metrics.size());
  EXPECT_FALSE(parsed.rows[1].validated);
  const double mode = *parsed.metrics[0].mode_overhead_pct;
  EXPECT_GE(mode, 10.0);
  EXPECT_LE(mode, 15.0);
}

TEST(Derive, DegradationAtLargestCommonThreads) {
  std::vector<ReportRow> rows{row("base", "Copy", 1, 5.0),  row("base", "Copy", 8, 21.0),
                              row("cand", "Copy", 1, 4.0),  row("cand", "Copy", 8, 15.0),
                              row("base", "Triad", 8, 20.0), row("cand", "Triad", 8, 10.0),
                              row("base", "Copy", 16, 22.0)};
  ComparisonOptions o;
  o.baseline = "base";
  o.candidate = "cand";
  const auto m = derive(rows, o);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].kernel, "Copy");
  EXPECT_EQ(*m[0].saturation_threads, 8u);
  EXPECT_NEAR(*m[0].degradation_pct, 100.0 * 6.0 / 21.0, 1e-12);
  EXPECT_EQ(*m[1].degradation_pct, 50.0);
  EXPECT_EQ(m[2].kernel, "mean");
  EXPECT_NEAR(*m[2].degradation_pct, (100.0 * 6.0 / 21.0 + 50.0) / 2, 1e-12);

  o.threads = 1;
  o.kernel = "copy";
  const auto at1 = derive(rows, o);
  ASSERT_EQ(at1.size(), 2u);
  EXPECT_NEAR(*at1[0].degradation_pct, 20.0, 1e-12);
}

TEST(Derive, MissingLabel) {
  std::vector<ReportRow> rows{row("base", "Copy", 1, 5.0)};
  ComparisonOptions o;
  o.baseline = "base";
  o.candidate = "nope";
  try {
    derive(rows, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingLabel);
  }
  o.candidate.clear();
  EXPECT_THROW(derive(rows, o), Error);
}

TEST(Derive, Saturation) {
  std::vector<ReportRow> rows;
  const std::vector<std::pair<std::size_t, double>> curve{{1, 8}, {2, 14}, {4, 20}, {8, 21}};
  for (auto [t, g] : curve) rows.push_back(row("class1a-pmem0", "Triad", t, g));
  ComparisonOptions o;
  o.metric = MetricKind::Saturation;
  const auto m = derive(rows, o);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(*m[0].saturation_threads, 4u);
  EXPECT_EQ(*m[0].saturation_gbps, 20.0);
  EXPECT_EQ(saturation_summary(rows).size(), 1u);
}

TEST(Format, Numbers) {
  EXPECT_EQ(format_rate(21.123456789), "21.1235");
  EXPECT_EQ(format_rate(25000.0), "25000");
  EXPECT_EQ(format_time(0.096), "0.096000000");
}
