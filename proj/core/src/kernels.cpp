#include "streamer/kernels.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <new>

#include "streamer/error.hpp"
#include "streamer/worker_team.hpp"

namespace streamer {

std::string_view kernel_name(KernelKind kind) noexcept {
  switch (kind) {
    case KernelKind::Copy: return "Copy";
    case KernelKind::Scale: return "Scale";
    case KernelKind::Add: return "Add";
    case KernelKind::Triad: return "Triad";
  }
  return "?";
}

KernelKind parse_kernel(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (lower == "copy") return KernelKind::Copy;
  if (lower == "scale") return KernelKind::Scale;
  if (lower == "add" || lower == "sum") return KernelKind::Add;
  if (lower == "triad") return KernelKind::Triad;
  throw Error(Errc::InvalidArgument, "unknown kernel '" + std::string(name) + "'");
}

std::uint64_t bytes_moved(KernelKind kind, std::uint64_t n) noexcept {
  return static_cast<std::uint64_t>(bytes_factor(kind)) * kElementBytes * n;
}

namespace {

constexpr std::align_val_t kHeapAlignment{64};

class HeapStorage final : public TripleStorage {
 public:
  explicit HeapStorage(std::size_t elements) {
    for (auto& p : arrays_) {
      p = static_cast<double*>(::operator new(std::max<std::size_t>(elements, 1) * kElementBytes,
                                              kHeapAlignment));
    }
  }
  ~HeapStorage() override {
    for (auto* p : arrays_) ::operator delete(p, kHeapAlignment);
  }
  HeapStorage(const HeapStorage&) = delete;
  HeapStorage& operator=(const HeapStorage&) = delete;

  std::string_view backend() const noexcept override { return "heap"; }
  double* array(std::size_t i) const noexcept { return arrays_[i]; }

 private:
  std::array<double*, 3> arrays_{};
};

}  // namespace

VectorTriple::VectorTriple(double* a, double* b, double* c, std::size_t length, std::size_t offset,
                           std::unique_ptr<TripleStorage> storage)
    : a_(a), b_(b), c_(c), length_(length), offset_(offset), storage_(std::move(storage)) {}

VectorTriple VectorTriple::heap(std::size_t length, std::size_t offset) {
  auto storage = std::make_unique<HeapStorage>(length + offset);
  auto* s = storage.get();
  return VectorTriple(s->array(0), s->array(1), s->array(2), length, offset, std::move(storage));
}

std::string_view VectorTriple::backend() const noexcept {
  return storage_ ? storage_->backend() : std::string_view("released");
}

void VectorTriple::release() noexcept {
  storage_.reset();
  a_ = b_ = c_ = nullptr;
  length_ = offset_ = 0;
}

ChunkRange chunk_range(std::size_t n, std::size_t parts, std::size_t index) noexcept {
  if (parts == 0 || index >= parts) return {n, n};
  const std::size_t base = n / parts;
  const std::size_t extra = n % parts;
  const std::size_t begin = index * base + std::min(index, extra);
  return {begin, begin + base + (index < extra ? 1 : 0)};
}

void init_chunk(const VectorTriple& v, ChunkRange range) noexcept {
  double* a = v.a().data();
  double* b = v.b().data();
  double* c = v.c().data();
  for (std::size_t j = range.begin; j < range.end; ++j) {
    a[j] = 1.0;
    b[j] = 2.0;
    c[j] = 0.0;
  }
  for (std::size_t j = range.begin; j < range.end; ++j) a[j] = 2.0 * a[j];
}

void kernel_chunk(KernelKind kind, const VectorTriple& v, double scalar,
                  ChunkRange range) noexcept {
  double* __restrict a = v.a().data();
  double* __restrict b = v.b().data();
  double* __restrict c = v.c().data();
  const std::size_t lo = range.begin;
  const std::size_t hi = range.end;
  switch (kind) {
    case KernelKind::Copy:
      for (std::size_t j = lo; j < hi; ++j) c[j] = a[j];
      break;
    case KernelKind::Scale:
      for (std::size_t j = lo; j < hi; ++j) b[j] = scalar * c[j];
      break;
    case KernelKind::Add:
      for (std::size_t j = lo; j < hi; ++j) c[j] = a[j] + b[j];
      break;
    case KernelKind::Triad:
      for (std::size_t j = lo; j < hi; ++j) a[j] = b[j] + scalar * c[j];
      break;
  }
}

void init_arrays(const VectorTriple& v) {
  init_chunk(v, {0, v.allocated_length()});
}

void init_arrays(const VectorTriple& v, WorkerTeam& team, std::size_t workers) {
  const std::size_t total = v.allocated_length();
  if (total == 0) return;
  team.run(workers, [&](std::size_t worker, std::size_t active) {
    init_chunk(v, chunk_range(total, active, worker));
  });
}

double run_kernel(KernelKind kind, const VectorTriple& v, double scalar, WorkerTeam& team,
                  std::size_t workers) {
  const std::size_t n = v.length();
  return team.run(workers, [&](std::size_t worker, std::size_t active) {
    kernel_chunk(kind, v, scalar, chunk_range(n, active, worker));
  });
}

KernelResult compute_result(const TimingRecord& record, std::uint64_t n, std::size_t threads) {
  const auto& times = record.iteration_times;
  if (times.size() < 2) {
    throw Error(Errc::InsufficientIterations,
                "insufficient iterations: need at least 2, got " + std::to_string(times.size()));
  }
  for (double t : times) {
    if (!(t > 0.0)) throw Error(Errc::InvalidArgument, "iteration times must be positive");
  }
  KernelResult result;
  result.kernel = record.kernel;
  result.n = n;
  result.threads = threads;
  const auto measured = std::span(times).subspan(1);
  double sum = 0.0;
  result.min_time_s = measured.front();
  result.max_time_s = measured.front();
  for (double t : measured) {
    sum += t;
    result.min_time_s = std::min(result.min_time_s, t);
    result.max_time_s = std::max(result.max_time_s, t);
  }
  result.avg_time_s = sum / static_cast<double>(measured.size());
  // Rounding in the mean can land a hair outside [min, max] for equal samples.
  result.avg_time_s = std::clamp(result.avg_time_s, result.min_time_s, result.max_time_s);
  result.best_rate_mbps = 1.0e-6 * static_cast<double>(bytes_moved(record.kernel, n)) /
                          result.min_time_s;
  return result;
}

ExpectedValues expected_values(std::size_t cycles, double scalar,
                               std::span<const KernelKind> kernels) {
  auto enabled = [&](KernelKind k) {
    return std::find(kernels.begin(), kernels.end(), k) != kernels.end();
  };
  double a = 1.0, b = 2.0, c = 0.0;
  a = 2.0 * a;
  for (std::size_t k = 0; k < cycles; ++k) {
    if (enabled(KernelKind::Copy)) c = a;
    if (enabled(KernelKind::Scale)) b = scalar * c;
    if (enabled(KernelKind::Add)) c = a + b;
    if (enabled(KernelKind::Triad)) a = b + scalar * c;
  }
  return {a, b, c};
}

namespace {

double avg_relative_error(std::span<const double> values, double expected) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double x : values) sum += std::fabs(x - expected);
  const double avg = sum / static_cast<double>(values.size());
  return expected != 0.0 ? std::fabs(avg / expected) : avg;
}

}  // namespace

ValidationReport check_arrays(const VectorTriple& v, std::size_t cycles, double scalar,
                              double epsilon, std::span<const KernelKind> kernels) {
  const auto expected = expected_values(cycles, scalar, kernels);
  ValidationReport report;
  report.a_avg_rel_error = avg_relative_error(v.a(), expected.a);
  report.b_avg_rel_error = avg_relative_error(v.b(), expected.b);
  report.c_avg_rel_error = avg_relative_error(v.c(), expected.c);
  // NaN errors compare false and fail.
  report.passed = report.a_avg_rel_error < epsilon && report.b_avg_rel_error < epsilon &&
                  report.c_avg_rel_error < epsilon;
  return report;
}

bool validate(const VectorTriple& v, std::size_t cycles, double scalar, double epsilon,
              std::span<const KernelKind> kernels) {
  return check_arrays(v, cycles, scalar, epsilon, kernels).passed;
}

}  // namespace streamer
