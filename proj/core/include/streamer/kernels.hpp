#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace streamer {

class WorkerTeam;

/// The four STREAM vector kernels. "Sum" is accepted as an alias of Add.
enum class KernelKind : std::uint8_t { Copy, Scale, Add, Triad };

inline constexpr std::array<KernelKind, 4> kAllKernels{KernelKind::Copy, KernelKind::Scale,
                                                       KernelKind::Add, KernelKind::Triad};

inline constexpr double kDefaultScalar = 3.0;
inline constexpr std::size_t kDefaultNtimes = 10;
inline constexpr double kDefaultEpsilon = 1e-13;
inline constexpr std::size_t kElementBytes = sizeof(double);

/// 8-byte words moved per element.
constexpr int bytes_factor(KernelKind kind) noexcept {
  switch (kind) {
    case KernelKind::Copy:
    case KernelKind::Scale: return 2;
    case KernelKind::Add:
    case KernelKind::Triad: return 3;
  }
  return 0;
}

constexpr int flops_factor(KernelKind kind) noexcept {
  switch (kind) {
    case KernelKind::Copy: return 0;
    case KernelKind::Scale:
    case KernelKind::Add: return 1;
    case KernelKind::Triad: return 2;
  }
  return 0;
}

std::string_view kernel_name(KernelKind kind) noexcept;
/// Case-insensitive; throws Errc::InvalidArgument on unknown names.
KernelKind parse_kernel(std::string_view name);

std::uint64_t bytes_moved(KernelKind kind, std::uint64_t n) noexcept;

/// Owner of the memory behind a VectorTriple. Destroying it releases the arrays.
class TripleStorage {
 public:
  virtual ~TripleStorage() = default;
  virtual std::string_view backend() const noexcept = 0;
};

/// The benchmark arrays a, b, c. Each holds length + offset elements; the
/// kernels touch the first `length`.
class VectorTriple {
 public:
  VectorTriple() = default;
  VectorTriple(double* a, double* b, double* c, std::size_t length, std::size_t offset,
               std::unique_ptr<TripleStorage> storage);

  /// Triple on ordinary heap memory.
  static VectorTriple heap(std::size_t length, std::size_t offset = 0);

  std::span<double> a() const noexcept { return {a_, length_}; }
  std::span<double> b() const noexcept { return {b_, length_}; }
  std::span<double> c() const noexcept { return {c_, length_}; }

  std::size_t length() const noexcept { return length_; }
  std::size_t offset() const noexcept { return offset_; }
  std::size_t allocated_length() const noexcept { return length_ + offset_; }

  std::string_view backend() const noexcept;
  bool released() const noexcept { return storage_ == nullptr; }

  /// Metadata: false when memory could not be bound to the requested node.
  bool bound() const noexcept { return bound_; }
  void set_bound(bool bound) noexcept { bound_ = bound; }

  TripleStorage* storage() const noexcept { return storage_.get(); }

  /// Frees the arrays. Calling it again is a no-op.
  void release() noexcept;

 private:
  double* a_ = nullptr;
  double* b_ = nullptr;
  double* c_ = nullptr;
  std::size_t length_ = 0;
  std::size_t offset_ = 0;
  bool bound_ = true;
  std::unique_ptr<TripleStorage> storage_;
};

struct ChunkRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Contiguous static partition of [0, n) into `parts` chunks; the remainder
/// goes one element each to the lowest-indexed chunks.
ChunkRange chunk_range(std::size_t n, std::size_t parts, std::size_t index) noexcept;

/// Per-chunk bodies used by the parallel entry points.
void init_chunk(const VectorTriple& v, ChunkRange range) noexcept;
void kernel_chunk(KernelKind kind, const VectorTriple& v, double scalar, ChunkRange range) noexcept;

/// a=1, b=2, c=0, then a*=2, over all allocated elements.
void init_arrays(const VectorTriple& v);
/// Same, first-touched by the first `workers` members of the team.
void init_arrays(const VectorTriple& v, WorkerTeam& team, std::size_t workers);

/// Executes one kernel across the team and returns its wall-clock seconds.
double run_kernel(KernelKind kind, const VectorTriple& v, double scalar, WorkerTeam& team,
                  std::size_t workers);

struct TimingRecord {
  KernelKind kernel = KernelKind::Copy;
  std::vector<double> iteration_times;

  std::size_t ntimes() const noexcept { return iteration_times.size(); }
};

struct KernelResult {
  KernelKind kernel = KernelKind::Copy;
  std::uint64_t n = 0;
  std::size_t threads = 1;
  double best_rate_mbps = 0.0;
  double avg_time_s = 0.0;
  double min_time_s = 0.0;
  double max_time_s = 0.0;
  bool validated = false;
};

/// Statistics over iterations 1..ntimes-1; iteration 0 is warm-up and is
/// excluded. MB is 10^6 bytes.
KernelResult compute_result(const TimingRecord& record, std::uint64_t n, std::size_t threads = 1);

struct ExpectedValues {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

/// Replays `cycles` passes of the enabled kernels (in Copy, Scale, Add, Triad
/// order) on the scalars (2, 2, 0).
ExpectedValues expected_values(std::size_t cycles, double scalar,
                               std::span<const KernelKind> kernels = kAllKernels);

struct ValidationReport {
  bool passed = false;
  double a_avg_rel_error = 0.0;
  double b_avg_rel_error = 0.0;
  double c_avg_rel_error = 0.0;
};

ValidationReport check_arrays(const VectorTriple& v, std::size_t cycles, double scalar,
                              double epsilon = kDefaultEpsilon,
                              std::span<const KernelKind> kernels = kAllKernels);

/// True iff the average relative error of each array against its replayed
/// constant is below epsilon.
bool validate(const VectorTriple& v, std::size_t cycles, double scalar = kDefaultScalar,
              double epsilon = kDefaultEpsilon,
              std::span<const KernelKind> kernels = kAllKernels);

}  // namespace streamer
