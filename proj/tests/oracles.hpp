#pragma once
// Independent reference models used by the tests. Nothing here calls into
// the library's arithmetic; each oracle recomputes its answer from the
// kernel definitions.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "streamer/kernels.hpp"

namespace oracle {

/// Tiny interpreter for one kernel over explicit arrays, counting every
/// 8-byte element load and store it performs.
struct Machine {
  std::vector<double> a, b, c;
  std::uint64_t loads = 0;
  std::uint64_t stores = 0;

  explicit Machine(std::size_t n) : a(n), b(n), c(n) {}

  double load(const std::vector<double>& v, std::size_t i) {
    ++loads;
    return v[i];
  }
  void store(std::vector<double>& v, std::size_t i, double x) {
    ++stores;
    v[i] = x;
  }

  void step(streamer::KernelKind kind, double s) {
    using streamer::KernelKind;
    for (std::size_t i = 0; i < a.size(); ++i) {
      switch (kind) {
        case KernelKind::Copy: store(c, i, load(a, i)); break;
        case KernelKind::Scale: store(b, i, s * load(c, i)); break;
        case KernelKind::Add: store(c, i, load(a, i) + load(b, i)); break;
        case KernelKind::Triad: store(a, i, load(b, i) + s * load(c, i)); break;
      }
    }
  }

  std::uint64_t traffic_bytes() const { return (loads + stores) * 8; }
};

struct Values {
  double a, b, c;
};

/// Initial values as the reference benchmark leaves them: a=1, b=2, c=0,
/// then a doubled once.
inline Values initial() { return {2.0, 2.0, 0.0}; }

/// Scalar replay of `cycles` passes over the given kernels in fixed order.
inline Values replay(std::size_t cycles, double s,
                     const std::vector<streamer::KernelKind>& kernels = {
                         streamer::KernelKind::Copy, streamer::KernelKind::Scale,
                         streamer::KernelKind::Add, streamer::KernelKind::Triad}) {
  Values v = initial();
  for (std::size_t k = 0; k < cycles; ++k) {
    for (auto kind : kernels) {
      switch (kind) {
        case streamer::KernelKind::Copy: v.c = v.a; break;
        case streamer::KernelKind::Scale: v.b = s * v.c; break;
        case streamer::KernelKind::Add: v.c = v.a + v.b; break;
        case streamer::KernelKind::Triad: v.a = v.b + s * v.c; break;
      }
    }
  }
  return v;
}

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  ScratchDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("streamer-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
