#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "streamer/pmem_pool.hpp"

namespace streamer {

struct SelftestOptions {
  std::size_t n = 100'000;
  /// Scratch directory for pool files; a fresh temp directory when empty.
  std::filesystem::path scratch_dir;
  /// Deliberately broken pool behaviour, to show the suite catches it.
  pmem::testing::Fault fault = pmem::testing::Fault::None;
  std::uint32_t seed = 20240611;
};

struct PropertyVerdict {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestReport {
  std::vector<PropertyVerdict> verdicts;
  double seconds = 0.0;

  bool passed() const noexcept;
};

/// Desk-scale property suite: validation oracle, traffic accounting, pool
/// crash injection and layout binding, and the affinity properties.
SelftestReport run_selftest(const SelftestOptions& options = {});

}  // namespace streamer
