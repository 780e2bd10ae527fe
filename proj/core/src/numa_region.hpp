#pragma once

#include <cstddef>
#include <optional>
#include <string>

namespace streamer::detail {

/// Anonymous private mapping, optionally bound (MPOL_BIND, strict) to one node.
class NumaRegion {
 public:
  NumaRegion() = default;
  /// Throws Errc::NumaBindUnavailable when `node` is set, binding fails and
  /// `allow_unbound` is false. With `allow_unbound` the region stays unbound.
  NumaRegion(std::size_t bytes, std::optional<int> node, bool allow_unbound);
  ~NumaRegion();

  NumaRegion(NumaRegion&& other) noexcept;
  NumaRegion& operator=(NumaRegion&& other) noexcept;
  NumaRegion(const NumaRegion&) = delete;
  NumaRegion& operator=(const NumaRegion&) = delete;

  void* data() const noexcept { return data_; }
  std::size_t size() const noexcept { return size_; }
  bool bound() const noexcept { return bound_; }
  const std::string& bind_error() const noexcept { return bind_error_; }

  void reset() noexcept;

 private:
  void* data_ = nullptr;
  std::size_t size_ = 0;
  bool bound_ = false;
  std::string bind_error_;
};

/// Empty string on success, otherwise why the node cannot be bound.
std::string bind_region(void* addr, std::size_t bytes, int node);

std::size_t page_size() noexcept;

}  // namespace streamer::detail
