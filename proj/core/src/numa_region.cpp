#include "numa_region.hpp"

#include <numa.h>
#include <numaif.h>
#include <sys/mman.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>
#include <vector>

#include "streamer/error.hpp"

namespace streamer::detail {

std::size_t page_size() noexcept {
  static const std::size_t size = static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
  return size;
}

std::string bind_region(void* addr, std::size_t bytes, int node) {
  if (numa_available() < 0) return "libnuma reports NUMA unavailable";
  if (node < 0 || node > numa_max_node()) {
    return "node " + std::to_string(node) + " not present on this host";
  }
  const std::size_t bits = sizeof(unsigned long) * 8;
  std::vector<unsigned long> mask(static_cast<std::size_t>(node) / bits + 1, 0UL);
  mask[static_cast<std::size_t>(node) / bits] |= 1UL << (static_cast<std::size_t>(node) % bits);
  if (::mbind(addr, bytes, MPOL_BIND, mask.data(), mask.size() * bits + 1, MPOL_MF_STRICT) != 0) {
    return std::string("mbind failed: ") + std::strerror(errno);
  }
  return {};
}

NumaRegion::NumaRegion(std::size_t bytes, std::optional<int> node, bool allow_unbound) {
  const std::size_t page = page_size();
  size_ = ((bytes == 0 ? 1 : bytes) + page - 1) / page * page;
  void* p = ::mmap(nullptr, size_, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  if (p == MAP_FAILED) {
    const int err = errno;
    size_ = 0;
    throw_system_error(Errc::Io, "mmap of " + std::to_string(bytes) + " bytes", err);
  }
  data_ = p;
  if (!node) return;
  bind_error_ = bind_region(data_, size_, *node);
  bound_ = bind_error_.empty();
  if (!bound_ && !allow_unbound) {
    const std::string why = bind_error_;
    reset();
    throw Error(Errc::NumaBindUnavailable,
                "numa bind unavailable for node " + std::to_string(*node) + ": " + why);
  }
}

NumaRegion::~NumaRegion() { reset(); }

NumaRegion::NumaRegion(NumaRegion&& other) noexcept
    : data_(std::exchange(other.data_, nullptr)),
      size_(std::exchange(other.size_, 0)),
      bound_(other.bound_),
      bind_error_(std::move(other.bind_error_)) {}

NumaRegion& NumaRegion::operator=(NumaRegion&& other) noexcept {
  if (this != &other) {
    reset();
    data_ = std::exchange(other.data_, nullptr);
    size_ = std::exchange(other.size_, 0);
    bound_ = other.bound_;
    bind_error_ = std::move(other.bind_error_);
  }
  return *this;
}

void NumaRegion::reset() noexcept {
  if (data_) ::munmap(data_, size_);
  data_ = nullptr;
  size_ = 0;
}

}  // namespace streamer::detail
