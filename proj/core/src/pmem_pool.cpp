#include "streamer/pmem_pool.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cerrno>
#include <cstring>
#include <utility>

#include "numa_region.hpp"
#include "streamer/error.hpp"

namespace streamer {

std::string describe(const BackingSpec& backing) {
  if (const auto* file = std::get_if<FileBacking>(&backing)) return "file:" + file->path.string();
  return "anonymous-numa:" + std::to_string(std::get<AnonymousNumaBacking>(backing).node);
}

namespace pmem {
namespace {

std::atomic<testing::Fault> g_fault{testing::Fault::None};

template <class T>
T byteswap_if_big(T value) noexcept {
  if constexpr (std::endian::native == std::endian::big) {
    T out{};
    auto* src = reinterpret_cast<const unsigned char*>(&value);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  } else {
    return value;
  }
}

template <class T>
void store_le(std::byte* dst, T value) noexcept {
  value = byteswap_if_big(value);
  std::memcpy(dst, &value, sizeof(T));
}

template <class T>
T load_le(const std::byte* src) noexcept {
  T value{};
  std::memcpy(&value, src, sizeof(T));
  return byteswap_if_big(value);
}

constexpr std::uint64_t align_up(std::uint64_t value, std::uint64_t alignment) noexcept {
  return (value + alignment - 1) / alignment * alignment;
}

std::uint32_t crc_of(const std::byte* data, std::uint64_t length) noexcept {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (length > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::uint64_t>(length, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    length -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void check_layout(std::string_view layout) {
  if (layout.empty() || layout.size() > kMaxLayoutLength ||
      layout.find('\0') != std::string_view::npos) {
    throw Error(Errc::InvalidLayout, "invalid layout: name must be 1.." +
                                         std::to_string(kMaxLayoutLength) + " bytes");
  }
}

bool has_pool_magic(std::span<const std::byte> header) {
  if (header.size() < header_offset::end) return false;
  return std::memcmp(header.data(), kPoolMagic.data(), kPoolMagic.size()) == 0 &&
         load_le<std::uint32_t>(header.data() + header_offset::version) == kPoolVersion;
}

std::vector<std::byte> read_prefix(int fd, std::size_t bytes) {
  std::vector<std::byte> out(bytes);
  std::size_t done = 0;
  while (done < bytes) {
    const ssize_t got = ::pread(fd, out.data() + done, bytes - done, static_cast<off_t>(done));
    if (got < 0) {
      if (errno == EINTR) continue;
      throw_system_error(Errc::Io, "read pool header", errno);
    }
    if (got == 0) break;
    done += static_cast<std::size_t>(got);
  }
  out.resize(done);
  return out;
}

class FileDescriptor {
 public:
  explicit FileDescriptor(int fd) : fd_(fd) {}
  ~FileDescriptor() {
    if (fd_ >= 0) ::close(fd_);
  }
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;
  int get() const noexcept { return fd_; }
  int release() noexcept { return std::exchange(fd_, -1); }

 private:
  int fd_;
};

}  // namespace

namespace testing {
void set_fault(Fault fault) noexcept { g_fault.store(fault); }
Fault fault() noexcept { return g_fault.load(); }
}  // namespace testing

void encode_header(const PoolHeader& header, std::span<std::byte> out) {
  if (out.size() < header_offset::end) throw Error(Errc::InvalidArgument, "header buffer too small");
  std::memcpy(out.data() + header_offset::magic, header.magic.data(), header.magic.size());
  store_le(out.data() + header_offset::version, header.version);
  std::memset(out.data() + header_offset::layout_name, 0, 64);
  std::memcpy(out.data() + header_offset::layout_name, header.layout_name.data(),
              std::min<std::size_t>(header.layout_name.size(), kMaxLayoutLength));
  store_le(out.data() + header_offset::pool_size, header.pool_size);
  store_le(out.data() + header_offset::root_offset, header.root_offset);
  store_le(out.data() + header_offset::heap_head, header.heap_head);
  store_le(out.data() + header_offset::log_offset, header.log_offset);
  store_le(out.data() + header_offset::log_capacity, header.log_capacity);
}

PoolHeader decode_header(std::span<const std::byte> in) {
  if (in.size() < header_offset::end) throw Error(Errc::NotAPool, "not a pool: header truncated");
  PoolHeader h;
  std::memcpy(h.magic.data(), in.data() + header_offset::magic, h.magic.size());
  h.version = load_le<std::uint32_t>(in.data() + header_offset::version);
  const auto* name = reinterpret_cast<const char*>(in.data() + header_offset::layout_name);
  h.layout_name.assign(name, strnlen(name, 64));
  h.pool_size = load_le<std::uint64_t>(in.data() + header_offset::pool_size);
  h.root_offset = load_le<std::uint64_t>(in.data() + header_offset::root_offset);
  h.heap_head = load_le<std::uint64_t>(in.data() + header_offset::heap_head);
  h.log_offset = load_le<std::uint64_t>(in.data() + header_offset::log_offset);
  h.log_capacity = load_le<std::uint64_t>(in.data() + header_offset::log_capacity);
  return h;
}

std::uint64_t log_capacity_for(std::uint64_t pool_size) noexcept {
  return pool_size / 16 / 4096 * 4096;
}

// ---------------------------------------------------------------------------
// Pool lifecycle

Pool Pool::create(const BackingSpec& backing, std::string_view layout, std::uint64_t size,
                  const PoolCreateOptions& options) {
  check_layout(layout);
  if (size < kMinPoolSize) {
    throw Error(Errc::TooSmall, "too small: pool size " + std::to_string(size) +
                                    " below minimum " + std::to_string(kMinPoolSize));
  }

  Pool pool;
  pool.backing_ = backing;

  if (const auto* file = std::get_if<FileBacking>(&backing)) {
    {
      const int existing = ::open(file->path.c_str(), O_RDONLY | O_CLOEXEC);
      if (existing >= 0) {
        FileDescriptor guard(existing);
        if (has_pool_magic(read_prefix(existing, header_offset::end))) {
          throw Error(Errc::AlreadyExists, "already exists: " + file->path.string());
        }
      }
    }
    FileDescriptor fd(::open(file->path.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC,
                             static_cast<mode_t>(options.file_mode)));
    if (fd.get() < 0) throw_system_error(Errc::Io, "create " + file->path.string(), errno);
    // Apply the requested mode regardless of umask; not every filesystem supports it.
    (void)::fchmod(fd.get(), static_cast<mode_t>(options.file_mode));
    if (::ftruncate(fd.get(), static_cast<off_t>(size)) != 0) {
      throw_system_error(Errc::Io, "size " + file->path.string(), errno);
    }
    pool.map_file(fd.get(), size);
    pool.fd_ = fd.release();
  } else {
    const int node = std::get<AnonymousNumaBacking>(backing).node;
    void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
    if (p == MAP_FAILED) throw_system_error(Errc::Io, "mmap anonymous pool", errno);
    pool.base_ = static_cast<std::byte*>(p);
    pool.mapped_size_ = size;
    const std::string bind_error = detail::bind_region(p, size, node);
    pool.bound_ = bind_error.empty();
    if (!pool.bound_ && !options.allow_unbound) {
      throw Error(Errc::NumaBindUnavailable,
                  "numa bind unavailable for node " + std::to_string(node) + ": " + bind_error);
    }
  }

  PoolHeader& h = pool.header_;
  h.layout_name = std::string(layout);
  h.pool_size = size;
  h.root_offset = 0;
  h.log_offset = kHeaderSize;
  h.log_capacity = log_capacity_for(size);
  h.heap_head = h.heap_start();
  encode_header(h, {pool.base_, kHeaderSize});
  store_le<std::uint64_t>(pool.base_ + h.log_offset + 8, 0);
  pool.pristine_from_ = h.heap_start();
  pool.persist_raw(0, kHeaderSize + kLogEntryHeaderSize);
  if (pool.fd_ >= 0 && ::fsync(pool.fd_) != 0) {
    throw_system_error(Errc::Io, "fsync " + describe(backing), errno);
  }
  pool.durable_step();
  return pool;
}

Pool Pool::open(const BackingSpec& backing, std::string_view layout) {
  const auto* file = std::get_if<FileBacking>(&backing);
  if (!file) {
    throw Error(Errc::InvalidArgument,
                "anonymous pools are volatile and cannot be reopened: " + describe(backing));
  }
  FileDescriptor fd(::open(file->path.c_str(), O_RDWR | O_CLOEXEC));
  if (fd.get() < 0) throw_system_error(Errc::Io, "open " + file->path.string(), errno);

  struct stat st {};
  if (::fstat(fd.get(), &st) != 0) throw_system_error(Errc::Io, "stat " + file->path.string(), errno);
  const auto prefix = read_prefix(fd.get(), header_offset::end);
  if (!has_pool_magic(prefix)) throw Error(Errc::NotAPool, "not a pool: " + file->path.string());

  const PoolHeader h = decode_header(prefix);
  if (h.layout_name != layout) {
    throw Error(Errc::LayoutMismatch, "layout mismatch: pool has '" + h.layout_name +
                                          "', requested '" + std::string(layout) + "'");
  }
  if (static_cast<std::uint64_t>(st.st_size) < h.pool_size) {
    throw Error(Errc::TruncatedPool, "truncated pool: file has " + std::to_string(st.st_size) +
                                         " bytes, header says " + std::to_string(h.pool_size));
  }
  const bool sane = h.pool_size >= kMinPoolSize && h.log_offset == kHeaderSize &&
                    h.heap_start() <= h.pool_size && h.heap_head >= h.heap_start() &&
                    h.heap_head <= h.pool_size &&
                    (h.root_offset == 0 ||
                     (h.root_offset >= h.heap_start() && h.root_offset < h.pool_size));
  if (!sane) throw Error(Errc::NotAPool, "not a pool: inconsistent header in " + file->path.string());

  Pool pool;
  pool.backing_ = backing;
  pool.header_ = h;
  pool.map_file(fd.get(), h.pool_size);
  pool.fd_ = fd.release();
  pool.pristine_from_ = h.pool_size;
  pool.recover();
  return pool;
}

void Pool::map_file(int fd, std::uint64_t size) {
  void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
  if (p == MAP_FAILED) throw_system_error(Errc::Io, "mmap " + describe(backing_), errno);
  base_ = static_cast<std::byte*>(p);
  mapped_size_ = size;
}

Pool::~Pool() { close(); }

Pool::Pool(Pool&& other) noexcept { *this = std::move(other); }

Pool& Pool::operator=(Pool&& other) noexcept {
  if (this != &other) {
    close();
    backing_ = std::move(other.backing_);
    header_ = std::move(other.header_);
    base_ = std::exchange(other.base_, nullptr);
    mapped_size_ = std::exchange(other.mapped_size_, 0);
    fd_ = std::exchange(other.fd_, -1);
    bound_ = other.bound_;
    pristine_from_ = other.pristine_from_;
    tx_active_ = std::exchange(other.tx_active_, false);
    tx_ = std::move(other.tx_);
    durable_hook_ = std::move(other.durable_hook_);
  }
  return *this;
}

void Pool::close() noexcept {
  if (base_) ::munmap(base_, mapped_size_);
  if (fd_ >= 0) ::close(fd_);
  base_ = nullptr;
  mapped_size_ = 0;
  fd_ = -1;
  tx_active_ = false;
}

bool Pool::is_volatile() const noexcept { return std::holds_alternative<AnonymousNumaBacking>(backing_); }

// ---------------------------------------------------------------------------
// Durability primitives

void Pool::persist_raw(std::uint64_t offset, std::uint64_t length) {
  if (length == 0) return;
  if (fd_ < 0) {
    std::atomic_thread_fence(std::memory_order_seq_cst);
    return;
  }
  const std::uint64_t page = detail::page_size();
  const std::uint64_t start = offset / page * page;
  const std::uint64_t end = std::min(align_up(offset + length, page), mapped_size_);
  if (::msync(base_ + start, end - start, MS_SYNC) != 0) {
    throw_system_error(Errc::Io, "msync " + describe(backing_), errno);
  }
}

void Pool::durable_step() {
  if (durable_hook_) durable_hook_();
}

void Pool::write_header_field(std::size_t field_offset, std::uint64_t value) {
  store_le(base_ + field_offset, value);
  persist_raw(field_offset, sizeof(value));
}

void Pool::log_range(std::uint64_t offset, std::uint64_t length) {
  const std::uint64_t entry_size = align_up(kLogEntryHeaderSize + length, kObjectAlignment);
  const std::uint64_t tail = tx_.log_tail;
  if (tail + entry_size + kLogEntryHeaderSize > header_.log_capacity) {
    throw Error(Errc::LogFull, "undo log full: cannot snapshot " + std::to_string(length) +
                                   " bytes (capacity " + std::to_string(header_.log_capacity) +
                                   ")");
  }
  std::byte* entry = base_ + header_.log_offset + tail;

  // Phase 1: prior bytes and the next terminator. The entry's own length
  // field is still zero, so a crash here leaves it invisible.
  std::byte* prior = entry + kLogEntryHeaderSize;
  if (testing::fault() == testing::Fault::SkipUndoSnapshot) {
    std::memset(prior, 0, length);
  } else {
    std::memcpy(prior, base_ + offset, length);
  }
  std::memset(entry + entry_size, 0, kLogEntryHeaderSize);
  persist_raw(header_.log_offset + tail + kLogEntryHeaderSize, entry_size);
  durable_step();

  // Phase 2: publish the entry.
  store_le<std::uint64_t>(entry, offset);
  store_le<std::uint64_t>(entry + 8, length);
  store_le<std::uint32_t>(entry + 16, crc_of(prior, length));
  store_le<std::uint32_t>(entry + 20, 0);
  persist_raw(header_.log_offset + tail, kLogEntryHeaderSize);
  durable_step();

  tx_.log_tail = tail + entry_size;
}

void Pool::recover() {
  if (load_le<std::uint64_t>(base_ + header_.log_offset + 8) != 0) rollback_log();
}

void Pool::rollback_log() {
  struct Entry {
    std::uint64_t offset;
    std::uint64_t length;
    const std::byte* prior;
  };
  std::vector<Entry> entries;
  const std::byte* log = base_ + header_.log_offset;
  std::uint64_t pos = 0;
  while (pos + kLogEntryHeaderSize <= header_.log_capacity) {
    const auto offset = load_le<std::uint64_t>(log + pos);
    const auto length = load_le<std::uint64_t>(log + pos + 8);
    const auto crc = load_le<std::uint32_t>(log + pos + 16);
    if (length == 0) break;
    if (length > header_.log_capacity - pos - kLogEntryHeaderSize) break;
    if (offset > header_.pool_size || length > header_.pool_size - offset) break;
    const std::byte* prior = log + pos + kLogEntryHeaderSize;
    if (crc_of(prior, length) != crc) break;  // torn tail
    entries.push_back({offset, length, prior});
    pos += align_up(kLogEntryHeaderSize + length, kObjectAlignment);
  }
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    std::memmove(base_ + it->offset, it->prior, it->length);
    persist_raw(it->offset, it->length);
  }
  if (!entries.empty()) durable_step();
  header_ = decode_header({base_, kHeaderSize});
  truncate_log();
}

void Pool::truncate_log() {
  write_header_field(header_.log_offset + 8, 0);
  durable_step();
}

// ---------------------------------------------------------------------------
// Objects

ObjectHandle Pool::alloc(std::uint64_t length) {
  if (!is_open()) throw Error(Errc::InvalidArgument, "pool is not open");
  if (length == 0) throw Error(Errc::InvalidArgument, "allocation length must be positive");
  const std::uint64_t aligned = align_up(length, kObjectAlignment);
  if (aligned < length || aligned > header_.pool_size - header_.heap_head) {
    throw Error(Errc::OutOfPoolMemory,
                "out of pool memory: requested " + std::to_string(length) + " bytes, " +
                    std::to_string(header_.pool_size - header_.heap_head) + " remaining");
  }
  if (tx_active_ && !tx_.header_logged_heap) {
    log_range(header_offset::heap_head, sizeof(std::uint64_t));
    tx_.header_logged_heap = true;
  }
  const ObjectHandle handle{header_.heap_head, length};
  if (handle.offset + aligned > pristine_from_) {
    const std::uint64_t dirty_end = std::min(handle.offset + aligned, pristine_from_);
    if (dirty_end > handle.offset) {
      std::memset(base_ + handle.offset, 0, dirty_end - handle.offset);
      persist_raw(handle.offset, dirty_end - handle.offset);
    }
    pristine_from_ = std::max(pristine_from_, handle.offset + aligned);
  } else {
    std::memset(base_ + handle.offset, 0, aligned);
    persist_raw(handle.offset, aligned);
  }
  header_.heap_head += aligned;
  write_header_field(header_offset::heap_head, header_.heap_head);
  durable_step();
  if (tx_active_) tx_.covered.push_back({handle.offset, aligned});
  return handle;
}

void Pool::set_root(std::uint64_t offset) {
  if (offset != 0 && (offset < header_.heap_start() || offset >= header_.heap_head)) {
    throw Error(Errc::RangeOutOfBounds, "range out of bounds: root offset " +
                                            std::to_string(offset) + " outside allocated heap");
  }
  if (tx_active_ && !tx_.header_logged_root) {
    log_range(header_offset::root_offset, sizeof(std::uint64_t));
    tx_.header_logged_root = true;
  }
  header_.root_offset = offset;
  write_header_field(header_offset::root_offset, offset);
  durable_step();
}

std::span<std::byte> Pool::bytes(std::uint64_t offset, std::uint64_t length) const {
  if (offset < header_.heap_start() || offset > header_.pool_size ||
      length > header_.pool_size - offset) {
    throw Error(Errc::RangeOutOfBounds, "range out of bounds: [" + std::to_string(offset) + ", +" +
                                            std::to_string(length) + ") outside heap");
  }
  return {base_ + offset, static_cast<std::size_t>(length)};
}

std::span<std::byte> Pool::bytes(const ObjectHandle& h) const { return bytes(h.offset, h.length); }

void Pool::persist(const ObjectHandle& h, std::uint64_t off, std::uint64_t len) {
  if (off > h.length || len > h.length - off) {
    throw Error(Errc::RangeOutOfBounds, "range out of bounds: persist [" + std::to_string(off) +
                                            ", +" + std::to_string(len) + ") beyond object of " +
                                            std::to_string(h.length) + " bytes");
  }
  (void)bytes(h);
  persist_raw(h.offset + off, len);
  durable_step();
}

// ---------------------------------------------------------------------------
// Transactions

Transaction Pool::begin() {
  if (!is_open()) throw Error(Errc::InvalidArgument, "pool is not open");
  if (tx_active_) throw Error(Errc::NestedTransaction, "nested transaction unsupported");
  tx_ = TxContext{};
  tx_.fresh_start = header_.heap_head;
  tx_active_ = true;
  return Transaction(this);
}

Transaction::Transaction(Transaction&& other) noexcept
    : pool_(std::exchange(other.pool_, nullptr)),
      state_(other.state_),
      entries_(std::move(other.entries_)) {
  other.state_ = TxState::Aborted;
}

Transaction::~Transaction() {
  if (pool_ && state_ == TxState::Active) {
    try {
      abort();
    } catch (...) {
      // The log stays on media; the next open rolls it back.
    }
  }
}

void Transaction::require_active() const {
  if (!pool_ || state_ != TxState::Active || !pool_->tx_active_) {
    throw Error(Errc::NoActiveTransaction, "no active transaction");
  }
}

void Transaction::add_range(const ObjectHandle& h, std::uint64_t off, std::uint64_t len) {
  require_active();
  if (off > h.length || len > h.length - off) {
    throw Error(Errc::RangeOutOfBounds, "range out of bounds: [" + std::to_string(off) + ", +" +
                                            std::to_string(len) + ") beyond object of " +
                                            std::to_string(h.length) + " bytes");
  }
  if (len == 0) return;
  (void)pool_->bytes(h);
  const std::uint64_t start = h.offset + off;
  auto& tx = pool_->tx_;
  if (start >= tx.fresh_start) {
    // Allocated inside this transaction: abort discards it wholesale.
    tx.covered.push_back({start, len});
    return;
  }
  pool_->log_range(start, len);
  entries_.push_back({start, len});
  tx.covered.push_back({start, len});
}

void Transaction::commit() {
  require_active();
  for (const auto& range : pool_->tx_.covered) pool_->persist_raw(range.offset, range.length);
  pool_->durable_step();
  pool_->truncate_log();
  pool_->tx_active_ = false;
  state_ = TxState::Committed;
}

void Transaction::abort() {
  require_active();
  pool_->rollback_log();
  pool_->tx_active_ = false;
  state_ = TxState::Aborted;
}

}  // namespace pmem
}  // namespace streamer
