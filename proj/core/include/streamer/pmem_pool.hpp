#pragma once

// Persistent object pool: a named-layout pool file (or anonymous NUMA-bound
// region) holding bump-allocated objects, mutated under undo-logged
// transactions.
//
// On-media layout, all integers little-endian:
//
//   [0, 4096)                     header (PoolHeader, packed in field order)
//   [4096, 4096 + log_capacity)   undo log
//   [heap start, pool_size)       heap, bump-allocated in 16-byte units
//
// Undo log entry: offset u64 | length u64 | crc32(prior bytes) u32 | pad u32 |
// prior bytes, padded to 16. A zero length field terminates the log. An entry
// whose CRC does not match is a torn tail and ends replay.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace streamer {

struct FileBacking {
  std::filesystem::path path;
};

struct AnonymousNumaBacking {
  int node = 0;
};

using BackingSpec = std::variant<FileBacking, AnonymousNumaBacking>;

std::string describe(const BackingSpec& backing);

namespace pmem {

inline constexpr std::array<char, 8> kPoolMagic{'S', 'T', 'R', 'M', 'P', 'O', 'O', 'L'};
inline constexpr std::uint32_t kPoolVersion = 1;
inline constexpr std::uint64_t kHeaderSize = 4096;
inline constexpr std::uint64_t kMinPoolSize = std::uint64_t{1} << 20;
inline constexpr std::size_t kMaxLayoutLength = 63;
inline constexpr std::uint64_t kObjectAlignment = 16;
inline constexpr std::uint64_t kLogEntryHeaderSize = 24;

/// Byte offsets of the header fields.
namespace header_offset {
inline constexpr std::size_t magic = 0;
inline constexpr std::size_t version = 8;
inline constexpr std::size_t layout_name = 12;
inline constexpr std::size_t pool_size = 76;
inline constexpr std::size_t root_offset = 84;
inline constexpr std::size_t heap_head = 92;
inline constexpr std::size_t log_offset = 100;
inline constexpr std::size_t log_capacity = 108;
inline constexpr std::size_t end = 116;
}  // namespace header_offset

struct PoolHeader {
  std::array<char, 8> magic = kPoolMagic;
  std::uint32_t version = kPoolVersion;
  std::string layout_name;
  std::uint64_t pool_size = 0;
  std::uint64_t root_offset = 0;
  std::uint64_t heap_head = 0;
  std::uint64_t log_offset = kHeaderSize;
  std::uint64_t log_capacity = 0;

  std::uint64_t heap_start() const noexcept { return kHeaderSize + log_capacity; }
};

void encode_header(const PoolHeader& header, std::span<std::byte> out);
PoolHeader decode_header(std::span<const std::byte> in);

/// Log capacity chosen at create time: 1/16 of the pool, page-rounded down.
std::uint64_t log_capacity_for(std::uint64_t pool_size) noexcept;

struct ObjectHandle {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend bool operator==(const ObjectHandle&, const ObjectHandle&) = default;
};

enum class TxState { Active, Committed, Aborted };

struct PoolCreateOptions {
  unsigned file_mode = 0666;
  /// Anonymous backing only: keep going unbound when the node cannot be bound.
  bool allow_unbound = false;
};

class Transaction;

class Pool {
 public:
  /// Creates a pool. File backings are created or truncated to `size`.
  static Pool create(const BackingSpec& backing, std::string_view layout, std::uint64_t size,
                     const PoolCreateOptions& options = {});
  /// Opens an existing pool file, rolling back any interrupted transaction.
  static Pool open(const BackingSpec& backing, std::string_view layout);

  Pool() = default;
  ~Pool();
  Pool(Pool&& other) noexcept;
  Pool& operator=(Pool&& other) noexcept;
  Pool(const Pool&) = delete;
  Pool& operator=(const Pool&) = delete;

  bool is_open() const noexcept { return base_ != nullptr; }
  void close() noexcept;

  const PoolHeader& header() const noexcept { return header_; }
  const BackingSpec& backing() const noexcept { return backing_; }
  bool is_volatile() const noexcept;
  /// False for anonymous pools whose node binding failed.
  bool bound() const noexcept { return bound_; }

  /// Bump-allocates a zeroed, 16-byte aligned range. Inside an active
  /// transaction the allocation is undone on abort.
  ObjectHandle alloc(std::uint64_t length);

  std::uint64_t root_offset() const noexcept { return header_.root_offset; }
  /// Inside an active transaction the change is undo-logged.
  void set_root(std::uint64_t offset);

  std::span<std::byte> bytes(const ObjectHandle& h) const;
  std::span<std::byte> bytes(std::uint64_t offset, std::uint64_t length) const;

  template <class T>
  std::span<T> as(const ObjectHandle& h) const {
    auto raw = bytes(h);
    return {reinterpret_cast<T*>(raw.data()), raw.size() / sizeof(T)};
  }

  /// Makes [h.offset + off, +len) durable: msync for files, a store fence for
  /// anonymous backings (which provide no durability).
  void persist(const ObjectHandle& h, std::uint64_t off, std::uint64_t len);

  Transaction begin();
  bool in_transaction() const noexcept { return tx_active_; }

  /// Called after every durable step. Crash-injection tests snapshot the
  /// backing file from here.
  void on_durable_step(std::function<void()> hook) { durable_hook_ = std::move(hook); }

 private:
  friend class Transaction;

  struct TxContext {
    std::uint64_t log_tail = 0;
    std::uint64_t fresh_start = 0;
    bool header_logged_heap = false;
    bool header_logged_root = false;
    std::vector<ObjectHandle> covered;
  };

  void persist_raw(std::uint64_t offset, std::uint64_t length);
  void durable_step();
  void write_header_field(std::size_t field_offset, std::uint64_t value);
  void log_range(std::uint64_t offset, std::uint64_t length);
  void recover();
  void rollback_log();
  void truncate_log();
  void map_file(int fd, std::uint64_t size);

  BackingSpec backing_;
  PoolHeader header_;
  std::byte* base_ = nullptr;
  std::uint64_t mapped_size_ = 0;
  int fd_ = -1;
  bool bound_ = true;
  // Heap bytes at or above this offset have never been written since create.
  std::uint64_t pristine_from_ = 0;
  bool tx_active_ = false;
  TxContext tx_;
  std::function<void()> durable_hook_;
};

/// One undo-logged transaction. Destroying an active transaction aborts it.
/// The pool must not be moved while a transaction is active.
class Transaction {
 public:
  Transaction(Transaction&& other) noexcept;
  Transaction& operator=(Transaction&&) = delete;
  Transaction(const Transaction&) = delete;
  Transaction& operator=(const Transaction&) = delete;
  ~Transaction();

  TxState state() const noexcept { return state_; }

  /// Snapshots [h.offset + off, +len) before it is modified.
  void add_range(const ObjectHandle& h, std::uint64_t off, std::uint64_t len);
  void commit();
  void abort();

  /// Ranges snapshotted so far (offset, length), in log order.
  const std::vector<ObjectHandle>& log_entries() const noexcept { return entries_; }

 private:
  friend class Pool;
  explicit Transaction(Pool* pool) : pool_(pool) {}
  void require_active() const;

  Pool* pool_;
  TxState state_ = TxState::Active;
  std::vector<ObjectHandle> entries_;
};

namespace testing {

enum class Fault {
  None,
  /// add_range records the entry without its prior bytes, so rollback
  /// restores garbage. Used to prove the crash-atomicity checks can fail.
  SkipUndoSnapshot,
};

void set_fault(Fault fault) noexcept;
Fault fault() noexcept;

}  // namespace testing

}  // namespace pmem
}  // namespace streamer
