#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "crash_oracle.hpp"
#include "oracles.hpp"
#include "streamer/error.hpp"
#include "streamer/pmem_pool.hpp"

using namespace streamer;
using namespace streamer::pmem;
using oracle::le64;
using oracle::logical_state;
namespace fs = std::filesystem;

namespace {

template <class F>
Errc error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return Errc::Io;
}

class PoolTest : public ::testing::Test {
 protected:
  oracle::ScratchDir dir;
  fs::path path() const { return dir / "pool.obj"; }
};

}  // namespace

TEST(PoolHeader, FieldOffsetsOnMedia) {
  PoolHeader h;
  h.layout_name = "array";
  h.pool_size = 0x0102030405060708ull;
  h.root_offset = 0x1111;
  h.heap_head = 0x2222;
  h.log_capacity = 0x3333;
  std::vector<std::byte> buf(kHeaderSize);
  encode_header(h, buf);
  std::vector<char> raw(buf.size());
  std::memcpy(raw.data(), buf.data(), buf.size());

  EXPECT_EQ(std::string(raw.data(), 8), "STRMPOOL");
  EXPECT_EQ(static_cast<unsigned char>(raw[8]), 1);
  EXPECT_EQ(std::string(raw.data() + 12), "array");
  EXPECT_EQ(le64(raw, 76), 0x0102030405060708ull);
  EXPECT_EQ(le64(raw, 84), 0x1111u);
  EXPECT_EQ(le64(raw, 92), 0x2222u);
  EXPECT_EQ(le64(raw, 100), kHeaderSize);
  EXPECT_EQ(le64(raw, 108), 0x3333u);

  const auto back = decode_header(buf);
  EXPECT_EQ(back.layout_name, "array");
  EXPECT_EQ(back.pool_size, h.pool_size);
  EXPECT_EQ(back.heap_head, h.heap_head);
}

TEST(PoolHeader, LogCapacityIsPageRoundedSixteenth) {
  EXPECT_EQ(log_capacity_for(1 << 20), 65536u);
  EXPECT_EQ(log_capacity_for((1 << 20) + 100), 65536u);
  EXPECT_EQ(log_capacity_for(10737418240ull), 671088640u);
}

TEST_F(PoolTest, CreateTenGibSparsePool) {
  auto pool = Pool::create(FileBacking{path()}, "array", 10737418240ull);
  EXPECT_EQ(fs::file_size(path()), 10737418240ull);
  EXPECT_EQ(pool.header().layout_name, "array");
  EXPECT_EQ(pool.header().pool_size, 10737418240ull);
  EXPECT_FALSE(pool.is_volatile());
}

TEST_F(PoolTest, CreateErrors) {
  EXPECT_EQ(error_code_of([&] { Pool::create(FileBacking{path()}, "array", 0); }), Errc::TooSmall);
  EXPECT_EQ(error_code_of([&] {
              Pool::create(FileBacking{path()}, std::string(64, 'x'), kMinPoolSize);
            }),
            Errc::InvalidLayout);
  EXPECT_EQ(error_code_of([&] { Pool::create(FileBacking{path()}, "", kMinPoolSize); }),
            Errc::InvalidLayout);
  { auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize); }
  EXPECT_EQ(error_code_of([&] { Pool::create(FileBacking{path()}, "array", kMinPoolSize); }),
            Errc::AlreadyExists);
}

TEST(AnonymousPool, BoundToLocalNode) {
  auto pool = Pool::create(AnonymousNumaBacking{0}, "array", kMinPoolSize);
  EXPECT_TRUE(pool.is_volatile());
  EXPECT_EQ(pool.header().layout_name, "array");
  EXPECT_EQ(pool.header().pool_size, kMinPoolSize);
  const auto h = pool.alloc(64);
  pool.persist(h, 0, 64);
}

TEST(AnonymousPool, MissingNodeNeedsOverride) {
  EXPECT_EQ(error_code_of([] { Pool::create(AnonymousNumaBacking{97}, "array", kMinPoolSize); }),
            Errc::NumaBindUnavailable);
  PoolCreateOptions options;
  options.allow_unbound = true;
  auto pool = Pool::create(AnonymousNumaBacking{97}, "array", kMinPoolSize, options);
  EXPECT_FALSE(pool.bound());
}

TEST_F(PoolTest, OpenRoundTrip) {
  std::uint64_t root = 0;
  {
    auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
    const auto h = pool.alloc(128);
    std::memset(pool.bytes(h).data(), 0x42, 128);
    pool.persist(h, 0, 128);
    pool.set_root(h.offset);
    root = h.offset;
  }
  auto pool = Pool::open(FileBacking{path()}, "array");
  EXPECT_EQ(pool.root_offset(), root);
  const auto bytes = pool.bytes(root, 128);
  for (auto b : bytes) EXPECT_EQ(b, std::byte{0x42});
}

TEST_F(PoolTest, OpenErrors) {
  { auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize); }
  EXPECT_EQ(error_code_of([&] { Pool::open(FileBacking{path()}, "wrong"); }),
            Errc::LayoutMismatch);

  fs::resize_file(path(), kMinPoolSize / 2);
  EXPECT_EQ(error_code_of([&] { Pool::open(FileBacking{path()}, "array"); }),
            Errc::TruncatedPool);

  oracle::write_bytes(dir / "junk", std::vector<char>(8192, 'j'));
  EXPECT_EQ(error_code_of([&] { Pool::open(FileBacking{dir / "junk"}, "array"); }), Errc::NotAPool);

  auto raw = oracle::read_bytes(path());
  raw[8] = 9;  // version
  oracle::write_bytes(path(), raw);
  EXPECT_EQ(error_code_of([&] { Pool::open(FileBacking{path()}, "array"); }), Errc::NotAPool);
}

TEST_F(PoolTest, AllocationsAreDisjoint) {
  const std::uint64_t n = 1'000'000;
  auto pool = Pool::create(FileBacking{path()}, "array", 64ull << 20);
  std::vector<ObjectHandle> hs;
  for (int i = 0; i < 3; ++i) hs.push_back(pool.alloc(8 * n));
  for (const auto& h : hs) {
    EXPECT_EQ(h.length, 8 * n);
    EXPECT_EQ(h.offset % kObjectAlignment, 0u);
    EXPECT_GE(h.offset, pool.header().heap_start());
    EXPECT_LE(h.offset + h.length, pool.header().pool_size);
  }
  for (std::size_t i = 0; i < hs.size(); ++i) {
    for (std::size_t j = i + 1; j < hs.size(); ++j) {
      const bool disjoint = hs[i].offset + hs[i].length <= hs[j].offset ||
                            hs[j].offset + hs[j].length <= hs[i].offset;
      EXPECT_TRUE(disjoint) << i << " vs " << j;
    }
  }
}

TEST_F(PoolTest, AllocErrors) {
  auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
  EXPECT_EQ(error_code_of([&] { pool.alloc(0); }), Errc::InvalidArgument);
  EXPECT_EQ(error_code_of([&] { pool.alloc(kMinPoolSize); }), Errc::OutOfPoolMemory);
}

TEST_F(PoolTest, AbortRestoresSnapshot) {
  auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
  const auto h = pool.alloc(8 * sizeof(double));
  auto a = pool.as<double>(h);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 2.0;
  pool.persist(h, 0, h.length);

  auto tx = pool.begin();
  tx.add_range(h, 0, h.length);
  a[0] = 7.0;
  tx.abort();
  EXPECT_EQ(a[0], 2.0);
  EXPECT_EQ(tx.state(), TxState::Aborted);
  EXPECT_FALSE(pool.in_transaction());
}

TEST_F(PoolTest, DestructorAbortsActiveTransaction) {
  auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
  const auto h = pool.alloc(16);
  pool.bytes(h)[0] = std::byte{1};
  {
    auto tx = pool.begin();
    tx.add_range(h, 0, 16);
    pool.bytes(h)[0] = std::byte{9};
  }
  EXPECT_EQ(pool.bytes(h)[0], std::byte{1});
}

TEST_F(PoolTest, CommitIsVisibleAfterReopen) {
  ObjectHandle h;
  {
    auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
    h = pool.alloc(32);
    auto tx = pool.begin();
    tx.add_range(h, 0, 32);
    std::memset(pool.bytes(h).data(), 0x5A, 32);
    tx.commit();
    EXPECT_EQ(tx.state(), TxState::Committed);
  }
  auto pool = Pool::open(FileBacking{path()}, "array");
  for (auto b : pool.bytes(h)) EXPECT_EQ(b, std::byte{0x5A});
}

TEST_F(PoolTest, AllocAndRootInsideAbortedTransaction) {
  auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
  const auto before = pool.header();
  {
    auto tx = pool.begin();
    const auto h = pool.alloc(4096);
    std::memset(pool.bytes(h).data(), 0xEE, 4096);
    pool.set_root(h.offset);
    tx.abort();
  }
  EXPECT_EQ(pool.header().heap_head, before.heap_head);
  EXPECT_EQ(pool.root_offset(), before.root_offset);
  // Reused space comes back zeroed.
  const auto again = pool.alloc(4096);
  for (auto b : pool.bytes(again)) ASSERT_EQ(b, std::byte{0});
}

TEST_F(PoolTest, TransactionErrors) {
  auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
  const auto h = pool.alloc(64);
  auto tx = pool.begin();
  EXPECT_EQ(error_code_of([&] { pool.begin(); }), Errc::NestedTransaction);
  EXPECT_EQ(error_code_of([&] { tx.add_range(h, 60, 8); }), Errc::RangeOutOfBounds);
  tx.commit();
  EXPECT_EQ(error_code_of([&] { tx.add_range(h, 0, 8); }), Errc::NoActiveTransaction);
}

TEST_F(PoolTest, LogCapacityIsEnforced) {
  auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
  const auto h = pool.alloc(pool.header().log_capacity * 2);
  auto tx = pool.begin();
  EXPECT_EQ(error_code_of([&] { tx.add_range(h, 0, h.length); }), Errc::LogFull);
}

TEST_F(PoolTest, CrashWithOneLogEntryRollsBack) {
  const fs::path crash = dir / "crash.obj";
  ObjectHandle h;
  std::vector<std::byte> pre;
  {
    auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
    h = pool.alloc(256);
    for (std::size_t i = 0; i < 256; ++i) pool.bytes(h)[i] = std::byte(i);
    pool.persist(h, 0, 256);
    pre.assign(pool.bytes(h).begin(), pool.bytes(h).end());

    auto tx = pool.begin();
    tx.add_range(h, 0, 256);
    std::memset(pool.bytes(h).data(), 0xFF, 256);
    pool.persist(h, 0, 256);
    // The process "dies" here: the file has one complete log entry and the
    // modified range.
    fs::copy_file(path(), crash);
    tx.commit();
  }
  auto recovered = Pool::open(FileBacking{crash}, "array");
  const auto bytes = recovered.bytes(h);
  EXPECT_TRUE(std::equal(bytes.begin(), bytes.end(), pre.begin(), pre.end()));
}

TEST_F(PoolTest, PersistSurvivesReopen) {
  ObjectHandle h;
  {
    auto pool = Pool::create(FileBacking{path()}, "array", kMinPoolSize);
    h = pool.alloc(8 * 1000);
    auto d = pool.as<double>(h);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i) * 0.25;
    pool.persist(h, 0, h.length);
    EXPECT_EQ(error_code_of([&] { pool.persist(h, 8, h.length); }), Errc::RangeOutOfBounds);
  }
  const auto copy = dir / "after-crash.obj";
  fs::copy_file(path(), copy);
  auto pool = Pool::open(FileBacking{copy}, "array");
  auto d = pool.as<double>(h);
  for (std::size_t i = 0; i < d.size(); ++i) ASSERT_EQ(d[i], static_cast<double>(i) * 0.25);
}


TEST(PoolCrash, EveryCrashPointRecoversPreOrPost) {
  oracle::ScratchDir dir;
  const auto run = oracle::scripted_transaction(dir);
  EXPECT_GE(run.copies.size(), 20u);
  EXPECT_NE(logical_state(run.pre), logical_state(run.post));
  EXPECT_TRUE(oracle::mixed_states(run).empty());
}

TEST(PoolCrash, BrokenSnapshotIsDetected) {
  oracle::ScratchDir dir;
  pmem::testing::set_fault(pmem::testing::Fault::SkipUndoSnapshot);
  const auto run = oracle::scripted_transaction(dir);
  pmem::testing::set_fault(pmem::testing::Fault::None);
  EXPECT_FALSE(oracle::mixed_states(run).empty());
}
