#include <benchmark/benchmark.h>

#include <cstring>

#include "streamer/pmem_pool.hpp"

using namespace streamer;

namespace {

// Cost of snapshotting a range in the undo log and committing.
void BM_TxAddRangeCommit(benchmark::State& state) {
  const auto len = static_cast<std::uint64_t>(state.range(0));
  auto pool = pmem::Pool::create(AnonymousNumaBacking{0}, "bench", 64ull << 20,
                                 {.file_mode = 0666, .allow_unbound = true});
  const auto h = pool.alloc(len);
  for (auto _ : state) {
    auto tx = pool.begin();
    tx.add_range(h, 0, len);
    std::memset(pool.bytes(h).data(), 1, len);
    tx.commit();
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * len));
}

void BM_PoolAlloc(benchmark::State& state) {
  auto pool = pmem::Pool::create(AnonymousNumaBacking{0}, "bench", 256ull << 20,
                                 {.file_mode = 0666, .allow_unbound = true});
  std::uint64_t used = 0;
  const std::uint64_t capacity = pool.header().pool_size - pool.header().heap_start();
  for (auto _ : state) {
    if (used + 4096 > capacity) {
      state.PauseTiming();
      pool = pmem::Pool::create(AnonymousNumaBacking{0}, "bench", 256ull << 20,
                                {.file_mode = 0666, .allow_unbound = true});
      used = 0;
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(pool.alloc(64));
    used += 64;
  }
}

}  // namespace

BENCHMARK(BM_TxAddRangeCommit)->Arg(64)->Arg(4096)->Arg(1 << 20);
BENCHMARK(BM_PoolAlloc);
