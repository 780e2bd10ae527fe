#include <benchmark/benchmark.h>

#include "streamer/kernels.hpp"
#include "streamer/placement.hpp"
#include "streamer/worker_team.hpp"

using namespace streamer;

namespace {

template <KernelKind Kind>
void BM_HeapKernel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  WorkerTeam team(1);
  auto v = VectorTriple::heap(n);
  init_arrays(v, team, 1);
  for (auto _ : state) {
    const double secs = run_kernel(Kind, v, kDefaultScalar, team, 1);
    state.SetIterationTime(secs);
    benchmark::DoNotOptimize(v.a().data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes_moved(Kind, n)));
}

void BM_PlacedTriad(benchmark::State& state) {
  const auto mode = state.range(0) == 0 ? PlacementMode::Numa : PlacementMode::Pmem;
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto topo = detect_topology();
  const int node = topo.nodes_with_cpus().front();
  WorkerTeam team(1);
  auto v = allocate_triple({mode, node, {}}, topo, n, 0, team, 1);
  for (auto _ : state) {
    state.SetIterationTime(run_kernel(KernelKind::Triad, v, kDefaultScalar, team, 1));
  }
  state.SetBytesProcessed(
      static_cast<std::int64_t>(state.iterations() * bytes_moved(KernelKind::Triad, n)));
  state.SetLabel(placement_tag({mode, node, {}}));
}

}  // namespace

BENCHMARK_TEMPLATE(BM_HeapKernel, KernelKind::Copy)->Arg(1 << 16)->Arg(1 << 22)->UseManualTime();
BENCHMARK_TEMPLATE(BM_HeapKernel, KernelKind::Scale)->Arg(1 << 16)->Arg(1 << 22)->UseManualTime();
BENCHMARK_TEMPLATE(BM_HeapKernel, KernelKind::Add)->Arg(1 << 16)->Arg(1 << 22)->UseManualTime();
BENCHMARK_TEMPLATE(BM_HeapKernel, KernelKind::Triad)->Arg(1 << 16)->Arg(1 << 22)->UseManualTime();

BENCHMARK(BM_PlacedTriad)->Args({0, 1 << 22})->Args({1, 1 << 22})->UseManualTime();
