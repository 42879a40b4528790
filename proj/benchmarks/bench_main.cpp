// Microbenchmarks for the hot paths: model construction, the two E-step
// flavors (tree walk vs dense responsibilities), the 6-DOF solve, and a
// whole registration. Run manually, e.g.
//
//   build/benchmarks/treereg_bench --benchmark_min_time=0.5s
//
// The headline comparison is BM_AssociateAdaptive vs BM_AssociateDense at
// the same point count: the walk touches at most 8*levels components per
// point while the dense pass touches all of them.

#include <benchmark/benchmark.h>

#include "treereg/association.hpp"
#include "treereg/cloud_io.hpp"
#include "treereg/gmm.hpp"
#include "treereg/mstep.hpp"
#include "treereg/registration.hpp"
#include "treereg/synthetic.hpp"

using namespace treereg;

namespace {

PointCloud bench_cloud(std::size_t n) { return synthetic_lumpy(n, 7); }

RigidTransform bench_offset() {
  SyntheticTransformSpec spec;
  spec.rot_range_deg = 8.0;
  spec.trans_range = 0.03;
  spec.seed = 21;
  return random_rigid_transform(spec, 0);
}

void BM_TreeBuild(benchmark::State& state) {
  const PointCloud cloud = bench_cloud(static_cast<std::size_t>(state.range(0)));
  ModelConfig cfg;
  cfg.max_level = static_cast<int>(state.range(1));
  for (auto _ : state) {
    GmmTree tree = build_tree(cloud, cfg);
    benchmark::DoNotOptimize(tree.nodes.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TreeBuild)
    ->Args({2000, 2})
    ->Args({2000, 3})
    ->Args({5000, 3})
    ->Unit(benchmark::kMillisecond);

void BM_FlatGmmBuild(benchmark::State& state) {
  const PointCloud cloud = bench_cloud(2000);
  ModelConfig cfg;
  for (auto _ : state) {
    auto comps = build_flat_gmm(cloud, static_cast<std::size_t>(state.range(0)), cfg);
    benchmark::DoNotOptimize(comps.data());
  }
  state.SetItemsProcessed(state.iterations() * 2000);
}
BENCHMARK(BM_FlatGmmBuild)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_AssociateAdaptive(benchmark::State& state) {
  const PointCloud cloud = bench_cloud(static_cast<std::size_t>(state.range(0)));
  ModelConfig cfg;
  cfg.max_level = 3;
  const GmmTree tree = build_tree(cloud, cfg);
  const RigidTransform t = bench_offset();
  AssocConfig assoc;
  std::uint64_t evals = 0, points = 0;
  for (auto _ : state) {
    MomentSet moments = associate_adaptive(cloud, tree, t, assoc);
    benchmark::DoNotOptimize(moments.m0.data());
    evals += moments.density_evaluations;
    points += cloud.size();
  }
  state.SetItemsProcessed(static_cast<int64_t>(points));
  state.counters["evals_per_point"] =
      points > 0 ? static_cast<double>(evals) / static_cast<double>(points) : 0;
}
BENCHMARK(BM_AssociateAdaptive)->Arg(5000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_AssociateDense(benchmark::State& state) {
  const PointCloud cloud = bench_cloud(static_cast<std::size_t>(state.range(0)));
  ModelConfig cfg;
  const auto comps = build_flat_gmm(cloud, 512, cfg);
  const RigidTransform t = bench_offset();
  std::uint64_t evals = 0, points = 0;
  for (auto _ : state) {
    MomentSet moments = responsibilities_dense(cloud, comps, t);
    benchmark::DoNotOptimize(moments.m0.data());
    evals += moments.density_evaluations;
    points += cloud.size();
  }
  state.SetItemsProcessed(static_cast<int64_t>(points));
  state.counters["evals_per_point"] =
      points > 0 ? static_cast<double>(evals) / static_cast<double>(points) : 0;
}
BENCHMARK(BM_AssociateDense)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_MStepSolve(benchmark::State& state) {
  const PointCloud cloud = bench_cloud(5000);
  ModelConfig cfg;
  cfg.max_level = 3;
  const GmmTree tree = build_tree(cloud, cfg);
  const RigidTransform t = bench_offset();
  AssocConfig assoc;
  const MomentSet moments = associate_adaptive(cloud, tree, t, assoc);
  const VirtualPointSet vps = make_virtual_points(moments, tree.nodes);
  for (auto _ : state) {
    MStepSolution sol = solve_mstep(vps);
    benchmark::DoNotOptimize(sol.omega.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(vps.size()));
}
BENCHMARK(BM_MStepSolve);

void BM_RegisterClouds(benchmark::State& state) {
  const PointCloud target = bench_cloud(static_cast<std::size_t>(state.range(0)));
  const PointCloud source = transformed(target, bench_offset());
  RegistrationConfig cfg;
  cfg.variant = Variant::parse("adaptive:3");
  for (auto _ : state) {
    RegistrationResult res = register_clouds(target, source, cfg);
    benchmark::DoNotOptimize(res.iterations);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RegisterClouds)->Arg(5000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
