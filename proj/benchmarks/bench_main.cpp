#include "ivgen/datagen.hpp"
#include "ivgen/geomkit.hpp"
#include "ivgen/policy.hpp"
#include "ivgen/world.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace ivgen;

namespace {

Pose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  Pose p;
  p.position = Vec3(u(rng), u(rng), u(rng));
  p.orientation = canonical(exp_rotation(Vec3(u(rng), u(rng), u(rng)) * 5));
  return p;
}

void BM_Compose(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const Pose a = random_pose(rng), b = random_pose(rng);
  for (auto _ : state) benchmark::DoNotOptimize(compose(a, b));
}
BENCHMARK(BM_Compose);

void BM_TransformSegment(benchmark::State& state) {
  std::mt19937_64 rng(2);
  PoseSequence seg;
  for (int i = 0; i < state.range(0); ++i) seg.push_back(random_pose(rng));
  const Pose src = random_pose(rng), dst = random_pose(rng);
  for (auto _ : state) benchmark::DoNotOptimize(transform_segment(seg, src, dst));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TransformSegment)->Arg(16)->Arg(128);

void BM_Step(benchmark::State& state) {
  const TaskSpec task = make_task(TaskId::planar_peg_insert);
  const WorldState s = reset(task, CorruptionModel::peg_noise(), 3);
  DeltaAction a;
  a.translation = Vec3(0.002, -0.001, 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(step(task, s, a));
}
BENCHMARK(BM_Step);

// Neighbour lookup against a training set of `episodes` expert demos.
void BM_PolicyAct(benchmark::State& state) {
  const TaskSpec task = make_task(TaskId::planar_peg_insert);
  const Dataset demos =
      collect_demos(task, CorruptionModel::peg_noise(), static_cast<std::size_t>(state.range(0)), 5);
  const PolicyModel model = PolicyModel::fit(demos, task, FitConfig{});
  std::vector<Observation> queries;
  const Dataset probe = collect_demos(task, CorruptionModel::peg_noise(), 4, 6);
  for (const Trajectory& t : probe.episodes) {
    for (const Step& s : t.steps) queries.push_back(s.obs);
  }
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.act(queries[i]));
    i = (i + 1) % queries.size();
  }
  state.counters["rows"] = static_cast<double>(demos.step_count());
}
BENCHMARK(BM_PolicyAct)->Arg(10)->Arg(100)->Arg(1000)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
