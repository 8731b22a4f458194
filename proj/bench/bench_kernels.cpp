// Serial reference vs OpenMP kernels: training loss/gradient and batched
// composition sampling.

#include <memory>
#include <vector>

#include <benchmark/benchmark.h>

#include "msg/compose.hpp"
#include "msg/kernels.hpp"
#include "msg/tasks.hpp"

namespace {

using namespace msg;

struct LossFixture {
  FlowModel model;
  TrainBatch batch;
};

LossFixture make_loss_fixture(int batch_size) {
  const TaskSpec spec = task_spec("place");
  const auto demos = generate_demos(spec, 5, 0);
  const LocalDataset ds = to_local_dataset(demos, method_frames(spec, Method::kMsg, 1).back().first);
  const auto gtm = fit_gaussian_trajectory(ds, 10);
  const FlowDataset data = make_flow_dataset(ds, 1, &gtm, 6);
  TrainConfig c = desk_train_config();
  FlowModel m = make_model(StateSpace::pose(), true, 6, Prior::pose_centric(), c);
  Rng rng(1);
  const auto draws = draw_batch(m, data, batch_size, rng);
  TrainBatch b = build_batch(m, data, draws);
  return {std::move(m), std::move(b)};
}

void loss_gradient(benchmark::State& state, Execution exec) {
  const LossFixture f = make_loss_fixture(static_cast<int>(state.range(0)));
  std::vector<double> grad(f.model.net.size());
  for (auto _ : state) {
    const LossTerms t = loss_and_gradient(f.model.net, f.batch, {}, grad, exec);
    benchmark::DoNotOptimize(t.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LossGradientSerial(benchmark::State& state) { loss_gradient(state, Execution::kSerial); }
void BM_LossGradientParallel(benchmark::State& state) { loss_gradient(state, Execution::kParallel); }
BENCHMARK(BM_LossGradientSerial)->Arg(128)->Arg(1024);
BENCHMARK(BM_LossGradientParallel)->Arg(128)->Arg(1024);

std::vector<Stream> bench_streams() {
  TrainConfig c = desk_train_config();
  std::vector<Stream> streams;
  for (int f = 0; f < 2; ++f) {
    c.seed = static_cast<std::uint64_t>(f);
    Stream s;
    s.frame = {planar_pose(0.4 * f, 0.1, 0.5 * f), "f"};
    s.model = std::make_shared<const FlowModel>(make_model(StateSpace::pose(), true, 6, Prior::pose_centric(), c));
    streams.push_back(s);
  }
  return streams;
}

void compose_batch(benchmark::State& state, Execution exec) {
  const auto streams = bench_streams();
  const ComposeInput input{StateSpace::from_pose(planar_pose(0.1, 0.2, 0.3)), 0.0, {}};
  const CompositionConfig cfg = CompositionConfig::make(Strategy::kFlowMcmc, Weighting::kLogvarFull);
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state) {
    const auto rs = compose_samples(streams, input, cfg, 7, n, exec);
    benchmark::DoNotOptimize(rs.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_ComposeSamplesSerial(benchmark::State& state) { compose_batch(state, Execution::kSerial); }
void BM_ComposeSamplesParallel(benchmark::State& state) { compose_batch(state, Execution::kParallel); }
BENCHMARK(BM_ComposeSamplesSerial)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ComposeSamplesParallel)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
