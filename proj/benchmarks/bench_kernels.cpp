#include <benchmark/benchmark.h>

#include <vector>

#include "growbrain/experiment.hpp"
#include "growbrain/layers.hpp"
#include "growbrain/matrix.hpp"
#include "growbrain/network.hpp"
#include "growbrain/rng.hpp"
#include "growbrain/surgery.hpp"
#include "growbrain/train.hpp"

using namespace growbrain;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

NetworkGraph wide_net(Rng& rng) {
  auto net = build_mlp(std::vector<std::size_t>{32, 64, 64, 5}, rng);
  GrowthPlan plan;
  plan.kind = GrowthKind::Widen;
  plan.classes = 10;
  plan.sizes = {32};
  apply_growth(net, plan, rng);
  return net;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix a = random_matrix(rng, n, n), b = random_matrix(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

static void BM_DenseForward(benchmark::State& state) {
  Rng rng(2);
  const DenseParams p{random_matrix(rng, 64, 65)};
  const Matrix x = random_matrix(rng, static_cast<std::size_t>(state.range(0)), 64);
  for (auto _ : state) benchmark::DoNotOptimize(dense_forward(p, x));
}
BENCHMARK(BM_DenseForward)->Arg(8)->Arg(32)->Arg(128);

static void BM_DenseBackward(benchmark::State& state) {
  Rng rng(3);
  const DenseParams p{random_matrix(rng, 64, 65)};
  const auto batch = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(rng, batch, 64);
  const Matrix d = random_matrix(rng, batch, 64);
  for (auto _ : state) benchmark::DoNotOptimize(dense_backward(p, x, d));
}
BENCHMARK(BM_DenseBackward)->Arg(8)->Arg(32)->Arg(128);

static void BM_NormScale(benchmark::State& state) {
  Rng rng(4);
  const auto p = NormScaleParams::uniform(64, 20.0);
  const Matrix x = random_matrix(rng, 32, 64);
  const Matrix d = random_matrix(rng, 32, 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(normscale_forward(p, x));
    benchmark::DoNotOptimize(normscale_backward(p, x, d));
  }
}
BENCHMARK(BM_NormScale);

static void BM_TrainStepWA(benchmark::State& state) {
  Rng rng(5);
  auto net = wide_net(rng);
  const Matrix x = random_matrix(rng, 32, 32);
  std::vector<Label> y(32);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<Label>(i % 10);
  OptimState opt;
  TrainConfig tc;
  for (auto _ : state) {
    const auto fwd = forward(net, x, y);
    const auto grads = backward(net, fwd.cache, y);
    sgd_step(net, grads, opt, 1e-4, tc);
  }
}
BENCHMARK(BM_TrainStepWA);

static void BM_FineTuneEpoch(benchmark::State& state) {
  ExperimentConfig cfg;
  const auto tasks = prepare_tasks(cfg.task, 1);
  Rng rng(6);
  const auto base = wide_net(rng);
  TrainConfig tc;
  tc.base_lr = 0.001;
  tc.epochs = 1;
  for (auto _ : state) {
    auto net = base;
    benchmark::DoNotOptimize(train(net, tasks.target.train, tasks.target.val, tc));
  }
}
BENCHMARK(BM_FineTuneEpoch);

BENCHMARK_MAIN();
