#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "pimpnet/model.hpp"
#include "pimpnet/ops.hpp"
#include "pimpnet/rng.hpp"
#include "pimpnet/tape.hpp"
#include "pimpnet/tensor.hpp"
#include "pimpnet/training.hpp"

namespace {

using namespace pimpnet;

TensorPtr rand_tensor(std::vector<int> shape, Rng& rng, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (auto& v : t->data) v = float(rng.uniform(-1.0, 1.0));
  return t;
}

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.validate_and_finalize();
  return cfg;
}

void BM_Conv3dForward(benchmark::State& state) {
  const int cout = int(state.range(0));
  Rng rng(1);
  auto x = rand_tensor({1, 32, 32, 32}, rng, false);
  auto k = rand_tensor({cout, 1, 5, 5, 5}, rng, false);
  auto b = rand_tensor({cout}, rng, false);
  for (auto _ : state) {
    Tape tape;
    auto y = ops::conv3d(tape, x, k, b, 4, 2);
    benchmark::DoNotOptimize(y->data.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(cout) * 8 * 8 * 8 * 125);
}
BENCHMARK(BM_Conv3dForward)->Arg(8)->Arg(16);

void BM_Conv3dBackward(benchmark::State& state) {
  const int cout = int(state.range(0));
  Rng rng(1);
  auto x = rand_tensor({1, 32, 32, 32}, rng, true);
  auto k = rand_tensor({cout, 1, 5, 5, 5}, rng, true);
  auto b = rand_tensor({cout}, rng, true);
  for (auto _ : state) {
    Tape tape;
    auto loss = ops::mean(tape, ops::square(tape, ops::conv3d(tape, x, k, b, 4, 2)));
    tape.backward(loss);
    benchmark::DoNotOptimize(k->grad.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(cout) * 8 * 8 * 8 * 125);
}
BENCHMARK(BM_Conv3dBackward)->Arg(8)->Arg(16);

void BM_BackboneForward(benchmark::State& state) {
  const auto cfg = desk_config();
  const auto model = make_model(cfg, 7);
  Rng rng(2);
  auto x = rand_tensor({1, 32, 32, 32}, rng, false);
  for (auto _ : state) {
    Tape tape;
    auto z = backbone_forward(tape, model, x);
    benchmark::DoNotOptimize(z->data.data());
  }
}
BENCHMARK(BM_BackboneForward);

void BM_Infer(benchmark::State& state) {
  const auto cfg = desk_config();
  const auto model = make_model(cfg, 7);
  Rng rng(3);
  auto x = rand_tensor({1, 32, 32, 32}, rng, false);
  for (auto _ : state) {
    const auto res = infer(model, x, 72.0f);
    benchmark::DoNotOptimize(res.o.data());
  }
}
BENCHMARK(BM_Infer);

void BM_PretrainPairStep(benchmark::State& state) {
  const auto cfg = desk_config();
  auto model = make_model(cfg, 7);
  Rng rng(4);
  auto x = rand_tensor({1, 32, 32, 32}, rng, false);
  const AugmentConfig aug;
  for (auto _ : state) {
    auto views = make_positive_pair(x, aug, rng);
    Tape tape;
    auto z1 = backbone_forward(tape, model, views.first);
    auto z2 = backbone_forward(tape, model, views.second);
    const std::vector<TensorPtr> rows = {ops::global_maxpool3d(tape, z1).scores,
                                         ops::global_maxpool3d(tape, z2).scores};
    auto loss = ops::add(tape, alignment_loss(tape, z1, z2, 1e-8f),
                         tanh_loss(tape, rows, 1e-8f));
    tape.backward(loss);
    benchmark::DoNotOptimize(model.conv_kernels[0]->grad.data());
  }
}
BENCHMARK(BM_PretrainPairStep);

void BM_AgeSimilarity(benchmark::State& state) {
  for (auto _ : state) {
    double acc = 0.0;
    for (int i = 0; i < 1000; ++i)
      acc += age_similarity_value(55.0 + 0.04 * i, 70.0, 4.0, 8, AgeSimKind::butterworth);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_AgeSimilarity);

}  // namespace

BENCHMARK_MAIN();
