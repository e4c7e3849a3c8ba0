#include <cmath>
#include <vector>

#include "doctest.h"
#include "pimpnet/model.hpp"
#include "pimpnet/ops.hpp"
#include "pimpnet/rng.hpp"
#include "pimpnet/tape.hpp"
#include "pimpnet/tensor.hpp"
#include "pimpnet/training.hpp"
#include "support.hpp"

using namespace pimpnet;
using testsupport::check_gradients;
using testsupport::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.ch = 1;
  cfg.S = cfg.R = cfg.C = 8;
  cfg.M = 4;
  cfg.N = 2;
  cfg.K = 2;
  cfg.t_bar = 4.0f;
  cfg.s = 8;
  cfg.age_grid_min = 55.0f;
  cfg.age_grid_max = 85.0f;
  cfg.backbone = {{4, 3, 2, 1}};
  cfg.validate_and_finalize();
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("gradcheck");

TEST_CASE("conv3d gradients for input, kernel, and bias") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(derive_seed(1000, seed));
    auto input = random_tensor({2, 5, 5, 5}, rng, -1.0f, 1.0f);
    auto kernel = random_tensor({3, 2, 3, 3, 3}, rng, -0.4f, 0.4f);
    auto bias = random_tensor({3}, rng, -0.2f, 0.2f);
    Rng pick(derive_seed(1001, seed));
    check_gradients(
        {input, kernel, bias},
        [&](Tape& tape) {
          return ops::mean(tape, ops::square(tape, ops::conv3d(tape, input, kernel, bias, 2, 1)));
        },
        5, pick, "conv3d");
  }
}

TEST_CASE("softmax_over_channels gradient") {
  Rng rng(11);
  auto z = random_tensor({3, 2, 2, 2}, rng, -2.0f, 2.0f);
  auto r = random_tensor({3, 2, 2, 2}, rng, -1.0f, 1.0f, false);
  Rng pick(12);
  check_gradients(
      {z},
      [&](Tape& tape) {
        return ops::sum(tape, ops::mul(tape, ops::softmax_over_channels(tape, z), r));
      },
      8, pick, "softmax_over_channels");
}

TEST_CASE("sum_over_channels gradient") {
  Rng rng(13);
  auto z = random_tensor({3, 2, 2, 2}, rng, -1.0f, 1.0f);
  Rng pick(14);
  check_gradients(
      {z},
      [&](Tape& tape) {
        return ops::mean(tape, ops::square(tape, ops::sum_over_channels(tape, z)));
      },
      8, pick, "sum_over_channels");
}

TEST_CASE("global_maxpool3d gradient away from ties") {
  Rng rng(15);
  auto z = random_tensor({4, 2, 3, 3}, rng, 0.0f, 1.0f);
  // Separate each channel's maximum from the runner-up by a clear margin.
  for (int c = 0; c < 4; ++c) z->data[std::size_t(c) * 18 + std::size_t(c) * 5 + 1] += 1.0f;
  auto r = random_tensor({4}, rng, 0.5f, 1.5f, false);
  Rng pick(16);
  check_gradients(
      {z},
      [&](Tape& tape) {
        auto res = ops::global_maxpool3d(tape, z);
        return ops::sum(tape, ops::mul(tape, res.scores, r));
      },
      10, pick, "global_maxpool3d");
}

TEST_CASE("smooth unary chains") {
  Rng rng(17);
  auto x = random_tensor({12}, rng, -0.9f, 0.9f);
  Rng pick(18);
  check_gradients(
      {x},
      [&](Tape& tape) {
        auto t = ops::tanh(tape, x);
        auto s = ops::square(tape, x);
        auto l = ops::log(tape, ops::add_scalar(tape, s, 0.5f));
        auto q = ops::sqrt(tape, ops::add_scalar(tape, s, 0.25f));
        return ops::mean(tape, ops::add(tape, ops::add(tape, t, l), q));
      },
      12, pick, "tanh/square/log/sqrt chain");
}

TEST_CASE("relu and clamp gradients away from their kinks") {
  auto x = tensor_of({8}, {-2.0f, -1.0f, -0.3f, -0.1f, 0.2f, 0.4f, 1.0f, 2.0f}, true);
  Rng pick(19);
  check_gradients(
      {x},
      [&](Tape& tape) {
        auto r = ops::relu(tape, x);
        auto c = ops::clamp(tape, x, -0.5f, 0.5f);
        return ops::sum(tape, ops::add(tape, ops::square(tape, r), ops::square(tape, c)));
      },
      8, pick, "relu/clamp");
}

TEST_CASE("binary ops, reductions, and concat") {
  Rng rng(20);
  auto a = random_tensor({6}, rng, -1.0f, 1.0f);
  auto b = random_tensor({6}, rng, 0.5f, 1.5f);
  auto c = random_tensor({3}, rng, -1.0f, 1.0f);
  Rng pick(21);
  check_gradients(
      {a, b, c},
      [&](Tape& tape) {
        auto prod = ops::mul(tape, a, b);
        auto shifted = ops::add_scalar(tape, ops::mul_scalar(tape, prod, 0.5f), 0.1f);
        auto joined = ops::concat(tape, shifted, c);
        return ops::add(tape, ops::mean(tape, joined),
                        ops::mul_scalar(tape, ops::sum(tape, ops::square(tape, c)), 0.25f));
      },
      6, pick, "binary/reduce/concat");
}

TEST_CASE("vecmat with log_softmax cross-entropy") {
  Rng rng(22);
  auto v = random_tensor({5}, rng, 0.0f, 1.0f);
  auto w = random_tensor({5, 3}, rng, -1.0f, 1.0f);
  Rng pick(23);
  check_gradients(
      {v, w},
      [&](Tape& tape) {
        auto o = ops::vecmat(tape, v, w);
        auto ls = ops::log_softmax(tape, o);
        return ops::mul_scalar(tape, ops::gather_scalar(tape, ls, 1), -1.0f);
      },
      8, pick, "vecmat/log_softmax/gather");
}

TEST_CASE("age similarity gradients in the transition band") {
  for (int variant = 0; variant < 2; ++variant) {
    const AgeSimKind kind = variant == 0 ? AgeSimKind::butterworth : AgeSimKind::exponential;
    auto t_age = tensor_of({4}, {55.0f, 61.5f, 66.0f, 71.0f}, true);
    auto r = tensor_of({4}, {1.0f, 0.8f, 1.2f, 0.9f}, false);
    const float x_age = 59.2f;  // off every kink, near the butterworth shoulder
    Rng pick(24);
    check_gradients(
        {t_age},
        [&](Tape& tape) {
          auto p = age_similarity(tape, x_age, t_age, 4.0f, 8, kind);
          return ops::sum(tape, ops::mul(tape, p, r));
        },
        4, pick, variant == 0 ? "age butterworth" : "age exponential");
  }
}

TEST_CASE("composed stage-1 losses through the backbone") {
  const ModelConfig cfg = tiny_config();
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    auto model = make_model(cfg, derive_seed(3000, seed));
    Rng rng(derive_seed(3001, seed));
    auto x1 = random_tensor({1, 8, 8, 8}, rng, 0.0f, 1.0f, false);
    auto x2 = random_tensor({1, 8, 8, 8}, rng, 0.0f, 1.0f, false);
    Rng pick(derive_seed(3002, seed));
    check_gradients(
        model.backbone_params(),
        [&](Tape& tape) {
          auto z1 = backbone_forward(tape, model, x1);
          auto z2 = backbone_forward(tape, model, x2);
          auto align = alignment_loss(tape, z1, z2, 1e-8f);
          std::vector<TensorPtr> rows = {ops::global_maxpool3d(tape, z1).scores,
                                         ops::global_maxpool3d(tape, z2).scores};
          auto lt = tanh_loss(tape, rows, 1e-8f);
          // Scales keep the loss well under 1 so float32 output quantization
          // stays below the finite-difference floors.
          return ops::add(tape, ops::mul_scalar(tape, align, 0.1f),
                          ops::mul_scalar(tape, lt, 0.05f));
        },
        4, pick, "stage-1 composite");
  }
}

TEST_CASE("composed stage-2 loss reaches every parameter group") {
  const ModelConfig cfg = tiny_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto model = make_model(cfg, derive_seed(4000, seed));
    // Break the all-ones head symmetry so class gradients are informative.
    {
      Rng jitter(derive_seed(4001, seed));
      for (auto& v : model.w_c->data) v = float(jitter.uniform(0.2, 1.8));
    }
    Rng rng(derive_seed(4002, seed));
    auto x1 = random_tensor({1, 8, 8, 8}, rng, 0.0f, 1.0f, false);
    auto x2 = random_tensor({1, 8, 8, 8}, rng, 0.0f, 1.0f, false);
    const float ages[2] = {59.0f, 81.0f};
    const std::vector<int> labels = {0, 1};
    Rng pick(derive_seed(4003, seed));

    check_gradients(
        model.all_params(),
        [&](Tape& tape) {
          const TensorPtr views[2] = {x1, x2};
          std::vector<TensorPtr> p_img_rows, score_rows;
          TensorPtr align_total;
          for (int i = 0; i < 2; ++i) {
            auto z = backbone_forward(tape, model, views[i]);
            auto zb = backbone_forward(tape, model, views[1 - i]);
            auto align = alignment_loss(tape, z, zb, 1e-8f);
            align_total = align_total ? ops::add(tape, align_total, align) : align;
            auto pooled = ops::global_maxpool3d(tape, z);
            p_img_rows.push_back(pooled.scores);
            auto p_age = age_similarity(tape, ages[i], model.t_age, cfg.t_bar, cfg.s,
                                        cfg.age_sim_kind);
            auto p = ops::concat(tape, pooled.scores, p_age);
            score_rows.push_back(class_scores_train(tape, p, model.w_c));
          }
          auto lt = tanh_loss(tape, p_img_rows, 1e-8f);
          auto lc = classification_loss(tape, score_rows, labels);
          auto total = ops::mul_scalar(tape, align_total, 0.05f);
          total = ops::add(tape, total, ops::mul_scalar(tape, lt, 0.05f));
          return ops::add(tape, total, ops::mul_scalar(tape, lc, 0.05f));
        },
        4, pick, "stage-2 composite");
  }
}

TEST_SUITE_END();
