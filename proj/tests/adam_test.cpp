#include <cmath>
#include <vector>

#include "doctest.h"
#include "pimpnet/adam.hpp"
#include "pimpnet/error.hpp"
#include "pimpnet/tensor.hpp"

using namespace pimpnet;

TEST_SUITE_BEGIN("adam");

TEST_CASE("for_params mirrors parameter sizes with zero moments") {
  auto a = zeros({2, 3}, true);
  auto b = zeros({4}, true);
  std::vector<TensorPtr> params = {a, b};
  auto st = AdamState::for_params(params);
  REQUIRE(st.m.size() == 2);
  REQUIRE(st.v.size() == 2);
  CHECK(st.m[0].size() == 6);
  CHECK(st.v[1].size() == 4);
  CHECK(st.step == 0);
  for (const auto& row : st.m)
    for (float x : row) CHECK(x == 0.0f);
}

TEST_CASE("first step moves by roughly lr times the gradient sign") {
  auto p = tensor_of({3}, {1.0f, -2.0f, 0.5f}, true);
  p->grad = {0.7f, -1.3f, 2.0f};
  std::vector<TensorPtr> params = {p};
  auto st = AdamState::for_params(params);
  adam_step(params, st, 0.01f);
  CHECK(st.step == 1);
  CHECK(p->data[0] == doctest::Approx(1.0f - 0.01f).epsilon(1e-4));
  CHECK(p->data[1] == doctest::Approx(-2.0f + 0.01f).epsilon(1e-4));
  CHECK(p->data[2] == doctest::Approx(0.5f - 0.01f).epsilon(1e-4));
}

TEST_CASE("update matches an independent double-precision replay bit for bit") {
  auto p = tensor_of({4}, {0.2f, -0.4f, 1.1f, 3.0f}, true);
  std::vector<TensorPtr> params = {p};
  auto st = AdamState::for_params(params);
  const float lr = 0.05f;

  std::vector<float> rp = p->data;
  std::vector<float> rm(4, 0.0f), rv(4, 0.0f);
  // The state stores float coefficients; the promised arithmetic promotes
  // exactly those values to double.
  const double b1 = double(st.beta1), b2 = double(st.beta2), eps = double(st.eps);

  for (int step = 1; step <= 50; ++step) {
    p->grad.assign(4, 0.0f);
    for (int j = 0; j < 4; ++j) {
      p->grad[std::size_t(j)] = float(std::sin(0.37 * step + j) + 0.1 * j);
    }
    adam_step(params, st, lr);

    const double c1 = 1.0 - std::pow(b1, double(step));
    const double c2 = 1.0 - std::pow(b2, double(step));
    for (int j = 0; j < 4; ++j) {
      const double g = double(float(std::sin(0.37 * step + j) + 0.1 * j));
      const double mi = b1 * double(rm[std::size_t(j)]) + (1.0 - b1) * g;
      const double vi = b2 * double(rv[std::size_t(j)]) + (1.0 - b2) * g * g;
      rm[std::size_t(j)] = float(mi);
      rv[std::size_t(j)] = float(vi);
      rp[std::size_t(j)] = float(double(rp[std::size_t(j)]) -
                                 double(lr) * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
    for (int j = 0; j < 4; ++j) {
      REQUIRE(p->data[std::size_t(j)] == rp[std::size_t(j)]);
      REQUIRE(st.m[0][std::size_t(j)] == rm[std::size_t(j)]);
      REQUIRE(st.v[0][std::size_t(j)] == rv[std::size_t(j)]);
    }
  }
  CHECK(st.step == 50);
}

TEST_CASE("drives a quadratic to its minimum") {
  auto p = tensor_of({1}, {-4.0f}, true);
  std::vector<TensorPtr> params = {p};
  auto st = AdamState::for_params(params);
  for (int i = 0; i < 800; ++i) {
    p->grad = {2.0f * (p->data[0] - 3.0f)};
    adam_step(params, st, 0.1f);
  }
  CHECK(p->data[0] == doctest::Approx(3.0f).epsilon(1e-3));
}

TEST_CASE("rejects bad learning rates, missing grads, and foreign state") {
  auto p = tensor_of({2}, {1.0f, 2.0f}, true);
  std::vector<TensorPtr> params = {p};
  auto st = AdamState::for_params(params);
  CHECK_THROWS_AS(adam_step(params, st, 0.0f), Error);
  CHECK_THROWS_AS(adam_step(params, st, -0.1f), Error);
  CHECK_THROWS_AS(adam_step(params, st, 0.1f), Error);  // grad never populated

  p->grad = {0.1f, 0.2f};
  auto other = zeros({3}, true);
  other->grad = {1, 2, 3};
  std::vector<TensorPtr> wrong = {p, other};
  CHECK_THROWS_AS(adam_step(wrong, st, 0.1f), Error);
}

TEST_SUITE_END();
