#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pimpnet/tensor.hpp"

namespace pimpnet {

// Moments for one parameter group. m and v run parallel to the group's
// parameter tensors, one float per parameter entry; v stays non-negative.
struct AdamState {
  std::int64_t step = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  static AdamState for_params(std::span<const TensorPtr> params);
};

// Bias-corrected Adam update, applied in place. Every parameter must carry a
// populated gradient of matching length. Per-element math runs in double and
// is rounded to float once per stored value.
void adam_step(std::span<const TensorPtr> params, AdamState& state, float lr);

}  // namespace pimpnet
