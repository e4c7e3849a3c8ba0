#pragma once

#include <array>
#include <span>
#include <vector>

#include "pimpnet/tape.hpp"
#include "pimpnet/tensor.hpp"

namespace pimpnet::ops {

// Exactly the operation set the model needs; no general broadcasting.
// Everything is single-threaded and deterministic: fixed loop order, 64-bit
// accumulation in conv3d and reductions, one rounding to float32.

// Cross-correlation of input [Cin x D x H x W] with kernel
// [Cout x Cin x k x k x k] plus bias [Cout], producing
// [Cout x D' x H' x W'] with E' = (E + 2*padding - k) / stride + 1.
//
// Summation contract: for each output cell the products are accumulated in a
// double in loop order (ci, kd, kh, kw), zero-padding terms skipped, bias
// added last, one rounding to float.
TensorPtr conv3d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                 const TensorPtr& bias, int stride, int padding);

struct MaxPool3dResult {
  TensorPtr scores;                         // [M]
  std::vector<std::array<int, 3>> argmax;   // first maximizer, row-major scan
};

// Per-channel global max over [M x D x H x W]. The gradient routes only to
// the recorded maximizer, so it is one-hot per channel.
MaxPool3dResult global_maxpool3d(Tape& tape, const TensorPtr& z);

// Softmax over the channel axis of [M x D x H x W], stabilized by
// max-subtraction; every spatial location sums to 1.
TensorPtr softmax_over_channels(Tape& tape, const TensorPtr& z);

// Subtracts each channel's spatial mean from [M x D x H x W], so a channel
// can only stand out where it responds above its own average. Constant
// per-channel offsets (biases, background response) cancel exactly.
TensorPtr center_channels(Tape& tape, const TensorPtr& z);

// Channel-axis reduction of [M x D x H x W] down to [D x H x W].
TensorPtr sum_over_channels(Tape& tape, const TensorPtr& z);

TensorPtr relu(Tape& tape, const TensorPtr& x);
TensorPtr tanh(Tape& tape, const TensorPtr& x);

// Odd, monotone squash y = cap * x / (cap + |x|), bounded by +-cap. Unlike
// tanh its slope decays only quadratically, so values far past the cap still
// pass usable gradient.
TensorPtr softcap(Tape& tape, const TensorPtr& x, float cap);
TensorPtr log(Tape& tape, const TensorPtr& x);  // caller guards positivity
TensorPtr square(Tape& tape, const TensorPtr& x);
TensorPtr sqrt(Tape& tape, const TensorPtr& x);
TensorPtr clamp(Tape& tape, const TensorPtr& x, float lo, float hi);

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr add_scalar(Tape& tape, const TensorPtr& x, float c);
TensorPtr mul_scalar(Tape& tape, const TensorPtr& x, float c);

TensorPtr sum(Tape& tape, const TensorPtr& x);   // -> [1]
TensorPtr mean(Tape& tape, const TensorPtr& x);  // -> [1]

// Rank-1 concatenation, a's entries first.
TensorPtr concat(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// o[k] = sum_l v[l] * w[l,k] for v [L] and row-major w [L x K].
TensorPtr vecmat(Tape& tape, const TensorPtr& v, const TensorPtr& w);

TensorPtr log_softmax(Tape& tape, const TensorPtr& v);  // rank-1

// Picks v[index] as a scalar tensor; index is bounds-checked.
TensorPtr gather_scalar(Tape& tape, const TensorPtr& v, int index);

}  // namespace pimpnet::ops
