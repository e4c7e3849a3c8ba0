#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pimpnet/ops.hpp"
#include "pimpnet/rng.hpp"
#include "pimpnet/tape.hpp"
#include "pimpnet/tensor.hpp"

namespace pimpnet {

enum class AgeSimKind { butterworth, exponential };

struct ConvBlockSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
};

// Structural hyperparameters. M image prototypes come out of the backbone's
// last block, N trainable prototypical ages sit beside them, and a
// non-negative L x K weight matrix (L = M + N) turns presence scores into
// class scores. N = 0 drops the age branch entirely (image-only ablation).
struct ModelConfig {
  int ch = 1;
  int S = 32, R = 32, C = 32;
  int M = 16;
  int N = 5;
  int K = 2;
  float t_bar = 4.0f;
  int s = 8;
  AgeSimKind age_sim_kind = AgeSimKind::butterworth;
  float age_grid_min = 40.0f;
  float age_grid_max = 90.0f;
  std::vector<ConvBlockSpec> backbone;  // empty selects the default 3 blocks

  int L() const { return M + N; }

  // Fills in the default backbone and checks every invariant; throws
  // ConfigError naming the offending field.
  void validate_and_finalize();

  // Feature-map extents implied by the backbone and input extents.
  std::array<int, 3> feature_extents() const;
};

// All learnable state.
struct PimpnetModel {
  ModelConfig config;
  std::vector<TensorPtr> conv_kernels;
  std::vector<TensorPtr> conv_biases;
  TensorPtr t_age;  // [N] prototypical ages in years; null when N == 0
  TensorPtr w_c;    // [L x K], entries >= 0 outside an optimizer step

  std::vector<TensorPtr> backbone_params() const;
  std::vector<TensorPtr> all_params() const;
};

// Seeded initialization: He-normal kernels, zero biases, t_age evenly spaced
// over [age_grid_min, age_grid_max], w_c all ones.
PimpnetModel make_model(const ModelConfig& config, std::uint64_t seed);

// Presence scores for one sample. p keeps image scores first, age scores
// second, all in [0, 1].
struct PresenceScores {
  TensorPtr p_img;   // [M]
  TensorPtr p_age;   // [N]; null when N == 0
  TensorPtr p;       // [L] = concat(p_img, p_age)
  std::vector<std::array<int, 3>> img_locations;  // feature-map coordinates
};

// Conv blocks (conv3d -> ReLU) followed by a channel softmax, so z[:,d,h,w]
// is a probability vector over the M image prototypes.
TensorPtr backbone_forward(Tape& tape, const PimpnetModel& model,
                           const TensorPtr& x_img);

// Global max-pool of z: presence score and first-maximizer location per
// prototype.
ops::MaxPool3dResult image_presence(Tape& tape, const TensorPtr& z);

// Scalar similarity between one age and one prototypical age, computed in
// double. butterworth: 1 / sqrt(1 + ((x - t) / t_bar)^(2s)); exponential:
// exp(-|x - t|).
double age_similarity_value(double x_age, double t, double t_bar, int s,
                            AgeSimKind kind);

// Tensor form over every prototypical age; each entry is the scalar value
// rounded to float once. Differentiable w.r.t. t_age.
TensorPtr age_similarity(Tape& tape, float x_age, const TensorPtr& t_age,
                         float t_bar, int s, AgeSimKind kind);

// Full presence vector for one sample (no masking; this is the training
// view).
PresenceScores presence_forward(Tape& tape, const PimpnetModel& model,
                                const TensorPtr& x_img, float x_age);

// Training-time class scores o_k = log((p . w_c[:,k])^2 + 1).
TensorPtr class_scores_train(Tape& tape, const TensorPtr& p,
                             const TensorPtr& w_c);

// Keeps only the maximal entry (ties to the lowest index), zeroes the rest.
std::vector<float> mask_top_age(const std::vector<float>& p_age);

struct InferResult {
  int predicted_class = 0;
  std::vector<float> o;         // [K], linear scores (no squash)
  PresenceScores presence;      // raw scores, unmasked
  std::vector<float> p_masked;  // [L], the scoring vector actually used
  int selected_age = -1;        // index of the kept age prototype, -1 if N==0
};

// Inference rule: image scores plus the masked age vector through the linear
// scoring sheet; argmax class, ties to the lowest index.
InferResult infer(const PimpnetModel& model, const TensorPtr& x_img,
                  float x_age);

// Input-voxel box feeding one feature-map cell, clipped to the volume.
struct VoxelBox {
  std::array<int, 3> lo;  // inclusive
  std::array<int, 3> hi;  // inclusive
  std::array<int, 3> center() const;
};

VoxelBox receptive_field_box(const ModelConfig& config, int fd, int fh, int fw);

}  // namespace pimpnet
