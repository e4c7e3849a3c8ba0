#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "pimpnet/adam.hpp"
#include "pimpnet/model.hpp"
#include "pimpnet/synthdata.hpp"
#include "pimpnet/tape.hpp"
#include "pimpnet/tensor.hpp"

namespace pimpnet {

// Alignment and the tanh term shape the prototype map during stage 1; the
// classification term only enters in stage 2 and must dominate there, since
// the other two act as restoring forces around the pretrained map.
struct LossWeights {
  float lambda_align = 5.0f;
  float lambda_tanh = 2.0f;
  float lambda_class = 20.0f;

  void validate() const;
};

// The alignment loss compares the two views cell by cell, so view transforms
// must keep spatial correspondence. More than that: any transform that
// synthesizes content absent from clean volumes (mirrored or wrapped
// anatomy, even additive noise, which large kernels amplify into a trigger
// pattern) hands unused prototypes a hideout where they satisfy the coverage
// loss without competing for real tissue. The phantoms are deterministic, so
// the defaults use identity views; the knobs stay for noisy-data regimes.
struct AugmentConfig {
  std::array<float, 3> flip_prob = {0.0f, 0.0f, 0.0f};
  int max_translate_voxels = 0;
  float intensity_noise_sigma = 0.0f;

  void validate() const;
};

struct TrainSchedule {
  int pretrain_epochs = 10;
  int train_epochs = 30;
  int batch_size = 12;
  float lr_backbone = 0.001f;
  float lr_age = 0.1f;
  float lr_head = 0.05f;
  float eps_align = 1e-8f;
  float eps_tanh = 1e-8f;
  float sparsity_clamp_threshold = 1e-3f;

  void validate() const;
};

// One randomized view: per-axis flips, integer translation with wrap-around,
// additive Gaussian intensity noise, clamp to [0, 1]. Draw order is fixed:
// three flips, three offsets, then one noise value per voxel (skipped when
// sigma is zero).
TensorPtr augment_view(const TensorPtr& x_img, const AugmentConfig& cfg, Rng& rng);

std::pair<TensorPtr, TensorPtr> make_positive_pair(const TensorPtr& x_img,
                                                   const AugmentConfig& cfg, Rng& rng);

// Mean over feature-map locations of -log(z1 . z2 + eps), dot over channels,
// each term clamped at 1 before the log.
TensorPtr alignment_loss(Tape& tape, const TensorPtr& z1, const TensorPtr& z2, float eps);

// -(1/M) sum_m log(clamp(tanh(sum over the batch of p_img[m]) + eps, 0, 1)).
TensorPtr tanh_loss(Tape& tape, std::span<const TensorPtr> p_img_rows, float eps);

// Mean cross-entropy of the squashed class scores.
TensorPtr classification_loss(Tape& tape, std::span<const TensorPtr> score_rows,
                              std::span<const int> labels);

struct OptimizerStates {
  AdamState backbone;
  AdamState age;
  AdamState head;
};

OptimizerStates make_optimizer_states(const PimpnetModel& model);

struct EpochStats {
  int epoch = 0;  // 1-based
  double loss_align = 0.0;
  double loss_tanh = 0.0;
  double loss_class = 0.0;
  double total = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochStats&, const PimpnetModel&)> on_epoch;
  std::function<void(const PimpnetModel&)> on_step;
};

// Stage 1: backbone only, alignment + tanh losses over augmented pairs.
// Batches are seeded shuffles of train_ids; a trailing batch of fewer than
// two samples is dropped. Writes one tab-separated row per epoch to log if
// given.
void pretrain(const std::vector<SyntheticSample>& data, std::span<const int> train_ids,
              PimpnetModel& model, OptimizerStates& opt, const TrainSchedule& schedule,
              const LossWeights& weights, const AugmentConfig& aug, std::uint64_t seed,
              std::ostream* log, const TrainHooks& hooks = {});

// Stage 2: all parameter groups with their own learning rates, adds the
// classification loss, projects w_c onto >= 0 after every step, and zeroes
// entries below sparsity_clamp_threshold once at the end.
void train_full(const std::vector<SyntheticSample>& data, std::span<const int> train_ids,
                PimpnetModel& model, OptimizerStates& opt, const TrainSchedule& schedule,
                const LossWeights& weights, const AugmentConfig& aug, std::uint64_t seed,
                std::ostream* log, const TrainHooks& hooks = {});

}  // namespace pimpnet
