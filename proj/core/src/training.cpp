#include "pimpnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "pimpnet/error.hpp"
#include "pimpnet/ops.hpp"
#include "pimpnet/rng.hpp"

namespace pimpnet {
namespace {

constexpr std::uint64_t kPretrainStream = 0x70726574;
constexpr std::uint64_t kTrainStream = 0x7472616e;

void check_finite(float v, const char* name) {
  if (!std::isfinite(v)) throw ConfigError(std::string(name) + " must be finite");
}

TensorPtr scalar_sum(Tape& tape, const std::vector<TensorPtr>& xs) {
  TensorPtr acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = ops::add(tape, acc, xs[i]);
  return acc;
}

TensorPtr scalar_mean(Tape& tape, const std::vector<TensorPtr>& xs) {
  return ops::mul_scalar(tape, scalar_sum(tape, xs), 1.0f / float(xs.size()));
}

void write_log_header(std::ostream* log, const PimpnetModel& model) {
  if (!log) return;
  *log << "# epoch\tloss_align\tloss_tanh\tloss_class\ttotal";
  for (int i = 0; i < model.config.N; ++i) *log << "\tt_age_" << i;
  *log << "\n";
}

void write_log_row(std::ostream* log, const PimpnetModel& model, const EpochStats& st) {
  if (!log) return;
  char buf[64];
  *log << st.epoch;
  for (double v : {st.loss_align, st.loss_tanh, st.loss_class, st.total}) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    *log << '\t' << buf;
  }
  for (int i = 0; i < model.config.N; ++i) {
    std::snprintf(buf, sizeof buf, "%.4f", double(model.t_age->data[std::size_t(i)]));
    *log << '\t' << buf;
  }
  *log << "\n";
  log->flush();
}

std::vector<int> shuffled_ids(std::span<const int> ids, Rng& rng) {
  std::vector<int> order(ids.begin(), ids.end());
  for (int i = int(order.size()) - 1; i > 0; --i)
    std::swap(order[std::size_t(i)], order[rng.uniform_index(std::uint64_t(i) + 1)]);
  return order;
}

void check_train_inputs(const std::vector<SyntheticSample>& data, std::span<const int> train_ids,
                        const PimpnetModel& model, const TrainSchedule& schedule,
                        const LossWeights& weights, const AugmentConfig& aug) {
  schedule.validate();
  weights.validate();
  aug.validate();
  if (train_ids.empty()) throw Error("training: empty train split");
  for (int id : train_ids)
    if (id < 0 || id >= int(data.size()))
      throw Error("training: train index " + std::to_string(id) + " out of range");
  const auto& shape = data[std::size_t(train_ids[0])].volume->shape;
  const std::vector<int> want = {model.config.ch, model.config.S, model.config.R, model.config.C};
  if (shape != want)
    throw ShapeError("training: volume shape " + shape_string(shape) +
                     " does not match the model input " + shape_string(want));
}

}  // namespace

void LossWeights::validate() const {
  for (auto [v, n] : {std::pair{lambda_align, "lambda_align"},
                      {lambda_tanh, "lambda_tanh"},
                      {lambda_class, "lambda_class"}}) {
    check_finite(v, n);
    if (v < 0.0f) throw ConfigError(std::string(n) + " must be non-negative");
  }
}

void AugmentConfig::validate() const {
  for (float p : flip_prob)
    if (!(p >= 0.0f && p <= 1.0f)) throw ConfigError("flip_prob must lie in [0, 1]");
  if (max_translate_voxels < 0) throw ConfigError("max_translate_voxels must be non-negative");
  if (!(intensity_noise_sigma >= 0.0f))
    throw ConfigError("intensity_noise_sigma must be non-negative");
}

void TrainSchedule::validate() const {
  if (pretrain_epochs < 0 || train_epochs < 0) throw ConfigError("epoch counts must be non-negative");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  for (auto [v, n] : {std::pair{lr_backbone, "lr_backbone"}, {lr_age, "lr_age"}, {lr_head, "lr_head"}}) {
    check_finite(v, n);
    if (!(v > 0.0f)) throw ConfigError(std::string(n) + " must be positive");
  }
  if (!(eps_align > 0.0f) || !(eps_tanh > 0.0f)) throw ConfigError("loss eps must be positive");
  if (!(sparsity_clamp_threshold >= 0.0f))
    throw ConfigError("sparsity_clamp_threshold must be non-negative");
}

TensorPtr augment_view(const TensorPtr& x_img, const AugmentConfig& cfg, Rng& rng) {
  if (x_img->rank() != 4) throw ShapeError("augment_view: expected a [ch x S x R x C] volume");
  const auto& sh = x_img->shape;
  const int ext[3] = {sh[1], sh[2], sh[3]};

  bool flip[3];
  for (int a = 0; a < 3; ++a) flip[a] = rng.bernoulli(double(cfg.flip_prob[std::size_t(a)]));
  int shift[3];
  for (int a = 0; a < 3; ++a)
    shift[a] = int(rng.uniform_int(-cfg.max_translate_voxels, cfg.max_translate_voxels));

  // Translation wraps around rather than zero-filling: a padding band would
  // be novel content that only ever appears in augmented views, and unused
  // prototypes learn to hide there instead of competing for real tissue.
  const auto wrap = [](int v, int ext) { return ((v % ext) + ext) % ext; };
  auto out = zeros(sh);
  const std::size_t stride_d = std::size_t(ext[1]) * std::size_t(ext[2]);
  const std::size_t stride_c = std::size_t(ext[0]) * stride_d;
  for (int c = 0; c < sh[0]; ++c) {
    for (int d = 0; d < ext[0]; ++d) {
      const int sd = wrap(d - shift[0], ext[0]);
      const int fd = flip[0] ? ext[0] - 1 - sd : sd;
      for (int h = 0; h < ext[1]; ++h) {
        const int sh2 = wrap(h - shift[1], ext[1]);
        const int fh = flip[1] ? ext[1] - 1 - sh2 : sh2;
        for (int w = 0; w < ext[2]; ++w) {
          const int sw = wrap(w - shift[2], ext[2]);
          const int fw = flip[2] ? ext[2] - 1 - sw : sw;
          out->data[std::size_t(c) * stride_c + std::size_t(d) * stride_d +
                    std::size_t(h) * std::size_t(ext[2]) + std::size_t(w)] =
              x_img->data[std::size_t(c) * stride_c + std::size_t(fd) * stride_d +
                          std::size_t(fh) * std::size_t(ext[2]) + std::size_t(fw)];
        }
      }
    }
  }

  if (cfg.intensity_noise_sigma > 0.0f) {
    for (auto& v : out->data)
      v = std::clamp(v + float(rng.normal(0.0, double(cfg.intensity_noise_sigma))), 0.0f, 1.0f);
  } else {
    for (auto& v : out->data) v = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

std::pair<TensorPtr, TensorPtr> make_positive_pair(const TensorPtr& x_img,
                                                   const AugmentConfig& cfg, Rng& rng) {
  auto a = augment_view(x_img, cfg, rng);
  auto b = augment_view(x_img, cfg, rng);
  return {a, b};
}

TensorPtr alignment_loss(Tape& tape, const TensorPtr& z1, const TensorPtr& z2, float eps) {
  if (z1->rank() != 4 || z1->shape != z2->shape)
    throw ShapeError("alignment_loss: views must share one [M x D x H x W] shape");
  auto dots = ops::sum_over_channels(tape, ops::mul(tape, z1, z2));
  auto arg = ops::clamp(tape, ops::add_scalar(tape, dots, eps), 0.0f, 1.0f);
  return ops::mul_scalar(tape, ops::mean(tape, ops::log(tape, arg)), -1.0f);
}

TensorPtr tanh_loss(Tape& tape, std::span<const TensorPtr> p_img_rows, float eps) {
  if (p_img_rows.empty()) throw Error("tanh_loss: empty batch");
  for (const auto& r : p_img_rows)
    if (r->rank() != 1 || r->shape != p_img_rows.front()->shape)
      throw ShapeError("tanh_loss: presence rows must share one [M] shape");
  TensorPtr batch_sum = p_img_rows.front();
  for (std::size_t i = 1; i < p_img_rows.size(); ++i)
    batch_sum = ops::add(tape, batch_sum, p_img_rows[i]);
  auto arg = ops::clamp(tape, ops::add_scalar(tape, ops::tanh(tape, batch_sum), eps), 0.0f, 1.0f);
  return ops::mul_scalar(tape, ops::mean(tape, ops::log(tape, arg)), -1.0f);
}

TensorPtr classification_loss(Tape& tape, std::span<const TensorPtr> score_rows,
                              std::span<const int> labels) {
  if (score_rows.empty()) throw Error("classification_loss: empty batch");
  if (score_rows.size() != labels.size())
    throw ShapeError("classification_loss: got " + std::to_string(score_rows.size()) +
                     " score rows for " + std::to_string(labels.size()) + " labels");
  std::vector<TensorPtr> terms;
  terms.reserve(score_rows.size());
  for (std::size_t i = 0; i < score_rows.size(); ++i) {
    const int k = score_rows[i]->shape[0];
    if (labels[i] < 0 || labels[i] >= k)
      throw Error("classification_loss: label " + std::to_string(labels[i]) + " out of range");
    terms.push_back(ops::gather_scalar(tape, ops::log_softmax(tape, score_rows[i]), labels[i]));
  }
  return ops::mul_scalar(tape, scalar_mean(tape, terms), -1.0f);
}

OptimizerStates make_optimizer_states(const PimpnetModel& model) {
  OptimizerStates opt;
  opt.backbone = AdamState::for_params(model.backbone_params());
  if (model.t_age) opt.age = AdamState::for_params(std::vector<TensorPtr>{model.t_age});
  opt.head = AdamState::for_params(std::vector<TensorPtr>{model.w_c});
  return opt;
}

namespace {

void run_stage(bool with_classification, const std::vector<SyntheticSample>& data,
               std::span<const int> train_ids, PimpnetModel& model, OptimizerStates& opt,
               const TrainSchedule& schedule, const LossWeights& weights,
               const AugmentConfig& aug, std::uint64_t seed, std::ostream* log,
               const TrainHooks& hooks) {
  check_train_inputs(data, train_ids, model, schedule, weights, aug);
  Rng rng(derive_seed(seed, with_classification ? kTrainStream : kPretrainStream));
  write_log_header(log, model);
  const auto backbone = model.backbone_params();
  const int epochs = with_classification ? schedule.train_epochs : schedule.pretrain_epochs;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto order = shuffled_ids(train_ids, rng);
    EpochStats stats{epoch, 0, 0, 0, 0};
    int batches = 0;

    for (std::size_t at = 0; at + 2 <= order.size(); at += std::size_t(schedule.batch_size)) {
      const std::size_t take = std::min(std::size_t(schedule.batch_size), order.size() - at);
      if (take < 2) break;

      Tape tape;
      std::vector<TensorPtr> align_terms, p_img_rows, score_rows;
      std::vector<int> labels;
      for (std::size_t b = 0; b < take; ++b) {
        const auto& sample = data[std::size_t(order[at + b])];
        auto [x1, x2] = make_positive_pair(sample.volume, aug, rng);
        auto z1 = backbone_forward(tape, model, x1);
        auto z2 = backbone_forward(tape, model, x2);
        align_terms.push_back(alignment_loss(tape, z1, z2, schedule.eps_align));
        auto p1 = ops::global_maxpool3d(tape, z1).scores;
        auto p2 = ops::global_maxpool3d(tape, z2).scores;
        p_img_rows.push_back(p1);
        p_img_rows.push_back(p2);
        if (with_classification) {
          TensorPtr row1 = p1, row2 = p2;
          if (model.config.N > 0) {
            auto p_age = age_similarity(tape, sample.age, model.t_age, model.config.t_bar,
                                        model.config.s, model.config.age_sim_kind);
            row1 = ops::concat(tape, p1, p_age);
            row2 = ops::concat(tape, p2, p_age);
          }
          score_rows.push_back(class_scores_train(tape, row1, model.w_c));
          score_rows.push_back(class_scores_train(tape, row2, model.w_c));
          labels.push_back(sample.label);
          labels.push_back(sample.label);
        }
      }

      auto loss_align = scalar_mean(tape, align_terms);
      auto loss_tanh = tanh_loss(tape, p_img_rows, schedule.eps_tanh);
      auto total = ops::add(tape, ops::mul_scalar(tape, loss_align, weights.lambda_align),
                            ops::mul_scalar(tape, loss_tanh, weights.lambda_tanh));
      TensorPtr loss_class;
      if (with_classification) {
        loss_class = classification_loss(tape, score_rows, labels);
        total = ops::add(tape, total, ops::mul_scalar(tape, loss_class, weights.lambda_class));
      }

      tape.backward(total);
      adam_step(backbone, opt.backbone, schedule.lr_backbone);
      if (with_classification) {
        if (model.t_age)
          adam_step(std::vector<TensorPtr>{model.t_age}, opt.age, schedule.lr_age);
        adam_step(std::vector<TensorPtr>{model.w_c}, opt.head, schedule.lr_head);
        for (auto& v : model.w_c->data)
          if (v < 0.0f) v = 0.0f;
      }
      if (hooks.on_step) hooks.on_step(model);

      stats.loss_align += double(loss_align->item());
      stats.loss_tanh += double(loss_tanh->item());
      if (loss_class) stats.loss_class += double(loss_class->item());
      stats.total += double(total->item());
      ++batches;
    }

    if (batches == 0) throw Error("training: train split smaller than two samples");
    stats.loss_align /= batches;
    stats.loss_tanh /= batches;
    stats.loss_class /= batches;
    stats.total /= batches;
    write_log_row(log, model, stats);
    if (hooks.on_epoch) hooks.on_epoch(stats, model);
  }
}

}  // namespace

void pretrain(const std::vector<SyntheticSample>& data, std::span<const int> train_ids,
              PimpnetModel& model, OptimizerStates& opt, const TrainSchedule& schedule,
              const LossWeights& weights, const AugmentConfig& aug, std::uint64_t seed,
              std::ostream* log, const TrainHooks& hooks) {
  run_stage(false, data, train_ids, model, opt, schedule, weights, aug, seed, log, hooks);
}

void train_full(const std::vector<SyntheticSample>& data, std::span<const int> train_ids,
                PimpnetModel& model, OptimizerStates& opt, const TrainSchedule& schedule,
                const LossWeights& weights, const AugmentConfig& aug, std::uint64_t seed,
                std::ostream* log, const TrainHooks& hooks) {
  run_stage(true, data, train_ids, model, opt, schedule, weights, aug, seed, log, hooks);
  for (auto& v : model.w_c->data)
    if (v < schedule.sparsity_clamp_threshold) v = 0.0f;
}

}  // namespace pimpnet
