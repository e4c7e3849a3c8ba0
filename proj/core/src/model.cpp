#include "pimpnet/model.hpp"

#include <cmath>
#include <string>

#include "pimpnet/error.hpp"

namespace pimpnet {

namespace {

// Largest per-channel logit magnitude after the pre-softmax squash. At this
// cap the worst-case softmax entry is about 0.995, so one-hot saturation
// cannot round to exactly 1 and kill every gradient upstream.
constexpr float kLogitCap = 4.0f;

double ipow(double base, int exp) {
  double r = 1.0;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

}  // namespace

void ModelConfig::validate_and_finalize() {
  if (ch < 1) throw ConfigError("ch must be >= 1");
  if (S < 1 || R < 1 || C < 1) {
    throw ConfigError("input volume extents must be >= 1");
  }
  if (M < 1) throw ConfigError("m (image prototype count) must be >= 1");
  if (N < 0) throw ConfigError("n (age prototype count) must be >= 0");
  if (K < 2) throw ConfigError("k (class count) must be >= 2");
  if (!(t_bar > 0.0f)) throw ConfigError("t_bar must be > 0");
  if (s < 1) throw ConfigError("s must be >= 1");
  if (N > 0 && !(age_grid_min <= age_grid_max)) {
    throw ConfigError("age_grid requires min <= max");
  }

  if (backbone.empty()) {
    backbone = {ConvBlockSpec{8, 3, 2, 1}, ConvBlockSpec{16, 3, 2, 1},
                ConvBlockSpec{M, 3, 2, 1}};
  }
  if (backbone.back().out_channels != M) {
    throw ConfigError("backbone: last block out-channels " +
                      std::to_string(backbone.back().out_channels) +
                      " must equal m = " + std::to_string(M));
  }
  int e[3] = {S, R, C};
  for (std::size_t b = 0; b < backbone.size(); ++b) {
    const auto& blk = backbone[b];
    if (blk.out_channels < 1 || blk.kernel < 1 || blk.stride < 1 ||
        blk.padding < 0) {
      throw ConfigError("backbone: block " + std::to_string(b) +
                        " has invalid extents");
    }
    for (int a = 0; a < 3; ++a) {
      if (blk.kernel > e[a] + 2 * blk.padding) {
        throw ConfigError("backbone: block " + std::to_string(b) +
                          " kernel exceeds padded input extent");
      }
      e[a] = (e[a] + 2 * blk.padding - blk.kernel) / blk.stride + 1;
      if (e[a] < 1) {
        throw ConfigError("backbone: block " + std::to_string(b) +
                          " collapses the feature map");
      }
    }
  }
}

std::array<int, 3> ModelConfig::feature_extents() const {
  int e[3] = {S, R, C};
  for (const auto& blk : backbone) {
    for (int a = 0; a < 3; ++a) {
      e[a] = (e[a] + 2 * blk.padding - blk.kernel) / blk.stride + 1;
    }
  }
  return {e[0], e[1], e[2]};
}

std::vector<TensorPtr> PimpnetModel::backbone_params() const {
  std::vector<TensorPtr> out;
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
    out.push_back(conv_kernels[i]);
    out.push_back(conv_biases[i]);
  }
  return out;
}

std::vector<TensorPtr> PimpnetModel::all_params() const {
  auto out = backbone_params();
  if (t_age) out.push_back(t_age);
  out.push_back(w_c);
  return out;
}

PimpnetModel make_model(const ModelConfig& config, std::uint64_t seed) {
  PimpnetModel model;
  model.config = config;
  model.config.validate_and_finalize();
  const auto& cfg = model.config;

  Rng rng(derive_seed(seed, 0x6d6f64656c));  // "model" stream

  int in_ch = cfg.ch;
  for (const auto& blk : cfg.backbone) {
    const int k = blk.kernel;
    const std::int64_t fan_in = static_cast<std::int64_t>(in_ch) * k * k * k;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    auto kernel = zeros({blk.out_channels, in_ch, k, k, k}, true);
    for (auto& v : kernel->data) {
      v = static_cast<float>(rng.normal(0.0, std_dev));
    }
    model.conv_kernels.push_back(kernel);
    model.conv_biases.push_back(zeros({blk.out_channels}, true));
    in_ch = blk.out_channels;
  }

  if (cfg.N > 0) {
    model.t_age = zeros({cfg.N}, true);
    for (int n = 0; n < cfg.N; ++n) {
      const double t =
          cfg.N == 1
              ? cfg.age_grid_min
              : cfg.age_grid_min + (cfg.age_grid_max - cfg.age_grid_min) *
                                       static_cast<double>(n) /
                                       static_cast<double>(cfg.N - 1);
      model.t_age->data[n] = static_cast<float>(t);
    }
  }

  model.w_c = full({cfg.L(), cfg.K}, 1.0f, true);
  return model;
}

TensorPtr backbone_forward(Tape& tape, const PimpnetModel& model,
                           const TensorPtr& x_img) {
  const auto& cfg = model.config;
  const std::vector<int> want = {cfg.ch, cfg.S, cfg.R, cfg.C};
  if (x_img->shape != want) {
    throw ShapeError("backbone_forward: input shape " +
                     shape_string(x_img->shape) + " does not match config " +
                     shape_string(want));
  }
  TensorPtr h = x_img;
  for (std::size_t b = 0; b < cfg.backbone.size(); ++b) {
    h = ops::conv3d(tape, h, model.conv_kernels[b], model.conv_biases[b],
                    cfg.backbone[b].stride, cfg.backbone[b].padding);
    h = ops::relu(tape, h);
  }
  // Centering the logits per channel keeps the prototype competition on
  // spatial contrast: without it a channel whose mean response is largest
  // wins every cell and the map collapses to a constant. The bounded squash
  // then caps the contrast so the softmax stays short of exact one-hot,
  // where its jacobian would underflow and freeze the assignment.
  h = ops::softcap(tape, ops::center_channels(tape, h), kLogitCap);
  return ops::softmax_over_channels(tape, h);
}

ops::MaxPool3dResult image_presence(Tape& tape, const TensorPtr& z) {
  return ops::global_maxpool3d(tape, z);
}

double age_similarity_value(double x_age, double t, double t_bar, int s,
                            AgeSimKind kind) {
  if (kind == AgeSimKind::butterworth) {
    const double u = (x_age - t) / t_bar;
    return 1.0 / std::sqrt(1.0 + ipow(u * u, s));
  }
  return std::exp(-std::abs(x_age - t));
}

TensorPtr age_similarity(Tape& tape, float x_age, const TensorPtr& t_age,
                         float t_bar, int s, AgeSimKind kind) {
  if (!std::isfinite(x_age)) throw Error("age_similarity: x_age must be finite");
  if (!(t_bar > 0.0f)) throw Error("age_similarity: t_bar must be > 0");
  if (s < 1) throw Error("age_similarity: s must be >= 1");
  if (t_age->rank() != 1) {
    throw ShapeError("age_similarity: t_age must be rank 1, got " +
                     shape_string(t_age->shape));
  }
  const int n = t_age->shape[0];
  auto out = std::make_shared<Tensor>(std::vector<int>{n});
  out->requires_grad = t_age->requires_grad;
  std::vector<double> dp_dt(static_cast<std::size_t>(n), 0.0);

  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(t_age->data[i]);
    const double p = age_similarity_value(static_cast<double>(x_age), t,
                                          static_cast<double>(t_bar), s, kind);
    out->data[i] = static_cast<float>(p);
    const double delta = static_cast<double>(x_age) - t;
    if (kind == AgeSimKind::butterworth) {
      const double u = delta / static_cast<double>(t_bar);
      const double u2s = ipow(u * u, s);
      // d/dt of (1 + u^(2s))^(-1/2) with u = (x - t)/t_bar
      dp_dt[i] = u == 0.0 ? 0.0
                          : static_cast<double>(s) * (u2s / u) * p * p * p /
                                static_cast<double>(t_bar);
    } else {
      dp_dt[i] = delta > 0.0 ? p : (delta < 0.0 ? -p : 0.0);
    }
  }

  if (out->requires_grad) {
    TensorPtr tc = t_age, oc = out;
    tape.record({out, t_age}, [tc, oc, dp_dt, n]() {
      for (int i = 0; i < n; ++i) {
        tc->grad[i] += static_cast<float>(oc->grad[i] * dp_dt[i]);
      }
    });
  }
  return out;
}

PresenceScores presence_forward(Tape& tape, const PimpnetModel& model,
                                const TensorPtr& x_img, float x_age) {
  PresenceScores ps;
  auto z = backbone_forward(tape, model, x_img);
  auto pooled = image_presence(tape, z);
  ps.p_img = pooled.scores;
  ps.img_locations = std::move(pooled.argmax);
  if (model.config.N > 0) {
    ps.p_age = age_similarity(tape, x_age, model.t_age, model.config.t_bar,
                              model.config.s, model.config.age_sim_kind);
    ps.p = ops::concat(tape, ps.p_img, ps.p_age);
  } else {
    ps.p = ps.p_img;
  }
  return ps;
}

TensorPtr class_scores_train(Tape& tape, const TensorPtr& p,
                             const TensorPtr& w_c) {
  auto q = ops::vecmat(tape, p, w_c);
  return ops::log(tape, ops::add_scalar(tape, ops::square(tape, q), 1.0f));
}

std::vector<float> mask_top_age(const std::vector<float>& p_age) {
  std::vector<float> masked(p_age.size(), 0.0f);
  if (p_age.empty()) return masked;
  std::size_t best = 0;
  for (std::size_t i = 1; i < p_age.size(); ++i) {
    if (p_age[i] > p_age[best]) best = i;  // ties keep the lowest index
  }
  masked[best] = p_age[best];
  return masked;
}

InferResult infer(const PimpnetModel& model, const TensorPtr& x_img,
                  float x_age) {
  Tape tape;  // discarded; inference never calls backward
  InferResult res;
  res.presence = presence_forward(tape, model, x_img, x_age);

  const int m = model.config.M;
  const int l = model.config.L();
  const int k = model.config.K;

  res.p_masked.assign(static_cast<std::size_t>(l), 0.0f);
  for (int i = 0; i < m; ++i) res.p_masked[i] = res.presence.p_img->data[i];
  if (model.config.N > 0) {
    const auto masked = mask_top_age(res.presence.p_age->data);
    for (int i = 0; i < model.config.N; ++i) res.p_masked[m + i] = masked[i];
    int sel = 0;
    for (int i = 1; i < model.config.N; ++i) {
      if (res.presence.p_age->data[i] > res.presence.p_age->data[sel]) sel = i;
    }
    res.selected_age = sel;
  }

  res.o.assign(static_cast<std::size_t>(k), 0.0f);
  for (int j = 0; j < k; ++j) {
    double acc = 0.0;
    for (int i = 0; i < l; ++i) {
      acc += static_cast<double>(res.p_masked[i]) *
             static_cast<double>(model.w_c->data[static_cast<std::size_t>(i) * k + j]);
    }
    res.o[j] = static_cast<float>(acc);
  }

  res.predicted_class = 0;
  for (int j = 1; j < k; ++j) {
    if (res.o[j] > res.o[res.predicted_class]) res.predicted_class = j;
  }
  return res;
}

std::array<int, 3> VoxelBox::center() const {
  return {(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
}

VoxelBox receptive_field_box(const ModelConfig& config, int fd, int fh,
                             int fw) {
  int lo[3] = {fd, fh, fw};
  int hi[3] = {fd, fh, fw};
  for (auto it = config.backbone.rbegin(); it != config.backbone.rend(); ++it) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = lo[a] * it->stride - it->padding;
      hi[a] = hi[a] * it->stride - it->padding + it->kernel - 1;
    }
  }
  const int ext[3] = {config.S, config.R, config.C};
  VoxelBox box;
  for (int a = 0; a < 3; ++a) {
    box.lo[a] = std::max(lo[a], 0);
    box.hi[a] = std::min(hi[a], ext[a] - 1);
  }
  return box;
}

}  // namespace pimpnet
