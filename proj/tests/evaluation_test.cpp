#include <array>
#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "pimpnet/error.hpp"
#include "pimpnet/evaluation.hpp"
#include "pimpnet/model.hpp"
#include "pimpnet/rng.hpp"
#include "pimpnet/tensor.hpp"
#include "support.hpp"

using namespace pimpnet;

namespace {

ModelConfig eval_config(int m = 4, int n = 2) {
  ModelConfig cfg;
  cfg.S = cfg.R = cfg.C = 16;
  cfg.M = m;
  cfg.N = n;
  cfg.age_grid_min = 55.0f;
  cfg.age_grid_max = 85.0f;
  cfg.backbone = {{m, 3, 2, 1}};
  cfg.validate_and_finalize();
  return cfg;
}

std::vector<SyntheticSample> eval_samples(int n, std::uint64_t seed, int extent = 16) {
  std::vector<SyntheticSample> out;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    SyntheticSample s;
    s.volume = testsupport::random_tensor({1, extent, extent, extent}, rng, 0.0f, 1.0f, false);
    s.age = float(rng.uniform(55.0, 85.0));
    s.label = i % 2;
    s.atlas.assign(std::size_t(extent) * extent * extent, 1);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<int> iota_ids(int n) {
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) ids.push_back(i);
  return ids;
}

}  // namespace

TEST_SUITE_BEGIN("evaluation");

TEST_CASE("classification metrics match a worked example") {
  const std::vector<int> preds = {0, 1, 1, 0, 1};
  const std::vector<int> labels = {0, 1, 0, 0, 0};
  const auto [counts, rates] = classification_metrics(preds, labels);
  CHECK(counts.tp[0] == 2);
  CHECK(counts.fp[0] == 0);
  CHECK(counts.fn[0] == 2);
  CHECK(counts.tn[0] == 1);
  CHECK(counts.tp[1] == 1);
  CHECK(counts.fp[1] == 2);
  CHECK(counts.fn[1] == 0);
  CHECK(counts.tn[1] == 2);
  CHECK(rates.accuracy == doctest::Approx(0.6));
  CHECK(rates.sensitivity == doctest::Approx(0.5));   // CN recall
  CHECK(rates.specificity == doctest::Approx(1.0));   // AD recall
  CHECK(rates.balanced_accuracy == doctest::Approx(0.75));
  CHECK(rates.f1 == doctest::Approx(0.5));

  const std::vector<int> all_cn = {0, 0};
  const auto [c2, r2] = classification_metrics(all_cn, all_cn);
  CHECK(r2.accuracy == 1.0);
  CHECK(r2.specificity == 0.0);  // no AD samples; 0/0 reads as 0
  CHECK(r2.f1 == 0.0);

  std::vector<int> bad = {0, 2};
  CHECK_THROWS_AS(classification_metrics(bad, all_cn), Error);
  std::vector<int> shorter = {0};
  CHECK_THROWS_AS(classification_metrics(shorter, all_cn), Error);
  std::vector<int> none;
  CHECK_THROWS_AS(classification_metrics(none, none), Error);
}

TEST_CASE("scoring-sheet sizes count rows, zeros, and active prototypes") {
  Tensor w({4, 2}, {1.0f, 0.0f, 0.0f, 0.0f, 0.5f, 0.2f, 0.0f, 0.3f});
  CHECK(global_size(w) == 3);
  CHECK(sparsity(w) == doctest::Approx(0.5));

  Tensor all_zero({2, 2}, {0, 0, 0, 0});
  CHECK(global_size(all_zero) == 0);
  CHECK(sparsity(all_zero) == 1.0);
  CHECK_THROWS_AS(global_size(Tensor({4}, {1, 2, 3, 4})), ShapeError);

  InferResult res;
  res.predicted_class = 1;
  res.p_masked = {0.5f, 0.05f, 0.2f, 0.3f};
  CHECK(local_size(res, w, 0.1f) == 2);
  CHECK(local_size(res, w, 0.25f) == 1);
  res.predicted_class = 0;
  CHECK(local_size(res, w, 0.1f) == 2);  // rows 0 and 2 pay into CN
  res.p_masked = {0.5f, 0.05f};
  CHECK_THROWS_AS(local_size(res, w, 0.1f), ShapeError);
}

TEST_CASE("localization consistency equals a brute-force replay") {
  const auto cfg = eval_config();
  const auto model = make_model(cfg, 31);
  const auto samples = eval_samples(6, 32);
  const auto ids = iota_ids(6);
  const float thr = 0.0f;

  const auto got = localization_consistency(model, samples, ids, thr);
  REQUIRE(got.has_value());

  const auto extents = cfg.feature_extents();
  std::vector<std::vector<std::array<int, 3>>> hits(std::size_t(cfg.M));
  for (int id : ids) {
    const auto res = infer(model, samples[std::size_t(id)].volume, samples[std::size_t(id)].age);
    for (int m = 0; m < cfg.M; ++m)
      if (res.presence.p_img->data[std::size_t(m)] > thr)
        hits[std::size_t(m)].push_back(res.presence.img_locations[std::size_t(m)]);
  }
  double total = 0.0;
  int used = 0;
  for (const auto& locs : hits) {
    if (locs.size() < 2) continue;
    double per_axis = 0.0;
    for (int a = 0; a < 3; ++a) {
      std::vector<double> xs;
      for (const auto& l : locs) xs.push_back(double(l[std::size_t(a)]) / double(extents[std::size_t(a)] - 1));
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= double(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      per_axis += var / double(xs.size());
    }
    total += per_axis / 3.0;
    ++used;
  }
  REQUIRE(used > 0);
  CHECK(*got == doctest::Approx(total / used).epsilon(1e-9));

  // Repeating one sample pins every argmax, so the spread is exactly zero.
  const std::vector<int> same = {0, 0, 0};
  const auto zero = localization_consistency(model, samples, same, thr);
  REQUIRE(zero.has_value());
  CHECK(*zero == 0.0);

  // An impossible threshold leaves the metric undefined.
  CHECK_FALSE(localization_consistency(model, samples, ids, 1.0f).has_value());
  const std::vector<int> one = {2};
  CHECK_FALSE(localization_consistency(model, samples, one, thr).has_value());
}

TEST_CASE("region entropy is exact on crafted receptive fields") {
  // One prototype, one 2x2x2-stride block on 8^3: softmax over a single
  // channel pins presence to 1 and the argmax to the first cell, so the
  // receptive field is exactly the voxel box [0,1]^3.
  ModelConfig cfg;
  cfg.S = cfg.R = cfg.C = 8;
  cfg.M = 1;
  cfg.N = 0;
  cfg.backbone = {{1, 2, 2, 0}};
  cfg.validate_and_finalize();
  const auto model = make_model(cfg, 1);

  SyntheticSample s;
  Rng rng(2);
  s.volume = testsupport::random_tensor({1, 8, 8, 8}, rng, 0.0f, 1.0f, false);
  s.age = 70.0f;
  s.atlas.assign(512, 9);
  const std::vector<int> ids = {0};

  SUBCASE("single label gives exactly zero bits") {
    for (int d = 0; d < 2; ++d)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) s.atlas[std::size_t((d * 8 + h) * 8 + w)] = 3;
    const auto report = region_entropy(model, {s}, ids, 0.5f);
    REQUIRE(report.mean_entropy_bits.has_value());
    CHECK(*report.mean_entropy_bits == 0.0);
    REQUIRE(report.per_prototype.size() == 1);
    CHECK(report.per_prototype[0].prototype_id == 0);
    CHECK(report.per_prototype[0].detections == 1);
    CHECK(report.per_prototype[0].entropy_bits == 0.0);
    CHECK(report.per_prototype[0].background_fraction == 0.0);
  }
  SUBCASE("a uniform four-label box gives exactly two bits") {
    int v = 0;
    for (int d = 0; d < 2; ++d)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) s.atlas[std::size_t((d * 8 + h) * 8 + w)] = std::uint8_t(v++ % 4);
    const auto report = region_entropy(model, {s}, ids, 0.5f);
    REQUIRE(report.mean_entropy_bits.has_value());
    CHECK(*report.mean_entropy_bits == 2.0);
    CHECK(report.per_prototype[0].background_fraction == 0.25);
  }
  SUBCASE("no detection leaves the entropy undefined") {
    const auto report = region_entropy(model, {s}, ids, 1.5f);
    CHECK_FALSE(report.mean_entropy_bits.has_value());
    CHECK(report.per_prototype.empty());
  }
  SUBCASE("a mismatched atlas is rejected") {
    s.atlas.resize(100);
    CHECK_THROWS_AS(region_entropy(model, {s}, ids, 0.5f), ShapeError);
  }
}

TEST_CASE("mean max channel activation replays the backbone") {
  // A single channel softmaxes to exactly one everywhere.
  ModelConfig cfg;
  cfg.S = cfg.R = cfg.C = 8;
  cfg.M = 1;
  cfg.N = 0;
  cfg.backbone = {{1, 2, 2, 0}};
  cfg.validate_and_finalize();
  const auto single = make_model(cfg, 1);
  const auto samples = eval_samples(2, 3, 8);
  CHECK(mean_max_channel_activation(single, samples, iota_ids(2)) == 1.0);

  const auto wide_cfg = eval_config(4, 0);
  const auto wide = make_model(wide_cfg, 5);
  const auto big = eval_samples(3, 6);
  const double got = mean_max_channel_activation(wide, big, iota_ids(3));
  double total = 0.0;
  std::int64_t cells = 0;
  for (int id = 0; id < 3; ++id) {
    Tape tape;
    const auto z = backbone_forward(tape, wide, big[std::size_t(id)].volume);
    const std::int64_t per = z->numel() / 4;
    for (std::int64_t i = 0; i < per; ++i) {
      float best = z->data[std::size_t(i)];
      for (int m = 1; m < 4; ++m)
        best = std::max(best, z->data[std::size_t(m) * std::size_t(per) + std::size_t(i)]);
      total += double(best);
    }
    cells += per;
  }
  CHECK(got == doctest::Approx(total / double(cells)).epsilon(1e-12));
  CHECK(got > 1.0 / 4.0);  // the max of a 4-way distribution is at least 1/M
  CHECK(got <= 1.0);
}

TEST_CASE("evaluate_model assembles a coherent report") {
  const auto cfg = eval_config();
  const auto model = make_model(cfg, 41);
  const auto samples = eval_samples(8, 42);
  const auto ids = iota_ids(8);

  const auto report = evaluate_model(model, samples, ids, 0.1f);
  CHECK(report.sample_count == 8);
  CHECK(report.detect_threshold == 0.1f);
  CHECK(report.counts.tp[0] + report.counts.fp[0] + report.counts.fn[0] + report.counts.tn[0] == 8);
  CHECK(report.rates.accuracy >= 0.0);
  CHECK(report.rates.accuracy <= 1.0);
  CHECK(report.global_size == cfg.L());  // fresh sheets are all ones
  CHECK(report.sparsity == 0.0);
  CHECK(report.local_size_mean >= 0.0);
  CHECK(report.local_size_mean <= double(cfg.L()));

  std::vector<int> empty;
  CHECK_THROWS_AS(evaluate_model(model, samples, empty, 0.1f), Error);
  const std::vector<int> oob = {99};
  CHECK_THROWS_AS(evaluate_model(model, samples, oob, 0.1f), Error);
}

TEST_CASE("metrics text round-trips every field") {
  MetricsReport r;
  r.sample_count = 40;
  r.detect_threshold = 0.1f;
  r.counts.tp = {12, 14};
  r.counts.fp = {6, 8};
  r.counts.fn = {8, 6};
  r.counts.tn = {14, 12};
  r.rates.accuracy = 0.65;
  r.rates.balanced_accuracy = 0.65;
  r.rates.sensitivity = 0.6;
  r.rates.specificity = 0.7;
  r.rates.f1 = 0.666667;
  r.global_size = 9;
  r.local_size_mean = 2.5;
  r.sparsity = 0.375;
  r.localization_consistency = 0.012345;
  r.region_entropy_bits = std::nullopt;
  r.prototype_regions.push_back({2, 17, 1.25, 0.5});

  const auto text = metrics_to_text(r);
  CHECK(text.find("bal_acc: 0.650000\n") != std::string::npos);
  CHECK(text.find("h_p: undefined\n") != std::string::npos);
  CHECK(text.find("proto_2_detections: 17\n") != std::string::npos);

  const auto back = metrics_from_text(text);
  CHECK(back.sample_count == 40);
  CHECK(back.detect_threshold == 0.1f);
  CHECK(back.counts.tp == r.counts.tp);
  CHECK(back.counts.fp == r.counts.fp);
  CHECK(back.counts.fn == r.counts.fn);
  CHECK(back.counts.tn == r.counts.tn);
  CHECK(back.rates.f1 == doctest::Approx(r.rates.f1).epsilon(1e-9));
  CHECK(back.global_size == 9);
  CHECK(back.local_size_mean == 2.5);
  CHECK(back.sparsity == 0.375);
  REQUIRE(back.localization_consistency.has_value());
  CHECK(*back.localization_consistency == doctest::Approx(0.012345));
  CHECK_FALSE(back.region_entropy_bits.has_value());

  CHECK_THROWS_AS(metrics_from_text("acc: 0.5\n"), IoError);          // missing keys
  CHECK_THROWS_AS(metrics_from_text("samples 4\n"), IoError);          // no colon
  CHECK_THROWS_AS(metrics_from_text(text + "\nsamples: x\n"), IoError);
}

TEST_CASE("aggregation reports mean, sample std, and defined-run counts") {
  MetricsReport a = metrics_from_text(metrics_to_text(MetricsReport{}));
  a.sample_count = 10;
  a.rates.accuracy = 0.8;
  a.localization_consistency = 0.02;
  MetricsReport b = a;
  b.rates.accuracy = 0.6;
  b.localization_consistency = std::nullopt;

  const auto text = aggregate_metrics_text({a, b});
  CHECK(text.find("runs: 2\n") != std::string::npos);
  CHECK(text.find("acc_mean: 0.700000\n") != std::string::npos);
  CHECK(text.find("acc_std: 0.141421\n") != std::string::npos);
  CHECK(text.find("lc_p_mean: 0.020000\n") != std::string::npos);
  CHECK(text.find("lc_p_std: 0.000000\n") != std::string::npos);
  CHECK(text.find("lc_p_defined_runs: 1\n") != std::string::npos);

  const auto solo = aggregate_metrics_text({a});
  CHECK(solo.find("acc_mean: 0.800000\n") != std::string::npos);
  CHECK(solo.find("acc_std: 0.000000\n") != std::string::npos);

  b.localization_consistency = std::nullopt;
  MetricsReport c = b;
  const auto none = aggregate_metrics_text({b, c});
  CHECK(none.find("lc_p_mean: undefined\n") != std::string::npos);

  CHECK_THROWS_AS(aggregate_metrics_text({}), Error);
}

TEST_CASE("explanations decompose the winning class score") {
  const auto cfg = eval_config();
  auto model = make_model(cfg, 51);
  // Sparse, asymmetric sheet so ordering and filtering are exercised.
  Rng rng(52);
  for (auto& v : model.w_c->data) {
    const double u = rng.uniform();
    v = u < 0.4 ? 0.0f : float(u);
  }
  const auto samples = eval_samples(3, 53);

  for (int i = 0; i < 3; ++i) {
    const auto& s = samples[std::size_t(i)];
    const auto report = explain(model, s, i);
    const auto res = infer(model, s.volume, s.age);
    CHECK(report.sample_index == i);
    CHECK(report.predicted_class == res.predicted_class);
    CHECK(report.label == s.label);
    CHECK(report.class_scores == res.o);

    double total = 0.0;
    float prev = std::numeric_limits<float>::max();
    for (const auto& e : report.entries) {
      CHECK(e.contribution > 0.0f);
      CHECK(e.contribution == e.presence * e.weight);
      CHECK(e.contribution <= prev);
      prev = e.contribution;
      total += double(e.contribution);
      if (e.is_image) {
        CHECK(e.prototype_id < cfg.M);
      } else {
        CHECK(e.prototype_id >= cfg.M);
        CHECK(e.prototypical_age == model.t_age->data[std::size_t(e.prototype_id - cfg.M)]);
      }
    }
    // The listed contributions are the full decomposition of the winner.
    CHECK(total == doctest::Approx(double(res.o[std::size_t(res.predicted_class)])).epsilon(1e-5));
  }

  const auto text = explain_to_text(explain(model, samples[0], 0));
  CHECK(text.rfind("sample: 0\n", 0) == 0);
  CHECK(text.find("label: CN\n") != std::string::npos);
  CHECK(text.find("score_cn: ") != std::string::npos);
  CHECK(text.find("score_ad: ") != std::string::npos);
  CHECK(text.find("rank: 1\n") != std::string::npos);
}

TEST_SUITE_END();
