#include "pimpnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "pimpnet/error.hpp"
#include "pimpnet/tape.hpp"

namespace pimpnet {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt(*v) : std::string("undefined");
}

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : double(num) / double(den);
}

void check_ids(const std::vector<SyntheticSample>& samples, std::span<const int> ids) {
  if (ids.empty()) throw Error("evaluation: empty id list");
  for (int id : ids)
    if (id < 0 || id >= int(samples.size()))
      throw Error("evaluation: sample index " + std::to_string(id) + " out of range");
}

}  // namespace

std::pair<ConfusionCounts, ClassificationRates> classification_metrics(
    std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw Error("classification_metrics: no samples");
  if (predictions.size() != labels.size())
    throw Error("classification_metrics: got " + std::to_string(predictions.size()) +
                " predictions for " + std::to_string(labels.size()) + " labels");
  ConfusionCounts counts;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1))
      throw Error("classification_metrics: classes must be 0 or 1");
    for (int c = 0; c < 2; ++c) {
      const bool pc = p == c, yc = y == c;
      auto ci = std::size_t(c);
      if (pc && yc) ++counts.tp[ci];
      else if (pc && !yc) ++counts.fp[ci];
      else if (!pc && yc) ++counts.fn[ci];
      else ++counts.tn[ci];
    }
  }
  ClassificationRates rates;
  const auto n = std::int64_t(predictions.size());
  rates.accuracy = ratio(counts.tp[0] + counts.tp[1], n);
  rates.sensitivity = ratio(counts.tp[0], counts.tp[0] + counts.fn[0]);
  rates.specificity = ratio(counts.tp[1], counts.tp[1] + counts.fn[1]);
  rates.balanced_accuracy = 0.5 * (rates.sensitivity + rates.specificity);
  const double prec = ratio(counts.tp[1], counts.tp[1] + counts.fp[1]);
  const double rec = rates.specificity;
  rates.f1 = prec + rec == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
  return {counts, rates};
}

int global_size(const Tensor& w_c) {
  if (w_c.rank() != 2) throw ShapeError("global_size: scoring sheet must be [L x K]");
  const int L = w_c.shape[0], K = w_c.shape[1];
  int rows = 0;
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < K; ++k)
      if (w_c.data[std::size_t(l) * std::size_t(K) + std::size_t(k)] > 0.0f) {
        ++rows;
        break;
      }
  return rows;
}

double sparsity(const Tensor& w_c) {
  if (w_c.numel() == 0) throw ShapeError("sparsity: empty scoring sheet");
  std::int64_t zeros_n = 0;
  for (float v : w_c.data)
    if (v == 0.0f) ++zeros_n;
  return double(zeros_n) / double(w_c.numel());
}

int local_size(const InferResult& result, const Tensor& w_c, float detect_threshold) {
  const int L = w_c.shape[0], K = w_c.shape[1];
  if (int(result.p_masked.size()) != L)
    throw ShapeError("local_size: presence length does not match the scoring sheet");
  int count = 0;
  for (int l = 0; l < L; ++l) {
    const float w = w_c.data[std::size_t(l) * std::size_t(K) + std::size_t(result.predicted_class)];
    if (result.p_masked[std::size_t(l)] > detect_threshold && w > 0.0f) ++count;
  }
  return count;
}

std::optional<double> localization_consistency(const PimpnetModel& model,
                                               const std::vector<SyntheticSample>& samples,
                                               std::span<const int> ids,
                                               float detect_threshold) {
  check_ids(samples, ids);
  const auto extents = model.config.feature_extents();
  const int M = model.config.M;
  std::vector<std::vector<std::array<int, 3>>> hits(static_cast<std::size_t>(M));
  for (int id : ids) {
    const auto& s = samples[std::size_t(id)];
    const auto res = infer(model, s.volume, s.age);
    for (int m = 0; m < M; ++m)
      if (res.presence.p_img->data[std::size_t(m)] > detect_threshold)
        hits[std::size_t(m)].push_back(res.presence.img_locations[std::size_t(m)]);
  }

  double total = 0.0;
  int qualifying = 0;
  for (const auto& locs : hits) {
    if (locs.size() < 2) continue;
    double axis_var_sum = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double denom = extents[std::size_t(a)] > 1 ? double(extents[std::size_t(a)] - 1) : 1.0;
      double mean = 0.0;
      for (const auto& loc : locs) mean += double(loc[std::size_t(a)]) / denom;
      mean /= double(locs.size());
      double var = 0.0;
      for (const auto& loc : locs) {
        const double d = double(loc[std::size_t(a)]) / denom - mean;
        var += d * d;
      }
      axis_var_sum += var / double(locs.size());
    }
    total += axis_var_sum / 3.0;
    ++qualifying;
  }
  if (qualifying == 0) return std::nullopt;
  return total / double(qualifying);
}

RegionEntropyReport region_entropy(const PimpnetModel& model,
                                   const std::vector<SyntheticSample>& samples,
                                   std::span<const int> ids, float detect_threshold) {
  check_ids(samples, ids);
  const int M = model.config.M;
  std::vector<std::vector<std::int64_t>> counts(std::size_t(M), std::vector<std::int64_t>(256, 0));
  std::vector<std::int64_t> detections(std::size_t(M), 0);

  for (int id : ids) {
    const auto& s = samples[std::size_t(id)];
    if (int(s.atlas.size()) != model.config.S * model.config.R * model.config.C)
      throw ShapeError("region_entropy: atlas size does not match the model input extents");
    const auto res = infer(model, s.volume, s.age);
    for (int m = 0; m < M; ++m) {
      if (res.presence.p_img->data[std::size_t(m)] <= detect_threshold) continue;
      ++detections[std::size_t(m)];
      const auto& loc = res.presence.img_locations[std::size_t(m)];
      const auto box = receptive_field_box(model.config, loc[0], loc[1], loc[2]);
      for (int d = box.lo[0]; d <= box.hi[0]; ++d)
        for (int h = box.lo[1]; h <= box.hi[1]; ++h)
          for (int w = box.lo[2]; w <= box.hi[2]; ++w) {
            const auto at = (std::size_t(d) * std::size_t(model.config.R) + std::size_t(h)) *
                                std::size_t(model.config.C) +
                            std::size_t(w);
            ++counts[std::size_t(m)][s.atlas[at]];
          }
    }
  }

  RegionEntropyReport report;
  double total = 0.0;
  int detected = 0;
  for (int m = 0; m < M; ++m) {
    if (detections[std::size_t(m)] == 0) continue;
    std::int64_t voxels = 0;
    for (auto c : counts[std::size_t(m)]) voxels += c;
    double entropy = 0.0;
    for (auto c : counts[std::size_t(m)]) {
      if (c == 0) continue;
      const double q = double(c) / double(voxels);
      entropy -= q * std::log2(q);
    }
    PrototypeRegionStats st;
    st.prototype_id = m;
    st.detections = detections[std::size_t(m)];
    st.entropy_bits = entropy;
    st.background_fraction = double(counts[std::size_t(m)][0]) / double(voxels);
    report.per_prototype.push_back(st);
    total += entropy;
    ++detected;
  }
  if (detected > 0) report.mean_entropy_bits = total / double(detected);
  return report;
}

double mean_max_channel_activation(const PimpnetModel& model,
                                   const std::vector<SyntheticSample>& samples,
                                   std::span<const int> ids) {
  check_ids(samples, ids);
  double total = 0.0;
  std::int64_t cells = 0;
  for (int id : ids) {
    Tape tape;
    const auto z = backbone_forward(tape, model, samples[std::size_t(id)].volume);
    const int M = z->shape[0];
    const std::int64_t per = z->numel() / M;
    for (std::int64_t i = 0; i < per; ++i) {
      float best = z->data[std::size_t(i)];
      for (int m = 1; m < M; ++m)
        best = std::max(best, z->data[std::size_t(m) * std::size_t(per) + std::size_t(i)]);
      total += double(best);
    }
    cells += per;
  }
  return total / double(cells);
}

MetricsReport evaluate_model(const PimpnetModel& model,
                             const std::vector<SyntheticSample>& samples,
                             std::span<const int> ids, float detect_threshold) {
  check_ids(samples, ids);
  if (model.config.K != 2) throw Error("evaluate_model: needs a two-class model");

  MetricsReport report;
  report.sample_count = std::int64_t(ids.size());
  report.detect_threshold = detect_threshold;

  std::vector<int> preds, labels;
  double ls_sum = 0.0;
  for (int id : ids) {
    const auto& s = samples[std::size_t(id)];
    const auto res = infer(model, s.volume, s.age);
    preds.push_back(res.predicted_class);
    labels.push_back(s.label);
    ls_sum += double(local_size(res, *model.w_c, detect_threshold));
  }
  std::tie(report.counts, report.rates) = classification_metrics(preds, labels);
  report.global_size = pimpnet::global_size(*model.w_c);
  report.local_size_mean = ls_sum / double(ids.size());
  report.sparsity = pimpnet::sparsity(*model.w_c);
  report.localization_consistency =
      pimpnet::localization_consistency(model, samples, ids, detect_threshold);
  auto entropy = region_entropy(model, samples, ids, detect_threshold);
  report.region_entropy_bits = entropy.mean_entropy_bits;
  report.prototype_regions = std::move(entropy.per_prototype);
  return report;
}

std::string metrics_to_text(const MetricsReport& r) {
  std::ostringstream out;
  out << "samples: " << r.sample_count << "\n";
  out << "detect_threshold: " << fmt(double(r.detect_threshold)) << "\n";
  out << "acc: " << fmt(r.rates.accuracy) << "\n";
  out << "bal_acc: " << fmt(r.rates.balanced_accuracy) << "\n";
  out << "sens: " << fmt(r.rates.sensitivity) << "\n";
  out << "spec: " << fmt(r.rates.specificity) << "\n";
  out << "f1: " << fmt(r.rates.f1) << "\n";
  const char* cls[2] = {"cn", "ad"};
  for (int c = 0; c < 2; ++c) {
    const auto ci = std::size_t(c);
    out << "tp_" << cls[c] << ": " << r.counts.tp[ci] << "\n";
    out << "fp_" << cls[c] << ": " << r.counts.fp[ci] << "\n";
    out << "fn_" << cls[c] << ": " << r.counts.fn[ci] << "\n";
    out << "tn_" << cls[c] << ": " << r.counts.tn[ci] << "\n";
  }
  out << "gs: " << r.global_size << "\n";
  out << "ls: " << fmt(r.local_size_mean) << "\n";
  out << "sp: " << fmt(r.sparsity) << "\n";
  out << "lc_p: " << fmt_opt(r.localization_consistency) << "\n";
  out << "h_p: " << fmt_opt(r.region_entropy_bits) << "\n";
  for (const auto& p : r.prototype_regions) {
    out << "proto_" << p.prototype_id << "_detections: " << p.detections << "\n";
    out << "proto_" << p.prototype_id << "_entropy: " << fmt(p.entropy_bits) << "\n";
    out << "proto_" << p.prototype_id << "_bg_frac: " << fmt(p.background_fraction) << "\n";
  }
  return out.str();
}

namespace {

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw IoError(IoCode::bad_payload, "metrics file: line without ':': " + line);
    std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    const auto vb = value.find_first_not_of(" \t");
    value = vb == std::string::npos ? "" : value.substr(vb);
    kv[key] = value;
  }
  return kv;
}

double need_num(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw IoError(IoCode::bad_payload, "metrics file: missing key '" + key + "'");
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw IoError(IoCode::bad_payload, "metrics file: key '" + key + "' has value '" + it->second + "'");
  }
}

std::optional<double> need_opt(const std::map<std::string, std::string>& kv,
                               const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw IoError(IoCode::bad_payload, "metrics file: missing key '" + key + "'");
  if (it->second == "undefined") return std::nullopt;
  return need_num(kv, key);
}

}  // namespace

MetricsReport metrics_from_text(const std::string& text) {
  const auto kv = parse_kv(text);
  MetricsReport r;
  r.sample_count = std::int64_t(need_num(kv, "samples"));
  r.detect_threshold = float(need_num(kv, "detect_threshold"));
  r.rates.accuracy = need_num(kv, "acc");
  r.rates.balanced_accuracy = need_num(kv, "bal_acc");
  r.rates.sensitivity = need_num(kv, "sens");
  r.rates.specificity = need_num(kv, "spec");
  r.rates.f1 = need_num(kv, "f1");
  const char* cls[2] = {"cn", "ad"};
  for (int c = 0; c < 2; ++c) {
    const auto ci = std::size_t(c);
    const std::string suffix = std::string("_") + cls[c];
    r.counts.tp[ci] = std::int64_t(need_num(kv, "tp" + suffix));
    r.counts.fp[ci] = std::int64_t(need_num(kv, "fp" + suffix));
    r.counts.fn[ci] = std::int64_t(need_num(kv, "fn" + suffix));
    r.counts.tn[ci] = std::int64_t(need_num(kv, "tn" + suffix));
  }
  r.global_size = int(need_num(kv, "gs"));
  r.local_size_mean = need_num(kv, "ls");
  r.sparsity = need_num(kv, "sp");
  r.localization_consistency = need_opt(kv, "lc_p");
  r.region_entropy_bits = need_opt(kv, "h_p");
  return r;
}

std::string aggregate_metrics_text(const std::vector<MetricsReport>& runs) {
  if (runs.empty()) throw Error("aggregate: no metrics to aggregate");
  std::ostringstream out;
  out << "runs: " << runs.size() << "\n";

  const auto stat_line = [&](const std::string& key, auto getter) {
    std::vector<double> vals;
    for (const auto& r : runs) {
      const std::optional<double> v = getter(r);
      if (v) vals.push_back(*v);
    }
    if (vals.empty()) {
      out << key << "_mean: undefined\n" << key << "_std: undefined\n";
      return;
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= double(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double sd = vals.size() > 1 ? std::sqrt(var / double(vals.size() - 1)) : 0.0;
    out << key << "_mean: " << fmt(mean) << "\n" << key << "_std: " << fmt(sd) << "\n";
    if (vals.size() != runs.size())
      out << key << "_defined_runs: " << vals.size() << "\n";
  };

  const auto always = [](auto f) {
    return [f](const MetricsReport& r) { return std::optional<double>(f(r)); };
  };
  stat_line("samples", always([](const MetricsReport& r) { return double(r.sample_count); }));
  stat_line("acc", always([](const MetricsReport& r) { return r.rates.accuracy; }));
  stat_line("bal_acc", always([](const MetricsReport& r) { return r.rates.balanced_accuracy; }));
  stat_line("sens", always([](const MetricsReport& r) { return r.rates.sensitivity; }));
  stat_line("spec", always([](const MetricsReport& r) { return r.rates.specificity; }));
  stat_line("f1", always([](const MetricsReport& r) { return r.rates.f1; }));
  stat_line("gs", always([](const MetricsReport& r) { return double(r.global_size); }));
  stat_line("ls", always([](const MetricsReport& r) { return r.local_size_mean; }));
  stat_line("sp", always([](const MetricsReport& r) { return r.sparsity; }));
  stat_line("lc_p", [](const MetricsReport& r) { return r.localization_consistency; });
  stat_line("h_p", [](const MetricsReport& r) { return r.region_entropy_bits; });
  return out.str();
}

ExplainReport explain(const PimpnetModel& model, const SyntheticSample& sample,
                      int sample_index) {
  const auto res = infer(model, sample.volume, sample.age);
  ExplainReport report;
  report.sample_index = sample_index;
  report.predicted_class = res.predicted_class;
  report.label = sample.label;
  report.age = sample.age;
  report.class_scores = res.o;

  const int L = model.config.L(), M = model.config.M, K = model.config.K;
  for (int l = 0; l < L; ++l) {
    const float presence = res.p_masked[std::size_t(l)];
    const float weight =
        model.w_c->data[std::size_t(l) * std::size_t(K) + std::size_t(res.predicted_class)];
    const float contribution = presence * weight;
    if (contribution <= 0.0f) continue;
    ExplainEntry e;
    e.prototype_id = l;
    e.is_image = l < M;
    e.presence = presence;
    e.weight = weight;
    e.contribution = contribution;
    if (e.is_image) {
      const auto& loc = res.presence.img_locations[std::size_t(l)];
      e.patch_center = receptive_field_box(model.config, loc[0], loc[1], loc[2]).center();
    } else {
      e.prototypical_age = model.t_age->data[std::size_t(l - M)];
    }
    report.entries.push_back(e);
  }
  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const ExplainEntry& a, const ExplainEntry& b) {
                     if (a.contribution != b.contribution) return a.contribution > b.contribution;
                     return a.prototype_id < b.prototype_id;
                   });
  return report;
}

std::string explain_to_text(const ExplainReport& r) {
  const char* names[2] = {"CN", "AD"};
  std::ostringstream out;
  out << "sample: " << r.sample_index << "\n";
  out << "label: " << names[r.label] << "\n";
  out << "age: " << fmt(double(r.age)) << "\n";
  out << "predicted: " << names[r.predicted_class] << "\n";
  for (std::size_t k = 0; k < r.class_scores.size(); ++k)
    out << "score_" << (k < 2 ? std::string(k == 0 ? "cn" : "ad") : std::to_string(k)) << ": "
        << fmt(double(r.class_scores[k])) << "\n";
  int rank = 1;
  for (const auto& e : r.entries) {
    out << "--\n";
    out << "rank: " << rank++ << "\n";
    out << "prototype: " << e.prototype_id << "\n";
    out << "kind: " << (e.is_image ? "image" : "age") << "\n";
    out << "presence: " << fmt(double(e.presence)) << "\n";
    out << "weight: " << fmt(double(e.weight)) << "\n";
    out << "contribution: " << fmt(double(e.contribution)) << "\n";
    if (e.is_image)
      out << "patch_center: " << e.patch_center[0] << "," << e.patch_center[1] << ","
          << e.patch_center[2] << "\n";
    else
      out << "prototypical_age: " << fmt(double(e.prototypical_age)) << "\n";
  }
  return out.str();
}

}  // namespace pimpnet
