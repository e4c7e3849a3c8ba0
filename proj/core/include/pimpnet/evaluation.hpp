#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pimpnet/model.hpp"
#include "pimpnet/synthdata.hpp"

namespace pimpnet {

// Class 0 is CN, class 1 is AD throughout.
struct ConfusionCounts {
  std::array<std::int64_t, 2> tp{}, fp{}, fn{}, tn{};
};

struct ClassificationRates {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  double sensitivity = 0.0;  // CN recall
  double specificity = 0.0;  // AD recall
  double f1 = 0.0;           // AD as the positive class
};

std::pair<ConfusionCounts, ClassificationRates> classification_metrics(
    std::span<const int> predictions, std::span<const int> labels);

// Rows of the scoring sheet with at least one strictly positive weight.
int global_size(const Tensor& w_c);

// Fraction of exactly zero entries in the scoring sheet.
double sparsity(const Tensor& w_c);

// Prototypes counted toward one prediction: presence above the threshold and
// a positive weight to the predicted class; age presences are masked first.
int local_size(const InferResult& result, const Tensor& w_c, float detect_threshold);

// Per-prototype spread of detected argmax centers across samples, in
// normalized feature coordinates; lower is more consistent. Undefined until
// some prototype is detected at least twice.
std::optional<double> localization_consistency(const PimpnetModel& model,
                                               const std::vector<SyntheticSample>& samples,
                                               std::span<const int> ids,
                                               float detect_threshold);

struct PrototypeRegionStats {
  int prototype_id = 0;
  std::int64_t detections = 0;
  double entropy_bits = 0.0;        // over atlas labels in the receptive fields
  double background_fraction = 0.0;  // share of label-0 voxels
};

// Atlas-label entropy per detected image prototype plus the mean; undefined
// when nothing is detected.
struct RegionEntropyReport {
  std::optional<double> mean_entropy_bits;
  std::vector<PrototypeRegionStats> per_prototype;
};

RegionEntropyReport region_entropy(const PimpnetModel& model,
                                   const std::vector<SyntheticSample>& samples,
                                   std::span<const int> ids, float detect_threshold);

// Mean over samples and feature-map locations of max_m z[m, d, h, w]; the
// pretraining objective pushes this toward 1.
double mean_max_channel_activation(const PimpnetModel& model,
                                   const std::vector<SyntheticSample>& samples,
                                   std::span<const int> ids);

struct MetricsReport {
  std::int64_t sample_count = 0;
  float detect_threshold = 0.0f;
  ConfusionCounts counts;
  ClassificationRates rates;
  int global_size = 0;
  double local_size_mean = 0.0;
  double sparsity = 0.0;
  std::optional<double> localization_consistency;
  std::optional<double> region_entropy_bits;
  std::vector<PrototypeRegionStats> prototype_regions;
};

MetricsReport evaluate_model(const PimpnetModel& model,
                             const std::vector<SyntheticSample>& samples,
                             std::span<const int> ids, float detect_threshold);

// Deterministic text form, one "key: value" per line in fixed order;
// undefined metrics serialize as the word "undefined".
std::string metrics_to_text(const MetricsReport& report);

// Parses metrics_to_text output; unknown keys are ignored so annotated or
// aggregated files stay readable.
MetricsReport metrics_from_text(const std::string& text);

// Mean and sample standard deviation per metric across runs.
std::string aggregate_metrics_text(const std::vector<MetricsReport>& runs);

struct ExplainEntry {
  int prototype_id = 0;  // row in the scoring sheet
  bool is_image = false;
  float presence = 0.0f;  // masked value for age prototypes
  float weight = 0.0f;    // w_c[prototype, predicted]
  float contribution = 0.0f;
  std::array<int, 3> patch_center{};  // voxel coordinates, image prototypes
  float prototypical_age = 0.0f;      // age prototypes
};

struct ExplainReport {
  int sample_index = 0;
  int predicted_class = 0;
  int label = 0;
  float age = 0.0f;
  std::vector<float> class_scores;
  std::vector<ExplainEntry> entries;  // contribution-descending
};

ExplainReport explain(const PimpnetModel& model, const SyntheticSample& sample,
                      int sample_index);

std::string explain_to_text(const ExplainReport& report);

}  // namespace pimpnet
