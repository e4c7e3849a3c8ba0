#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pimpnet/tensor.hpp"

namespace pimpnet {

enum class TaskKind { image_separable, age_confounded, age_only };

// Geometry of one atlas region, in coordinates normalized to the volume
// extents (offsets from the volume center, radius as a fraction of the
// smallest extent).
struct RegionSpec {
  std::array<double, 3> center_offset;
  double radius;
  bool ad_target;  // regions that carry the planted disease signal
};

// The fixed region layout; generators use the first region_count entries.
const std::vector<RegionSpec>& region_table();

// Age from which atrophy is counted; younger than every drawn age.
inline constexpr double kAtrophyReferenceAge = 40.0;

// Class-conditional age modes planted by the age_only task, split by the
// label threshold at kAgeOnlyThreshold.
inline constexpr double kAgeOnlyModeCn = 65.0;
inline constexpr double kAgeOnlyModeAd = 81.0;
inline constexpr double kAgeOnlyThreshold = 73.0;

struct PhantomSpec {
  int S = 32, R = 32, C = 32;
  int region_count = 6;
  float age_min = 55.0f;
  float age_max = 90.0f;
  float normal_atrophy_rate = 0.003f;  // radius fraction lost per year
  float ad_extra_atrophy = 0.25f;      // task-dependent, see generate_sample
  float noise_sigma = 0.02f;
  TaskKind task_kind = TaskKind::image_separable;

  // Rejects any setting whose worst case pushes a region radius below 2
  // voxels, overlaps regions, or leaves no room for the planted age modes.
  void validate() const;

  // Atlas label for brain tissue outside every region; region labels are
  // 1..region_count and 0 is the non-brain background.
  int tissue_label() const { return region_count + 1; }
};

// Apparent-age advance of the AD class under age_confounded, in years.
double confounded_age_advance(const PhantomSpec& spec);

// Multiplicative radius factor at a given effective age.
double atrophy_factor(const PhantomSpec& spec, double effective_age);

// Region radii in voxels at a given effective age (and class, for the
// image_separable target shrink).
std::vector<double> region_radii_voxels(const PhantomSpec& spec,
                                        double effective_age, int label);

struct RegionTruth {
  std::array<double, 3> center_voxel;
  double radius_voxel;
  int atlas_label;  // 1-based
};

struct SampleTruth {
  double effective_age = 0.0;  // the age the rendered anatomy encodes
  std::vector<RegionTruth> regions;
};

struct SyntheticSample {
  TensorPtr volume;            // [1 x S x R x C], intensities in [0, 1]
  float age = 0.0f;            // years
  int label = 0;               // 0 = CN, 1 = AD
  std::vector<std::uint8_t> atlas;  // row-major S x R x C label volume
  SampleTruth truth;           // not serialized; used by the metric oracles
};

struct DatasetSplit {
  std::vector<int> train_ids;
  std::vector<int> val_ids;
  std::vector<int> test_ids;
};

SyntheticSample generate_sample(const PhantomSpec& spec,
                                std::uint64_t sample_seed);

// n samples with per-sample seeds seed + index and a stratified 60/20/20
// split (largest-remainder per class, seeded shuffle within class).
std::pair<std::vector<SyntheticSample>, DatasetSplit> generate_dataset(
    const PhantomSpec& spec, int n, std::uint64_t seed);

// Binary container at path plus a text split file at path + ".split".
// Little-endian: magic "PSYN", u32 version = 1, u32 sample count, u16 x3
// volume extents, u16 region count, then per sample: f32 age, u8 label,
// atlas u8 per voxel, volume f32 per voxel, both row-major.
void write_dataset(const std::vector<SyntheticSample>& samples,
                   const DatasetSplit& split, const std::string& path);

struct LoadedDataset {
  PhantomSpec spec;  // extents and region count recovered from the header
  std::vector<SyntheticSample> samples;  // truth left empty
  DatasetSplit split;
};

LoadedDataset read_dataset(const std::string& path);

std::string split_to_text(const DatasetSplit& split);
DatasetSplit split_from_text(const std::string& text);

}  // namespace pimpnet
