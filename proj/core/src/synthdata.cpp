#include "pimpnet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "binio.hpp"
#include "pimpnet/error.hpp"
#include "pimpnet/rng.hpp"

namespace pimpnet {
namespace {

constexpr float kBrainIntensity = 0.4f;
constexpr double kBrainSemiAxis = 0.45;  // fraction of each extent

float region_intensity(int region_index) {
  return 0.6f + 0.06f * float(region_index);
}

// Age draw windows for the age_only task, carved around the planted modes.
constexpr double kAgeOnlySigma = 4.0;
constexpr double kAgeOnlyCnHi = 71.0;
constexpr double kAgeOnlyAdLo = 75.0;

double truncated_normal(Rng& rng, double mu, double sigma, double lo, double hi) {
  for (;;) {
    const double x = rng.normal(mu, sigma);
    if (x >= lo && x <= hi) return x;
  }
}

}  // namespace

const std::vector<RegionSpec>& region_table() {
  static const std::vector<RegionSpec> table = {
      {{-0.14, -0.11, -0.14}, 0.110, true},
      {{-0.14, -0.11, +0.14}, 0.110, true},
      {{0.00, +0.08, 0.00}, 0.115, false},
      {{+0.22, 0.00, -0.13}, 0.100, false},
      {{+0.22, 0.00, +0.13}, 0.100, false},
      {{-0.24, +0.17, 0.00}, 0.095, false},
  };
  return table;
}

double confounded_age_advance(const PhantomSpec& spec) {
  if (spec.normal_atrophy_rate <= 0.0f) return 0.0;
  return double(spec.ad_extra_atrophy) / double(spec.normal_atrophy_rate);
}

double atrophy_factor(const PhantomSpec& spec, double effective_age) {
  return 1.0 - double(spec.normal_atrophy_rate) * (effective_age - kAtrophyReferenceAge);
}

std::vector<double> region_radii_voxels(const PhantomSpec& spec,
                                        double effective_age, int label) {
  const auto& table = region_table();
  const double min_extent = double(std::min({spec.S, spec.R, spec.C}));
  const double base_factor = atrophy_factor(spec, effective_age);
  std::vector<double> radii(std::size_t(spec.region_count));
  for (int r = 0; r < spec.region_count; ++r) {
    double f = base_factor;
    if (spec.task_kind == TaskKind::image_separable && label == 1 && table[std::size_t(r)].ad_target)
      f *= 1.0 - double(spec.ad_extra_atrophy);
    radii[std::size_t(r)] = table[std::size_t(r)].radius * min_extent * f;
  }
  return radii;
}

void PhantomSpec::validate() const {
  if (S < 8 || R < 8 || C < 8) throw ConfigError("phantom: volume extents must be at least 8");
  if (S > 65535 || R > 65535 || C > 65535)
    throw ConfigError("phantom: volume extents exceed the container's u16 range");
  if (region_count < 1 || region_count > int(region_table().size()))
    throw ConfigError("phantom: region_count must be in [1, " +
                      std::to_string(region_table().size()) + "]");
  if (!(age_min > kAtrophyReferenceAge) || !(age_max > age_min))
    throw ConfigError("phantom: need " + std::to_string(kAtrophyReferenceAge) +
                      " < age_min < age_max");
  if (!(normal_atrophy_rate >= 0.0f) || !(ad_extra_atrophy >= 0.0f) || !(noise_sigma >= 0.0f))
    throw ConfigError("phantom: rates and noise_sigma must be non-negative");
  if (task_kind == TaskKind::image_separable && !(ad_extra_atrophy < 1.0f))
    throw ConfigError("phantom: ad_extra_atrophy must be below 1 for image_separable");
  if (task_kind == TaskKind::age_only &&
      (age_min > kAgeOnlyModeCn - 2.0 * kAgeOnlySigma ||
       age_max < kAgeOnlyModeAd + 2.0 * kAgeOnlySigma))
    throw ConfigError("phantom: age range too narrow for the age_only modes at " +
                      std::to_string(kAgeOnlyModeCn) + " and " + std::to_string(kAgeOnlyModeAd));

  double max_eff = double(age_max);
  if (task_kind == TaskKind::age_confounded) max_eff += confounded_age_advance(*this);
  const double base_worst = atrophy_factor(*this, max_eff);
  const double min_extent = double(std::min({S, R, C}));
  for (int r = 0; r < region_count; ++r) {
    double worst = base_worst;
    if (task_kind == TaskKind::image_separable && region_table()[std::size_t(r)].ad_target)
      worst *= 1.0 - double(ad_extra_atrophy);
    if (worst <= 0.0) throw ConfigError("phantom: atrophy rates shrink regions past zero");
    const double base = region_table()[std::size_t(r)].radius * min_extent;
    if (base * worst < 2.0)
      throw ConfigError("phantom: region " + std::to_string(r + 1) + " shrinks below 2 voxels (" +
                        std::to_string(base * worst) + ") at the configured atrophy rates");
  }
}

namespace {

struct PlacedRegion {
  std::array<double, 3> center;  // voxel coordinates
  double radius;                 // voxels
  float intensity;
  int atlas_label;
};

// Signed approximate distance to the ellipsoid surface in voxels, positive
// inside. Used for a one-voxel soft shell so sub-voxel radius changes move
// the rendered intensities.
double surface_distance(double dx, double dy, double dz, double ax, double ay, double az) {
  const double rho = std::sqrt((dx / ax) * (dx / ax) + (dy / ay) * (dy / ay) + (dz / az) * (dz / az));
  const double scale = std::min({ax, ay, az});
  return (1.0 - rho) * scale;
}

float soft_mix(float base, float value, double dist) {
  const double alpha = std::clamp(0.5 + dist, 0.0, 1.0);
  return float((1.0 - alpha) * double(base) + alpha * double(value));
}

}  // namespace

SyntheticSample generate_sample(const PhantomSpec& spec, std::uint64_t sample_seed) {
  spec.validate();
  Rng rng(sample_seed);

  SyntheticSample out;
  // Draw order is part of the format: label-relevant scalars first, then one
  // noise value per voxel in row-major order.
  double age = 0.0;
  if (spec.task_kind == TaskKind::age_only) {
    out.label = rng.bernoulli(0.5) ? 1 : 0;
    age = out.label == 0 ? truncated_normal(rng, kAgeOnlyModeCn, kAgeOnlySigma,
                                            double(spec.age_min), kAgeOnlyCnHi)
                         : truncated_normal(rng, kAgeOnlyModeAd, kAgeOnlySigma,
                                            kAgeOnlyAdLo, double(spec.age_max));
  } else {
    age = rng.uniform(double(spec.age_min), double(spec.age_max));
    out.label = rng.bernoulli(0.5) ? 1 : 0;
  }
  out.age = float(age);

  double effective_age = age;
  switch (spec.task_kind) {
    case TaskKind::image_separable:
      break;  // target regions carry the signal through their extra shrink
    case TaskKind::age_confounded:
      if (out.label == 1) effective_age += confounded_age_advance(spec);
      break;
    case TaskKind::age_only:
      effective_age = kAtrophyReferenceAge;  // anatomy carries no signal
      break;
  }
  out.truth.effective_age = effective_age;

  const auto radii = region_radii_voxels(spec, effective_age, out.label);
  std::vector<PlacedRegion> regions;
  for (int r = 0; r < spec.region_count; ++r) {
    const auto& rs = region_table()[std::size_t(r)];
    PlacedRegion pr;
    pr.center = {(double(spec.S) - 1.0) / 2.0 + rs.center_offset[0] * spec.S,
                 (double(spec.R) - 1.0) / 2.0 + rs.center_offset[1] * spec.R,
                 (double(spec.C) - 1.0) / 2.0 + rs.center_offset[2] * spec.C};
    pr.radius = radii[std::size_t(r)];
    pr.intensity = region_intensity(r);
    pr.atlas_label = r + 1;
    regions.push_back(pr);
    out.truth.regions.push_back({pr.center, pr.radius, pr.atlas_label});
  }

  const int V = spec.S * spec.R * spec.C;
  out.volume = zeros({1, spec.S, spec.R, spec.C});
  out.atlas.assign(std::size_t(V), 0);

  const double bc[3] = {(double(spec.S) - 1.0) / 2.0, (double(spec.R) - 1.0) / 2.0,
                        (double(spec.C) - 1.0) / 2.0};
  const double ba[3] = {kBrainSemiAxis * spec.S, kBrainSemiAxis * spec.R, kBrainSemiAxis * spec.C};

  int idx = 0;
  for (int d = 0; d < spec.S; ++d) {
    for (int h = 0; h < spec.R; ++h) {
      for (int w = 0; w < spec.C; ++w, ++idx) {
        const double brain_dist =
            surface_distance(d - bc[0], h - bc[1], w - bc[2], ba[0], ba[1], ba[2]);
        float v = soft_mix(0.0f, kBrainIntensity, brain_dist);
        std::uint8_t label = brain_dist > 0.0 ? std::uint8_t(spec.tissue_label()) : 0;
        for (const auto& pr : regions) {
          const double dist = surface_distance(d - pr.center[0], h - pr.center[1],
                                               w - pr.center[2], pr.radius, pr.radius, pr.radius);
          if (dist > -1.0) v = soft_mix(v, pr.intensity, dist);
          if (dist > 0.0) label = std::uint8_t(pr.atlas_label);
        }
        out.atlas[std::size_t(idx)] = label;
        float noisy = v;
        if (spec.noise_sigma > 0.0f) noisy += float(rng.normal(0.0, double(spec.noise_sigma)));
        out.volume->data[std::size_t(idx)] = std::clamp(noisy, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

namespace {

void stratified_split(const std::vector<SyntheticSample>& samples, std::uint64_t seed,
                      DatasetSplit& split) {
  std::array<std::vector<int>, 2> by_class;
  for (int i = 0; i < int(samples.size()); ++i)
    by_class[std::size_t(samples[std::size_t(i)].label)].push_back(i);

  Rng rng(derive_seed(seed, 0x73706c6974));
  const double fracs[3] = {0.6, 0.2, 0.2};
  for (auto& ids : by_class) {
    for (int i = int(ids.size()) - 1; i > 0; --i)
      std::swap(ids[std::size_t(i)], ids[rng.uniform_index(std::size_t(i) + 1)]);

    // Largest remainder keeps the three parts summing to the class size.
    const int n = int(ids.size());
    int counts[3];
    double rem[3];
    int used = 0;
    for (int p = 0; p < 3; ++p) {
      const double want = fracs[p] * n;
      counts[p] = int(std::floor(want));
      rem[p] = want - counts[p];
      used += counts[p];
    }
    while (used < n) {
      int best = 0;
      for (int p = 1; p < 3; ++p)
        if (rem[p] > rem[best]) best = p;
      ++counts[best];
      rem[best] = -1.0;
      ++used;
    }
    int at = 0;
    for (int p = 0; p < 3; ++p) {
      auto& dst = p == 0 ? split.train_ids : p == 1 ? split.val_ids : split.test_ids;
      for (int i = 0; i < counts[p]; ++i) dst.push_back(ids[std::size_t(at++)]);
    }
  }
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.val_ids.begin(), split.val_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
}

}  // namespace

std::pair<std::vector<SyntheticSample>, DatasetSplit> generate_dataset(
    const PhantomSpec& spec, int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("generate_dataset: sample count must be positive");
  std::vector<SyntheticSample> samples;
  samples.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) samples.push_back(generate_sample(spec, seed + std::uint64_t(i)));
  DatasetSplit split;
  stratified_split(samples, seed, split);
  return {std::move(samples), std::move(split)};
}

void write_dataset(const std::vector<SyntheticSample>& samples, const DatasetSplit& split,
                   const std::string& path) {
  if (samples.empty()) throw Error("write_dataset: no samples");
  const auto& shape = samples.front().volume->shape;
  binio::Writer w(path);
  w.bytes("PSYN", 4);
  w.u32(1);
  w.u32(std::uint32_t(samples.size()));
  w.u16(std::uint16_t(shape[1]));
  w.u16(std::uint16_t(shape[2]));
  w.u16(std::uint16_t(shape[3]));
  int max_label = 0;
  for (const auto& s : samples)
    for (auto a : s.atlas) max_label = std::max(max_label, int(a));
  w.u16(std::uint16_t(std::max(0, max_label - 1)));  // region count, labels run to regions + 1
  for (const auto& s : samples) {
    if (s.volume->shape != shape) throw Error("write_dataset: mixed volume shapes");
    w.f32(s.age);
    w.u8(std::uint8_t(s.label));
    w.bytes(s.atlas.data(), s.atlas.size());
    for (float v : s.volume->data) w.f32(v);
  }
  w.close();

  std::ofstream sf(path + ".split", std::ios::trunc);
  if (!sf) throw IoError(IoCode::io_failure, "cannot open " + path + ".split for writing");
  sf << split_to_text(split);
  sf.close();
  if (!sf) throw IoError(IoCode::io_failure, "write to " + path + ".split failed");
}

LoadedDataset read_dataset(const std::string& path) {
  binio::Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "PSYN")
    throw IoError(IoCode::bad_magic, path + ": bad magic, not a dataset container");
  const auto version = r.u32();
  if (version != 1)
    throw IoError(IoCode::bad_version, path + ": unsupported version " + std::to_string(version));
  const auto count = r.u32();
  if (count == 0) throw IoError(IoCode::bad_payload, path + ": empty container");

  LoadedDataset out;
  out.spec.S = int(r.u16());
  out.spec.R = int(r.u16());
  out.spec.C = int(r.u16());
  out.spec.region_count = int(r.u16());
  if (out.spec.S < 1 || out.spec.R < 1 || out.spec.C < 1)
    throw IoError(IoCode::bad_payload, path + ": zero volume extent");
  const std::size_t V = std::size_t(out.spec.S) * std::size_t(out.spec.R) * std::size_t(out.spec.C);

  out.samples.resize(count);
  for (auto& s : out.samples) {
    s.age = r.f32();
    if (!std::isfinite(s.age)) throw IoError(IoCode::bad_payload, path + ": non-finite age");
    const int label = int(r.u8());
    if (label != 0 && label != 1)
      throw IoError(IoCode::bad_payload, path + ": label byte " + std::to_string(label));
    s.label = label;
    s.atlas.resize(V);
    r.bytes(s.atlas.data(), V);
    s.volume = zeros({1, out.spec.S, out.spec.R, out.spec.C});
    for (auto& v : s.volume->data) v = r.f32();
  }
  r.expect_eof();

  std::ifstream sf(path + ".split");
  if (!sf) throw IoError(IoCode::io_failure, "cannot open " + path + ".split");
  std::stringstream ss;
  ss << sf.rdbuf();
  out.split = split_from_text(ss.str());
  const auto check = [&](const std::vector<int>& ids, const char* part) {
    for (int id : ids)
      if (id < 0 || id >= int(count))
        throw IoError(IoCode::bad_payload, path + ".split: " + part + " index " +
                                               std::to_string(id) + " out of range");
  };
  check(out.split.train_ids, "train");
  check(out.split.val_ids, "val");
  check(out.split.test_ids, "test");
  return out;
}

std::string split_to_text(const DatasetSplit& split) {
  const auto line = [](const char* name, const std::vector<int>& ids) {
    std::string s = name;
    s += ":";
    for (std::size_t i = 0; i < ids.size(); ++i) {
      s += i == 0 ? " " : ",";
      s += std::to_string(ids[i]);
    }
    s += "\n";
    return s;
  };
  return line("train", split.train_ids) + line("val", split.val_ids) +
         line("test", split.test_ids);
}

DatasetSplit split_from_text(const std::string& text) {
  DatasetSplit split;
  std::istringstream in(text);
  std::string lines[3];
  for (auto& l : lines)
    if (!std::getline(in, l)) throw IoError(IoCode::bad_payload, "split file: expected 3 lines");
  const char* names[3] = {"train:", "val:", "test:"};
  for (int p = 0; p < 3; ++p) {
    const std::string& l = lines[std::size_t(p)];
    if (l.rfind(names[p], 0) != 0)
      throw IoError(IoCode::bad_payload, "split file: line " + std::to_string(p + 1) +
                                             " must start with '" + names[p] + "'");
    auto& dst = p == 0 ? split.train_ids : p == 1 ? split.val_ids : split.test_ids;
    std::string rest = l.substr(std::strlen(names[p]));
    std::istringstream parts(rest);
    std::string tok;
    while (std::getline(parts, tok, ',')) {
      const auto b = tok.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      const auto e = tok.find_last_not_of(" \t\r");
      tok = tok.substr(b, e - b + 1);
      try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        dst.push_back(v);
      } catch (const std::exception&) {
        throw IoError(IoCode::bad_payload, "split file: bad index '" + tok + "'");
      }
    }
  }
  return split;
}

}  // namespace pimpnet
