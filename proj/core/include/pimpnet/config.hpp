#pragma once

#include <cstdint>
#include <string>

#include "pimpnet/model.hpp"
#include "pimpnet/synthdata.hpp"
#include "pimpnet/training.hpp"

namespace pimpnet {

// Everything one run needs, from generation through explanation. The volume
// extents are shared between the phantom and the model input.
struct Config {
  ModelConfig model;
  PhantomSpec phantom;
  TrainSchedule schedule;
  LossWeights weights;
  AugmentConfig augment;
  int n_samples = 200;
  float detect_threshold = 0.1f;
  std::uint64_t seed = 0;

  void validate_and_finalize();
};

// key = value lines; '#' starts a comment, later assignments win. Unknown
// keys and malformed values are rejected with the line number.
Config parse_config_text(const std::string& text);
Config parse_config_file(const std::string& path);

// Canonical form: every key once, fixed order. parse(echo(c)) == c and
// echo is a fixed point, which keeps checkpoint metadata stable.
std::string echo_config(const Config& config);

}  // namespace pimpnet
