#pragma once

#include <string>

#include "pimpnet/config.hpp"
#include "pimpnet/model.hpp"
#include "pimpnet/training.hpp"

namespace pimpnet {

// Stage markers: "pretrained" after stage 1, "trained" after stage 2.
struct Checkpoint {
  std::string stage;
  Config config;
  PimpnetModel model;
  OptimizerStates opt;
};

// Little-endian: magic "PIMP", u32 version = 1, u32 metadata length, metadata
// text ("stage = ..." then the canonical config echo), u32 tensor count, then
// per tensor: u32 name length, name, u8 rank, u64 extents, f32 data.
// save(load(x)) reproduces x byte for byte.
void save_checkpoint(const PimpnetModel& model, const OptimizerStates& opt,
                     const Config& config, const std::string& stage,
                     const std::string& path);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace pimpnet
