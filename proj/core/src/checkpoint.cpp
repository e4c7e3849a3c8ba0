#include "pimpnet/checkpoint.hpp"

#include <cmath>
#include <map>
#include <utility>

#include "binio.hpp"
#include "pimpnet/error.hpp"

namespace pimpnet {
namespace {

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

std::vector<NamedTensor> collect_tensors(const PimpnetModel& model, const OptimizerStates& opt) {
  std::vector<NamedTensor> out;
  const auto add = [&out](std::string name, const std::vector<int>& shape,
                          const std::vector<float>& data) {
    out.push_back({std::move(name), shape, data});
  };

  for (std::size_t i = 0; i < model.conv_kernels.size(); ++i) {
    add("conv." + std::to_string(i) + ".kernel", model.conv_kernels[i]->shape,
        model.conv_kernels[i]->data);
    add("conv." + std::to_string(i) + ".bias", model.conv_biases[i]->shape,
        model.conv_biases[i]->data);
  }
  if (model.t_age) add("t_age", model.t_age->shape, model.t_age->data);
  add("w_c", model.w_c->shape, model.w_c->data);

  const auto add_group = [&](const char* name, const AdamState& st,
                             const std::vector<TensorPtr>& params) {
    add(std::string("adam.") + name + ".step", {1}, {float(st.step)});
    for (std::size_t i = 0; i < params.size(); ++i) {
      add(std::string("adam.") + name + ".m." + std::to_string(i), params[i]->shape, st.m[i]);
      add(std::string("adam.") + name + ".v." + std::to_string(i), params[i]->shape, st.v[i]);
    }
  };
  add_group("backbone", opt.backbone, model.backbone_params());
  if (model.t_age) add_group("age", opt.age, {model.t_age});
  add_group("head", opt.head, {model.w_c});
  return out;
}

void check_adam_sized(const AdamState& st, const std::vector<TensorPtr>& params,
                      const std::string& group) {
  if (st.m.size() != params.size() || st.v.size() != params.size())
    throw Error("save_checkpoint: adam group '" + group + "' does not match its parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (st.m[i].size() != params[i]->data.size() || st.v[i].size() != params[i]->data.size())
      throw Error("save_checkpoint: adam group '" + group + "' moment " + std::to_string(i) +
                  " has the wrong length");
}

}  // namespace

void save_checkpoint(const PimpnetModel& model, const OptimizerStates& opt,
                     const Config& config, const std::string& stage,
                     const std::string& path) {
  if (stage != "pretrained" && stage != "trained")
    throw Error("save_checkpoint: stage must be 'pretrained' or 'trained', got '" + stage + "'");
  check_adam_sized(opt.backbone, model.backbone_params(), "backbone");
  if (model.t_age) check_adam_sized(opt.age, {model.t_age}, "age");
  check_adam_sized(opt.head, {model.w_c}, "head");

  const std::string metadata = "stage = " + stage + "\n" + echo_config(config);
  const auto tensors = collect_tensors(model, opt);

  binio::Writer w(path);
  w.bytes("PIMP", 4);
  w.u32(1);
  w.u32(std::uint32_t(metadata.size()));
  w.text(metadata);
  w.u32(std::uint32_t(tensors.size()));
  for (const auto& t : tensors) {
    w.u32(std::uint32_t(t.name.size()));
    w.text(t.name);
    w.u8(std::uint8_t(t.shape.size()));
    for (int e : t.shape) w.u64(std::uint64_t(e));
    for (float v : t.data) w.f32(v);
  }
  w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
  binio::Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "PIMP")
    throw IoError(IoCode::bad_magic, path + ": bad magic, not a checkpoint");
  const auto version = r.u32();
  if (version != 1)
    throw IoError(IoCode::bad_version, path + ": unsupported version " + std::to_string(version));

  const auto meta_len = r.u32();
  if (meta_len > (1u << 20)) throw IoError(IoCode::bad_payload, path + ": oversized metadata");
  const std::string metadata = r.text(meta_len);
  const auto newline = metadata.find('\n');
  if (newline == std::string::npos || metadata.rfind("stage = ", 0) != 0)
    throw IoError(IoCode::bad_payload, path + ": metadata must start with a stage line");

  Checkpoint cp;
  cp.stage = metadata.substr(8, newline - 8);
  if (cp.stage != "pretrained" && cp.stage != "trained")
    throw IoError(IoCode::bad_payload, path + ": unknown stage '" + cp.stage + "'");
  try {
    cp.config = parse_config_text(metadata.substr(newline + 1));
  } catch (const ConfigError& e) {
    throw IoError(IoCode::bad_payload, path + ": bad embedded config: " + e.what());
  }

  const auto count = r.u32();
  std::map<std::string, NamedTensor> by_name;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.u32();
    if (name_len > 4096) throw IoError(IoCode::bad_payload, path + ": oversized tensor name");
    t.name = r.text(name_len);
    const int rank = int(r.u8());
    if (rank < 1 || rank > 8)
      throw IoError(IoCode::bad_payload, path + ": tensor '" + t.name + "' has rank " +
                                             std::to_string(rank));
    std::int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      const auto e = r.u64();
      if (e == 0 || e > (1u << 24))
        throw IoError(IoCode::bad_payload, path + ": tensor '" + t.name + "' has extent " +
                                               std::to_string(e));
      numel *= std::int64_t(e);
      if (numel > (std::int64_t(1) << 30))
        throw IoError(IoCode::bad_payload, path + ": tensor '" + t.name + "' is too large");
      t.shape.push_back(int(e));
    }
    t.data.resize(std::size_t(numel));
    for (auto& v : t.data) v = r.f32();
    if (!by_name.emplace(t.name, std::move(t)).second)
      throw IoError(IoCode::bad_payload, path + ": duplicate tensor '" + t.name + "'");
  }
  r.expect_eof();

  cp.model = make_model(cp.config.model, 0);
  cp.opt = make_optimizer_states(cp.model);

  std::size_t consumed = 0;
  const auto take = [&](const std::string& name, const std::vector<int>& want_shape,
                        std::vector<float>& dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw IoError(IoCode::bad_payload, path + ": missing tensor '" + name + "'");
    if (it->second.shape != want_shape)
      throw IoError(IoCode::bad_payload, path + ": tensor '" + name + "' has shape " +
                                             shape_string(it->second.shape) + ", expected " +
                                             shape_string(want_shape));
    dst = it->second.data;
    ++consumed;
  };
  const auto take_step = [&](const std::string& name, std::int64_t& dst) {
    std::vector<float> v;
    take(name, {1}, v);
    if (!(v[0] >= 0.0f) || v[0] != std::floor(v[0]))
      throw IoError(IoCode::bad_payload, path + ": tensor '" + name + "' is not a step count");
    dst = std::int64_t(v[0]);
  };

  for (std::size_t i = 0; i < cp.model.conv_kernels.size(); ++i) {
    take("conv." + std::to_string(i) + ".kernel", cp.model.conv_kernels[i]->shape,
         cp.model.conv_kernels[i]->data);
    take("conv." + std::to_string(i) + ".bias", cp.model.conv_biases[i]->shape,
         cp.model.conv_biases[i]->data);
  }
  if (cp.model.t_age) take("t_age", cp.model.t_age->shape, cp.model.t_age->data);
  take("w_c", cp.model.w_c->shape, cp.model.w_c->data);

  const auto take_group = [&](const char* name, AdamState& st,
                              const std::vector<TensorPtr>& params) {
    take_step(std::string("adam.") + name + ".step", st.step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      take(std::string("adam.") + name + ".m." + std::to_string(i), params[i]->shape, st.m[i]);
      take(std::string("adam.") + name + ".v." + std::to_string(i), params[i]->shape, st.v[i]);
    }
  };
  take_group("backbone", cp.opt.backbone, cp.model.backbone_params());
  if (cp.model.t_age) take_group("age", cp.opt.age, {cp.model.t_age});
  take_group("head", cp.opt.head, {cp.model.w_c});

  if (consumed != by_name.size()) {
    for (const auto& [name, t] : by_name) {
      if (name.rfind("conv.", 0) == 0 || name == "t_age" || name == "w_c" ||
          name.rfind("adam.", 0) == 0)
        continue;
      throw IoError(IoCode::bad_payload, path + ": unexpected tensor '" + name + "'");
    }
    throw IoError(IoCode::bad_payload, path + ": tensor set does not match the config");
  }
  return cp;
}

}  // namespace pimpnet
