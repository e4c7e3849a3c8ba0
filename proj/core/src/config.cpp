#include "pimpnet/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "pimpnet/error.hpp"

namespace pimpnet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct LineContext {
  int line_no = 0;
  const std::string* key = nullptr;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("line " + std::to_string(line_no) + ": key '" + *key + "': " + msg);
  }

  std::vector<std::string> parts(const std::string& value) const {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(trim(tok));
    if (out.empty()) fail("empty value");
    return out;
  }

  double num(const std::string& value) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) fail("trailing characters in '" + value + "'");
      return v;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      fail("expected a number, got '" + value + "'");
    }
  }

  float as_float(const std::string& value) const { return float(num(value)); }

  int as_int(const std::string& value) const {
    const double v = num(value);
    if (v != double(int(v))) fail("expected an integer, got '" + value + "'");
    return int(v);
  }

  std::uint64_t as_u64(const std::string& value) const {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(value, &used);
      if (used != value.size()) fail("trailing characters in '" + value + "'");
      return v;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      fail("expected an unsigned integer, got '" + value + "'");
    }
  }
};

ConvBlockSpec parse_block(const LineContext& ctx, const std::string& tok) {
  ConvBlockSpec block;
  std::vector<std::string> f;
  std::stringstream ss(tok);
  std::string piece;
  while (std::getline(ss, piece, ':')) f.push_back(trim(piece));
  if (f.size() != 1 && f.size() != 4)
    ctx.fail("backbone block must be 'channels' or 'channels:kernel:stride:padding'");
  block.out_channels = ctx.as_int(f[0]);
  if (f.size() == 4) {
    block.kernel = ctx.as_int(f[1]);
    block.stride = ctx.as_int(f[2]);
    block.padding = ctx.as_int(f[3]);
  }
  return block;
}

}  // namespace

void Config::validate_and_finalize() {
  model.validate_and_finalize();
  phantom.validate();
  schedule.validate();
  weights.validate();
  augment.validate();
  if (model.S != phantom.S || model.R != phantom.R || model.C != phantom.C)
    throw ConfigError("volume extents disagree between the model and the phantom");
  if (n_samples < 1) throw ConfigError("n_samples must be positive");
  if (!(detect_threshold >= 0.0f && detect_threshold < 1.0f))
    throw ConfigError("detect_threshold must lie in [0, 1)");
}

Config parse_config_text(const std::string& text) {
  Config config;
  std::istringstream in(text);
  std::string raw;
  LineContext ctx;
  std::string key;
  ctx.key = &key;

  while (std::getline(in, raw)) {
    ++ctx.line_no;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(ctx.line_no) + ": expected 'key = value'");
    key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(ctx.line_no) + ": empty key");
    if (value.empty()) ctx.fail("empty value");

    if (key == "volume") {
      const auto p = ctx.parts(value);
      if (p.size() != 3) ctx.fail("expected three extents");
      config.model.S = config.phantom.S = ctx.as_int(p[0]);
      config.model.R = config.phantom.R = ctx.as_int(p[1]);
      config.model.C = config.phantom.C = ctx.as_int(p[2]);
    } else if (key == "ch") {
      config.model.ch = ctx.as_int(value);
    } else if (key == "m") {
      config.model.M = ctx.as_int(value);
    } else if (key == "n") {
      config.model.N = ctx.as_int(value);
    } else if (key == "k") {
      config.model.K = ctx.as_int(value);
    } else if (key == "t_bar") {
      config.model.t_bar = ctx.as_float(value);
    } else if (key == "s") {
      config.model.s = ctx.as_int(value);
    } else if (key == "age_sim") {
      if (value == "butterworth") config.model.age_sim_kind = AgeSimKind::butterworth;
      else if (value == "exponential") config.model.age_sim_kind = AgeSimKind::exponential;
      else ctx.fail("expected 'butterworth' or 'exponential'");
    } else if (key == "age_grid") {
      const auto p = ctx.parts(value);
      if (p.size() != 2 && p.size() != 3) ctx.fail("expected min,max or min,max,count");
      config.model.age_grid_min = ctx.as_float(p[0]);
      config.model.age_grid_max = ctx.as_float(p[1]);
      if (p.size() == 3) config.model.N = ctx.as_int(p[2]);
    } else if (key == "backbone") {
      config.model.backbone.clear();
      for (const auto& tok : ctx.parts(value))
        config.model.backbone.push_back(parse_block(ctx, tok));
    } else if (key == "task") {
      if (value == "image_separable") config.phantom.task_kind = TaskKind::image_separable;
      else if (value == "age_confounded") config.phantom.task_kind = TaskKind::age_confounded;
      else if (value == "age_only") config.phantom.task_kind = TaskKind::age_only;
      else ctx.fail("expected image_separable, age_confounded, or age_only");
    } else if (key == "regions") {
      config.phantom.region_count = ctx.as_int(value);
    } else if (key == "age_range") {
      const auto p = ctx.parts(value);
      if (p.size() != 2) ctx.fail("expected min,max");
      config.phantom.age_min = ctx.as_float(p[0]);
      config.phantom.age_max = ctx.as_float(p[1]);
    } else if (key == "normal_atrophy_rate") {
      config.phantom.normal_atrophy_rate = ctx.as_float(value);
    } else if (key == "ad_extra_atrophy") {
      config.phantom.ad_extra_atrophy = ctx.as_float(value);
    } else if (key == "noise_sigma") {
      config.phantom.noise_sigma = ctx.as_float(value);
    } else if (key == "n_samples") {
      config.n_samples = ctx.as_int(value);
    } else if (key == "pretrain_epochs") {
      config.schedule.pretrain_epochs = ctx.as_int(value);
    } else if (key == "train_epochs") {
      config.schedule.train_epochs = ctx.as_int(value);
    } else if (key == "batch_size") {
      config.schedule.batch_size = ctx.as_int(value);
    } else if (key == "lr_backbone") {
      config.schedule.lr_backbone = ctx.as_float(value);
    } else if (key == "lr_age") {
      config.schedule.lr_age = ctx.as_float(value);
    } else if (key == "lr_head") {
      config.schedule.lr_head = ctx.as_float(value);
    } else if (key == "lambda_align") {
      config.weights.lambda_align = ctx.as_float(value);
    } else if (key == "lambda_tanh") {
      config.weights.lambda_tanh = ctx.as_float(value);
    } else if (key == "lambda_class") {
      config.weights.lambda_class = ctx.as_float(value);
    } else if (key == "eps_align") {
      config.schedule.eps_align = ctx.as_float(value);
    } else if (key == "eps_tanh") {
      config.schedule.eps_tanh = ctx.as_float(value);
    } else if (key == "sparsity_clamp_threshold") {
      config.schedule.sparsity_clamp_threshold = ctx.as_float(value);
    } else if (key == "flip_prob") {
      const auto p = ctx.parts(value);
      if (p.size() == 1) {
        const float f = ctx.as_float(p[0]);
        config.augment.flip_prob = {f, f, f};
      } else if (p.size() == 3) {
        for (int a = 0; a < 3; ++a)
          config.augment.flip_prob[std::size_t(a)] = ctx.as_float(p[std::size_t(a)]);
      } else {
        ctx.fail("expected one probability or three");
      }
    } else if (key == "max_translate") {
      config.augment.max_translate_voxels = ctx.as_int(value);
    } else if (key == "intensity_noise_sigma") {
      config.augment.intensity_noise_sigma = ctx.as_float(value);
    } else if (key == "detect_threshold") {
      config.detect_threshold = ctx.as_float(value);
    } else if (key == "seed") {
      config.seed = ctx.as_u64(value);
    } else {
      throw ConfigError("line " + std::to_string(ctx.line_no) + ": unknown key '" + key + "'");
    }
  }

  config.validate_and_finalize();
  return config;
}

Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoCode::io_failure, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string echo_config(const Config& config) {
  std::ostringstream out;
  const auto& m = config.model;
  const auto& p = config.phantom;
  const auto& t = config.schedule;
  const auto& w = config.weights;
  const auto& a = config.augment;

  out << "# model\n";
  out << "volume = " << m.S << "," << m.R << "," << m.C << "\n";
  out << "ch = " << m.ch << "\n";
  out << "m = " << m.M << "\n";
  out << "n = " << m.N << "\n";
  out << "k = " << m.K << "\n";
  out << "t_bar = " << g9(double(m.t_bar)) << "\n";
  out << "s = " << m.s << "\n";
  out << "age_sim = " << (m.age_sim_kind == AgeSimKind::butterworth ? "butterworth" : "exponential")
      << "\n";
  out << "age_grid = " << g9(double(m.age_grid_min)) << "," << g9(double(m.age_grid_max)) << "\n";
  out << "backbone = ";
  for (std::size_t i = 0; i < m.backbone.size(); ++i) {
    const auto& b = m.backbone[i];
    if (i) out << ",";
    out << b.out_channels;
    if (b.kernel != 3 || b.stride != 2 || b.padding != 1)
      out << ":" << b.kernel << ":" << b.stride << ":" << b.padding;
  }
  out << "\n";

  out << "# task\n";
  const char* task = p.task_kind == TaskKind::image_separable ? "image_separable"
                     : p.task_kind == TaskKind::age_confounded ? "age_confounded"
                                                               : "age_only";
  out << "task = " << task << "\n";
  out << "regions = " << p.region_count << "\n";
  out << "age_range = " << g9(double(p.age_min)) << "," << g9(double(p.age_max)) << "\n";
  out << "normal_atrophy_rate = " << g9(double(p.normal_atrophy_rate)) << "\n";
  out << "ad_extra_atrophy = " << g9(double(p.ad_extra_atrophy)) << "\n";
  out << "noise_sigma = " << g9(double(p.noise_sigma)) << "\n";
  out << "n_samples = " << config.n_samples << "\n";

  out << "# training\n";
  out << "pretrain_epochs = " << t.pretrain_epochs << "\n";
  out << "train_epochs = " << t.train_epochs << "\n";
  out << "batch_size = " << t.batch_size << "\n";
  out << "lr_backbone = " << g9(double(t.lr_backbone)) << "\n";
  out << "lr_age = " << g9(double(t.lr_age)) << "\n";
  out << "lr_head = " << g9(double(t.lr_head)) << "\n";
  out << "lambda_align = " << g9(double(w.lambda_align)) << "\n";
  out << "lambda_tanh = " << g9(double(w.lambda_tanh)) << "\n";
  out << "lambda_class = " << g9(double(w.lambda_class)) << "\n";
  out << "eps_align = " << g9(double(t.eps_align)) << "\n";
  out << "eps_tanh = " << g9(double(t.eps_tanh)) << "\n";
  out << "sparsity_clamp_threshold = " << g9(double(t.sparsity_clamp_threshold)) << "\n";
  out << "flip_prob = " << g9(double(a.flip_prob[0])) << "," << g9(double(a.flip_prob[1])) << ","
      << g9(double(a.flip_prob[2])) << "\n";
  out << "max_translate = " << a.max_translate_voxels << "\n";
  out << "intensity_noise_sigma = " << g9(double(a.intensity_noise_sigma)) << "\n";

  out << "# evaluation\n";
  out << "detect_threshold = " << g9(double(config.detect_threshold)) << "\n";
  out << "seed = " << config.seed << "\n";
  return out.str();
}

}  // namespace pimpnet
