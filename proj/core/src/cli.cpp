#include "pimpnet/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "pimpnet/checkpoint.hpp"
#include "pimpnet/config.hpp"
#include "pimpnet/error.hpp"
#include "pimpnet/evaluation.hpp"
#include "pimpnet/synthdata.hpp"
#include "pimpnet/training.hpp"

namespace pimpnet {
namespace {

struct CliFlags {
  std::string config;
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string samples;
  std::string aggregate;
  std::optional<std::uint64_t> seed;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoCode::io_failure, "cannot open " + path + " for writing");
  out << content;
  out.close();
  if (!out) throw IoError(IoCode::io_failure, "write to " + path + " failed");
}

// Sidecar recording how an artifact was produced: the command, its flags,
// and the effective config after overrides.
void write_run_record(const std::string& command, const CliFlags& f, const Config* config,
                      const std::string& out_path) {
  std::ostringstream rec;
  rec << "command = " << command << "\n";
  if (!f.config.empty()) rec << "flag.config = " << f.config << "\n";
  if (!f.data.empty()) rec << "flag.data = " << f.data << "\n";
  if (!f.checkpoint.empty()) rec << "flag.checkpoint = " << f.checkpoint << "\n";
  if (!f.samples.empty()) rec << "flag.samples = " << f.samples << "\n";
  if (!f.aggregate.empty()) rec << "flag.aggregate = " << f.aggregate << "\n";
  rec << "flag.out = " << f.out << "\n";
  if (config) {
    rec << "\n# effective config\n";
    rec << "seed = " << config->seed << "\n";
    rec << echo_config(*config);
  }
  write_text_file(out_path + ".run.txt", rec.str());
}

Config load_config(const CliFlags& f, const char* command) {
  if (f.config.empty()) throw ConfigError(std::string(command) + ": missing --config");
  Config config = parse_config_file(f.config);
  if (f.seed) config.seed = *f.seed;
  return config;
}

void check_same_structure(const ModelConfig& a, const ModelConfig& b) {
  bool same = a.ch == b.ch && a.S == b.S && a.R == b.R && a.C == b.C && a.M == b.M &&
              a.N == b.N && a.K == b.K && a.t_bar == b.t_bar && a.s == b.s &&
              a.age_sim_kind == b.age_sim_kind && a.age_grid_min == b.age_grid_min &&
              a.age_grid_max == b.age_grid_max && a.backbone.size() == b.backbone.size();
  for (std::size_t i = 0; same && i < a.backbone.size(); ++i) {
    const auto &x = a.backbone[i], &y = b.backbone[i];
    same = x.out_channels == y.out_channels && x.kernel == y.kernel && x.stride == y.stride &&
           x.padding == y.padding;
  }
  if (!same)
    throw ConfigError("config describes a different model structure than the checkpoint");
}

LoadedDataset load_data_for(const CliFlags& f, const Config& config, const char* command) {
  if (f.data.empty()) throw ConfigError(std::string(command) + ": missing --data");
  LoadedDataset ds = read_dataset(f.data);
  if (ds.spec.S != config.model.S || ds.spec.R != config.model.R || ds.spec.C != config.model.C)
    throw Error("dataset volumes are " + std::to_string(ds.spec.S) + "x" +
                std::to_string(ds.spec.R) + "x" + std::to_string(ds.spec.C) +
                ", the config expects " + std::to_string(config.model.S) + "x" +
                std::to_string(config.model.R) + "x" + std::to_string(config.model.C));
  return ds;
}

Checkpoint load_checkpoint_at_stage(const CliFlags& f, const Config& config,
                                    const char* want_stage, const char* command) {
  if (f.checkpoint.empty()) throw ConfigError(std::string(command) + ": missing --checkpoint");
  Checkpoint cp = load_checkpoint(f.checkpoint);
  if (cp.stage != want_stage) {
    if (std::string(want_stage) == "trained")
      throw Error("model not trained: checkpoint stage is '" + cp.stage + "'");
    throw Error("checkpoint stage is '" + cp.stage + "', expected '" + want_stage + "'");
  }
  check_same_structure(config.model, cp.config.model);
  return cp;
}

int cmd_generate(const CliFlags& f, std::ostream& out) {
  Config config = load_config(f, "generate");
  auto [samples, split] = generate_dataset(config.phantom, config.n_samples, config.seed);
  write_dataset(samples, split, f.out);
  write_run_record("generate", f, &config, f.out);
  out << "wrote " << samples.size() << " samples to " << f.out << " (train "
      << split.train_ids.size() << ", val " << split.val_ids.size() << ", test "
      << split.test_ids.size() << ")\n";
  return 0;
}

int cmd_pretrain(const CliFlags& f, std::ostream& out) {
  Config config = load_config(f, "pretrain");
  const auto ds = load_data_for(f, config, "pretrain");

  PimpnetModel model = make_model(config.model, config.seed);
  OptimizerStates opt = make_optimizer_states(model);
  std::ofstream log(f.out + ".log", std::ios::trunc);
  if (!log) throw IoError(IoCode::io_failure, "cannot open " + f.out + ".log for writing");
  pretrain(ds.samples, ds.split.train_ids, model, opt, config.schedule, config.weights,
           config.augment, config.seed, &log);
  save_checkpoint(model, opt, config, "pretrained", f.out);
  write_run_record("pretrain", f, &config, f.out);
  out << "pretrained " << config.schedule.pretrain_epochs << " epochs on "
      << ds.split.train_ids.size() << " samples, checkpoint " << f.out << "\n";
  return 0;
}

int cmd_train(const CliFlags& f, std::ostream& out) {
  Config config = load_config(f, "train");
  Checkpoint cp = load_checkpoint_at_stage(f, config, "pretrained", "train");
  const auto ds = load_data_for(f, config, "train");

  std::ofstream log(f.out + ".log", std::ios::trunc);
  if (!log) throw IoError(IoCode::io_failure, "cannot open " + f.out + ".log for writing");
  train_full(ds.samples, ds.split.train_ids, cp.model, cp.opt, config.schedule, config.weights,
             config.augment, config.seed, &log);
  save_checkpoint(cp.model, cp.opt, config, "trained", f.out);
  write_run_record("train", f, &config, f.out);
  out << "trained " << config.schedule.train_epochs << " epochs on " << ds.split.train_ids.size()
      << " samples, checkpoint " << f.out << "\n";
  return 0;
}

int cmd_evaluate(const CliFlags& f, std::ostream& out) {
  if (!f.aggregate.empty()) {
    std::vector<MetricsReport> runs;
    for (const auto& path : split_csv(f.aggregate)) {
      std::ifstream in(path);
      if (!in) throw IoError(IoCode::io_failure, "cannot open " + path);
      std::stringstream ss;
      ss << in.rdbuf();
      runs.push_back(metrics_from_text(ss.str()));
    }
    write_text_file(f.out, aggregate_metrics_text(runs));
    write_run_record("evaluate", f, nullptr, f.out);
    out << "aggregated " << runs.size() << " metrics files into " << f.out << "\n";
    return 0;
  }

  Config config = load_config(f, "evaluate");
  Checkpoint cp = load_checkpoint_at_stage(f, config, "trained", "evaluate");
  const auto ds = load_data_for(f, config, "evaluate");
  if (ds.split.test_ids.empty()) throw Error("dataset has no test split");

  const auto report =
      evaluate_model(cp.model, ds.samples, ds.split.test_ids, config.detect_threshold);
  write_text_file(f.out, metrics_to_text(report));
  write_run_record("evaluate", f, &config, f.out);
  char bal[32];
  std::snprintf(bal, sizeof bal, "%.4f", report.rates.balanced_accuracy);
  out << "balanced accuracy " << bal << " over " << report.sample_count
      << " test samples, metrics " << f.out << "\n";
  return 0;
}

int cmd_explain(const CliFlags& f, std::ostream& out) {
  Config config = load_config(f, "explain");
  Checkpoint cp = load_checkpoint_at_stage(f, config, "trained", "explain");
  const auto ds = load_data_for(f, config, "explain");

  std::vector<int> ids;
  for (const auto& tok : split_csv(f.samples)) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      ids.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--samples expects comma-separated indices, got '" + tok + "'");
    }
  }
  if (ids.empty()) throw ConfigError("--samples lists no indices");
  for (int id : ids)
    if (id < 0 || id >= int(ds.samples.size()))
      throw Error("sample index " + std::to_string(id) + " outside the dataset of " +
                  std::to_string(ds.samples.size()) + " samples");

  std::ostringstream text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) text << "==\n";
    text << explain_to_text(explain(cp.model, ds.samples[std::size_t(ids[i])], ids[i]));
  }
  write_text_file(f.out, text.str());
  write_run_record("explain", f, &config, f.out);
  out << "explained " << ids.size() << " samples into " << f.out << "\n";
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"part-prototype classifier on synthetic 3D brain phantoms"};
  app.name("pimpnet");
  app.require_subcommand(1);
  CliFlags f;

  const auto add_common = [&f](CLI::App* cmd, bool with_data, bool with_checkpoint) {
    cmd->add_option("--config", f.config, "key = value settings file")->required();
    if (with_data) cmd->add_option("--data", f.data, "dataset container")->required();
    if (with_checkpoint) cmd->add_option("--checkpoint", f.checkpoint, "input checkpoint")->required();
  };

  auto* gen = app.add_subcommand("generate", "render a phantom dataset and its split");
  add_common(gen, false, false);
  gen->add_option("--out", f.out, "dataset path; the split lands at <out>.split")->required();
  gen->add_option("--seed", f.seed, "overrides the config seed");

  auto* pre = app.add_subcommand("pretrain", "stage 1, self-supervised backbone training");
  add_common(pre, true, false);
  pre->add_option("--out", f.out, "checkpoint path; epoch log lands at <out>.log")->required();
  pre->add_option("--seed", f.seed, "overrides the config seed");

  auto* tra = app.add_subcommand("train", "stage 2, joint training with the scoring sheet");
  add_common(tra, true, true);
  tra->add_option("--out", f.out, "checkpoint path; epoch log lands at <out>.log")->required();
  tra->add_option("--seed", f.seed, "overrides the config seed");

  auto* eva = app.add_subcommand("evaluate", "test-split metrics, or aggregation across runs");
  eva->add_option("--config", f.config, "key = value settings file");
  eva->add_option("--data", f.data, "dataset container");
  eva->add_option("--checkpoint", f.checkpoint, "trained checkpoint");
  eva->add_option("--aggregate", f.aggregate, "comma-separated metrics files to average");
  eva->add_option("--out", f.out, "metrics destination")->required();

  auto* exp = app.add_subcommand("explain", "per-sample prototype breakdown");
  add_common(exp, true, true);
  exp->add_option("--samples", f.samples, "comma-separated dataset indices")->required();
  exp->add_option("--out", f.out, "report destination")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(f, out);
    if (pre->parsed()) return cmd_pretrain(f, out);
    if (tra->parsed()) return cmd_train(f, out);
    if (eva->parsed()) return cmd_evaluate(f, out);
    return cmd_explain(f, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_command(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace pimpnet
