// SPDX-License-Identifier: Apache-2.0
// glag: command-line driver over the C API.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "glag/glag.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitInternal = 1;

struct Failure {
  int code;
  std::string message;
};

int exit_code_for(glag_status s) {
  switch (s) {
    case GLAG_OK: return kExitOk;
    case GLAG_ERR_NUMERIC: return kExitNumeric;
    case GLAG_ERR_INTERNAL: return kExitInternal;
    default: return kExitUsage;
  }
}

void check(glag_status s, const std::string& what) {
  if (s == GLAG_OK) return;
  std::string msg = what + ": " + glag_last_error();
  const std::string key = glag_last_error_key();
  if (s == GLAG_ERR_CONFIG && !key.empty()) msg += " [key: " + key + "]";
  throw Failure{exit_code_for(s), msg};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<glag_config, Deleter<glag_config, glag_config_free>>;
using DatasetPtr = std::unique_ptr<glag_dataset, Deleter<glag_dataset, glag_dataset_free>>;
using ModelPtr = std::unique_ptr<glag_model, Deleter<glag_model, glag_model_free>>;
using ReportPtr = std::unique_ptr<glag_report, Deleter<glag_report, glag_report_free>>;

std::string take(char* s) {
  std::string out = s ? s : "";
  glag_string_free(s);
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kExitUsage, "cannot read " + path};
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Everything a command produces is staged here and only written once the
// command has succeeded, so a failure never leaves partial output behind.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

  void text(const std::string& name, std::string content) {
    files_.push_back({name, std::move(content), nullptr});
  }
  void model(const std::string& name, const glag_model* m) { files_.push_back({name, {}, m}); }

  void commit() const {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Failure{kExitUsage, "cannot create output directory " + dir_.string() + ": " + ec.message()};
    std::vector<fs::path> staged;
    try {
      for (const auto& f : files_) {
        fs::path tmp = dir_ / (f.name + ".tmp");
        staged.push_back(tmp);
        if (f.model) {
          check(glag_model_save(f.model, tmp.string().c_str()), "writing " + f.name);
        } else {
          std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
          out << f.content;
          out.close();
          if (!out) throw Failure{kExitUsage, "cannot write " + tmp.string()};
        }
      }
      for (std::size_t i = 0; i < files_.size(); ++i) fs::rename(staged[i], dir_ / files_[i].name);
    } catch (...) {
      for (const auto& p : staged) fs::remove(p, ec);
      throw;
    }
  }

 private:
  struct File {
    std::string name;
    std::string content;
    const glag_model* model;
  };
  fs::path dir_;
  std::vector<File> files_;
};

// Flags shared by every subcommand that builds a RunConfig.
struct ConfigFlags {
  std::string config_path;
  std::string preset = "default";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss, alpha_form, afg, kd;
  std::optional<double> tau, alpha_s, alpha_c, beta_init, gamma, lambda, im;
  std::optional<int> k_support, workers;

  void attach(CLI::App* app, bool training) {
    app->add_option("--config", config_path, "flat JSON config file")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "random seed");
    app->add_option("--im", im, "imbalance ratio of the synthetic benchmark");
    if (!training) return;
    app->add_option("--preset", preset, "starting point before config and flags")
        ->check(CLI::IsMember({"default", "baseline"}));
    app->add_option("--loss", loss, "stage-one loss")->check(CLI::IsMember({"ce", "logit-adjust", "graloss"}));
    app->add_option("--tau", tau, "logit adjustment strength");
    app->add_option("--alpha-form", alpha_form, "alpha schedule form")
        ->check(CLI::IsMember({"convex", "linear", "concave"}));
    app->add_option("--alpha-s", alpha_s, "alpha schedule scale");
    app->add_option("--alpha-c", alpha_c, "alpha schedule base");
    app->add_option("--afg", afg, "feature generation in stage two")->check(CLI::IsMember({"on", "off"}));
    app->add_option("--kd", kd, "distillation in stage two")->check(CLI::IsMember({"on", "off"}));
    app->add_option("--beta-init", beta_init, "initial confidence score");
    app->add_option("--gamma", gamma, "covariance ridge");
    app->add_option("--k-support", k_support, "support set size");
    app->add_option("--lambda", lambda, "Tukey exponent");
    app->add_option("--workers", workers, "ablation worker threads");
  }

  json overrides() const {
    json j = json::object();
    if (seed) j["seed"] = *seed;
    if (im) j["imbalance"] = *im;
    if (loss) j["loss"] = *loss;
    if (tau) j["tau"] = *tau;
    if (alpha_form) j["alpha_form"] = *alpha_form;
    if (alpha_s) j["alpha_s"] = *alpha_s;
    if (alpha_c) j["alpha_c"] = *alpha_c;
    if (afg) j["afg"] = *afg == "on";
    if (kd) j["kd"] = *kd == "on";
    if (beta_init) j["beta_init"] = *beta_init;
    if (gamma) j["gamma"] = *gamma;
    if (k_support) j["k_support"] = *k_support;
    if (lambda) j["lambda"] = *lambda;
    if (workers) j["workers"] = *workers;
    return j;
  }

  // preset, then config file, then flags
  ConfigPtr build() const {
    glag_config* raw = nullptr;
    check(glag_config_default(&raw), "config");
    ConfigPtr cfg(raw);
    check(glag_config_apply_preset(cfg.get(), preset.c_str()), "preset");
    if (!config_path.empty()) check(glag_config_merge_json(cfg.get(), read_text(config_path).c_str()), config_path);
    check(glag_config_merge_json(cfg.get(), overrides().dump().c_str()), "flags");
    return cfg;
  }
};

std::string config_echo(const glag_config* cfg) {
  char* s = nullptr;
  check(glag_config_to_json(cfg, &s), "config");
  return take(s) + "\n";
}

DatasetPtr load_dataset(const std::string& path) {
  glag_dataset* raw = nullptr;
  check(glag_dataset_load(path.c_str(), &raw), path);
  return DatasetPtr(raw);
}

ModelPtr load_model(const std::string& path) {
  glag_model* raw = nullptr;
  check(glag_model_load(path.c_str(), &raw), path);
  return ModelPtr(raw);
}

// --data DIR supplies any split not given explicitly.
struct SplitFlags {
  std::string data, train, val, test, balanced;

  std::string resolve(const std::string& explicit_path, const char* name) const {
    if (!explicit_path.empty()) return explicit_path;
    if (data.empty()) throw Failure{kExitUsage, std::string("no ") + name + " split: pass --data or --" + name};
    return (fs::path(data) / (std::string(name) + ".emb")).string();
  }
};

void add_report(Outputs& out, const glag_report* r, bool timing) {
  char* s = nullptr;
  check(glag_report_json(r, &s), "report");
  out.text("metrics.json", take(s) + "\n");
  check(glag_report_csv(r, &s), "report");
  out.text("metrics.csv", take(s));
  if (timing) {
    check(glag_report_timing_json(r, &s), "report");
    out.text("timing.json", take(s) + "\n");
  }
}

int cmd_synth(const ConfigFlags& flags, const std::string& out_dir) {
  auto cfg = flags.build();
  glag_dataset *tr = nullptr, *va = nullptr, *te = nullptr, *ba = nullptr;
  char* truth = nullptr;
  check(glag_synth(cfg.get(), &tr, &va, &te, &ba, &truth), "synth");
  DatasetPtr train(tr), val(va), test(te), balanced(ba);
  const std::string truth_text = take(truth);

  Outputs out(out_dir);
  // Datasets are serialized by the library; stage through temp files in the
  // target directory like everything else.
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Failure{kExitUsage, "cannot create output directory " + out_dir + ": " + ec.message()};
  const std::pair<const char*, const glag_dataset*> splits[] = {
      {"train.emb", train.get()}, {"val.emb", val.get()}, {"test.emb", test.get()}, {"balanced.emb", balanced.get()}};
  for (const auto& [name, ds] : splits) {
    const fs::path tmp = fs::path(out_dir) / (std::string(name) + ".part");
    check(glag_dataset_save(ds, tmp.string().c_str()), std::string("writing ") + name);
    out.text(name, read_text(tmp.string()));
    fs::remove(tmp, ec);
  }
  out.text("truth.json", truth_text + "\n");
  out.text("config.json", config_echo(cfg.get()));
  out.commit();
  std::cout << "wrote " << out_dir << "/{train,val,test,balanced}.emb and truth.json\n";
  return kExitOk;
}

int cmd_train(const ConfigFlags& flags, const SplitFlags& splits, const std::string& stage,
              const std::string& checkpoint, const std::string& out_dir, bool timing) {
  auto cfg = flags.build();
  auto train = load_dataset(splits.resolve(splits.train, "train"));
  auto val = load_dataset(splits.resolve(splits.val, "val"));
  auto test = load_dataset(splits.resolve(splits.test, "test"));

  Outputs out(out_dir);
  ModelPtr m1, m2;
  glag_report* rep = nullptr;
  if (stage == "both") {
    glag_model *a = nullptr, *b = nullptr;
    check(glag_train(cfg.get(), train.get(), val.get(), test.get(), &a, &b, &rep), "train");
    m1.reset(a);
    m2.reset(b);
  } else if (stage == "1") {
    glag_model* a = nullptr;
    check(glag_train_stage1(cfg.get(), train.get(), val.get(), test.get(), &a, &rep), "stage 1");
    m1.reset(a);
  } else {
    if (checkpoint.empty()) throw Failure{kExitUsage, "--stage 2 needs --checkpoint pointing at a stage-one model"};
    auto base = load_model(checkpoint);
    glag_model* b = nullptr;
    check(glag_train_stage2(cfg.get(), base.get(), train.get(), val.get(), test.get(), &b, &rep), "stage 2");
    m2.reset(b);
  }
  ReportPtr report(rep);

  if (m1) out.model("m1.ckpt", m1.get());
  if (m2) out.model("m2.ckpt", m2.get());
  add_report(out, report.get(), timing);
  out.text("config.json", config_echo(cfg.get()));
  out.commit();

  double avg = 0.0;
  check(glag_report_get(report.get(), "/final/overall", &avg), "report");
  std::printf("final test accuracy %.4f (written to %s)\n", avg, out_dir.c_str());
  return kExitOk;
}

int cmd_ablate(const ConfigFlags& flags, const SplitFlags& splits, const std::string& axis,
               const std::string& out_dir, bool timing) {
  auto cfg = flags.build();
  auto train = load_dataset(splits.resolve(splits.train, "train"));
  auto val = load_dataset(splits.resolve(splits.val, "val"));
  auto test = load_dataset(splits.resolve(splits.test, "test"));
  auto balanced = load_dataset(splits.resolve(splits.balanced, "balanced"));

  glag_report* raw = nullptr;
  check(glag_ablate(cfg.get(), axis.c_str(), train.get(), val.get(), test.get(), balanced.get(), &raw), "ablate");
  ReportPtr table(raw);

  Outputs out(out_dir);
  char* s = nullptr;
  check(glag_report_json(table.get(), &s), "report");
  out.text("ablation.json", take(s) + "\n");
  check(glag_report_csv(table.get(), &s), "report");
  const std::string csv = take(s);
  out.text("ablation.csv", csv);
  if (timing) {
    check(glag_report_timing_json(table.get(), &s), "report");
    out.text("timing.json", take(s) + "\n");
  }
  out.text("config.json", config_echo(cfg.get()));
  out.commit();
  std::cout << csv;
  return kExitOk;
}

int cmd_eval(const ConfigFlags& flags, const SplitFlags& splits, const std::string& checkpoint,
             const std::string& out_dir, bool probe) {
  auto cfg = flags.build();
  if (checkpoint.empty()) throw Failure{kExitUsage, "--checkpoint is required"};
  auto model = load_model(checkpoint);
  auto test = load_dataset(splits.resolve(splits.test, "test"));

  glag_report* raw = nullptr;
  if (probe) {
    auto balanced = load_dataset(splits.resolve(splits.balanced, "balanced"));
    check(glag_probe(cfg.get(), model.get(), balanced.get(), test.get(), &raw), "probe");
  } else {
    check(glag_evaluate(cfg.get(), model.get(), test.get(), &raw), "eval");
  }
  ReportPtr report(raw);

  Outputs out(out_dir);
  add_report(out, report.get(), false);
  out.text("config.json", config_echo(cfg.get()));
  out.commit();

  double avg = 0.0;
  check(glag_report_get(report.get(), "/final/overall", &avg), "report");
  std::printf("%s accuracy %.4f\n", probe ? "probe" : "test", avg);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glag: long-tailed classification on fixed-dimensional embeddings"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress warnings");

  ConfigFlags synth_flags, train_flags, ablate_flags, probe_flags, eval_flags;
  SplitFlags train_splits, ablate_splits, probe_splits, eval_splits;
  std::string synth_out = "data", train_out = "run", ablate_out = "ablation", probe_out = "probe",
              eval_out = "eval";
  std::string stage = "both", train_ckpt, probe_ckpt, eval_ckpt, axis;
  bool train_timing = false, ablate_timing = false;

  auto* synth = app.add_subcommand("synth", "write a synthetic long-tailed benchmark");
  synth_flags.attach(synth, false);
  synth->add_option("--out", synth_out, "output directory");

  auto add_splits = [](CLI::App* sub, SplitFlags& s, bool all) {
    sub->add_option("--data", s.data, "directory holding <split>.emb files");
    if (all) {
      sub->add_option("--train", s.train, "training split");
      sub->add_option("--val", s.val, "validation split");
    }
    sub->add_option("--test", s.test, "test split");
  };

  auto* train = app.add_subcommand("train", "two-stage training");
  train_flags.attach(train, true);
  add_splits(train, train_splits, true);
  train->add_option("--stage", stage, "stages to run")->check(CLI::IsMember({"1", "2", "both"}));
  train->add_option("--checkpoint", train_ckpt, "stage-one model for --stage 2");
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--timing", train_timing, "also write timing.json");

  auto* ablate = app.add_subcommand("ablate", "run one ablation table");
  ablate_flags.attach(ablate, true);
  add_splits(ablate, ablate_splits, true);
  ablate->add_option("--balanced", ablate_splits.balanced, "balanced split for the probe");
  ablate->add_option("--axis", axis, "ablation axis")
      ->required()
      ->check(CLI::IsMember({"alpha_form", "loss_choice", "components"}));
  ablate->add_option("--out", ablate_out, "output directory");
  ablate->add_flag("--timing", ablate_timing, "also write timing.json");

  auto* probe = app.add_subcommand("probe", "retrain a fresh classifier on frozen features");
  probe_flags.attach(probe, true);
  add_splits(probe, probe_splits, false);
  probe->add_option("--balanced,--train", probe_splits.balanced, "balanced training split");
  probe->add_option("--checkpoint", probe_ckpt, "model to probe")->required();
  probe->add_option("--out", probe_out, "output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_flags.attach(eval, true);
  add_splits(eval, eval_splits, false);
  eval->add_option("--checkpoint", eval_ckpt, "model to evaluate")->required();
  eval->add_option("--out", eval_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  glag_set_warnings(quiet ? 0 : 1);

  try {
    if (*synth) return cmd_synth(synth_flags, synth_out);
    if (*train) return cmd_train(train_flags, train_splits, stage, train_ckpt, train_out, train_timing);
    if (*ablate) return cmd_ablate(ablate_flags, ablate_splits, axis, ablate_out, ablate_timing);
    if (*probe) return cmd_eval(probe_flags, probe_splits, probe_ckpt, probe_out, true);
    if (*eval) return cmd_eval(eval_flags, eval_splits, eval_ckpt, eval_out, false);
  } catch (const Failure& f) {
    std::cerr << "glag: " << f.message << '\n';
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "glag: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}
