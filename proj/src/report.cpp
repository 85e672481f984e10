// SPDX-License-Identifier: Apache-2.0
#include "glag/report.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "glag/error.hpp"

namespace glag {

using nlohmann::json;

namespace {

template <class T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key, key + ": wrong value type");
  }
}

bool get_switch(const json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "on" || s == "true") return true;
    if (s == "off" || s == "false") return false;
  }
  throw ConfigError(key, key + ": expected a boolean or on/off");
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

template <class T, class M>
Setter field(M RunConfig::*member) {
  return [member](RunConfig& c, const json& v, const std::string& key) { c.*member = get_as<T>(v, key); };
}

Setter flag(bool RunConfig::*member) {
  return [member](RunConfig& c, const json& v, const std::string& key) { c.*member = get_switch(v, key); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", field<std::uint64_t>(&RunConfig::seed)},
      {"classes", field<int>(&RunConfig::classes)},
      {"largest", field<int>(&RunConfig::largest)},
      {"imbalance", field<double>(&RunConfig::imbalance)},
      {"dim", field<int>(&RunConfig::dim)},
      {"separation", field<double>(&RunConfig::separation)},
      {"val_per_class", field<int>(&RunConfig::val_per_class)},
      {"test_per_class", field<int>(&RunConfig::test_per_class)},
      {"balanced_per_class", field<int>(&RunConfig::balanced_per_class)},
      {"hidden", field<std::vector<std::size_t>>(&RunConfig::hidden)},
      {"stage1_epochs", field<int>(&RunConfig::stage1_epochs)},
      {"stage2_epochs", field<int>(&RunConfig::stage2_epochs)},
      {"batch_size", field<int>(&RunConfig::batch_size)},
      {"lr", field<double>(&RunConfig::lr)},
      {"lr_min", field<double>(&RunConfig::lr_min)},
      {"stage2_lr_ratio", field<double>(&RunConfig::stage2_lr_ratio)},
      {"momentum", field<double>(&RunConfig::momentum)},
      {"weight_decay", field<double>(&RunConfig::weight_decay)},
      {"loss",
       [](RunConfig& c, const json& v, const std::string& key) {
         try {
           c.loss = parse_loss_kind(get_as<std::string>(v, key));
         } catch (const ContractViolation& e) {
           throw ConfigError(key, key + ": " + e.what());
         }
       }},
      {"tau", field<double>(&RunConfig::tau)},
      {"alpha_form",
       [](RunConfig& c, const json& v, const std::string& key) {
         try {
           c.alpha_form = parse_alpha_form(get_as<std::string>(v, key));
         } catch (const ContractViolation& e) {
           throw ConfigError(key, key + ": " + e.what());
         }
       }},
      {"alpha_s", field<double>(&RunConfig::alpha_s)},
      {"alpha_c", field<double>(&RunConfig::alpha_c)},
      {"afg", flag(&RunConfig::afg)},
      {"adaptive_beta", flag(&RunConfig::adaptive_beta)},
      {"kd", flag(&RunConfig::kd)},
      {"kd_temperature", field<double>(&RunConfig::kd_temperature)},
      {"k_support", field<int>(&RunConfig::k_support)},
      {"lambda", field<double>(&RunConfig::lambda)},
      {"gamma", field<double>(&RunConfig::gamma)},
      {"beta_init", field<double>(&RunConfig::beta_init)},
      {"beta_step", field<double>(&RunConfig::beta_step)},
      {"gen_target", field<int>(&RunConfig::gen_target)},
      {"gen_cap", field<int>(&RunConfig::gen_cap)},
      {"stats_transform", flag(&RunConfig::stats_transform)},
      {"warm_start", flag(&RunConfig::warm_start)},
      {"learnable_scaling", flag(&RunConfig::learnable_scaling)},
      {"train_weights", flag(&RunConfig::train_weights)},
      {"balanced_sampling", flag(&RunConfig::balanced_sampling)},
      {"stage2_alpha_clock", field<std::string>(&RunConfig::stage2_alpha_clock)},
      {"many_min", field<int>(&RunConfig::many_min)},
      {"few_max", field<int>(&RunConfig::few_max)},
      {"probe_epochs", field<int>(&RunConfig::probe_epochs)},
      {"probe_lr", field<double>(&RunConfig::probe_lr)},
      {"workers", field<int>(&RunConfig::workers)},
      {"dump_generated", field<std::string>(&RunConfig::dump_generated)},
  };
  return table;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

json config_to_json(const RunConfig& c) {
  return json{
      {"seed", c.seed},
      {"classes", c.classes},
      {"largest", c.largest},
      {"imbalance", c.imbalance},
      {"dim", c.dim},
      {"separation", c.separation},
      {"val_per_class", c.val_per_class},
      {"test_per_class", c.test_per_class},
      {"balanced_per_class", c.balanced_per_class},
      {"hidden", c.hidden},
      {"stage1_epochs", c.stage1_epochs},
      {"stage2_epochs", c.stage2_epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"lr_min", c.lr_min},
      {"stage2_lr_ratio", c.stage2_lr_ratio},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"loss", loss_kind_name(c.loss)},
      {"tau", c.tau},
      {"alpha_form", alpha_form_name(c.alpha_form)},
      {"alpha_s", c.alpha_s},
      {"alpha_c", c.alpha_c},
      {"afg", c.afg},
      {"adaptive_beta", c.adaptive_beta},
      {"kd", c.kd},
      {"kd_temperature", c.kd_temperature},
      {"k_support", c.k_support},
      {"lambda", c.lambda},
      {"gamma", c.gamma},
      {"beta_init", c.beta_init},
      {"beta_step", c.beta_step},
      {"gen_target", c.gen_target},
      {"gen_cap", c.gen_cap},
      {"stats_transform", c.stats_transform},
      {"warm_start", c.warm_start},
      {"learnable_scaling", c.learnable_scaling},
      {"train_weights", c.train_weights},
      {"balanced_sampling", c.balanced_sampling},
      {"stage2_alpha_clock", c.stage2_alpha_clock},
      {"many_min", c.many_min},
      {"few_max", c.few_max},
      {"probe_epochs", c.probe_epochs},
      {"probe_lr", c.probe_lr},
      {"workers", c.workers},
      {"dump_generated", c.dump_generated},
  };
}

RunConfig config_from_json(const json& doc, RunConfig base) {
  if (!doc.is_object()) throw ConfigError("", "config must be a JSON object");
  const auto& table = setters();
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    auto s = table.find(it.key());
    if (s == table.end()) throw ConfigError(it.key(), "unknown config key: " + it.key());
    s->second(base, it.value(), it.key());
  }
  base.validate();
  return base;
}

json metrics_to_json(const EvalMetrics& m) {
  json per_class = json::array();
  for (double v : m.per_class) per_class.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return json{
      {"overall", m.overall},
      {"many", optional_number(m.many)},
      {"medium", optional_number(m.medium)},
      {"few", optional_number(m.few)},
      {"per_class", per_class},
      {"per_class_count", m.per_class_count},
  };
}

json report_to_json(const MetricsReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    json row{{"epoch", e.epoch}, {"loss", e.loss}, {"alpha", e.alpha}, {"lr", e.lr}};
    if (e.val_accuracy) row["val_accuracy"] = *e.val_accuracy;
    if (r.label == "stage2") row["generated"] = e.generated;
    if (!e.beta.empty()) row["beta"] = e.beta;
    epochs.push_back(std::move(row));
  }
  json out{{"label", r.label}, {"epochs", epochs}, {"test", metrics_to_json(r.test)}};
  if (r.val) out["val"] = metrics_to_json(*r.val);
  return out;
}

json run_to_json(const RunConfig& config, const std::vector<MetricsReport>& stages) {
  GLAG_EXPECT(!stages.empty(), "a run report needs at least one stage");
  json docs = json::array();
  for (const auto& r : stages) docs.push_back(report_to_json(r));
  return json{{"schema", "glag-metrics/1"},
              {"config", config_to_json(config)},
              {"stages", docs},
              {"final", metrics_to_json(stages.back().test)}};
}

std::string run_to_csv(const std::string& run, const std::vector<MetricsReport>& stages) {
  std::ostringstream os;
  os << "run,stage,group,accuracy\n";
  auto emit = [&](const MetricsReport& r) {
    os << run << ',' << r.label << ",overall," << fmt(r.test.overall) << '\n';
    for (Group g : {Group::Many, Group::Medium, Group::Few}) {
      const auto v = r.test.group(g);
      os << run << ',' << r.label << ',' << group_name(g) << ',' << (v ? fmt(*v) : "") << '\n';
    }
  };
  for (const auto& r : stages) emit(r);
  return os.str();
}

json ablation_to_json(const RunConfig& base, const AblationTable& table) {
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << table.dataset_hash;
  json rows = json::array();
  for (const auto& row : table.rows) {
    const auto& c = row.cell.config;
    json j{{"name", row.cell.name},
           {"stage1_loss", loss_kind_name(c.loss)},
           {"alpha_form", alpha_form_name(c.alpha_form)},
           {"alpha_c", c.alpha_c},
           {"decoupled", row.cell.decoupled},
           {"afg", row.cell.stage2 && c.afg},
           {"kd", row.cell.stage2 && c.kd},
           {"stage1", metrics_to_json(row.stage1.test)},
           {"final", metrics_to_json(row.final_metrics())},
           {"probe", row.probe_accuracy ? json(*row.probe_accuracy) : json(nullptr)}};
    if (row.stage2) j["stage2"] = metrics_to_json(row.stage2->test);
    rows.push_back(std::move(j));
  }
  return json{{"schema", "glag-ablation/1"},
              {"axis", axis_name(table.axis)},
              {"dataset_hash", hash.str()},
              {"config", config_to_json(base)},
              {"rows", rows}};
}

std::string ablation_to_csv(const AblationTable& table) {
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << table.dataset_hash;
  std::ostringstream os;
  os << "cell,name,stage1_loss,alpha_form,alpha_c,decoupled,afg,kd,average,many,medium,few,probe,dataset_hash\n";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const auto& c = row.cell.config;
    const auto& m = row.final_metrics();
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
    os << i << ',' << row.cell.name << ',' << loss_kind_name(c.loss) << ',' << alpha_form_name(c.alpha_form)
       << ',' << fmt(c.alpha_c) << ',' << row.cell.decoupled << ',' << (row.cell.stage2 && c.afg ? "on" : "off")
       << ',' << (row.cell.stage2 && c.kd ? "on" : "off") << ',' << fmt(m.overall) << ',' << opt(m.many)
       << ',' << opt(m.medium) << ',' << opt(m.few) << ',' << opt(row.probe_accuracy) << ',' << hash.str()
       << '\n';
  }
  return os.str();
}

json timing_to_json(const std::vector<MetricsReport>& stages) {
  json t = json::object();
  for (const auto& r : stages) t[r.label + "_seconds"] = r.wall_seconds;
  return t;
}

}  // namespace glag
