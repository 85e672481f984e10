// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include <json.hpp>

#include "glag/pipeline.hpp"

namespace glag {

/// Flat JSON mirroring RunConfig field names.
nlohmann::json config_to_json(const RunConfig& config);
/// Starts from `base` and applies every key of `doc`; unknown keys and type
/// errors raise ConfigError naming the key.
RunConfig config_from_json(const nlohmann::json& doc, RunConfig base = {});

nlohmann::json metrics_to_json(const EvalMetrics& m);
nlohmann::json report_to_json(const MetricsReport& r);

/// Document for a training run: config echo, per-stage epoch traces and
/// final test metrics. Timing is kept out so reruns are byte-identical.
nlohmann::json run_to_json(const RunConfig& config, const std::vector<MetricsReport>& stages);
/// One row per (stage, group): run,stage,group,accuracy
std::string run_to_csv(const std::string& run, const std::vector<MetricsReport>& stages);

nlohmann::json ablation_to_json(const RunConfig& base, const AblationTable& table);
/// One row per cell.
std::string ablation_to_csv(const AblationTable& table);

/// Wall-clock seconds per stage.
nlohmann::json timing_to_json(const std::vector<MetricsReport>& stages);

}  // namespace glag
