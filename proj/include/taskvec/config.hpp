#pragma once

#include <string>

#include <json.hpp>

#include "taskvec/mlp.hpp"
#include "taskvec/sweep.hpp"
#include "taskvec/synth.hpp"
#include "taskvec/train.hpp"

namespace taskvec {

// JSON (de)serialization for the config-facing records. Parsing is strict:
// unknown keys raise ConfigError naming the key and section, so a typo in an
// experiment config dies loudly instead of silently running defaults.

void check_keys(const nlohmann::json& j,
                std::initializer_list<const char*> allowed,
                const std::string& context);

nlohmann::json to_json(const MlpSpec& spec);
MlpSpec mlp_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SyntheticTaskSpec& spec);
SyntheticTaskSpec task_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const CoeffGrid& grid);
// Accepts {"values": [...]} or the compact string "lo:hi:step".
CoeffGrid coeff_grid_from_json(const nlohmann::json& j);
CoeffGrid coeff_grid_from_string(const std::string& s);

} // namespace taskvec
