#pragma once

// JSON forms of the configuration structs. Readers reject unknown keys and
// leave absent keys at their defaults.

#include <filesystem>

#include "json.hpp"

#include "gres/data.hpp"
#include "gres/model.hpp"
#include "gres/trainer.hpp"

namespace gres {

nlohmann::ordered_json to_json(const ModelConfig& c);
nlohmann::ordered_json to_json(const GenConfig& c);
nlohmann::ordered_json to_json(const TrainConfig& c);
nlohmann::ordered_json to_json(const LossWeights& w);

// Each overlays the keys present in j onto `base`. FormatError on unknown keys
// or wrong types.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
GenConfig gen_config_from_json(const nlohmann::json& j, GenConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights base = {});

// Everything a CLI run needs, from one file: {"gen": {...}, "model": {...},
// "train": {...}, "loss_weights": {...}}.
struct RunConfig {
  GenConfig gen;
  ModelConfig model;
  TrainConfig train;
};

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
nlohmann::ordered_json to_json(const RunConfig& c);

// Desk-scale defaults used by the CLI when no config file is given.
RunConfig default_run_config();

}  // namespace gres
