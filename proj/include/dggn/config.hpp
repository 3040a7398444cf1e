#pragma once

// JSON mapping for configuration structs. Parsing is strict: unknown keys
// and wrongly typed values raise ConfigError naming the key.

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "dggn/model.hpp"
#include "dggn/trainer.hpp"

namespace dggn {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const OptimConfig& config);

/// Fields missing from `j` keep the values already in `config`.
void merge_json(ModelConfig& config, const nlohmann::json& j, const std::string& where = "model");
void merge_json(OptimConfig& config, const nlohmann::json& j, const std::string& where = "optim");

}  // namespace dggn
