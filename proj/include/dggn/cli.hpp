#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

#include "dggn/episodes.hpp"
#include "dggn/model.hpp"
#include "dggn/trainer.hpp"

namespace dggn::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kRuntimeAbort = 3 };

struct DatasetSource {
    enum class Kind { synthetic, csv } kind = Kind::synthetic;
    SynthParams synth;
    std::string csv_path;
};

struct RunConfig {
    ModelConfig model;
    OptimConfig optim;
    DatasetSource dataset;
    std::uint64_t seed = 0;
    std::string run_dir = "runs/default";
    std::uint64_t eval_every = 500;
    std::size_t eval_episodes = 100;
    std::uint64_t checkpoint_every = 1000;

    /// Throws ConfigError on the first violated constraint.
    void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Strict parse: unknown keys and malformed JSON raise ConfigError with the
/// offending key or line/column.
RunConfig parse_run_config(const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::string& path);

DatasetSplit load_dataset(const DatasetSource& source);
/// "synthetic" or "csv:PATH".
DatasetSource parse_dataset_flag(const std::string& flag, const DatasetSource& base);

/// Command-line flags shared by every subcommand; unset flags defer to the
/// config file (or checkpoint) and then to defaults.
struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> way;
    std::optional<std::size_t> shot;
    std::optional<std::size_t> query;
    std::optional<std::size_t> layers;
    std::optional<std::uint64_t> max_iterations;
    std::optional<std::string> checkpoint;
    std::optional<std::string> out;
    std::optional<std::size_t> episodes;
    std::optional<std::string> dataset;
    // gradcheck
    std::optional<std::size_t> dim;
    std::optional<std::size_t> draws;
    // infer
    std::optional<std::string> episode;
};

int cmd_train(const Flags& flags, std::ostream& out, std::ostream& err);
int cmd_eval(const Flags& flags, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const Flags& flags, std::ostream& out, std::ostream& err);
int cmd_infer(const Flags& flags, std::ostream& out, std::ostream& err);

}  // namespace dggn::cli
