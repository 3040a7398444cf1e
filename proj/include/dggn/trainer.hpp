#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dggn/episodes.hpp"
#include "dggn/model.hpp"

namespace dggn {

struct OptimConfig {
    double lr = 1e-3;
    double lr_decay_factor = 0.1;
    std::uint64_t lr_decay_every = 20000;
    double weight_decay = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 20;
    std::uint64_t max_iterations = 100000;

    void validate() const;
};

/// lr0 * decay^floor(t / every).
double learning_rate(const OptimConfig& config, std::uint64_t iteration);

/// One Adam step with decoupled weight decay on a single tensor:
/// p - lr*wd*p - lr*m_hat/(sqrt(v_hat) + eps). `step` counts from 1; m and v
/// are updated in place.
Array adam_update(const Array& param, const Array& grad, Array& m, Array& v, const OptimConfig& optim,
                  double lr, std::uint64_t step);

struct MetricRecord {
    std::uint64_t iter = 0;
    std::string split;
    double loss = 0.0;
    double acc = 0.0;
    double ci95 = 0.0;
    double lr = 0.0;

    friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

struct TrainState {
    ModelConfig config;
    ModelParams params;
    std::map<std::string, Array> adam_m;
    std::map<std::string, Array> adam_v;
    std::uint64_t iteration = 0;
    Rng rng;
    std::vector<MetricRecord> history;

    TrainState clone() const;
};

/// Fresh parameters drawn from split_seed(seed, 0); the state's own stream
/// is split_seed(seed, 1).
TrainState init_train_state(const ModelConfig& config, std::uint64_t seed);

class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(const std::string& what, std::uint64_t episode_seed)
        : std::runtime_error(what), episode_seed(episode_seed) {}
    std::uint64_t episode_seed;
};

struct StepResult {
    double loss = 0.0;      // mean over the batch
    double accuracy = 0.0;  // mean query accuracy over the batch
};

/// Backpropagates the mean batch loss and applies one Adam step with
/// decoupled weight decay. On a non-finite loss or gradient the parameters,
/// moments and iteration are left untouched and NonFiniteError is thrown.
StepResult train_step(TrainState& state, const OptimConfig& optim,
                      const std::vector<Episode>& batch);

/// Samples `count` episodes, each from its own seed drawn from `rng`.
std::vector<Episode> sample_batch(const DatasetSplit& data, Partition partition,
                                  const ModelConfig& config, std::size_t count, Rng& rng);

struct EvalMetrics {
    double accuracy = 0.0;
    double ci95 = 0.0;  // 1.96 * sample std / sqrt(n) over per-episode accuracy
    double loss = 0.0;
    std::size_t episodes = 0;
};

/// Mean query accuracy over freshly sampled episodes. Reads parameters only.
EvalMetrics evaluate(const ModelParams& params, const ModelConfig& config,
                     const DatasetSplit& data, Partition partition, std::size_t num_episodes,
                     std::uint64_t seed);
inline EvalMetrics evaluate(const TrainState& state, const DatasetSplit& data,
                            Partition partition, std::size_t num_episodes, std::uint64_t seed) {
    return evaluate(state.params, state.config, data, partition, num_episodes, seed);
}

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// `extra_config` is stored verbatim under config.run when non-empty.
void checkpoint_save(const TrainState& state, const std::filesystem::path& path,
                     const std::string& extra_config_json = {});
TrainState checkpoint_load(const std::filesystem::path& path);
/// Raw config.run object saved alongside the model, or "" if absent.
std::string checkpoint_run_config(const std::filesystem::path& path);

std::string metric_json(const MetricRecord& record);
void append_metric(const std::filesystem::path& log, const MetricRecord& record);

struct TrainLoopOptions {
    std::uint64_t eval_every = 500;
    std::size_t eval_episodes = 100;
    std::uint64_t eval_seed = 0;         // same validation episodes at every evaluation
    std::uint64_t checkpoint_every = 0;  // 0: only at the end
    std::filesystem::path run_dir;       // empty: no files written
    std::string run_config_json;         // stored in checkpoints
};

/// Trains until optim.max_iterations. Every eval_every iterations (and at
/// the end) appends a "train" window record and a "val" evaluation record.
void train(TrainState& state, const OptimConfig& optim, const DatasetSplit& data,
           const TrainLoopOptions& options);

}  // namespace dggn
