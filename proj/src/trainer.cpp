#include "dggn/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dggn/config.hpp"

namespace dggn {
namespace {

using nlohmann::json;

json array_json(const Array& a) { return json{{"shape", a.shape}, {"data", a.data}}; }

Array array_from_json(const json& j, const std::string& name) {
    try {
        Array a(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
        return a;
    } catch (const ShapeError& e) {
        throw CheckpointError("checkpoint: tensor '" + name + "': " + e.what());
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint: tensor '" + name + "' is malformed: " + e.what());
    }
}

double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double ci95(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    return 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
}

double query_accuracy(const Prediction& p, const Episode& ep) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < p.labels.size(); ++q) hits += p.labels[q] == ep.query_labels[q];
    return static_cast<double>(hits) / static_cast<double>(p.labels.size());
}

}  // namespace

void OptimConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("optim config: " + what); };
    if (!(lr > 0.0)) fail("lr must be > 0");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) fail("lr_decay_factor must be in (0, 1]");
    if (lr_decay_every == 0) fail("lr_decay_every must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be > 0");
    if (batch_size == 0) fail("batch_size must be positive");
}

double learning_rate(const OptimConfig& config, std::uint64_t iteration) {
    double lr = config.lr;
    for (std::uint64_t k = iteration / config.lr_decay_every; k > 0; --k) lr *= config.lr_decay_factor;
    return lr;
}

Array adam_update(const Array& param, const Array& grad, Array& m, Array& v, const OptimConfig& optim,
                  double lr, std::uint64_t step) {
    if (grad.shape != param.shape || m.shape != param.shape || v.shape != param.shape)
        throw ShapeError("adam_update: shape mismatch for " + shape_string(param.shape));
    const double t = static_cast<double>(step);
    const double correction1 = 1.0 - std::pow(optim.beta1, t);
    const double correction2 = 1.0 - std::pow(optim.beta2, t);
    Array p = param;
    for (std::size_t i = 0; i < p.size(); ++i) {
        m.data[i] = optim.beta1 * m.data[i] + (1.0 - optim.beta1) * grad.data[i];
        v.data[i] = optim.beta2 * v.data[i] + (1.0 - optim.beta2) * grad.data[i] * grad.data[i];
        const double m_hat = m.data[i] / correction1;
        const double v_hat = v.data[i] / correction2;
        p.data[i] = p.data[i] - lr * optim.weight_decay * p.data[i] - lr * m_hat / (std::sqrt(v_hat) + optim.eps);
    }
    return p;
}

TrainState TrainState::clone() const {
    TrainState out;
    out.config = config;
    out.params = params.clone();
    out.adam_m = adam_m;
    out.adam_v = adam_v;
    out.iteration = iteration;
    out.rng = rng;
    out.history = history;
    return out;
}

TrainState init_train_state(const ModelConfig& config, std::uint64_t seed) {
    TrainState s;
    s.config = config;
    Rng init_rng(split_seed(seed, 0));
    s.params = init_params(config, init_rng);
    for (const auto& [name, value] : s.params.named()) {
        s.adam_m[name] = Array::zeros(value->value.shape);
        s.adam_v[name] = Array::zeros(value->value.shape);
    }
    s.rng.seed(split_seed(seed, 1));
    return s;
}

std::vector<Episode> sample_batch(const DatasetSplit& data, Partition partition,
                                  const ModelConfig& config, std::size_t count, Rng& rng) {
    std::vector<Episode> batch;
    batch.reserve(count);
    for (std::size_t b = 0; b < count; ++b) {
        const std::uint64_t seed = rng();
        Rng episode_rng(seed);
        auto ep = sample_episode(data, partition, config.episode_shape(), episode_rng);
        ep.seed = seed;
        batch.push_back(std::move(ep));
    }
    return batch;
}

StepResult train_step(TrainState& state, const OptimConfig& optim,
                      const std::vector<Episode>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const auto named = state.params.named();
    const auto values = state.params.values();
    diff::zero_grads(values);

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    StepResult result;
    for (const auto& ep : batch) {
        check_episode(ep, state.config);
        const auto out = forward(ep, state.params, state.config);
        const auto l = loss(out.graphs, edge_labels(ep.labels()), state.config.loss_layers);
        const double value = l->value.data[0];
        if (!std::isfinite(value)) {
            diff::zero_grads(values);
            throw NonFiniteError("non-finite loss at iteration " + std::to_string(state.iteration) +
                                     " (episode seed " + std::to_string(ep.seed) + ")",
                                 ep.seed);
        }
        diff::backward(diff::scale(l, inv_batch));
        result.loss += value * inv_batch;
        result.accuracy += query_accuracy(out.prediction, ep) * inv_batch;
    }

    const double lr = learning_rate(optim, state.iteration);

    // Stage every update so a non-finite value leaves the state untouched.
    std::vector<Array> new_values, new_m, new_v;
    for (const auto& [name, param] : named) {
        const Array& g = param->grad_buffer();
        Array m = state.adam_m.at(name);
        Array v = state.adam_v.at(name);
        Array p = adam_update(param->value, g, m, v, optim, lr, state.iteration + 1);
        if (!g.all_finite() || !p.all_finite()) {
            diff::zero_grads(values);
            throw NonFiniteError("non-finite gradient for " + name + " at iteration " +
                                     std::to_string(state.iteration) + " (episode seed " +
                                     std::to_string(batch.front().seed) + ")",
                                 batch.front().seed);
        }
        new_values.push_back(std::move(p));
        new_m.push_back(std::move(m));
        new_v.push_back(std::move(v));
    }
    for (std::size_t k = 0; k < named.size(); ++k) {
        named[k].second->value = std::move(new_values[k]);
        state.adam_m[named[k].first] = std::move(new_m[k]);
        state.adam_v[named[k].first] = std::move(new_v[k]);
    }
    diff::zero_grads(values);
    ++state.iteration;
    return result;
}

EvalMetrics evaluate(const ModelParams& params, const ModelConfig& config,
                     const DatasetSplit& data, Partition partition, std::size_t num_episodes,
                     std::uint64_t seed) {
    diff::NoGradGuard guard;
    std::vector<double> accs, losses;
    for (std::size_t i = 0; i < num_episodes; ++i) {
        Rng rng(split_seed(seed, i));
        const auto ep = sample_episode(data, partition, config.episode_shape(), rng);
        const auto out = forward(ep, params, config);
        accs.push_back(query_accuracy(out.prediction, ep));
        losses.push_back(loss(out.graphs, edge_labels(ep.labels()), config.loss_layers)->value.data[0]);
    }
    return {mean(accs), ci95(accs), mean(losses), num_episodes};
}

void checkpoint_save(const TrainState& state, const std::filesystem::path& path,
                     const std::string& extra_config_json) {
    json config = to_json(state.config);
    if (!extra_config_json.empty()) config["run"] = json::parse(extra_config_json);
    json params = json::object(), m = json::object(), v = json::object();
    for (const auto& [name, value] : state.params.named()) {
        params[name] = array_json(value->value);
        m[name] = array_json(state.adam_m.at(name));
        v[name] = array_json(state.adam_v.at(name));
    }
    std::ostringstream rng;
    rng << state.rng;
    const json doc{{"config", config},
                   {"iteration", state.iteration},
                   {"params", params},
                   {"adam", {{"m", m}, {"v", v}}},
                   {"rng", rng.str()}};

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
        out << doc.dump(1) << '\n';
        if (!out) throw CheckpointError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

namespace {
json read_checkpoint_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
}
}  // namespace

TrainState checkpoint_load(const std::filesystem::path& path) {
    const json doc = read_checkpoint_json(path);
    for (const char* key : {"config", "iteration", "params", "adam"})
        if (!doc.contains(key)) throw CheckpointError("checkpoint: missing '" + std::string(key) + "'");

    TrainState state;
    try {
        json model = doc.at("config");
        model.erase("run");
        merge_json(state.config, model, "config");
        state.config.validate();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint: bad config: ") + e.what());
    }
    state.params = zero_params(state.config);
    const auto& params = doc.at("params");
    const auto& m = doc.at("adam").at("m");
    const auto& v = doc.at("adam").at("v");
    const auto named = state.params.named();
    if (params.size() != named.size())
        throw CheckpointError("checkpoint: expected " + std::to_string(named.size()) +
                              " tensors, found " + std::to_string(params.size()));
    for (const auto& [name, value] : named) {
        if (!params.contains(name) || !m.contains(name) || !v.contains(name))
            throw CheckpointError("checkpoint: missing tensor '" + name + "'");
        for (const auto* source : {&params, &m, &v}) {
            auto a = array_from_json(source->at(name), name);
            if (a.shape != value->value.shape)
                throw CheckpointError("checkpoint: tensor '" + name + "' has shape " +
                                      shape_string(a.shape) + ", config requires " +
                                      shape_string(value->value.shape));
            if (source == &params)
                value->value = std::move(a);
            else if (source == &m)
                state.adam_m[name] = std::move(a);
            else
                state.adam_v[name] = std::move(a);
        }
    }
    state.iteration = doc.at("iteration").get<std::uint64_t>();
    if (doc.contains("rng")) {
        std::istringstream in(doc.at("rng").get<std::string>());
        in >> state.rng;
        if (!in) throw CheckpointError("checkpoint: malformed rng state");
    }
    return state;
}

std::string checkpoint_run_config(const std::filesystem::path& path) {
    const json doc = read_checkpoint_json(path);
    if (doc.contains("config") && doc["config"].contains("run")) return doc["config"]["run"].dump();
    return {};
}

std::string metric_json(const MetricRecord& r) {
    return json{{"iter", r.iter}, {"split", r.split}, {"loss", r.loss},
                {"acc", r.acc},   {"ci95", r.ci95},   {"lr", r.lr}}
        .dump();
}

void append_metric(const std::filesystem::path& log, const MetricRecord& record) {
    std::ofstream out(log, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to metrics log " + log.string());
    out << metric_json(record) << '\n';
}

void train(TrainState& state, const OptimConfig& optim, const DatasetSplit& data,
           const TrainLoopOptions& options) {
    optim.validate();
    state.config.validate();
    const bool write = !options.run_dir.empty();
    if (write) std::filesystem::create_directories(options.run_dir);
    const auto log_path = options.run_dir / "metrics.jsonl";
    const auto ckpt_path = options.run_dir / "checkpoint.json";

    std::vector<double> window_loss, window_acc;
    auto emit = [&](const MetricRecord& r) {
        state.history.push_back(r);
        if (write) append_metric(log_path, r);
    };

    while (state.iteration < optim.max_iterations) {
        const double lr = learning_rate(optim, state.iteration);
        const auto batch = sample_batch(data, Partition::train, state.config, optim.batch_size, state.rng);
        const auto step = train_step(state, optim, batch);
        window_loss.push_back(step.loss);
        window_acc.push_back(step.accuracy);

        const bool last = state.iteration == optim.max_iterations;
        const bool eval_now = options.eval_every != 0 && state.iteration % options.eval_every == 0;
        if (eval_now || last) {
            emit({state.iteration, "train", mean(window_loss), mean(window_acc), ci95(window_acc), lr});
            window_loss.clear();
            window_acc.clear();
            if (options.eval_episodes > 0 && data.val_classes.size() >= state.config.way) {
                const auto m = evaluate(state, data, Partition::val, options.eval_episodes, options.eval_seed);
                emit({state.iteration, "val", m.loss, m.accuracy, m.ci95, lr});
            }
        }
        const bool ckpt_now =
            options.checkpoint_every != 0 && state.iteration % options.checkpoint_every == 0;
        if (write && (ckpt_now || last)) checkpoint_save(state, ckpt_path, options.run_config_json);
    }
    if (write && !std::filesystem::exists(ckpt_path)) checkpoint_save(state, ckpt_path, options.run_config_json);
}

}  // namespace dggn
