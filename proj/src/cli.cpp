#include "dggn/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "dggn/config.hpp"
#include "dggn/gradcheck.hpp"

namespace dggn::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::size_t kDefaultEvalEpisodes = 600;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
T field(const json& v, const std::string& key) {
    if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError("key '" + key + "': expected a non-negative integer, got " + v.dump());
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("key '" + key + "': expected a number, got " + v.dump());
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("key '" + key + "': expected a string, got " + v.dump());
    }
    return v.get<T>();
}

void merge_dataset(DatasetSource& d, const json& j) {
    if (!j.is_object()) throw ConfigError("'dataset' must be a JSON object");
    if (j.contains("kind")) {
        const auto kind = field<std::string>(j["kind"], "dataset.kind");
        if (kind == "synthetic")
            d.kind = DatasetSource::Kind::synthetic;
        else if (kind == "csv")
            d.kind = DatasetSource::Kind::csv;
        else
            throw ConfigError("key 'dataset.kind': expected \"synthetic\" or \"csv\", got \"" + kind + "\"");
    }
    for (const auto& [key, value] : j.items()) {
        const auto where = "dataset." + key;
        if (key == "kind") continue;
        if (key == "num_classes") d.synth.num_classes = field<std::size_t>(value, where);
        else if (key == "per_class") d.synth.per_class = field<std::size_t>(value, where);
        else if (key == "dim") d.synth.dim = field<std::size_t>(value, where);
        else if (key == "spread") d.synth.spread = field<double>(value, where);
        else if (key == "seed") d.synth.seed = field<std::uint64_t>(value, where);
        else if (key == "path") d.csv_path = field<std::string>(value, where);
        else throw ConfigError("unknown key '" + where + "'");
    }
}

json dataset_json(const DatasetSource& d) {
    if (d.kind == DatasetSource::Kind::csv) return json{{"kind", "csv"}, {"path", d.csv_path}};
    return json{{"kind", "synthetic"},
                {"num_classes", d.synth.num_classes},
                {"per_class", d.synth.per_class},
                {"dim", d.synth.dim},
                {"spread", d.synth.spread},
                {"seed", d.synth.seed}};
}

void merge_run(RunConfig& c, const json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "model") merge_json(c.model, value, "model");
        else if (key == "optim") merge_json(c.optim, value, "optim");
        else if (key == "dataset") merge_dataset(c.dataset, value);
        else if (key == "seed") c.seed = field<std::uint64_t>(value, key);
        else if (key == "run_dir") c.run_dir = field<std::string>(value, key);
        else if (key == "eval_every") c.eval_every = field<std::uint64_t>(value, key);
        else if (key == "eval_episodes") c.eval_episodes = field<std::size_t>(value, key);
        else if (key == "checkpoint_every") c.checkpoint_every = field<std::uint64_t>(value, key);
        else throw ConfigError("unknown key '" + key + "'");
    }
}

void apply_shape_flags(ModelConfig& model, const Flags& f) {
    if (f.way) {
        model.way = *f.way;
        if (!f.query) model.query = *f.way;
    }
    if (f.shot) model.shot = *f.shot;
    if (f.query) model.query = *f.query;
}

/// Config file (or defaults), then command-line overrides.
RunConfig resolve(const Flags& f, const std::string& base_json = {}) {
    RunConfig c;
    if (!base_json.empty()) c = parse_run_config(base_json, "checkpoint");
    if (f.config) c = load_run_config(*f.config);
    if (f.seed) c.seed = *f.seed;
    apply_shape_flags(c.model, f);
    if (f.layers) c.model.num_layers = *f.layers;
    if (f.max_iterations) c.optim.max_iterations = *f.max_iterations;
    if (f.out) c.run_dir = *f.out;
    if (f.dataset) c.dataset = parse_dataset_flag(*f.dataset, c.dataset);
    return c;
}

void check_dataset(const DatasetSplit& data, const ModelConfig& model, Partition partition) {
    if (data.dim != model.raw_dim())
        throw UsageError("dataset has " + std::to_string(data.dim) + " features per sample, model expects " +
                         std::to_string(model.raw_dim()));
    const auto have = data.classes(partition).size();
    if (have < model.way)
        throw UsageError(std::string(partition_name(partition)) + " split has " + std::to_string(have) +
                         " classes, episodes need " + std::to_string(model.way));
}

/// Exclusive marker file in the run directory, removed on destruction.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            if (errno == EEXIST)
                throw UsageError("run directory " + dir.string() + " is in use (remove " + path_.string() +
                                 " if no other process owns it)");
            throw std::runtime_error("cannot create " + path_.string() + ": " + std::strerror(errno));
        }
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
    }
    ~RunLock() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

int guarded(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const NonFiniteError& e) {
        err << "error: training aborted: " << e.what() << "\n";
        return kRuntimeAbort;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const DatasetError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const CheckpointError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeAbort;
    }
}

TrainState load_checkpoint_flag(const Flags& f) {
    if (!f.checkpoint) throw UsageError("--checkpoint is required");
    if (!fs::exists(*f.checkpoint)) throw CheckpointError("checkpoint " + *f.checkpoint + " does not exist");
    return checkpoint_load(*f.checkpoint);
}

}  // namespace

void RunConfig::validate() const {
    try {
        model.validate();
        optim.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (dataset.kind == DatasetSource::Kind::csv && dataset.csv_path.empty())
        throw ConfigError("dataset.path is required for a csv dataset");
    if (dataset.kind == DatasetSource::Kind::synthetic && dataset.synth.dim != model.raw_dim())
        throw ConfigError("dataset.dim (" + std::to_string(dataset.synth.dim) + ") must equal the model input width (" +
                          std::to_string(model.raw_dim()) + ")");
    if (run_dir.empty()) throw ConfigError("run_dir must not be empty");
}

json to_json(const RunConfig& c) {
    return json{{"model", to_json(c.model)},
                {"optim", to_json(c.optim)},
                {"dataset", dataset_json(c.dataset)},
                {"seed", c.seed},
                {"run_dir", c.run_dir},
                {"eval_every", c.eval_every},
                {"eval_episodes", c.eval_episodes},
                {"checkpoint_every", c.checkpoint_every}};
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    RunConfig c;
    try {
        merge_run(c, j);
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path);
}

DatasetSplit load_dataset(const DatasetSource& source) {
    if (source.kind == DatasetSource::Kind::csv) return load_feature_csv(source.csv_path);
    return synth_dataset(source.synth);
}

DatasetSource parse_dataset_flag(const std::string& flag, const DatasetSource& base) {
    DatasetSource out = base;
    if (flag == "synthetic") {
        out.kind = DatasetSource::Kind::synthetic;
    } else if (flag.rfind("csv:", 0) == 0 && flag.size() > 4) {
        out.kind = DatasetSource::Kind::csv;
        out.csv_path = flag.substr(4);
    } else {
        throw ConfigError("--dataset must be 'synthetic' or 'csv:PATH', got '" + flag + "'");
    }
    return out;
}

int cmd_train(const Flags& f, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        std::string base;
        std::optional<TrainState> resumed;
        if (f.checkpoint) {
            resumed = load_checkpoint_flag(f);
            base = checkpoint_run_config(*f.checkpoint);
        }
        RunConfig run = resolve(f, base);
        if (resumed) {
            if (f.layers && *f.layers != resumed->config.num_layers)
                throw UsageError("--layers " + std::to_string(*f.layers) + " does not match the checkpoint (" +
                                 std::to_string(resumed->config.num_layers) + " layers)");
            ModelConfig model = resumed->config;
            apply_shape_flags(model, f);
            if (base.empty()) {
                run.model = model;
            } else {
                run.model.way = model.way;
                run.model.shot = model.shot;
                run.model.query = model.query;
            }
            if (to_json(run.model) != to_json(model))
                throw UsageError("model settings differ from the checkpoint");
        }
        run.validate();

        const auto data = load_dataset(run.dataset);
        check_dataset(data, run.model, Partition::train);

        const fs::path dir = run.run_dir;
        fs::create_directories(dir);
        RunLock lock(dir);

        TrainState state = resumed ? std::move(*resumed) : init_train_state(run.model, run.seed);
        state.config = run.model;
        if (!resumed) fs::remove(dir / "metrics.jsonl");

        TrainLoopOptions loop;
        loop.eval_every = run.eval_every;
        loop.eval_episodes = run.eval_episodes;
        loop.eval_seed = split_seed(run.seed, 2);
        loop.checkpoint_every = run.checkpoint_every;
        loop.run_dir = dir;
        loop.run_config_json = to_json(run).dump();
        train(state, run.optim, data, loop);

        json summary{{"iterations", state.iteration}, {"run_dir", dir.string()}};
        for (auto it = state.history.rbegin(); it != state.history.rend(); ++it) {
            if (it->split == "val") {
                summary["val_acc"] = it->acc;
                summary["val_ci95"] = it->ci95;
                break;
            }
        }
        out << summary.dump() << "\n";
        return int{kOk};
    });
}

int cmd_eval(const Flags& f, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        TrainState state = load_checkpoint_flag(f);
        RunConfig run = resolve(f, checkpoint_run_config(*f.checkpoint));
        if (f.layers && *f.layers != state.config.num_layers)
            throw UsageError("--layers does not match the checkpoint");
        ModelConfig model = state.config;
        apply_shape_flags(model, f);
        try {
            model.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        run.model = model;
        run.validate();

        const auto data = load_dataset(run.dataset);
        check_dataset(data, model, Partition::test);
        const std::size_t episodes = f.episodes.value_or(kDefaultEvalEpisodes);
        if (episodes == 0) throw UsageError("--episodes must be positive");

        const auto m = evaluate(state.params, model, data, Partition::test, episodes, split_seed(run.seed, 3));
        out << json{{"acc", m.accuracy}, {"ci95", m.ci95}, {"episodes", m.episodes}}.dump() << "\n";
        return int{kOk};
    });
}

int cmd_gradcheck(const Flags& f, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        GradcheckOptions o;
        if (f.way) o.way = *f.way;
        if (f.shot) o.shot = *f.shot;
        if (f.query) o.query = *f.query;
        if (f.dim) o.dim = *f.dim;
        if (f.draws) o.draws = *f.draws;
        if (f.seed) o.seed = *f.seed;
        if (f.layers) o.depths = {*f.layers};
        if (o.way < 1 || o.shot < 1 || o.dim < 1 || o.draws < 1 || o.depths.front() < 1)
            throw UsageError("gradcheck sizes must be positive");

        const auto report = run_gradcheck(o);
        for (const auto& g : report.groups)
            out << json{{"layers", g.depth}, {"group", g.group}, {"max_rel_err", g.max_error}, {"worst", g.worst_tensor}}
                       .dump()
                << "\n";
        out << json{{"passed", report.passed},
                    {"max_rel_err", report.worst_error},
                    {"worst", report.worst},
                    {"tolerance", o.tolerance},
                    {"rejected_draws", report.rejected_draws}}
                   .dump()
            << "\n";
        if (!report.passed) {
            err << "gradcheck failed: worst parameter " << report.worst << " with relative error "
                << report.worst_error << " (tolerance " << o.tolerance << ")\n";
            return int{kCheckFailed};
        }
        return int{kOk};
    });
}

int cmd_infer(const Flags& f, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (!f.episode) throw UsageError("--episode is required");
        const TrainState state = load_checkpoint_flag(f);
        const Episode ep = load_episode_csv(*f.episode);
        if (ep.dim() != state.config.raw_dim())
            throw UsageError("episode has " + std::to_string(ep.dim()) + " features per row, model expects " +
                             std::to_string(state.config.raw_dim()));

        std::vector<std::size_t> class_ids(ep.way);
        for (const auto& [id, local] : ep.class_relabeling) class_ids[local] = id;

        diff::NoGradGuard guard;
        const auto result = forward(ep, state.params, state.config);
        const Array& probs = result.prediction.probs;
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            std::vector<double> row(probs.data.begin() + static_cast<std::ptrdiff_t>(i * probs.cols()),
                                    probs.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * probs.cols()));
            out << json{{"index", i}, {"probs", row}, {"pred", class_ids[result.prediction.labels[i]]}}.dump()
                << "\n";
        }
        return int{kOk};
    });
}

}  // namespace dggn::cli
