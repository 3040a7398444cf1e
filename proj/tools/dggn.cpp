#include <iostream>

#include <CLI11.hpp>

#include "dggn/cli.hpp"

namespace {

template <typename T>
CLI::Option* optional_flag(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help) {
    return app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

void shape_flags(CLI::App* app, dggn::cli::Flags& f) {
    optional_flag(app, "--way", f.way, "classes per episode (N)");
    optional_flag(app, "--shot", f.shot, "support samples per class (K)");
    optional_flag(app, "--query", f.query, "query samples per episode; defaults to --way when --way is given");
}

}  // namespace

int main(int argc, char** argv) {
    using namespace dggn::cli;
    CLI::App app{"Directed gated graph network for few-shot classification"};
    app.require_subcommand(1);
    Flags f;

    auto* train = app.add_subcommand("train", "train a model, writing metrics and checkpoints to the run directory");
    optional_flag(train, "--config", f.config, "run config JSON");
    optional_flag(train, "--seed", f.seed, "master seed");
    shape_flags(train, f);
    optional_flag(train, "--layers", f.layers, "number of graph layers");
    optional_flag(train, "--max-iterations", f.max_iterations, "stop after this many iterations");
    optional_flag(train, "--checkpoint", f.checkpoint, "resume from this checkpoint");
    optional_flag(train, "--out", f.out, "run directory");
    optional_flag(train, "--dataset", f.dataset, "synthetic or csv:PATH");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on test-split episodes");
    optional_flag(eval, "--checkpoint", f.checkpoint, "checkpoint to evaluate")->required();
    optional_flag(eval, "--config", f.config, "run config JSON (defaults to the one stored in the checkpoint)");
    optional_flag(eval, "--seed", f.seed, "episode seed");
    shape_flags(eval, f);
    optional_flag(eval, "--episodes", f.episodes, "number of episodes (default 600)");
    optional_flag(eval, "--dataset", f.dataset, "synthetic or csv:PATH");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
    optional_flag(gradcheck, "--seed", f.seed, "draw seed");
    shape_flags(gradcheck, f);
    optional_flag(gradcheck, "--layers", f.layers, "check only this depth (default 1, 2 and 3)");
    optional_flag(gradcheck, "--dim", f.dim, "feature width (default 4)");
    optional_flag(gradcheck, "--draws", f.draws, "accepted random draws per depth (default 100)");

    auto* infer = app.add_subcommand("infer", "classify the queries of one episode CSV");
    optional_flag(infer, "--checkpoint", f.checkpoint, "trained checkpoint")->required();
    optional_flag(infer, "--episode", f.episode, "CSV with header role,class_id,f_1..f_D")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    if (train->parsed()) return cmd_train(f, std::cout, std::cerr);
    if (eval->parsed()) return cmd_eval(f, std::cout, std::cerr);
    if (gradcheck->parsed()) return cmd_gradcheck(f, std::cout, std::cerr);
    return cmd_infer(f, std::cout, std::cerr);
}
