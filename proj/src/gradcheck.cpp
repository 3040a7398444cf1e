#include "dggn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_set>

namespace dggn {
namespace {

constexpr double kKinkMargin = 1e-3;

std::string group_of(const std::string& tensor) {
    if (tensor.rfind("layer", 0) == 0) return tensor.substr(tensor.find('.') + 1);
    return tensor;
}

Episode random_episode(const GradcheckOptions& o, std::size_t query, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Episode ep;
    ep.way = o.way;
    ep.shot = o.shot;
    ep.query_count = query;
    std::size_t id = 0;
    auto make = [&](std::size_t label) {
        Sample s;
        s.features.resize(o.dim);
        for (double& f : s.features) f = normal(rng);
        s.class_id = label;
        s.id = id++;
        return s;
    };
    for (std::size_t k = 0; k < o.way; ++k) {
        ep.class_relabeling[k] = k;
        for (std::size_t s = 0; s < o.shot; ++s) {
            ep.support.push_back(make(k));
            ep.support_labels.push_back(k);
        }
    }
    for (std::size_t q = 0; q < query; ++q) {
        ep.query.push_back(make(q % o.way));
        ep.query_labels.push_back(q % o.way);
    }
    return ep;
}

}  // namespace

double relative_error(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
    return std::abs(analytic - numeric) / scale;
}

Array numeric_gradient(const std::function<double()>& f, const diff::Value& x, double step) {
    Array g(x->value.shape);
    for (std::size_t i = 0; i < x->value.size(); ++i) {
        const double saved = x->value.data[i];
        x->value.data[i] = saved + step;
        const double up = f();
        x->value.data[i] = saved - step;
        const double down = f();
        x->value.data[i] = saved;
        g.data[i] = (up - down) / (2.0 * step);
    }
    return g;
}

double min_relu_margin(const diff::Value& root) {
    double margin = std::numeric_limits<double>::infinity();
    std::unordered_set<const diff::Node*> seen;
    std::vector<const diff::Node*> stack{root.get()};
    while (!stack.empty()) {
        const auto* node = stack.back();
        stack.pop_back();
        if (!seen.insert(node).second) continue;
        if (node->op == "relu")
            for (double x : node->parents.front()->value.data) margin = std::min(margin, std::abs(x));
        for (const auto& p : node->parents) stack.push_back(p.get());
    }
    return margin;
}

GradcheckReport run_gradcheck(const GradcheckOptions& o) {
    const std::size_t query = o.query == 0 ? o.way : o.query;
    GradcheckReport report;
    std::map<std::pair<std::size_t, std::string>, GroupError> groups;

    for (std::size_t depth : o.depths) {
        ModelConfig config;
        config.num_layers = depth;
        config.feature_dim = o.dim;
        config.input_dim = o.dim;
        config.way = o.way;
        config.shot = o.shot;
        config.query = query;
        config.allow_unbalanced = true;
        config.embedding = EmbeddingKind::mlp;
        config.embed_hidden = o.dim;
        config.bias = o.bias;
        config.loss_layers = o.loss_layers;

        Rng rng(split_seed(o.seed, depth));
        std::size_t accepted = 0;
        while (accepted < o.draws) {
            const auto ep = random_episode(o, query, rng);
            auto params = init_params(config, rng);
            if (o.bias) {
                // Biases start at zero; give them random values so they are exercised.
                std::uniform_real_distribution<double> u(-0.5, 0.5);
                for (auto& [name, v] : params.named())
                    if (v->value.rows() == 1)
                        for (double& x : v->value.data) x = u(rng);
            }
            const auto labels = edge_labels(ep.labels());

            const auto out = forward(ep, params, config);
            const auto l = loss(out.graphs, labels, config.loss_layers);
            if (min_relu_margin(l) < kKinkMargin) {
                ++report.rejected_draws;
                continue;
            }
            ++accepted;
            const auto values = params.values();
            diff::zero_grads(values);
            diff::backward(l);

            const auto objective = [&] {
                diff::NoGradGuard guard;
                const auto o2 = forward(ep, params, config);
                return loss(o2.graphs, labels, config.loss_layers)->value.data[0];
            };
            for (const auto& [name, value] : params.named()) {
                const Array numeric = numeric_gradient(objective, value, o.step);
                const Array& analytic = value->grad_buffer();
                double worst = 0.0;
                for (std::size_t i = 0; i < numeric.size(); ++i) {
                    const double e = relative_error(analytic.data[i], numeric.data[i]);
                    if (!(e <= worst)) worst = std::isnan(e) ? std::numeric_limits<double>::infinity() : e;
                }

                auto& g = groups[{depth, group_of(name)}];
                g.depth = depth;
                g.group = group_of(name);
                if (worst >= g.max_error) {
                    g.max_error = worst;
                    g.worst_tensor = name;
                }
                if (worst >= report.worst_error) {
                    report.worst_error = worst;
                    report.worst = "L=" + std::to_string(depth) + " " + name;
                }
            }
        }
    }
    for (auto& [key, g] : groups) report.groups.push_back(g);
    report.passed = report.worst_error < o.tolerance;
    return report;
}

}  // namespace dggn
