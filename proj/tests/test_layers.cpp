#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "dggn/layers.hpp"
#include "support.hpp"

using namespace dggn;
using namespace dggn::testutil;

namespace {

double max_edge_diff(const std::vector<std::vector<std::array<double, 2>>>& ref, const EpisodeGraph& g,
                     const Array& edges) {
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (i == j) continue;
            const std::size_t m = g.topology->row(i, j);
            for (std::size_t c = 0; c < 2; ++c)
                worst = std::max(worst, std::abs(ref[i][j][c] - edges.data[2 * m + c]));
        }
    return worst;
}

}  // namespace

TEST_CASE("node update with C = 0 gates every message by one half") {
    std::mt19937_64 rng(1);
    auto g = random_graph(2, 1, 1, 3, rng);
    auto p = random_layer(3, false, rng).node;
    p.C = diff::parameter(Array({3, 2}));
    const auto out = node_update(g, p);
    const auto v = to_matrix(g.node_features->value);
    const auto A = to_matrix(p.A->value), B = to_matrix(p.B->value);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t d = 0; d < 3; ++d) {
            double s = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                s += A[d][k] * v[i][k];
                for (std::size_t j = 0; j < 3; ++j)
                    if (j != i) s += 0.5 * B[d][k] * v[j][k];
            }
            CHECK(out->value.at(i, d) == doctest::Approx(std::max(0.0, s)).epsilon(1e-13));
        }
}

TEST_CASE("node update with A = I and B = 0 is relu, fixing nonnegative features") {
    std::mt19937_64 rng(2);
    auto g = random_graph(2, 2, 2, 4, rng);
    NodeUpdateParams p{diff::parameter(Array::identity(4)), diff::parameter(Array({4, 4})),
                       random_param({4, 2}, rng), nullptr};
    const auto out = node_update(g, p);
    for (std::size_t i = 0; i < out->value.size(); ++i)
        CHECK(out->value.data[i] == std::max(0.0, g.node_features->value.data[i]));

    for (double& x : g.node_features->value.data) x = std::abs(x);
    CHECK(node_update(g, p)->value == g.node_features->value);
}

TEST_CASE("node update matches the scalar reference") {
    std::mt19937_64 rng(3);
    for (int draw = 0; draw < 50; ++draw) {
        const bool bias = draw % 2 == 1;
        const bool normalize = draw % 4 == 3;
        auto g = random_graph(2 + draw % 3, 1 + draw % 2, 1 + draw % 3, 3 + draw % 3, rng);
        const auto p = random_layer(g.dim(), bias, rng).node;
        const auto out = node_update(g, p, {normalize});
        CHECK(max_abs_diff(ref_node_update(g, p, normalize), out->value) < 1e-10);
    }
}

TEST_CASE("gru cell with zero parameters halves the hidden state") {
    std::mt19937_64 rng(4);
    GruCellParams zero = zero_layer_params(3, false).gru1;
    const auto e = diff::constant(random_array({5, 2}, rng));
    const auto v = diff::constant(random_array({5, 3}, rng));
    const auto out = gru_cell(e, v, zero);
    for (std::size_t i = 0; i < out->value.size(); ++i) CHECK(out->value.data[i] == 0.5 * e->value.data[i]);
}

TEST_CASE("gru cell keeps the zero state at zero input") {
    std::mt19937_64 rng(5);
    for (int draw = 0; draw < 20; ++draw) {
        const auto p = random_gru(3, false, rng);
        const auto out = gru_cell(diff::constant(Array({1, 2})), diff::constant(Array({1, 3})), p);
        CHECK(out->value.data == std::vector<double>{0.0, 0.0});
    }
}

TEST_CASE("gru cell matches the scalar reference") {
    std::mt19937_64 rng(6);
    for (int draw = 0; draw < 50; ++draw) {
        const std::size_t D = 1 + draw % 5, R = 1 + draw % 4;
        const auto p = random_gru(D, draw % 2 == 1, rng);
        const Array e = random_array({R, 2}, rng), v = random_array({R, D}, rng);
        const auto out = gru_cell(diff::constant(e), diff::constant(v), p);
        const auto em = to_matrix(e), vm = to_matrix(v);
        for (std::size_t r = 0; r < R; ++r) {
            const auto ref = ref_gru({em[r][0], em[r][1]}, vm[r], p);
            CHECK(std::abs(ref[0] - out->value.at(r, 0)) < 1e-10);
            CHECK(std::abs(ref[1] - out->value.at(r, 1)) < 1e-10);
        }
    }
}

TEST_CASE("gru output lies between the state and the candidate") {
    std::mt19937_64 rng(7);
    for (int draw = 0; draw < 200; ++draw) {
        const auto p = random_gru(3, false, rng);
        const Array e = random_array({1, 2}, rng, 2.0), v = random_array({1, 3}, rng);
        const auto out = gru_cell(diff::constant(e), diff::constant(v), p)->value;
        // Candidate with the reset gate recomputed by hand.
        const auto Ur = to_matrix(p.Ur->value), Vr = to_matrix(p.Vr->value);
        const auto Ue = to_matrix(p.Ue->value), Ve = to_matrix(p.Ve->value);
        double r[2];
        for (int a = 0; a < 2; ++a) {
            double s = Ur[a][0] * e.data[0] + Ur[a][1] * e.data[1];
            for (int k = 0; k < 3; ++k) s += Vr[a][k] * v.data[k];
            r[a] = sig(s);
            CHECK(r[a] > 0.0);
            CHECK(r[a] < 1.0);
        }
        for (int a = 0; a < 2; ++a) {
            double s = Ue[a][0] * e.data[0] * r[0] + Ue[a][1] * e.data[1] * r[1];
            for (int k = 0; k < 3; ++k) s += Ve[a][k] * v.data[k];
            const double cand = std::tanh(s);
            const double lo = std::min(e.data[a], cand) - 1e-12, hi = std::max(e.data[a], cand) + 1e-12;
            CHECK(out.data[a] >= lo);
            CHECK(out.data[a] <= hi);
        }
    }
}

TEST_CASE("gru cell rejects mismatched rows") {
    const auto p = zero_layer_params(3, false).gru1;
    CHECK_THROWS_AS(gru_cell(diff::constant(Array({2, 2})), diff::constant(Array({3, 3})), p), ShapeError);
    CHECK_THROWS_AS(gru_cell(diff::constant(Array({2, 2})), diff::constant(Array({2, 4})), p), ShapeError);
}

TEST_CASE("edge update matches the scalar reference") {
    std::mt19937_64 rng(8);
    for (int draw = 0; draw < 50; ++draw) {
        auto g = random_graph(2 + draw % 2, 1 + draw % 3, 1 + draw % 2, 2 + draw % 4, rng);
        const bool bias = draw % 3 == 0;
        const auto g1 = random_gru(g.dim(), bias, rng), g2 = random_gru(g.dim(), bias, rng);
        const auto out = edge_update(g, g1, g2);
        CHECK(max_edge_diff(ref_edge_update(g, g1, g2), g, out->value) < 1e-10);
    }
}

TEST_CASE("edge update with zero parameters quarters the edges") {
    std::mt19937_64 rng(9);
    auto g = random_graph(3, 1, 2, 4, rng);
    const auto z = zero_layer_params(4, false);
    const auto out = edge_update(g, z.gru1, z.gru2);
    for (std::size_t i = 0; i < out->value.size(); ++i)
        CHECK(out->value.data[i] == 0.25 * g.edge_features->value.data[i]);
}

TEST_CASE("edge update is symmetric on symmetric inputs and direction-sensitive otherwise") {
    std::mt19937_64 rng(10);
    auto g = random_graph(2, 1, 0, 3, rng);
    const auto p = random_layer(3, false, rng);
    g.node_features->value.data = {0.3, -1.0, 2.0, 0.3, -1.0, 2.0};
    g.edge_features->value.data = {0.7, -0.2, 0.7, -0.2};
    const auto sym = edge_update(g, p.gru1, p.gru2)->value;
    CHECK(sym.data[0] == sym.data[2]);
    CHECK(sym.data[1] == sym.data[3]);

    int hits = 0;
    for (int draw = 0; draw < 100; ++draw) {
        auto h = random_graph(2, 1, 0, 3, rng);
        const auto q = random_layer(3, false, rng);
        h.edge_features->value.data = {0.5, 0.5, 0.5, 0.5};
        const auto out = edge_update(h, q.gru1, q.gru2)->value;
        if (std::abs(out.data[0] - out.data[2]) > 1e-9) ++hits;
    }
    CHECK(hits >= 1);
}

TEST_CASE("layer with zero parameters: nodes fixed, edges scaled by 1.25") {
    std::mt19937_64 rng(11);
    auto g = random_graph(2, 2, 2, 3, rng);
    const auto out = layer_forward(g, zero_layer_params(3, false));
    CHECK(out.node_features->value == g.node_features->value);
    for (std::size_t i = 0; i < g.edge_features->value.size(); ++i)
        CHECK(out.edge_features->value.data[i] == doctest::Approx(1.25 * g.edge_features->value.data[i]).epsilon(1e-15));
    CHECK(out.node_features->value.shape == g.node_features->value.shape);
    CHECK(out.edge_features->value.shape == g.edge_features->value.shape);
    CHECK(out.labels == g.labels);
    CHECK(out.support_count == g.support_count);
}

TEST_CASE("layer forward is residual over both updates of the same input") {
    std::mt19937_64 rng(12);
    for (int draw = 0; draw < 20; ++draw) {
        auto g = random_graph(3, 1, 2, 4, rng);
        const auto p = random_layer(4, draw % 2 == 0, rng);
        const auto out = layer_forward(g, p);
        const auto nodes = ref_node_update(g, p.node, false);
        const auto edges = ref_edge_update(g, p.gru1, p.gru2);
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t d = 0; d < 4; ++d)
                CHECK(std::abs(out.node_features->value.at(i, d) - nodes[i][d] - g.node_features->value.at(i, d)) < 1e-10);
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (i == j) continue;
                const auto before = edge_of(g, i, j);
                const auto after = edge_of(out, i, j);
                for (int c = 0; c < 2; ++c) CHECK(std::abs(after[c] - edges[i][j][c] - before[c]) < 1e-10);
            }
    }
}

TEST_CASE("layer forward is permutation equivariant") {
    std::mt19937_64 rng(13);
    for (int draw = 0; draw < 100; ++draw) {
        auto g = random_graph(2 + draw % 3, 1 + draw % 2, 1 + draw % 3, 3, rng);
        const auto p = random_layer(3, draw % 2 == 0, rng);
        const auto pi = random_permutation(g.size(), rng);
        const auto lhs = layer_forward(permute_graph(g, pi), p);
        const auto rhs = permute_graph(layer_forward(g, p), pi);
        double worst = 0.0;
        for (std::size_t i = 0; i < lhs.node_features->value.size(); ++i)
            worst = std::max(worst, std::abs(lhs.node_features->value.data[i] - rhs.node_features->value.data[i]));
        for (std::size_t i = 0; i < lhs.edge_features->value.size(); ++i)
            worst = std::max(worst, std::abs(lhs.edge_features->value.data[i] - rhs.edge_features->value.data[i]));
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("layer gradients of a scalar readout match finite differences") {
    std::mt19937_64 rng(14);
    int checked = 0;
    while (checked < 20) {
        auto g = random_graph(2, 1, 1, 3, rng);
        const auto p = random_layer(3, checked % 2 == 1, rng);
        const Array wn = random_array({3, 3}, rng), we = random_array({6, 2}, rng);
        auto readout = [&] {
            const auto out = layer_forward(g, p);
            return diff::add(diff::sum(diff::mul(out.node_features, diff::constant(wn))),
                             diff::sum(diff::mul(diff::tanh(out.edge_features), diff::constant(we))));
        };
        // Skip draws where a relu input sits close to its kink.
        bool near_kink = false;
        const auto root = readout();
        std::vector<const diff::Node*> stack{root.get()};
        std::set<const diff::Node*> seen;
        while (!stack.empty()) {
            const auto* n = stack.back();
            stack.pop_back();
            if (!seen.insert(n).second) continue;
            if (n->op == "relu")
                for (double x : n->parents.front()->value.data) near_kink |= std::abs(x) < 1e-3;
            for (const auto& q : n->parents) stack.push_back(q.get());
        }
        if (near_kink) continue;

        const auto named = named_params(p);
        std::vector<diff::Value> values;
        for (auto& [name, v] : named) values.push_back(v);
        diff::zero_grads(values);
        diff::backward(root);
        for (auto& [name, v] : named) {
            for (std::size_t i = 0; i < v->value.size(); ++i) {
                const double saved = v->value.data[i];
                v->value.data[i] = saved + 1e-5;
                const double up = readout()->value.data[0];
                v->value.data[i] = saved - 1e-5;
                const double down = readout()->value.data[0];
                v->value.data[i] = saved;
                const double numeric = (up - down) / 2e-5, analytic = v->grad_buffer().data[i];
                const double err = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
                CAPTURE(name);
                CHECK(err < 1e-4);
            }
        }
        ++checked;
    }
}

TEST_CASE("parameter initialisation shapes, bounds and names") {
    Rng rng(15);
    const std::size_t D = 9;
    const auto p = init_layer_params(D, true, rng);
    const auto named = named_params(p);
    CHECK(named.size() == 4 + 2 * 9);
    std::set<std::string> names;
    for (auto& [name, v] : named) {
        names.insert(name);
        CHECK(v->requires_grad);
        const bool is_bias = name == "bias" || name.find(".b") != std::string::npos;
        if (is_bias) {
            for (double x : v->value.data) CHECK(x == 0.0);
            continue;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(v->value.cols()));
        for (double x : v->value.data) CHECK(std::abs(x) <= bound);
    }
    for (const char* n : {"A", "B", "C", "gru1.Uz", "gru1.Vz", "gru1.Ur", "gru1.Vr", "gru1.Ue", "gru1.Ve",
                          "gru2.Uz", "gru2.Ve"})
        CHECK(names.count(n));
    CHECK(p.node.A->value.shape == Shape{D, D});
    CHECK(p.node.C->value.shape == Shape{D, 2});
    CHECK(p.gru1.Uz->value.shape == Shape{2, 2});
    CHECK(p.gru2.Vr->value.shape == Shape{2, D});
    CHECK(p.gru1.Uz != p.gru2.Uz);

    const auto plain = init_layer_params(D, false, rng);
    CHECK(named_params(plain).size() == 15);
}
