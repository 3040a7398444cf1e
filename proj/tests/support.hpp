#pragma once

// Shared fixtures for the test binaries: random graphs and parameters, and
// plain scalar-loop reference implementations that share no code with the
// library's array operations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "dggn/autodiff.hpp"
#include "dggn/graph.hpp"
#include "dggn/layers.hpp"
#include "dggn/model.hpp"

namespace dggn::testutil {

using Matrix = std::vector<std::vector<double>>;

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Matrix to_matrix(const Array& a) {
    Matrix m(a.rows(), std::vector<double>(a.cols()));
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) m[r][c] = a.data[r * a.cols() + c];
    return m;
}

inline Array random_array(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Array a(std::move(shape));
    for (double& x : a.data) x = normal(rng);
    return a;
}

inline diff::Value random_param(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    return diff::parameter(random_array(std::move(shape), rng, scale));
}

inline GruCellParams random_gru(std::size_t dim, bool bias, std::mt19937_64& rng) {
    GruCellParams p;
    p.Uz = random_param({2, 2}, rng);
    p.Vz = random_param({2, dim}, rng);
    p.Ur = random_param({2, 2}, rng);
    p.Vr = random_param({2, dim}, rng);
    p.Ue = random_param({2, 2}, rng);
    p.Ve = random_param({2, dim}, rng);
    if (bias) {
        p.bz = random_param({1, 2}, rng);
        p.br = random_param({1, 2}, rng);
        p.be = random_param({1, 2}, rng);
    }
    return p;
}

inline LayerParams random_layer(std::size_t dim, bool bias, std::mt19937_64& rng) {
    LayerParams p;
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    p.node.A = random_param({dim, dim}, rng, s);
    p.node.B = random_param({dim, dim}, rng, s);
    p.node.C = random_param({dim, 2}, rng);
    if (bias) p.node.bias = random_param({1, dim}, rng);
    p.gru1 = random_gru(dim, bias, rng);
    p.gru2 = random_gru(dim, bias, rng);
    return p;
}

/// Random node and edge features on a complete directed graph. Labels give
/// `way` classes with `shot` supports each, followed by `queries` nodes.
inline EpisodeGraph random_graph(std::size_t way, std::size_t shot, std::size_t queries,
                                 std::size_t dim, std::mt19937_64& rng) {
    const std::size_t T = way * shot + queries;
    EpisodeGraph g;
    g.topology = std::make_shared<const EdgeTopology>(T);
    g.node_features = diff::parameter(random_array({T, dim}, rng));
    g.edge_features = diff::parameter(random_array({g.topology->edges(), 2}, rng));
    g.support_count = way * shot;
    g.way = way;
    for (std::size_t k = 0; k < way; ++k)
        for (std::size_t s = 0; s < shot; ++s) g.labels.push_back(k);
    std::uniform_int_distribution<std::size_t> label(0, way - 1);
    for (std::size_t q = 0; q < queries; ++q) g.labels.push_back(label(rng));
    return g;
}

/// Episode with normal random features; supports grouped by class.
inline Episode make_episode(std::size_t way, std::size_t shot, const std::vector<std::size_t>& query_labels,
                     std::size_t dim, std::mt19937_64& rng) {
    Episode ep;
    ep.way = way;
    ep.shot = shot;
    ep.query_count = query_labels.size();
    std::normal_distribution<double> normal;
    std::size_t id = 0;
    auto sample = [&](std::size_t label) {
        Sample s{std::vector<double>(dim), label, id++};
        for (double& x : s.features) x = normal(rng);
        return s;
    };
    for (std::size_t k = 0; k < way; ++k) {
        ep.class_relabeling[k] = k;
        for (std::size_t s = 0; s < shot; ++s) {
            ep.support.push_back(sample(k));
            ep.support_labels.push_back(k);
        }
    }
    for (auto l : query_labels) {
        ep.query.push_back(sample(l));
        ep.query_labels.push_back(l);
    }
    return ep;
}

/// e_ij for the edge i -> j, looked up by linear search over the topology
/// so the layout formula is not reused.
inline std::array<double, 2> edge_of(const EpisodeGraph& g, std::size_t i, std::size_t j) {
    const auto& t = *g.topology;
    for (std::size_t m = 0; m < t.edges(); ++m)
        if (t.src[m] == i && t.dst[m] == j)
            return {g.edge_features->value.data[2 * m], g.edge_features->value.data[2 * m + 1]};
    return {NAN, NAN};
}

// ---- scalar references ----

inline Matrix ref_node_update(const EpisodeGraph& g, const NodeUpdateParams& p, bool normalize) {
    const Matrix v = to_matrix(g.node_features->value);
    const Matrix A = to_matrix(p.A->value), B = to_matrix(p.B->value), C = to_matrix(p.C->value);
    const std::size_t T = v.size(), D = v[0].size();
    Matrix out(T, std::vector<double>(D));
    for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t d = 0; d < D; ++d) {
            double self = 0.0;
            for (std::size_t k = 0; k < D; ++k) self += A[d][k] * v[i][k];
            double incoming = 0.0;
            for (std::size_t j = 0; j < T; ++j) {
                if (j == i) continue;
                const auto e = edge_of(g, j, i);
                const double gate = sig(C[d][0] * e[0] + C[d][1] * e[1]);
                double msg = 0.0;
                for (std::size_t k = 0; k < D; ++k) msg += B[d][k] * v[j][k];
                incoming += gate * msg;
            }
            if (normalize) incoming /= static_cast<double>(T - 1);
            double pre = self + incoming;
            if (p.bias) pre += p.bias->value.data[d];
            out[i][d] = std::max(0.0, pre);
        }
    }
    return out;
}

inline std::array<double, 2> ref_gru(const std::array<double, 2>& e, const std::vector<double>& v,
                                     const GruCellParams& p) {
    auto W = [](const diff::Value& x) { return to_matrix(x->value); };
    const Matrix Uz = W(p.Uz), Vz = W(p.Vz), Ur = W(p.Ur), Vr = W(p.Vr), Ue = W(p.Ue), Ve = W(p.Ve);
    auto b = [](const diff::Value& x, std::size_t a) { return x ? x->value.data[a] : 0.0; };
    std::array<double, 2> z{}, r{}, cand{}, out{};
    for (std::size_t a = 0; a < 2; ++a) {
        double sz = b(p.bz, a), sr = b(p.br, a);
        for (std::size_t c = 0; c < 2; ++c) {
            sz += Uz[a][c] * e[c];
            sr += Ur[a][c] * e[c];
        }
        for (std::size_t k = 0; k < v.size(); ++k) {
            sz += Vz[a][k] * v[k];
            sr += Vr[a][k] * v[k];
        }
        z[a] = sig(sz);
        r[a] = sig(sr);
    }
    for (std::size_t a = 0; a < 2; ++a) {
        double s = b(p.be, a);
        for (std::size_t c = 0; c < 2; ++c) s += Ue[a][c] * (e[c] * r[c]);
        for (std::size_t k = 0; k < v.size(); ++k) s += Ve[a][k] * v[k];
        cand[a] = std::tanh(s);
        out[a] = (1.0 - z[a]) * e[a] + z[a] * cand[a];
    }
    return out;
}

/// out[i][j] = e'_ij, NaN on the diagonal.
inline std::vector<std::vector<std::array<double, 2>>> ref_edge_update(const EpisodeGraph& g,
                                                                       const GruCellParams& g1,
                                                                       const GruCellParams& g2) {
    const Matrix v = to_matrix(g.node_features->value);
    const std::size_t T = v.size();
    std::vector<std::vector<std::array<double, 2>>> out(T, std::vector<std::array<double, 2>>(T, {NAN, NAN}));
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j)
            if (i != j) out[i][j] = ref_gru(ref_gru(edge_of(g, i, j), v[i], g1), v[j], g2);
    return out;
}

/// Query rows of class probabilities from the support -> query similarity votes.
inline Matrix ref_predict(const EpisodeGraph& g) {
    const std::size_t T = g.size(), S = g.support_count;
    Matrix probs;
    for (std::size_t q = S; q < T; ++q) {
        std::vector<double> score(g.way, 0.0);
        for (std::size_t s = 0; s < S; ++s) score[g.labels[s]] += sig(edge_of(g, s, q)[0]);
        const double m = *std::max_element(score.begin(), score.end());
        double z = 0.0;
        for (double& x : score) z += (x = std::exp(x - m));
        for (double& x : score) x /= z;
        probs.push_back(score);
    }
    return probs;
}

inline double ref_loss(const EpisodeGraph& g) {
    const std::size_t T = g.size();
    const double eps = 1e-7;
    auto term = [eps](double p, double y) {
        p = std::clamp(p, eps, 1.0 - eps);
        return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    };
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j) {
            if (i == j) continue;
            const double y = g.labels[i] == g.labels[j] ? 1.0 : 0.0;
            const auto e = edge_of(g, i, j);
            total += term(sig(e[0]), y) + term(sig(e[1]), 1.0 - y);
            count += 2;
        }
    return total / static_cast<double>(count);
}

/// Expected layer-0 edge feature for nodes i, j given support count S.
inline std::array<double, 2> ref_init_edge(std::size_t i, std::size_t j, std::size_t S,
                                           const std::vector<std::size_t>& labels) {
    if (i < S && j < S) return labels[i] == labels[j] ? std::array<double, 2>{1.0, 0.0} : std::array<double, 2>{0.0, 1.0};
    return {0.5, 0.5};
}

inline double max_abs_diff(const Matrix& a, const Array& b) {
    double worst = 0.0;
    for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t c = 0; c < a[r].size(); ++c)
            worst = std::max(worst, std::abs(a[r][c] - b.data[r * b.cols() + c]));
    return worst;
}

// ---- permutations ----

inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

/// Graph whose node pi[i] is node i of g (edges permuted on both ends).
inline EpisodeGraph permute_graph(const EpisodeGraph& g, const std::vector<std::size_t>& pi) {
    const std::size_t T = g.size(), D = g.dim();
    EpisodeGraph out = g;
    Array v({T, D});
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t d = 0; d < D; ++d) v.at(pi[i], d) = g.node_features->value.at(i, d);
    Array e({g.topology->edges(), 2});
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j) {
            if (i == j) continue;
            const std::size_t from = g.topology->row(i, j), to = g.topology->row(pi[i], pi[j]);
            e.data[2 * to] = g.edge_features->value.data[2 * from];
            e.data[2 * to + 1] = g.edge_features->value.data[2 * from + 1];
        }
    out.node_features = diff::parameter(std::move(v));
    out.edge_features = diff::parameter(std::move(e));
    out.labels.assign(T, 0);
    for (std::size_t i = 0; i < T; ++i) out.labels[pi[i]] = g.labels[i];
    return out;
}

}  // namespace dggn::testutil
