#include "dggn/graph.hpp"

#include <algorithm>
#include <string>

namespace dggn {

EdgeTopology::EdgeTopology(std::size_t num_nodes) : nodes(num_nodes) {
    const std::size_t m = num_nodes == 0 ? 0 : num_nodes * (num_nodes - 1);
    src.reserve(m);
    dst.reserve(m);
    for (std::size_t i = 0; i < num_nodes; ++i)
        for (std::size_t j = 0; j < num_nodes; ++j)
            if (i != j) {
                src.push_back(i);
                dst.push_back(j);
            }
}

std::size_t EdgeTopology::row(std::size_t i, std::size_t j) const {
    if (i == j || i >= nodes || j >= nodes) {
        throw std::out_of_range("no edge " + std::to_string(i) + " -> " + std::to_string(j));
    }
    return i * (nodes - 1) + (j < i ? j : j - 1);
}

EdgeLabels edge_labels(const std::vector<std::size_t>& labels) {
    EdgeLabels out;
    out.nodes = labels.size();
    out.y.assign(out.nodes * out.nodes, 0);
    for (std::size_t i = 0; i < out.nodes; ++i)
        for (std::size_t j = 0; j < out.nodes; ++j)
            if (i != j && labels[i] == labels[j]) out.y[i * out.nodes + j] = 1;
    return out;
}

std::array<double, 2> EpisodeGraph::edge(std::size_t i, std::size_t j) const {
    const std::size_t r = topology->row(i, j);
    const auto& d = edge_features->value.data;
    return {d[2 * r], d[2 * r + 1]};
}

std::vector<bool> EpisodeGraph::edge_mask() const {
    const std::size_t t = size();
    std::vector<bool> mask(t * t, true);
    for (std::size_t i = 0; i < t; ++i) mask[i * t + i] = false;
    return mask;
}

Array EpisodeGraph::edge_tensor() const {
    const std::size_t t = size();
    Array out({t, t, 2});
    for (std::size_t m = 0; m < topology->edges(); ++m) {
        const std::size_t base = (topology->src[m] * t + topology->dst[m]) * 2;
        out.data[base] = edge_features->value.data[2 * m];
        out.data[base + 1] = edge_features->value.data[2 * m + 1];
    }
    return out;
}

diff::Value embed_identity(const diff::Value& x) { return x; }

diff::Value embed_mlp(const diff::Value& x, const diff::Value& W1, const diff::Value& W2) {
    // Rows are samples, so x * W1^T applies W1 to every sample.
    const auto hidden = diff::relu(diff::matmul(x, diff::transpose(W1)));
    return diff::matmul(hidden, diff::transpose(W2));
}

diff::Value embed(const EmbeddingParams& params, const diff::Value& x) {
    if (params.kind == EmbeddingKind::identity) return embed_identity(x);
    return embed_mlp(x, params.W1, params.W2);
}

Array episode_features(const Episode& episode) {
    const std::size_t t = episode.size();
    const std::size_t d = episode.dim();
    Array x({t, d});
    std::size_t r = 0;
    for (const auto* set : {&episode.support, &episode.query})
        for (const auto& s : *set) {
            if (s.features.size() != d) throw ShapeError("episode: inconsistent feature length");
            std::copy(s.features.begin(), s.features.end(), x.data.begin() + r * d);
            ++r;
        }
    return x;
}

EpisodeGraph init_graph(const Episode& episode, const EmbeddingFn& embedding,
                        std::size_t expected_dim) {
    const std::size_t t = episode.size();
    auto nodes = embedding(diff::constant(episode_features(episode)));
    if (nodes->value.rank() != 2 || nodes->value.shape[0] != t) {
        throw ShapeError("init_graph: embedding returned shape " +
                         shape_string(nodes->value.shape) + " for " + std::to_string(t) +
                         " samples");
    }
    if (expected_dim != 0 && nodes->value.shape[1] != expected_dim) {
        throw ShapeError("init_graph: embedding width " + std::to_string(nodes->value.shape[1]) +
                         " does not match node dimension " + std::to_string(expected_dim));
    }

    EpisodeGraph g;
    g.topology = std::make_shared<const EdgeTopology>(t);
    g.support_count = episode.support.size();
    g.way = episode.way;
    g.labels = episode.labels();
    g.node_features = std::move(nodes);

    const auto& topo = *g.topology;
    Array edges({topo.edges(), 2});
    for (std::size_t m = 0; m < topo.edges(); ++m) {
        const std::size_t i = topo.src[m], j = topo.dst[m];
        const bool both_support = i < g.support_count && j < g.support_count;
        if (both_support && g.labels[i] == g.labels[j]) {
            edges.data[2 * m] = 1.0;
            edges.data[2 * m + 1] = 0.0;
        } else if (both_support) {
            edges.data[2 * m] = 0.0;
            edges.data[2 * m + 1] = 1.0;
        } else {
            edges.data[2 * m] = 0.5;
            edges.data[2 * m + 1] = 0.5;
        }
    }
    g.edge_features = diff::constant(std::move(edges));
    return g;
}

}  // namespace dggn
