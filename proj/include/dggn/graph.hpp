#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "dggn/autodiff.hpp"
#include "dggn/episodes.hpp"

namespace dggn {

/// Fully connected directed graph without self-edges. Edge rows are ordered
/// by source, then destination: row(i, j) = i*(T-1) + (j < i ? j : j-1).
struct EdgeTopology {
    std::size_t nodes = 0;
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;

    explicit EdgeTopology(std::size_t num_nodes);
    std::size_t edges() const { return src.size(); }
    std::size_t row(std::size_t i, std::size_t j) const;
};

/// Ground-truth same-class indicators y_ij. The diagonal is stored as 0 and
/// carries no meaning.
struct EdgeLabels {
    std::size_t nodes = 0;
    std::vector<std::uint8_t> y;  // nodes x nodes, row-major

    std::uint8_t at(std::size_t i, std::size_t j) const { return y[i * nodes + j]; }
};

EdgeLabels edge_labels(const std::vector<std::size_t>& labels);

/// Node and edge state of one episode at one layer.
///
/// Nodes 0..support_count-1 are the support set, the rest are queries.
/// edge_features row topology->row(i, j) holds e_ij for the edge i -> j.
struct EpisodeGraph {
    diff::Value node_features;  // T x D
    diff::Value edge_features;  // (T*(T-1)) x 2
    std::shared_ptr<const EdgeTopology> topology;
    std::size_t support_count = 0;
    std::size_t way = 0;
    std::vector<std::size_t> labels;  // query labels are for loss and evaluation only

    std::size_t size() const { return topology->nodes; }
    std::size_t dim() const { return node_features->value.shape[1]; }
    std::array<double, 2> edge(std::size_t i, std::size_t j) const;
    /// T x T, true iff i != j.
    std::vector<bool> edge_mask() const;
    /// Dense T x T x 2 copy of the edge features; diagonal entries are zero.
    Array edge_tensor() const;
};

enum class EmbeddingKind { identity, mlp };

/// Backbone slot: maps raw features (T x D_in) to node features (T x D).
/// With the mlp kind, v = W2 * relu(W1 * x) per row; W1 is H x D_in and
/// W2 is D x H.
struct EmbeddingParams {
    EmbeddingKind kind = EmbeddingKind::identity;
    diff::Value W1;
    diff::Value W2;
};

diff::Value embed_identity(const diff::Value& x);
diff::Value embed_mlp(const diff::Value& x, const diff::Value& W1, const diff::Value& W2);
diff::Value embed(const EmbeddingParams& params, const diff::Value& x);

using EmbeddingFn = std::function<diff::Value(const diff::Value&)>;

/// Raw features of an episode as a T x D_in matrix, support first.
Array episode_features(const Episode& episode);

/// Builds the layer-0 graph. Support-support edges get (1,0) for the same
/// class and (0,1) otherwise; every edge touching a query gets (0.5,0.5).
/// If expected_dim is non-zero the embedding output width must equal it.
EpisodeGraph init_graph(const Episode& episode, const EmbeddingFn& embedding,
                        std::size_t expected_dim = 0);

}  // namespace dggn
