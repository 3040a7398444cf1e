#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dggn/autodiff.hpp"
#include "dggn/episodes.hpp"
#include "dggn/graph.hpp"

namespace dggn {

/// Weights of the gated node aggregation. A, B are D x D; C is D x 2.
/// bias (1 x D) is only present when biases are enabled.
struct NodeUpdateParams {
    diff::Value A, B, C;
    diff::Value bias;
};

/// One GRU cell with a 2-d hidden state (the edge feature) and a D-d input
/// (a node feature). U_* are 2 x 2, V_* are 2 x D; b_* (1 x 2) are optional.
struct GruCellParams {
    diff::Value Uz, Vz, Ur, Vr, Ue, Ve;
    diff::Value bz, br, be;
};

struct LayerParams {
    NodeUpdateParams node;
    GruCellParams gru1;  // consumes the source node
    GruCellParams gru2;  // consumes the destination node
};

struct LayerOptions {
    /// Divide the neighbour sum by T-1 (off by default).
    bool normalize_aggregation = false;
};

/// Named views of every parameter tensor, e.g. "A", "gru1.Uz".
std::vector<std::pair<std::string, diff::Value>> named_params(const LayerParams& p);

/// Each matrix uniform in +-1/sqrt(fan_in); biases start at zero.
LayerParams init_layer_params(std::size_t dim, bool bias, Rng& rng);
LayerParams zero_layer_params(std::size_t dim, bool bias);

/// ReLU(A v_i + sum_{j -> i} sigmoid(C e_ji) * (B v_j)) for every node i,
/// where e_ji is the feature of the incoming edge j -> i. Reads layer-input
/// features only.
diff::Value node_update(const EpisodeGraph& graph, const NodeUpdateParams& p,
                        const LayerOptions& options = {});

/// Row-wise GRU step: e is R x 2 (hidden), v is R x D (input).
///   z = sigmoid(U_z e + V_z v), r = sigmoid(U_r e + V_r v)
///   cand = tanh(U_e (e * r) + V_e v)
///   out = (1 - z) * e + z * cand
diff::Value gru_cell(const diff::Value& e, const diff::Value& v, const GruCellParams& p);

/// e'_ij = GRU2(GRU1(e_ij, v_i), v_j) for every directed edge i -> j.
diff::Value edge_update(const EpisodeGraph& graph, const GruCellParams& gru1,
                        const GruCellParams& gru2);

/// Both updates read the layer-input graph; each adds its input back.
EpisodeGraph layer_forward(const EpisodeGraph& graph, const LayerParams& params,
                           const LayerOptions& options = {});

}  // namespace dggn
