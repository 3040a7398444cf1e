#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dggn/autodiff.hpp"
#include "dggn/episodes.hpp"
#include "dggn/graph.hpp"
#include "dggn/layers.hpp"

namespace dggn {

enum class LossLayers { final_only, all };

struct ModelConfig {
    std::size_t num_layers = 3;
    std::size_t feature_dim = 16;  // node dimension D
    std::size_t input_dim = 0;     // raw feature width; 0 means feature_dim
    std::size_t way = 5;
    std::size_t shot = 1;
    std::size_t query = 5;
    bool allow_unbalanced = false;
    EmbeddingKind embedding = EmbeddingKind::identity;
    std::size_t embed_hidden = 32;
    bool bias = false;
    bool normalize_aggregation = false;
    LossLayers loss_layers = LossLayers::final_only;

    std::size_t raw_dim() const { return input_dim == 0 ? feature_dim : input_dim; }
    EpisodeShape episode_shape() const { return {way, shot, query, allow_unbalanced}; }
    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

struct ModelParams {
    EmbeddingParams embedding;
    std::vector<LayerParams> layers;

    /// Every trainable tensor as ("embed.W1", ...), ("layer0.A", ...), ...
    std::vector<std::pair<std::string, diff::Value>> named() const;
    std::vector<diff::Value> values() const;
    /// Deep copy with fresh leaves.
    ModelParams clone() const;
};

ModelParams init_params(const ModelConfig& config, Rng& rng);
ModelParams zero_params(const ModelConfig& config);

struct Prediction {
    Array probs;                     // C x N, rows on the simplex
    std::vector<std::size_t> labels; // argmax per query, first index on ties
};

struct ForwardResult {
    std::vector<EpisodeGraph> graphs;  // graphs[0] is the initial graph, back() the final one
    diff::Value probs;                 // differentiable C x N
    Prediction prediction;

    const EpisodeGraph& final_graph() const { return graphs.back(); }
};

/// Weighted vote: score_ik = sum over support j with label k of
/// sigmoid(e1 on edge j -> i); probs_i = softmax(score_i).
diff::Value vote_probabilities(const EpisodeGraph& graph);
Prediction predict(const EpisodeGraph& graph);

/// Mean BCE over every directed edge: sigmoid(e1) against y_ij and
/// sigmoid(e2) against 1 - y_ij.
diff::Value edge_loss(const EpisodeGraph& graph, const EdgeLabels& labels);
/// Final-layer loss, or the mean of per-layer losses (layers 1..L) for
/// LossLayers::all. graphs[0] never contributes.
diff::Value loss(const std::vector<EpisodeGraph>& graphs, const EdgeLabels& labels,
                 LossLayers which);

/// Initial graph, L layers, then the vote.
ForwardResult forward(const Episode& episode, const ModelParams& params, const ModelConfig& config);

/// Shape and dimension checks between an episode and the model.
void check_episode(const Episode& episode, const ModelConfig& config);

}  // namespace dggn
