#include "dggn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace dggn {
namespace {

diff::Value copy_leaf(const diff::Value& v) {
    return v ? diff::parameter(v->value) : nullptr;
}

GruCellParams clone_gru(const GruCellParams& g) {
    return {copy_leaf(g.Uz), copy_leaf(g.Vz), copy_leaf(g.Ur), copy_leaf(g.Vr), copy_leaf(g.Ue),
            copy_leaf(g.Ve), copy_leaf(g.bz), copy_leaf(g.br), copy_leaf(g.be)};
}

diff::Value uniform_param(std::size_t rows, std::size_t cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Array a({rows, cols});
    for (double& x : a.data) x = dist(rng);
    return diff::parameter(std::move(a));
}

}  // namespace

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (feature_dim < 1) fail("feature_dim must be >= 1");
    if (way < 1) fail("way must be >= 1");
    if (shot < 1) fail("shot must be >= 1");
    if (query < 1) fail("query must be >= 1");
    if (!allow_unbalanced && query % way != 0)
        fail("query (" + std::to_string(query) + ") must be divisible by way (" +
             std::to_string(way) + ") unless allow_unbalanced is set");
    if (embedding == EmbeddingKind::identity && input_dim != 0 && input_dim != feature_dim)
        fail("identity embedding needs input_dim == feature_dim");
    if (embedding == EmbeddingKind::mlp && embed_hidden < 1) fail("embed_hidden must be >= 1");
}

std::vector<std::pair<std::string, diff::Value>> ModelParams::named() const {
    std::vector<std::pair<std::string, diff::Value>> out;
    if (embedding.kind == EmbeddingKind::mlp) {
        out.emplace_back("embed.W1", embedding.W1);
        out.emplace_back("embed.W2", embedding.W2);
    }
    for (std::size_t l = 0; l < layers.size(); ++l)
        for (auto& [name, value] : named_params(layers[l]))
            out.emplace_back("layer" + std::to_string(l) + "." + name, value);
    return out;
}

std::vector<diff::Value> ModelParams::values() const {
    std::vector<diff::Value> out;
    for (auto& [name, value] : named()) out.push_back(value);
    return out;
}

ModelParams ModelParams::clone() const {
    ModelParams out;
    out.embedding = {embedding.kind, copy_leaf(embedding.W1), copy_leaf(embedding.W2)};
    for (const auto& l : layers) {
        LayerParams c;
        c.node = {copy_leaf(l.node.A), copy_leaf(l.node.B), copy_leaf(l.node.C),
                  copy_leaf(l.node.bias)};
        c.gru1 = clone_gru(l.gru1);
        c.gru2 = clone_gru(l.gru2);
        out.layers.push_back(std::move(c));
    }
    return out;
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
    config.validate();
    ModelParams p;
    p.embedding.kind = config.embedding;
    if (config.embedding == EmbeddingKind::mlp) {
        p.embedding.W1 = uniform_param(config.embed_hidden, config.raw_dim(), rng);
        p.embedding.W2 = uniform_param(config.feature_dim, config.embed_hidden, rng);
    }
    for (std::size_t l = 0; l < config.num_layers; ++l)
        p.layers.push_back(init_layer_params(config.feature_dim, config.bias, rng));
    return p;
}

ModelParams zero_params(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.embedding.kind = config.embedding;
    if (config.embedding == EmbeddingKind::mlp) {
        p.embedding.W1 = diff::parameter(Array::zeros({config.embed_hidden, config.raw_dim()}));
        p.embedding.W2 = diff::parameter(Array::zeros({config.feature_dim, config.embed_hidden}));
    }
    for (std::size_t l = 0; l < config.num_layers; ++l)
        p.layers.push_back(zero_layer_params(config.feature_dim, config.bias));
    return p;
}

diff::Value vote_probabilities(const EpisodeGraph& graph) {
    const auto& topo = *graph.topology;
    const std::size_t support = graph.support_count;
    const std::size_t queries = graph.size() - support;
    const std::size_t way = graph.way;
    if (queries == 0) throw ShapeError("predict: episode has no query nodes");

    // Flat index of e1 on every support -> query edge, laid out C x NK.
    std::vector<std::size_t> index;
    index.reserve(queries * support);
    for (std::size_t q = 0; q < queries; ++q)
        for (std::size_t s = 0; s < support; ++s) index.push_back(2 * topo.row(s, support + q));
    const auto votes = diff::sigmoid(diff::gather(graph.edge_features, index, {queries, support}));

    Array assign({support, way});
    for (std::size_t s = 0; s < support; ++s) {
        if (graph.labels[s] >= way) throw ShapeError("predict: support label out of range");
        assign.at(s, graph.labels[s]) = 1.0;
    }
    return diff::softmax(diff::matmul(votes, diff::constant(std::move(assign))));
}

namespace {
Prediction to_prediction(const Array& probs) {
    Prediction p{probs, {}};
    const std::size_t cols = probs.cols();
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c)
            if (probs.at(r, c) > probs.at(r, best)) best = c;
        p.labels.push_back(best);
    }
    return p;
}
}  // namespace

Prediction predict(const EpisodeGraph& graph) {
    diff::NoGradGuard guard;
    return to_prediction(vote_probabilities(graph)->value);
}

diff::Value edge_loss(const EpisodeGraph& graph, const EdgeLabels& labels) {
    const auto& topo = *graph.topology;
    if (labels.nodes != topo.nodes)
        throw ShapeError("loss: edge labels for " + std::to_string(labels.nodes) +
                         " nodes, graph has " + std::to_string(topo.nodes));
    Array target({topo.edges(), 2});
    for (std::size_t m = 0; m < topo.edges(); ++m) {
        const double y = labels.at(topo.src[m], topo.dst[m]);
        target.data[2 * m] = y;
        target.data[2 * m + 1] = 1.0 - y;
    }
    return diff::bce(diff::sigmoid(graph.edge_features), target);
}

diff::Value loss(const std::vector<EpisodeGraph>& graphs, const EdgeLabels& labels,
                 LossLayers which) {
    if (graphs.size() < 2) throw std::invalid_argument("loss: need at least one layer output");
    if (which == LossLayers::final_only) return edge_loss(graphs.back(), labels);
    diff::Value total = edge_loss(graphs[1], labels);
    for (std::size_t l = 2; l < graphs.size(); ++l)
        total = diff::add(total, edge_loss(graphs[l], labels));
    return diff::scale(total, 1.0 / static_cast<double>(graphs.size() - 1));
}

void check_episode(const Episode& episode, const ModelConfig& config) {
    validate_episode(episode);
    if (episode.way != config.way || episode.shot != config.shot ||
        episode.query_count != config.query) {
        throw ShapeError("episode is " + std::to_string(episode.way) + "-way " +
                         std::to_string(episode.shot) + "-shot with " +
                         std::to_string(episode.query_count) + " queries; model expects " +
                         std::to_string(config.way) + "-way " + std::to_string(config.shot) +
                         "-shot with " + std::to_string(config.query));
    }
    if (episode.dim() != config.raw_dim())
        throw ShapeError("episode feature width " + std::to_string(episode.dim()) +
                         " does not match model input width " + std::to_string(config.raw_dim()));
}

ForwardResult forward(const Episode& episode, const ModelParams& params,
                      const ModelConfig& config) {
    if (episode.dim() != config.raw_dim())
        throw ShapeError("episode feature width " + std::to_string(episode.dim()) +
                         " does not match model input width " + std::to_string(config.raw_dim()));
    if (params.layers.size() != config.num_layers)
        throw ShapeError("model has " + std::to_string(params.layers.size()) +
                         " layers, config expects " + std::to_string(config.num_layers));

    ForwardResult out;
    const auto embedding = [&](const diff::Value& x) { return embed(params.embedding, x); };
    out.graphs.push_back(init_graph(episode, embedding, config.feature_dim));
    const LayerOptions options{config.normalize_aggregation};
    for (const auto& layer : params.layers)
        out.graphs.push_back(layer_forward(out.graphs.back(), layer, options));
    out.probs = vote_probabilities(out.graphs.back());
    out.prediction = to_prediction(out.probs->value);
    return out;
}

}  // namespace dggn
