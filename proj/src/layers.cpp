#include "dggn/layers.hpp"

#include <cmath>

namespace dggn {
namespace {

using diff::Value;

Value uniform_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Array a({rows, cols});
    for (double& x : a.data) x = dist(rng);
    return diff::parameter(std::move(a));
}

Value zero_matrix(std::size_t rows, std::size_t cols) {
    return diff::parameter(Array::zeros({rows, cols}));
}

/// x (R x c) plus the row vector b (1 x c) on every row, as ones * b.
Value add_row_bias(const Value& x, const Value& b) {
    if (!b) return x;
    const auto ones = diff::constant(Array({x->value.shape[0], 1}, 1.0));
    return diff::add(x, diff::matmul(ones, b));
}

/// x (R x in) times W^T (W is out x in).
Value apply_rows(const Value& x, const Value& W) { return diff::matmul(x, diff::transpose(W)); }

GruCellParams make_gru(std::size_t dim, bool bias, bool zero, Rng* rng) {
    auto mat = [&](std::size_t r, std::size_t c) {
        return zero ? zero_matrix(r, c) : uniform_matrix(r, c, *rng);
    };
    GruCellParams g;
    g.Uz = mat(2, 2);
    g.Vz = mat(2, dim);
    g.Ur = mat(2, 2);
    g.Vr = mat(2, dim);
    g.Ue = mat(2, 2);
    g.Ve = mat(2, dim);
    if (bias) {
        g.bz = zero_matrix(1, 2);
        g.br = zero_matrix(1, 2);
        g.be = zero_matrix(1, 2);
    }
    return g;
}

void append_gru(std::vector<std::pair<std::string, Value>>& out, const std::string& prefix,
                const GruCellParams& g) {
    out.emplace_back(prefix + "Uz", g.Uz);
    out.emplace_back(prefix + "Vz", g.Vz);
    out.emplace_back(prefix + "Ur", g.Ur);
    out.emplace_back(prefix + "Vr", g.Vr);
    out.emplace_back(prefix + "Ue", g.Ue);
    out.emplace_back(prefix + "Ve", g.Ve);
    if (g.bz) {
        out.emplace_back(prefix + "bz", g.bz);
        out.emplace_back(prefix + "br", g.br);
        out.emplace_back(prefix + "be", g.be);
    }
}

}  // namespace

std::vector<std::pair<std::string, diff::Value>> named_params(const LayerParams& p) {
    std::vector<std::pair<std::string, Value>> out;
    out.emplace_back("A", p.node.A);
    out.emplace_back("B", p.node.B);
    out.emplace_back("C", p.node.C);
    if (p.node.bias) out.emplace_back("bias", p.node.bias);
    append_gru(out, "gru1.", p.gru1);
    append_gru(out, "gru2.", p.gru2);
    return out;
}

LayerParams init_layer_params(std::size_t dim, bool bias, Rng& rng) {
    LayerParams p;
    p.node.A = uniform_matrix(dim, dim, rng);
    p.node.B = uniform_matrix(dim, dim, rng);
    p.node.C = uniform_matrix(dim, 2, rng);
    if (bias) p.node.bias = zero_matrix(1, dim);
    p.gru1 = make_gru(dim, bias, false, &rng);
    p.gru2 = make_gru(dim, bias, false, &rng);
    return p;
}

LayerParams zero_layer_params(std::size_t dim, bool bias) {
    LayerParams p;
    p.node.A = zero_matrix(dim, dim);
    p.node.B = zero_matrix(dim, dim);
    p.node.C = zero_matrix(dim, 2);
    if (bias) p.node.bias = zero_matrix(1, dim);
    p.gru1 = make_gru(dim, bias, true, nullptr);
    p.gru2 = make_gru(dim, bias, true, nullptr);
    return p;
}

diff::Value node_update(const EpisodeGraph& graph, const NodeUpdateParams& p,
                        const LayerOptions& options) {
    const auto& topo = *graph.topology;
    const auto& v = graph.node_features;
    const auto& e = graph.edge_features;

    // Row m of the edge matrix is the edge src[m] -> dst[m]; it carries the
    // message B v_src into dst, gated by its own feature.
    const auto gate = diff::sigmoid(apply_rows(e, p.C));
    const auto message = diff::gather_rows(apply_rows(v, p.B), topo.src);
    auto incoming = diff::scatter_add_rows(diff::mul(gate, message), topo.dst, topo.nodes);
    if (options.normalize_aggregation && topo.nodes > 1)
        incoming = diff::scale(incoming, 1.0 / static_cast<double>(topo.nodes - 1));

    const auto pre = add_row_bias(diff::add(apply_rows(v, p.A), incoming), p.bias);
    return diff::relu(pre);
}

diff::Value gru_cell(const diff::Value& e, const diff::Value& v, const GruCellParams& p) {
    if (e->value.rank() != 2 || v->value.rank() != 2 || e->value.shape[0] != v->value.shape[0]) {
        throw ShapeError("gru_cell: hidden " + shape_string(e->value.shape) + " and input " +
                         shape_string(v->value.shape) + " must have matching rows");
    }
    const auto z = diff::sigmoid(add_row_bias(diff::add(apply_rows(e, p.Uz), apply_rows(v, p.Vz)), p.bz));
    const auto r = diff::sigmoid(add_row_bias(diff::add(apply_rows(e, p.Ur), apply_rows(v, p.Vr)), p.br));
    const auto candidate = diff::tanh(
        add_row_bias(diff::add(apply_rows(diff::mul(e, r), p.Ue), apply_rows(v, p.Ve)), p.be));
    return diff::add(diff::mul(diff::one_minus(z), e), diff::mul(z, candidate));
}

diff::Value edge_update(const EpisodeGraph& graph, const GruCellParams& gru1,
                        const GruCellParams& gru2) {
    const auto& topo = *graph.topology;
    const auto& v = graph.node_features;
    const auto after_source = gru_cell(graph.edge_features, diff::gather_rows(v, topo.src), gru1);
    return gru_cell(after_source, diff::gather_rows(v, topo.dst), gru2);
}

EpisodeGraph layer_forward(const EpisodeGraph& graph, const LayerParams& params,
                           const LayerOptions& options) {
    EpisodeGraph next = graph;
    next.node_features = diff::add(node_update(graph, params.node, options), graph.node_features);
    next.edge_features =
        diff::add(edge_update(graph, params.gru1, params.gru2), graph.edge_features);
    return next;
}

}  // namespace dggn
