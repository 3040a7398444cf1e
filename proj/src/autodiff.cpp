#include "dggn/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>
#include <utility>

namespace dggn::diff {
namespace {

thread_local bool g_no_grad = false;
std::atomic<bool> g_tanh_sign_flip{false};

std::string describe(std::string_view op, const Value& a, const Value& b) {
    return std::string(op) + ": shape mismatch " + shape_string(a->value.shape) + " vs " +
           shape_string(b->value.shape);
}

void require_matrix(std::string_view op, const Value& a) {
    if (a->value.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(a->value.shape));
    }
}

Value make_node(Array value, std::string_view op, std::vector<Value> parents,
                std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (!g_no_grad) {
        for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return node;
}

double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Array& Node::grad_buffer() {
    if (grad.shape != value.shape) grad = Array::zeros(value.shape);
    return grad;
}

Value constant(Array value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = "constant";
    return node;
}

Value parameter(Array value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->op = "parameter";
    return node;
}

Value detach(const Value& a) { return constant(a->value); }

Value matmul(const Value& a, const Value& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t m = a->value.shape[0], k = a->value.shape[1], n = b->value.shape[1];
    if (b->value.shape[0] != k) throw ShapeError(describe("matmul", a, b));

    Array out({m, n});
    const double* pa = a->value.data.data();
    const double* pb = b->value.data.data();
    double* po = out.data.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
            const double av = pa[i * k + t];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) po[i * n + j] += av * pb[t * n + j];
        }
    }
    return make_node(std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
        const Value& a = self.parents[0];
        const Value& b = self.parents[1];
        const double* g = self.grad.data.data();
        if (a->requires_grad) {
            // dA = G * B^T
            double* ga = a->grad_buffer().data.data();
            const double* pb = b->value.data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb[t * n + j];
                    ga[i * k + t] += acc;
                }
        }
        if (b->requires_grad) {
            // dB = A^T * G
            double* gb = b->grad_buffer().data.data();
            const double* pa = a->value.data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    const double av = pa[i * k + t];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[t * n + j] += av * g[i * n + j];
                }
        }
    });
}

Value transpose(const Value& a) {
    require_matrix("transpose", a);
    const std::size_t r = a->value.shape[0], c = a->value.shape[1];
    Array out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = a->value.data[i * c + j];
    return make_node(std::move(out), "transpose", {a}, [r, c](Node& self) {
        auto& ga = self.parents[0]->grad_buffer().data;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad.data[j * r + i];
    });
}

Value elementwise(const Value& a, const Value& b, Pointwise op) {
    if (a->value.shape != b->value.shape) {
        constexpr std::string_view names[] = {"add", "sub", "mul"};
        throw ShapeError(describe(names[static_cast<int>(op)], a, b));
    }
    Array out(a->value.shape);
    const auto& x = a->value.data;
    const auto& y = b->value.data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        switch (op) {
            case Pointwise::add: out.data[i] = x[i] + y[i]; break;
            case Pointwise::sub: out.data[i] = x[i] - y[i]; break;
            case Pointwise::mul: out.data[i] = x[i] * y[i]; break;
        }
    }
    return make_node(std::move(out), "elementwise", {a, b}, [op](Node& self) {
        const Value& a = self.parents[0];
        const Value& b = self.parents[1];
        const auto& g = self.grad.data;
        if (a->requires_grad) {
            auto& ga = a->grad_buffer().data;
            if (op == Pointwise::mul) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b->value.data[i];
            } else {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
        }
        if (b->requires_grad) {
            auto& gb = b->grad_buffer().data;
            switch (op) {
                case Pointwise::add:
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    break;
                case Pointwise::sub:
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                    break;
                case Pointwise::mul:
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a->value.data[i];
                    break;
            }
        }
    });
}

Value scale(const Value& a, double factor) {
    Array out = a->value;
    for (double& x : out.data) x *= factor;
    return make_node(std::move(out), "scale", {a}, [factor](Node& self) {
        auto& ga = self.parents[0]->grad_buffer().data;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad.data[i];
    });
}

Value one_minus(const Value& a) {
    Array out = a->value;
    for (double& x : out.data) x = 1.0 - x;
    return make_node(std::move(out), "one_minus", {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer().data;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= self.grad.data[i];
    });
}

Value activation(const Value& a, Activation kind) {
    Array out = a->value;
    switch (kind) {
        case Activation::sigmoid:
            for (double& x : out.data) x = sigmoid_scalar(x);
            break;
        case Activation::tanh:
            for (double& x : out.data) x = std::tanh(x);
            break;
        case Activation::relu:
            for (double& x : out.data) x = x > 0.0 ? x : 0.0;
            break;
    }
    constexpr std::string_view names[] = {"sigmoid", "tanh", "relu"};
    return make_node(std::move(out), names[static_cast<int>(kind)], {a}, [kind](Node& self) {
        const Value& a = self.parents[0];
        auto& ga = a->grad_buffer().data;
        const auto& y = self.value.data;
        const auto& g = self.grad.data;
        switch (kind) {
            case Activation::sigmoid:
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                break;
            case Activation::tanh: {
                const double sign = g_tanh_sign_flip.load(std::memory_order_relaxed) ? -1.0 : 1.0;
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += sign * g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Activation::relu:
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (a->value.data[i] > 0.0) ga[i] += g[i];
                break;
        }
    });
}

Value softmax(const Value& a) {
    const std::size_t rank = a->value.rank();
    if (rank != 1 && rank != 2) {
        throw ShapeError("softmax: expected a vector or matrix, got shape " +
                         shape_string(a->value.shape));
    }
    const std::size_t rows = a->value.rows(), cols = a->value.cols();
    if (cols == 0) throw ShapeError("softmax: empty input");
    Array out(a->value.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a->value.data.data() + r * cols;
        double* y = out.data.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = std::exp(x[c] - mx);
            total += y[c];
        }
        for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
    }
    return make_node(std::move(out), "softmax", {a}, [rows, cols](Node& self) {
        auto& ga = self.parents[0]->grad_buffer().data;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data.data() + r * cols;
            const double* g = self.grad.data.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[c] * (g[c] - dot);
        }
    });
}

Value bce(const Value& p, const Array& y) {
    if (p->value.shape != y.shape) {
        throw ShapeError("bce: shape mismatch " + shape_string(p->value.shape) + " vs " +
                         shape_string(y.shape));
    }
    const std::size_t n = y.size();
    if (n == 0) throw ShapeError("bce: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double q = std::clamp(p->value.data[i], kBceEpsilon, 1.0 - kBceEpsilon);
        total += y.data[i] * std::log(q) + (1.0 - y.data[i]) * std::log(1.0 - q);
    }
    Array out({1}, -total / static_cast<double>(n));
    return make_node(std::move(out), "bce", {p}, [y, n](Node& self) {
        const Value& p = self.parents[0];
        auto& gp = p->grad_buffer().data;
        const double g = self.grad.data[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double raw = p->value.data[i];
            // Gradient is zero wherever the clamp is active.
            if (raw < kBceEpsilon || raw > 1.0 - kBceEpsilon) continue;
            gp[i] += g * (-(y.data[i] / raw) + (1.0 - y.data[i]) / (1.0 - raw));
        }
    });
}

Value sum(const Value& a) {
    double total = 0.0;
    for (double x : a->value.data) total += x;
    return make_node(Array({1}, total), "sum", {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer().data;
        const double g = self.grad.data[0];
        for (double& x : ga) x += g;
    });
}

Value gather_rows(const Value& a, std::span<const std::size_t> rows) {
    require_matrix("gather_rows", a);
    const std::size_t n = a->value.shape[0], c = a->value.shape[1];
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Array out({idx.size(), c});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= n) {
            throw ShapeError("gather_rows: row " + std::to_string(idx[k]) + " out of range for " +
                             shape_string(a->value.shape));
        }
        std::copy_n(a->value.data.begin() + idx[k] * c, c, out.data.begin() + k * c);
    }
    return make_node(std::move(out), "gather_rows", {a}, [idx = std::move(idx), c](Node& self) {
        auto& ga = self.parents[0]->grad_buffer().data;
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t j = 0; j < c; ++j) ga[idx[k] * c + j] += self.grad.data[k * c + j];
    });
}

Value scatter_add_rows(const Value& a, std::span<const std::size_t> rows, std::size_t out_rows) {
    require_matrix("scatter_add_rows", a);
    if (rows.size() != a->value.shape[0]) {
        throw ShapeError("scatter_add_rows: " + std::to_string(rows.size()) +
                         " indices for shape " + shape_string(a->value.shape));
    }
    const std::size_t c = a->value.shape[1];
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Array out({out_rows, c});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= out_rows) {
            throw ShapeError("scatter_add_rows: target row " + std::to_string(idx[k]) +
                             " out of range " + std::to_string(out_rows));
        }
        for (std::size_t j = 0; j < c; ++j) out.data[idx[k] * c + j] += a->value.data[k * c + j];
    }
    return make_node(std::move(out), "scatter_add_rows", {a},
                     [idx = std::move(idx), c](Node& self) {
                         auto& ga = self.parents[0]->grad_buffer().data;
                         for (std::size_t k = 0; k < idx.size(); ++k)
                             for (std::size_t j = 0; j < c; ++j)
                                 ga[k * c + j] += self.grad.data[idx[k] * c + j];
                     });
}

Value gather(const Value& a, std::span<const std::size_t> index, Shape shape) {
    if (shape_size(shape) != index.size()) {
        throw ShapeError("gather: " + std::to_string(index.size()) + " indices for shape " +
                         shape_string(shape));
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    Array out(std::move(shape));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= a->value.size()) {
            throw ShapeError("gather: index " + std::to_string(idx[k]) + " out of range for " +
                             shape_string(a->value.shape));
        }
        out.data[k] = a->value.data[idx[k]];
    }
    return make_node(std::move(out), "gather", {a}, [idx = std::move(idx)](Node& self) {
        auto& ga = self.parents[0]->grad_buffer().data;
        for (std::size_t k = 0; k < idx.size(); ++k) ga[idx[k]] += self.grad.data[k];
    });
}

void backward(const Value& root) {
    if (root->value.size() != 1) {
        throw ShapeError("backward: root must be scalar, got shape " +
                         shape_string(root->value.shape));
    }
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order)
        if (!node->is_leaf()) node->grad = Array::zeros(node->value.shape);
    root->grad_buffer().data[0] += root->is_leaf() ? 1.0 : 0.0;
    if (!root->is_leaf()) root->grad.data[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

void zero_grads(std::span<const Value> nodes) {
    for (const auto& n : nodes) n->grad = Array::zeros(n->value.shape);
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }

namespace testing {
void set_tanh_backward_sign_flip(bool enabled) {
    g_tanh_sign_flip.store(enabled, std::memory_order_relaxed);
}
}  // namespace testing

}  // namespace dggn::diff
