#pragma once

// Reverse-mode differentiation over dense arrays.
//
// A Value is a shared handle to a Node. Operations build the graph eagerly;
// backward() walks it in reverse topological order. Shapes are always
// explicit: no operation broadcasts.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "dggn/array.hpp"

namespace dggn::diff {

struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
    Array value;
    Array grad;  // allocated lazily; same shape as value once touched
    bool requires_grad = false;
    std::vector<Value> parents;
    std::function<void(Node&)> backward_fn;
    std::string_view op = "leaf";

    bool is_leaf() const { return parents.empty(); }
    /// Returns grad, allocating a zero buffer on first use.
    Array& grad_buffer();
};

Value constant(Array value);
Value parameter(Array value);
/// Copy of the value with no history and requires_grad == false.
Value detach(const Value& a);

enum class Activation { sigmoid, tanh, relu };
enum class Pointwise { add, sub, mul };

Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value elementwise(const Value& a, const Value& b, Pointwise op);
inline Value add(const Value& a, const Value& b) { return elementwise(a, b, Pointwise::add); }
inline Value sub(const Value& a, const Value& b) { return elementwise(a, b, Pointwise::sub); }
inline Value mul(const Value& a, const Value& b) { return elementwise(a, b, Pointwise::mul); }
Value scale(const Value& a, double factor);
/// 1 - a, pointwise.
Value one_minus(const Value& a);

Value activation(const Value& a, Activation kind);
inline Value sigmoid(const Value& a) { return activation(a, Activation::sigmoid); }
inline Value tanh(const Value& a) { return activation(a, Activation::tanh); }
inline Value relu(const Value& a) { return activation(a, Activation::relu); }

/// Softmax of a vector, or of each row of a matrix. Uses max subtraction.
Value softmax(const Value& a);

inline constexpr double kBceEpsilon = 1e-7;
/// Mean binary cross-entropy of probabilities p (clamped to [eps, 1-eps])
/// against targets y of the same shape. Returns a scalar of shape [1].
Value bce(const Value& p, const Array& y);

/// Sum of all entries as a scalar of shape [1].
Value sum(const Value& a);

/// Rows of a matrix selected by index (rows may repeat).
Value gather_rows(const Value& a, std::span<const std::size_t> rows);
/// out[rows[k]] += a[k] for each row k of a; out has out_rows rows.
Value scatter_add_rows(const Value& a, std::span<const std::size_t> rows, std::size_t out_rows);
/// Flat gather: out.data[k] = a.data[index[k]], reshaped to `shape`.
Value gather(const Value& a, std::span<const std::size_t> index, Shape shape);

/// Accumulates d(root)/d(node) into every reachable node that requires
/// gradients. Leaf gradients accumulate across calls; intermediate
/// gradients are reset on every call.
void backward(const Value& root);
void zero_grads(std::span<const Value> nodes);

/// While alive on the current thread, operations record no history.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace testing {
/// Mutation hook used to prove the gradient checker catches broken backward
/// rules: flips the sign of the tanh local derivative.
void set_tanh_backward_sign_flip(bool enabled);
}  // namespace testing

}  // namespace dggn::diff
