#include "dggn/array.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace dggn {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Array::Array(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Array::Array(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_size(shape) != data.size()) {
        throw ShapeError("array of shape " + shape_string(shape) + " given " +
                         std::to_string(data.size()) + " values");
    }
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Array({rows, cols}, std::vector<double>(values));
}

Array Array::vector(std::initializer_list<double> values) {
    return Array({values.size()}, std::vector<double>(values));
}

Array Array::identity(std::size_t n) {
    Array out({n, n});
    for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
    return out;
}

std::size_t Array::rows() const {
    if (shape.size() == 2) return shape[0];
    if (shape.size() == 1) return 1;
    throw ShapeError("rows() on array of shape " + shape_string(shape));
}

std::size_t Array::cols() const {
    if (shape.size() == 2) return shape[1];
    if (shape.size() == 1) return shape[0];
    throw ShapeError("cols() on array of shape " + shape_string(shape));
}

bool Array::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace dggn
