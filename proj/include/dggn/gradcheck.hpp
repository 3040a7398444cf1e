#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dggn/autodiff.hpp"
#include "dggn/model.hpp"

namespace dggn {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;
/// Denominator floor of relative_error; below it the error is effectively
/// absolute.
inline constexpr double kRelativeErrorFloor = 1e-6;

/// |a - n| / max(|a|, |n|, kRelativeErrorFloor)
double relative_error(double analytic, double numeric);

/// Central differences of f with respect to every entry of x->value.
/// f is evaluated with x perturbed in place; x is restored afterwards.
Array numeric_gradient(const std::function<double()>& f, const diff::Value& x,
                       double step = kGradcheckStep);

/// Smallest |input| over all relu nodes reachable from root. Used to reject
/// draws where a finite-difference step could cross a kink.
double min_relu_margin(const diff::Value& root);

struct GradcheckOptions {
    std::size_t way = 2;
    std::size_t shot = 1;
    std::size_t query = 0;  // 0: one query per class
    std::size_t dim = 4;
    std::vector<std::size_t> depths{1, 2, 3};
    std::size_t draws = 100;  // per depth
    std::uint64_t seed = 0;
    bool bias = false;
    LossLayers loss_layers = LossLayers::final_only;
    double step = kGradcheckStep;
    double tolerance = kGradcheckTolerance;
};

struct GroupError {
    std::size_t depth = 0;
    std::string group;  // e.g. "gru1.Uz" or "embed.W1", pooled over layers
    double max_error = 0.0;
    std::string worst_tensor;  // full tensor name within the group
};

struct GradcheckReport {
    std::vector<GroupError> groups;
    std::size_t rejected_draws = 0;  // redrawn because of a relu kink
    double worst_error = 0.0;
    std::string worst;  // "L=<depth> <tensor>"
    bool passed = false;
};

/// Full-model finite-difference check on random micro-episodes with an mlp
/// embedding, so embedding weights are covered too.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace dggn
