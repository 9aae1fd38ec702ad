#pragma once

// Central finite-difference oracle for gradient tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mffd/ops.hpp"
#include "mffd/tensor.hpp"

namespace mffd::test {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Relative error with a small absolute floor so exact zeros compare sanely.
inline double rel_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares autodiff gradients of scalar f(inputs) against central differences
/// for every element of every input (or `max_per_input` evenly spaced ones).
inline GradCheckResult gradcheck(const std::function<Tensor(std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                                 double h = 1e-5, std::size_t max_per_input = 0) {
    Tape::current().clear();
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor loss = f(inputs);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) {
        if (t.has_grad())
            analytic.emplace_back(t.grad().begin(), t.grad().end());
        else
            analytic.emplace_back(t.numel(), 0.0);
    }

    GradCheckResult res;
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto data = inputs[k].mutable_data();
        const std::size_t n = data.size();
        const std::size_t step = (max_per_input && n > max_per_input) ? n / max_per_input : 1;
        for (std::size_t i = 0; i < n; i += step) {
            const double orig = data[i];
            data[i] = orig + h;
            const double fp = f(inputs).item();
            data[i] = orig - h;
            const double fm = f(inputs).item();
            data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            res.max_rel_error = std::max(res.max_rel_error, rel_error(analytic[k][i], numeric));
            ++res.checked;
        }
    }
    return res;
}

/// Fixed random projection so vector-valued ops reduce to a generic scalar.
inline Tensor project(const Tensor& y, std::uint64_t seed = 99) {
    Rng rng(seed);
    Tensor r = Tensor::uniform(y.shape(), rng, -1.0, 1.0);
    return ops::sum(ops::mul(y, r));
}

}  // namespace mffd::test
