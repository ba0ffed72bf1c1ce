#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mbsl/tensor.hpp"

namespace mbsl::testing {

struct GradCheckResult {
    std::size_t total = 0;
    std::size_t bad = 0;
    double worst_rel = 0.0;

    double pass_fraction() const {
        return total == 0 ? 1.0 : 1.0 - static_cast<double>(bad) / static_cast<double>(total);
    }
    bool all_ok() const { return bad == 0; }
};

inline double rel_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
    return std::fabs(analytic - numeric) / denom;
}

// Central-difference gradient check. `forward` must rebuild the whole graph
// from the current leaf values on the given tape and return the scalar loss.
// One recorded pass collects analytic gradients, then every leaf entry is
// perturbed by +-h with evaluation-mode passes.
inline GradCheckResult gradcheck_loss(const std::function<Tensor(Tape&)>& forward,
                                      std::vector<Tensor> leaves, double h = 1e-5,
                                      double tol = 1e-4) {
    GradCheckResult result;

    std::vector<std::vector<double>> analytic;
    {
        for (Tensor& leaf : leaves) leaf.zero_grad();
        Tape tape;
        Tensor loss = forward(tape);
        tape.backward(loss);
        for (Tensor& leaf : leaves) analytic.push_back(leaf.grad());
    }

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor& leaf = leaves[li];
        for (std::size_t i = 0; i < leaf.data().size(); ++i) {
            const double keep = leaf.data()[i];
            leaf.data()[i] = keep + h;
            Tape tp(false);
            const double up = forward(tp).item();
            leaf.data()[i] = keep - h;
            Tape tm(false);
            const double down = forward(tm).item();
            leaf.data()[i] = keep;

            const double numeric = (up - down) / (2.0 * h);
            const double rel = rel_error(analytic[li][i], numeric);
            result.total += 1;
            if (rel > tol) result.bad += 1;
            if (rel > result.worst_rel) result.worst_rel = rel;
        }
    }
    return result;
}

}  // namespace mbsl::testing
