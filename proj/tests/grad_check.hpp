#pragma once

// Central-difference gradient checking shared by the unit tests and the
// acceptance gate. fn must rebuild the scalar loss from the current leaf
// values on every call.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "diffcal/tensor.hpp"

namespace diffcal::testing {

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
    std::string worst; // "leaf/param index" of the worst probe
};

inline GradCheck fd_check(const std::vector<Tensor>& leaves,
                          const std::function<Tensor()>& fn,
                          int probes_per_leaf, double h, Rng& rng) {
    GradCheck res;
    Tensor loss = fn();
    zero_grads(leaves);
    backward(loss);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor leaf = leaves[li];
        const std::vector<double> analytic = leaf.grad();
        for (int p = 0; p < probes_per_leaf; ++p) {
            const std::size_t i = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(leaf.size()) - 1));
            const double saved = leaf.value()[i];
            leaf.value()[i] = saved + h;
            const double up = fn().item();
            leaf.value()[i] = saved - h;
            const double dn = fn().item();
            leaf.value()[i] = saved;
            const double fd = (up - dn) / (2.0 * h);
            const double an = analytic[i];
            const double den =
                std::max({1.0, std::fabs(an), std::fabs(fd)});
            const double rel = std::fabs(an - fd) / den;
            ++res.checked;
            if (rel > res.max_rel) {
                res.max_rel = rel;
                res.worst = std::to_string(li) + "/" + std::to_string(i);
            }
        }
    }
    return res;
}

} // namespace diffcal::testing
