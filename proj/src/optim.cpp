// SPDX-License-Identifier: Apache-2.0
#include "gmu/optim.hpp"

#include <cmath>
#include <string>

namespace gmu {

void adam_step(std::span<Parameter* const> params, AdamState& s) {
    if (!s.m.empty() && s.m.size() != params.size())
        throw std::invalid_argument("adam_step: parameter count changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter& p = *params[i];
        if (p.grad.shape() != p.value.shape())
            throw ShapeError("adam_step: gradient of " + p.name + " has shape " + shape_str(p.grad.shape()) +
                             ", value " + shape_str(p.value.shape()));
        if (!s.m.empty() && s.m[i].shape() != p.value.shape())
            throw ShapeError("adam_step: moment shape mismatch for " + p.name);
        const auto g = p.grad.data();
        for (std::size_t j = 0; j < g.size(); ++j)
            if (!std::isfinite(g[j]))
                throw NonFiniteError("adam_step: non-finite gradient in " + p.name + " at flat index " +
                                     std::to_string(j) + " (step " + std::to_string(s.t + 1) + ")");
    }
    if (s.m.empty())
        for (auto* p : params) {
            s.m.emplace_back(p->value.shape(), 0.0);
            s.v.emplace_back(p->value.shape(), 0.0);
        }

    ++s.t;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i]->value.data();
        const auto g = params[i]->grad.data();
        auto m = s.m[i].data();
        auto v = s.v[i].data();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
            v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
            const double m_hat = m[j] / c1, v_hat = v[j] / c2;
            theta[j] -= s.alpha * m_hat / (std::sqrt(v_hat) + s.eps);
        }
    }
}

}  // namespace gmu
