// SPDX-License-Identifier: Apache-2.0
#include "gmu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gmu {
namespace {

double eval_loss(const LossBuilder& build) {
    Graph g;
    const NodeId loss = build(g);
    const Tensor& v = g.value(loss);
    if (v.size() != 1) throw ShapeError("gradient_check: loss is not scalar");
    return v[0];
}

}  // namespace

double gradient_check(const LossBuilder& build, Parameter& param, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("gradient_check: step must be positive");

    Tensor analytic;
    {
        Graph g;
        const NodeId loss = build(g);
        for (auto& [name, p] : g.parameters()) p->zero_grad();
        param.zero_grad();
        g.backward(loss);
        analytic = param.grad;
        for (auto& [name, p] : g.parameters()) p->zero_grad();
    }

    double worst = 0.0;
    for (std::size_t i = 0; i < param.value.size(); ++i) {
        const double saved = param.value[i];
        param.value[i] = saved + step;
        const double up = eval_loss(build);
        param.value[i] = saved - step;
        const double down = eval_loss(build);
        param.value[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace gmu
