// SPDX-License-Identifier: Apache-2.0
#include "gmu/regularize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gmu {

BatchNorm::BatchNorm(const std::string& name, std::size_t width)
    : gamma(name + ".gamma", Tensor({width}, 1.0)),
      beta(name + ".beta", Tensor({width}, 0.0)),
      running_mean({width}, 0.0),
      running_var({width}, 1.0) {}

BatchNormNodes batch_norm(Graph& g, NodeId x, BatchNorm& bn, Mode mode) {
    const Tensor& xv = g.value(x);
    if (xv.rank() != 2 || xv.cols() != bn.width())
        throw ShapeError("batch_norm: input " + shape_str(xv.shape()) + " for width " + std::to_string(bn.width()));

    NodeId normalized;
    if (mode == Mode::train) {
        const std::size_t n = xv.rows();
        if (n < 2) throw std::invalid_argument("batch_norm: train mode needs at least 2 rows, got " + std::to_string(n));
        const NodeId mu = g.col_mean(x);
        const NodeId centered = g.add_bias(x, g.affine(mu, -1.0, 0.0));
        const NodeId var = g.col_mean(g.square(centered));
        normalized = g.scale_cols(centered, g.rsqrt(var, bn.eps));

        const Tensor& mv = g.value(mu);
        const Tensor& vv = g.value(var);
        const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
        for (std::size_t j = 0; j < bn.width(); ++j) {
            bn.running_mean[j] = bn.momentum * bn.running_mean[j] + (1.0 - bn.momentum) * mv[j];
            bn.running_var[j] = bn.momentum * bn.running_var[j] + (1.0 - bn.momentum) * vv[j] * unbias;
        }
    } else {
        Tensor shift({bn.width()});
        Tensor scale({bn.width()});
        for (std::size_t j = 0; j < bn.width(); ++j) {
            shift[j] = -bn.running_mean[j];
            scale[j] = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
        }
        normalized = g.scale_cols(g.add_bias(x, g.input(std::move(shift))), g.input(std::move(scale)));
    }
    const NodeId out = g.add_bias(g.scale_cols(normalized, g.param(bn.gamma)), g.param(bn.beta));
    return {normalized, out};
}

BatchNormOutput batch_norm_forward(const Tensor& x, BatchNorm& bn, Mode mode) {
    Graph g;
    const auto nodes = batch_norm(g, g.input(x), bn, mode);
    return {g.value(nodes.normalized), g.value(nodes.out)};
}

namespace {

void check_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
    Tensor mask(shape);
    const double keep = 1.0 / (1.0 - rate);
    for (auto& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
    return mask;
}

}  // namespace

NodeId dropout(Graph& g, NodeId x, double rate, Rng& rng, Mode mode) {
    check_rate(rate);
    if (mode == Mode::eval || rate == 0.0) return x;
    return g.mul(x, g.input(dropout_mask(g.value(x).shape(), rate, rng)));
}

Tensor dropout_forward(const Tensor& x, double rate, Rng& rng, Mode mode) {
    check_rate(rate);
    if (mode == Mode::eval || rate == 0.0) return x;
    Tensor out = dropout_mask(x.shape(), rate, rng);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= x[i];
    return out;
}

Tensor max_norm_project(const Tensor& w, double c) {
    if (!(c > 0.0)) throw std::invalid_argument("max_norm_project: bound must be positive");
    Tensor out = w;
    const std::size_t r = w.rows(), k = w.cols();
    for (std::size_t i = 0; i < r; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < k; ++j) ss += w(i, j) * w(i, j);
        const double norm = std::sqrt(ss);
        if (norm > c) {
            const double s = c / norm;
            for (std::size_t j = 0; j < k; ++j) out(i, j) = w(i, j) * s;
        }
    }
    return out;
}

namespace {

Shape flat2(const Tensor& t) {
    const std::size_t lead = t.rank() ? t.dim(0) : 1;
    return {lead, lead ? t.size() / lead : 0};
}

Tensor transpose2(const Tensor& t) {
    const std::size_t r = t.rows(), c = t.cols();
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(j, i) = t(i, j);
    return out;
}

}  // namespace

void apply_max_norm(Parameter& p, double c) {
    if (p.max_norm == MaxNormAxis::none) return;
    const Tensor view = p.value.reshaped(flat2(p.value));
    Tensor projected = p.max_norm == MaxNormAxis::rows ? max_norm_project(view, c)
                                                       : transpose2(max_norm_project(transpose2(view), c));
    p.value = projected.reshaped(p.value.shape());
}

double max_constrained_norm(const Parameter& p) {
    if (p.max_norm == MaxNormAxis::none) return 0.0;
    Tensor view = p.value.reshaped(flat2(p.value));
    if (p.max_norm == MaxNormAxis::cols) view = transpose2(view);
    double worst = 0.0;
    for (std::size_t i = 0; i < view.rows(); ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < view.cols(); ++j) ss += view(i, j) * view(i, j);
        worst = std::max(worst, std::sqrt(ss));
    }
    return worst;
}

}  // namespace gmu
