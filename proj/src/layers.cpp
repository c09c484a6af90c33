// SPDX-License-Identifier: Apache-2.0
#include "gmu/layers.hpp"

#include <stdexcept>

namespace gmu {
namespace {

std::optional<Parameter> bias_param(bool enabled, const std::string& name, std::size_t width) {
    if (!enabled) return std::nullopt;
    return Parameter(name, Tensor({width}, 0.0));
}

void require_matrix(const Tensor& t, std::size_t rows, std::size_t cols, const std::string& what) {
    if (t.rank() != 2 || t.dim(0) != rows || t.dim(1) != cols)
        throw ShapeError(what + ": expected [" + std::to_string(rows) + ", " + std::to_string(cols) + "], got " +
                         shape_str(t.shape()));
}

NodeId maybe_bias(Graph& g, NodeId x, std::optional<Parameter>& b) {
    return b ? g.add_bias(x, g.param(*b)) : x;
}

std::vector<NodeId> bind_inputs(Graph& g, std::span<const Tensor> xs) {
    std::vector<NodeId> ids;
    for (const auto& x : xs) ids.push_back(g.input(x));
    return ids;
}

}  // namespace

Tensor uniform_init(const Shape& shape, double range, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.data()) v = rng.uniform(-range, range);
    return t;
}

LinearParams LinearParams::init(const std::string& name, std::size_t in, std::size_t out, double range, bool bias,
                                Rng& rng) {
    return LinearParams{Parameter(name + ".w", uniform_init({out, in}, range, rng), MaxNormAxis::rows),
                        bias_param(bias, name + ".b", out)};
}

NodeId linear(Graph& g, NodeId x, LinearParams& p) {
    return maybe_bias(g, g.linear(x, g.param(p.w)), p.b);
}

// ---------------------------------------------------------------------------

GmuBimodalParams GmuBimodalParams::init(const std::string& name, std::size_t d_v, std::size_t d_t, std::size_t d_h,
                                        double range, bool bias, Rng& rng) {
    GmuBimodalParams p;
    p.w_v = Parameter(name + ".w_v", uniform_init({d_h, d_v}, range, rng), MaxNormAxis::rows);
    p.w_t = Parameter(name + ".w_t", uniform_init({d_h, d_t}, range, rng), MaxNormAxis::rows);
    p.w_z = Parameter(name + ".w_z", uniform_init({d_h, d_v + d_t}, range, rng), MaxNormAxis::rows);
    p.b_v = bias_param(bias, name + ".b_v", d_h);
    p.b_t = bias_param(bias, name + ".b_t", d_h);
    p.b_z = bias_param(bias, name + ".b_z", d_h);
    return p;
}

GmuBimodalParams GmuBimodalParams::from(Tensor w_v, Tensor w_t, Tensor w_z) {
    GmuBimodalParams p;
    p.w_v = Parameter("gmu.w_v", std::move(w_v), MaxNormAxis::rows);
    p.w_t = Parameter("gmu.w_t", std::move(w_t), MaxNormAxis::rows);
    p.w_z = Parameter("gmu.w_z", std::move(w_z), MaxNormAxis::rows);
    p.validate();
    return p;
}

void GmuBimodalParams::validate() const {
    if (w_v.value.rank() != 2 || w_t.value.rank() != 2)
        throw ShapeError("gmu: W_v and W_t must be matrices");
    const std::size_t dh = d_h();
    require_matrix(w_t.value, dh, d_t(), "gmu W_t");
    require_matrix(w_z.value, dh, d_v() + d_t(), "gmu W_z");
    for (const auto* b : {&b_v, &b_t, &b_z})
        if (*b && (*b)->value.shape() != Shape{dh}) throw ShapeError("gmu: bias extent differs from d_h");
}

GmuNodes gmu_bimodal(Graph& g, NodeId x_v, NodeId x_t, GmuBimodalParams& p) {
    p.validate();
    const Tensor& xv = g.value(x_v);
    const Tensor& xt = g.value(x_t);
    if (xv.rank() != 2 || xt.rank() != 2 || xv.cols() != p.d_v() || xt.cols() != p.d_t() || xv.rows() != xt.rows())
        throw ShapeError("gmu_bimodal: inputs " + shape_str(xv.shape()) + " and " + shape_str(xt.shape()) +
                         " do not match d_v=" + std::to_string(p.d_v()) + ", d_t=" + std::to_string(p.d_t()));
    GmuNodes n;
    n.h_v = g.tanh(maybe_bias(g, g.linear(x_v, g.param(p.w_v)), p.b_v));
    n.h_t = g.tanh(maybe_bias(g, g.linear(x_t, g.param(p.w_t)), p.b_t));
    const NodeId joined = g.concat(std::vector<NodeId>{x_v, x_t});
    n.z = g.sigmoid(maybe_bias(g, g.linear(joined, g.param(p.w_z)), p.b_z));
    n.h = g.add(g.mul(n.z, n.h_v), g.mul(g.one_minus(n.z), n.h_t));
    return n;
}

GmuOutput gmu_bimodal_forward(const Tensor& x_v, const Tensor& x_t, const GmuBimodalParams& params) {
    GmuBimodalParams p = params;
    Graph g;
    const auto n = gmu_bimodal(g, g.input(x_v), g.input(x_t), p);
    return {g.value(n.h), g.value(n.z), g.value(n.h_v), g.value(n.h_t)};
}

GmuMultimodalParams GmuMultimodalParams::init(const std::string& name, std::span<const std::size_t> dims,
                                              std::size_t d_h, double range, bool bias, Rng& rng) {
    GmuMultimodalParams p;
    std::size_t total = 0;
    for (auto d : dims) total += d;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        const std::string tag = name + "." + std::to_string(i);
        p.w.emplace_back(tag + ".w", uniform_init({d_h, dims[i]}, range, rng), MaxNormAxis::rows);
        p.w_z.emplace_back(tag + ".w_z", uniform_init({d_h, total}, range, rng), MaxNormAxis::rows);
        if (bias) {
            p.b.emplace_back(tag + ".b", Tensor({d_h}, 0.0));
            p.b_z.emplace_back(tag + ".b_z", Tensor({d_h}, 0.0));
        }
    }
    p.validate();
    return p;
}

void GmuMultimodalParams::validate() const {
    const std::size_t k = w.size();
    if (k < 2) throw std::invalid_argument("gmu_multimodal: need at least 2 modalities, got " + std::to_string(k));
    if (w_z.size() != k) throw ShapeError("gmu_multimodal: one gate per modality required");
    if (!b.empty() && (b.size() != k || b_z.size() != k)) throw ShapeError("gmu_multimodal: bias count mismatch");
    const std::size_t dh = d_h();
    std::size_t total = 0;
    for (const auto& wi : w) {
        if (wi.value.rank() != 2 || wi.value.dim(0) != dh) throw ShapeError("gmu_multimodal: d_h differs across W_i");
        total += wi.value.dim(1);
    }
    for (const auto& wz : w_z) require_matrix(wz.value, dh, total, "gmu_multimodal W_z");
    for (const auto& bi : b)
        if (bi.value.shape() != Shape{dh}) throw ShapeError("gmu_multimodal: bias extent differs from d_h");
    for (const auto& bi : b_z)
        if (bi.value.shape() != Shape{dh}) throw ShapeError("gmu_multimodal: bias extent differs from d_h");
}

GmuMultiNodes gmu_multimodal(Graph& g, std::span<const NodeId> xs, GmuMultimodalParams& p) {
    p.validate();
    if (xs.size() != p.modalities())
        throw ShapeError("gmu_multimodal: " + std::to_string(xs.size()) + " inputs for " +
                         std::to_string(p.modalities()) + " modalities");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Tensor& x = g.value(xs[i]);
        if (x.rank() != 2 || x.cols() != p.w[i].value.dim(1) || x.rows() != g.value(xs[0]).rows())
            throw ShapeError("gmu_multimodal: input " + std::to_string(i) + " has shape " + shape_str(x.shape()));
    }
    const bool bias = !p.b.empty();
    const NodeId joined = g.concat(xs);
    GmuMultiNodes n;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        NodeId a = g.linear(xs[i], g.param(p.w[i]));
        NodeId za = g.linear(joined, g.param(p.w_z[i]));
        if (bias) {
            a = g.add_bias(a, g.param(p.b[i]));
            za = g.add_bias(za, g.param(p.b_z[i]));
        }
        n.h_i.push_back(g.tanh(a));
        n.z.push_back(g.sigmoid(za));
        const NodeId term = g.mul(n.z.back(), n.h_i.back());
        n.h = i == 0 ? term : g.add(n.h, term);
    }
    return n;
}

GmuMultiOutput gmu_multimodal_forward(std::span<const Tensor> xs, const GmuMultimodalParams& params) {
    GmuMultimodalParams p = params;
    Graph g;
    const auto ids = bind_inputs(g, xs);
    const auto n = gmu_multimodal(g, ids, p);
    GmuMultiOutput out{g.value(n.h), {}};
    for (auto z : n.z) out.z.push_back(g.value(z));
    return out;
}

// ---------------------------------------------------------------------------

MaxoutLayerParams MaxoutLayerParams::init(const std::string& name, std::size_t d, std::size_t m, std::size_t k,
                                          double range, bool batch_norm, Rng& rng) {
    MaxoutLayerParams p;
    p.w = Parameter(name + ".w", uniform_init({d, m, k}, range, rng), MaxNormAxis::cols);
    p.b = Parameter(name + ".b", Tensor({m, k}, 0.0));
    if (batch_norm) p.bn.emplace(name + ".bn", m * k);
    p.validate();
    return p;
}

void MaxoutLayerParams::validate() const {
    if (w.value.rank() != 3) throw ShapeError("maxout: W must be [d, m, k], got " + shape_str(w.value.shape()));
    if (pieces() < 2) throw std::invalid_argument("maxout: need at least 2 pieces per unit");
    if (b.value.shape() != Shape{units(), pieces()})
        throw ShapeError("maxout: b must be [m, k], got " + shape_str(b.value.shape()));
    if (bn && bn->width() != units() * pieces()) throw ShapeError("maxout: batch norm width mismatch");
}

NodeId maxout(Graph& g, NodeId x, MaxoutLayerParams& p, Mode mode) {
    p.validate();
    const std::size_t d = p.in(), mk = p.units() * p.pieces();
    const Tensor& xv = g.value(x);
    if (xv.rank() != 2 || xv.cols() != d)
        throw ShapeError("maxout: input " + shape_str(xv.shape()) + " for d=" + std::to_string(d));
    const NodeId w = g.reshape(g.param(p.w), {d, mk});
    const NodeId b = g.reshape(g.param(p.b), {mk});
    NodeId pre = g.add_bias(g.matmul(x, w), b);
    if (p.bn) pre = batch_norm(g, pre, *p.bn, mode).out;
    return g.max_pieces(pre, p.pieces());
}

MlpParams MlpParams::init(const std::string& name, std::size_t in, std::size_t hidden_size, std::size_t layers,
                          std::size_t pieces, std::size_t labels, double range, bool batch_norm, Rng& rng) {
    MlpParams p;
    std::size_t width = in;
    for (std::size_t l = 0; l < layers; ++l) {
        p.hidden.push_back(MaxoutLayerParams::init(name + ".maxout" + std::to_string(l), width, hidden_size, pieces,
                                                   range, batch_norm, rng));
        width = hidden_size;
    }
    p.head = LinearParams::init(name + ".head", width, labels, range, true, rng);
    return p;
}

NodeId mlp_logits(Graph& g, NodeId x, MlpParams& p, const ForwardContext& ctx) {
    NodeId h = x;
    for (auto& layer : p.hidden) {
        h = maxout(g, h, layer, ctx.mode);
        if (ctx.mode == Mode::train && ctx.dropout > 0.0) {
            if (!ctx.rng) throw std::invalid_argument("mlp: dropout needs an rng");
            h = dropout(g, h, ctx.dropout, *ctx.rng, ctx.mode);
        }
    }
    const Tensor& hv = g.value(h);
    if (hv.rank() != 2 || hv.cols() != p.head.in())
        throw ShapeError("mlp head: input " + shape_str(hv.shape()) + " for " + std::to_string(p.head.in()) +
                         " features");
    return linear(g, h, p.head);
}

Tensor maxout_mlp_forward(const Tensor& x, const MlpParams& params) {
    MlpParams p = params;
    Graph g;
    return g.value(g.sigmoid(mlp_logits(g, g.input(x), p, ForwardContext{})));
}

// ---------------------------------------------------------------------------

MoEParams MoEParams::init(const std::string& name, std::span<const std::size_t> dims, std::size_t labels,
                          std::size_t expert_hidden_size, std::size_t expert_layers, std::size_t pieces,
                          double range, bool batch_norm, GateMode mode, Rng& rng) {
    MoEParams p;
    p.mode = mode;
    std::size_t total = 0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        p.experts.push_back(MlpParams::init(name + ".expert" + std::to_string(i), dims[i], expert_hidden_size,
                                            expert_layers, pieces, labels, range, batch_norm, rng));
        total += dims[i];
    }
    const std::size_t k = dims.size();
    p.gate = LinearParams::init(name + ".gate", total, mode == GateMode::tied ? k : k * labels, range, true, rng);
    p.validate();
    return p;
}

void MoEParams::validate() const {
    if (experts.empty()) throw std::invalid_argument("moe: no experts");
    const std::size_t k = experts.size(), q = labels();
    for (const auto& e : experts)
        if (e.labels() != q) throw ShapeError("moe: experts disagree on label count");
    const std::size_t want = mode == GateMode::tied ? k : k * q;
    if (gate.out() != want)
        throw ShapeError("moe: gate emits " + std::to_string(gate.out()) + " logits, expected " + std::to_string(want));
}

MoENodes moe(Graph& g, std::span<const NodeId> xs, MoEParams& p, const ForwardContext& ctx) {
    p.validate();
    const std::size_t k = p.experts.size(), q = p.labels();
    if (xs.size() != k)
        throw std::invalid_argument("moe: " + std::to_string(xs.size()) + " modalities for " + std::to_string(k) +
                                    " experts");
    const std::size_t n = g.value(xs[0]).rows();
    const NodeId logits = linear(g, g.concat(xs), p.gate);

    MoENodes out;
    NodeId flat;
    NodeId ones;
    if (p.mode == GateMode::tied) {
        out.gate = g.softmax(logits, 1);
        ones = g.input(Tensor({1, q}, 1.0));
    } else {
        out.gate = g.softmax(g.reshape(logits, {n, k, q}), 1);
        flat = g.reshape(out.gate, {n, k * q});
    }
    for (std::size_t e = 0; e < k; ++e) {
        const NodeId probs_e = g.sigmoid(mlp_logits(g, xs[e], p.experts[e], ctx));
        const NodeId w = p.mode == GateMode::tied ? g.matmul(g.slice_cols(out.gate, e, 1), ones)
                                                  : g.slice_cols(flat, e * q, q);
        out.weights.push_back(w);
        const NodeId term = g.mul(w, probs_e);
        out.probs = e == 0 ? term : g.add(out.probs, term);
    }
    return out;
}

MoEOutput moe_forward(std::span<const Tensor> xs, const MoEParams& params) {
    MoEParams p = params;
    Graph g;
    const auto ids = bind_inputs(g, xs);
    const auto n = moe(g, ids, p, ForwardContext{});
    return {g.value(n.probs), g.value(n.gate)};
}

// ---------------------------------------------------------------------------

Tensor fusion_concat(std::span<const Tensor> xs) {
    if (xs.empty()) throw std::invalid_argument("fusion_concat: no inputs");
    return apply_primitive(Prim::concat, xs);
}

std::vector<Tensor> split_cols(const Tensor& x, std::span<const std::size_t> widths) {
    std::size_t total = 0;
    for (auto w : widths) total += w;
    if (total != x.cols()) throw ShapeError("split_cols: widths do not sum to " + std::to_string(x.cols()));
    std::vector<Tensor> out;
    std::size_t off = 0;
    for (auto w : widths) {
        out.push_back(apply_primitive(Prim::slice_cols, std::span<const Tensor>(&x, 1), Attr{.offset = off, .width = w}));
        off += w;
    }
    return out;
}

NodeId linear_sum(Graph& g, std::span<const NodeId> xs, std::span<Parameter> projections) {
    if (xs.empty() || xs.size() != projections.size())
        throw ShapeError("linear_sum: need one projection per modality");
    NodeId acc;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const NodeId term = g.linear(xs[i], g.param(projections[i]));
        acc = i == 0 ? term : g.add(acc, term);
    }
    return acc;
}

Tensor fusion_linear_sum(std::span<const Tensor> xs, std::span<const Tensor> projections) {
    std::vector<Parameter> ps;
    for (std::size_t i = 0; i < projections.size(); ++i)
        ps.emplace_back("proj" + std::to_string(i), projections[i]);
    Graph g;
    const auto ids = bind_inputs(g, xs);
    return g.value(linear_sum(g, ids, ps));
}

Tensor fusion_avg_probs(std::span<const Tensor> probs, double threshold) {
    if (probs.empty()) throw std::invalid_argument("fusion_avg_probs: no inputs");
    const Shape& shape = probs[0].shape();
    Tensor mean(shape);
    for (const auto& p : probs) {
        if (p.shape() != shape)
            throw ShapeError("fusion_avg_probs: shape " + shape_str(p.shape()) + " differs from " + shape_str(shape));
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!(p[i] >= 0.0 && p[i] <= 1.0))
                throw std::domain_error("fusion_avg_probs: probability outside [0, 1] at flat index " +
                                        std::to_string(i));
            mean[i] += p[i];
        }
    }
    Tensor out(shape);
    for (std::size_t i = 0; i < mean.size(); ++i)
        out[i] = mean[i] / static_cast<double>(probs.size()) >= threshold ? 1.0 : 0.0;
    return out;
}

}  // namespace gmu
