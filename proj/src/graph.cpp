// SPDX-License-Identifier: Apache-2.0
#include "gmu/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace gmu {
namespace {

constexpr double kProbClamp = 1e-12;

struct PrimInfo {
    Prim kind;
    std::string_view name;
    int arity;  // -1 = variadic (>= 1)
};

constexpr std::array kPrims{
    PrimInfo{Prim::matmul, "matmul", 2},       PrimInfo{Prim::transpose, "transpose", 1},
    PrimInfo{Prim::add, "add", 2},             PrimInfo{Prim::sub, "sub", 2},
    PrimInfo{Prim::mul, "mul", 2},             PrimInfo{Prim::add_bias, "add_bias", 2},
    PrimInfo{Prim::scale_cols, "scale_cols", 2}, PrimInfo{Prim::affine, "affine", 1},
    PrimInfo{Prim::tanh, "tanh", 1},           PrimInfo{Prim::sigmoid, "sigmoid", 1},
    PrimInfo{Prim::softmax, "softmax", 1},     PrimInfo{Prim::concat, "concat", -1},
    PrimInfo{Prim::slice_cols, "slice_cols", 1}, PrimInfo{Prim::reshape, "reshape", 1},
    PrimInfo{Prim::max_pieces, "max_pieces", 1}, PrimInfo{Prim::col_mean, "col_mean", 1},
    PrimInfo{Prim::square, "square", 1},       PrimInfo{Prim::rsqrt, "rsqrt", 1},
    PrimInfo{Prim::sum, "sum", 1},             PrimInfo{Prim::mean, "mean", 1},
    PrimInfo{Prim::bce_logits, "bce_logits", 2}, PrimInfo{Prim::bce_probs, "bce_probs", 2},
};

const PrimInfo& info(Prim kind) {
    for (const auto& p : kPrims)
        if (p.kind == kind) return p;
    throw std::invalid_argument("unknown primitive id " + std::to_string(static_cast<int>(kind)));
}

[[noreturn]] void mismatch(Prim kind, const std::vector<const Tensor*>& in, const std::string& detail) {
    std::string msg = std::string(info(kind).name) + ": shape mismatch";
    for (const auto* t : in) msg += " " + shape_str(t->shape());
    if (!detail.empty()) msg += " (" + detail + ")";
    throw ShapeError(msg);
}

void require_rank2(Prim kind, const std::vector<const Tensor*>& in) {
    for (const auto* t : in)
        if (t->rank() != 2) mismatch(kind, in, "expected rank-2 operands");
}

void require_same(Prim kind, const std::vector<const Tensor*>& in) {
    if (in[0]->shape() != in[1]->shape()) mismatch(kind, in, "operands must have equal shapes");
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Extents around a reduction axis: outer x n x inner.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit a;
    for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
    a.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
    return a;
}

Tensor forward(Prim kind, const std::vector<const Tensor*>& in, const Attr& attr) {
    const auto& pi = info(kind);
    if (pi.arity >= 0 && static_cast<int>(in.size()) != pi.arity)
        throw std::invalid_argument(std::string(pi.name) + ": expected " + std::to_string(pi.arity) +
                                    " inputs, got " + std::to_string(in.size()));
    if (in.empty()) throw std::invalid_argument(std::string(pi.name) + ": no inputs");

    const Tensor& x = *in[0];
    switch (kind) {
    case Prim::matmul: {
        require_rank2(kind, in);
        const Tensor& y = *in[1];
        const std::size_t n = x.dim(0), k = x.dim(1), m = y.dim(1);
        if (y.dim(0) != k) mismatch(kind, in, "inner extents differ");
        Tensor out({n, m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double a = x[i * k + p];
                if (a == 0.0) continue;
                for (std::size_t j = 0; j < m; ++j) out[i * m + j] += a * y[p * m + j];
            }
        return out;
    }
    case Prim::transpose: {
        require_rank2(kind, in);
        const std::size_t n = x.dim(0), m = x.dim(1);
        Tensor out({m, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x[i * m + j];
        return out;
    }
    case Prim::add:
    case Prim::sub:
    case Prim::mul: {
        require_same(kind, in);
        Tensor out(x.shape());
        const Tensor& y = *in[1];
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = kind == Prim::add ? x[i] + y[i] : kind == Prim::sub ? x[i] - y[i] : x[i] * y[i];
        return out;
    }
    case Prim::add_bias:
    case Prim::scale_cols: {
        const Tensor& b = *in[1];
        if (x.rank() != 2 || b.size() != x.dim(1) || b.rank() != 1)
            mismatch(kind, in, "expected [n,m] and [m]");
        Tensor out(x.shape());
        const std::size_t m = x.dim(1);
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = kind == Prim::add_bias ? x[i] + b[i % m] : x[i] * b[i % m];
        return out;
    }
    case Prim::affine:
    case Prim::tanh:
    case Prim::sigmoid:
    case Prim::square:
    case Prim::rsqrt: {
        Tensor out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = x[i];
            switch (kind) {
            case Prim::affine: out[i] = attr.a * v + attr.b; break;
            case Prim::tanh: out[i] = std::tanh(v); break;
            case Prim::sigmoid: out[i] = sigmoid(v); break;
            case Prim::square: out[i] = v * v; break;
            default:
                if (!(v + attr.b > 0.0)) throw std::domain_error("rsqrt: non-positive argument");
                out[i] = 1.0 / std::sqrt(v + attr.b);
            }
        }
        return out;
    }
    case Prim::softmax: {
        if (attr.axis >= x.rank()) mismatch(kind, in, "axis " + std::to_string(attr.axis) + " out of range");
        const auto s = split_axis(x.shape(), attr.axis);
        Tensor out(x.shape());
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t r = 0; r < s.inner; ++r) {
                const std::size_t base = o * s.n * s.inner + r;
                double mx = -INFINITY;
                for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
                double z = 0.0;
                for (std::size_t j = 0; j < s.n; ++j) {
                    const double e = std::exp(x[base + j * s.inner] - mx);
                    out[base + j * s.inner] = e;
                    z += e;
                }
                for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
            }
        return out;
    }
    case Prim::concat: {
        require_rank2(kind, in);
        const std::size_t n = x.dim(0);
        std::size_t total = 0;
        for (const auto* t : in) {
            if (t->dim(0) != n) mismatch(kind, in, "row counts differ");
            total += t->dim(1);
        }
        Tensor out({n, total});
        std::size_t off = 0;
        for (const auto* t : in) {
            const std::size_t w = t->dim(1);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = (*t)[i * w + j];
            off += w;
        }
        return out;
    }
    case Prim::slice_cols: {
        require_rank2(kind, in);
        const std::size_t n = x.dim(0), m = x.dim(1);
        if (attr.offset + attr.width > m) mismatch(kind, in, "slice exceeds column extent");
        Tensor out({n, attr.width});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < attr.width; ++j) out[i * attr.width + j] = x[i * m + attr.offset + j];
        return out;
    }
    case Prim::reshape:
        if (shape_size(attr.shape) != x.size()) mismatch(kind, in, "target " + shape_str(attr.shape));
        return x.reshaped(attr.shape);
    case Prim::max_pieces: {
        require_rank2(kind, in);
        const std::size_t k = attr.width, n = x.dim(0), cols = x.dim(1);
        if (k == 0 || cols % k != 0) mismatch(kind, in, "columns not divisible by piece count");
        const std::size_t m = cols / k;
        Tensor out({n, m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t u = 0; u < m; ++u) {
                double best = x[i * cols + u * k];
                for (std::size_t j = 1; j < k; ++j) best = std::max(best, x[i * cols + u * k + j]);
                out[i * m + u] = best;
            }
        return out;
    }
    case Prim::col_mean: {
        require_rank2(kind, in);
        const std::size_t n = x.dim(0), m = x.dim(1);
        if (n == 0) mismatch(kind, in, "empty batch");
        Tensor out({m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out[j] += x[i * m + j];
        for (std::size_t j = 0; j < m; ++j) out[j] /= static_cast<double>(n);
        return out;
    }
    case Prim::sum:
    case Prim::mean: {
        double s = 0.0;
        for (double v : x.data()) s += v;
        if (kind == Prim::mean) {
            if (x.size() == 0) mismatch(kind, in, "mean of empty tensor");
            s /= static_cast<double>(x.size());
        }
        return Tensor::scalar(s);
    }
    case Prim::bce_logits:
    case Prim::bce_probs: {
        require_same(kind, in);
        if (x.size() == 0) mismatch(kind, in, "empty operands");
        const Tensor& y = *in[1];
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (kind == Prim::bce_logits) {
                const double l = x[i];
                s += std::max(l, 0.0) - l * y[i] + std::log1p(std::exp(-std::abs(l)));
            } else {
                const double p = std::clamp(x[i], kProbClamp, 1.0 - kProbClamp);
                s -= y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p);
            }
        }
        return Tensor::scalar(s / static_cast<double>(x.size()));
    }
    }
    throw std::invalid_argument("unknown primitive id " + std::to_string(static_cast<int>(kind)));
}

// Accumulates input gradients into `din` (pre-sized zero tensors, nullptr for
// inputs that do not need a gradient).
void backward_prim(Prim kind, const std::vector<const Tensor*>& in, const Tensor& out, const Tensor& dout,
                   const Attr& attr, std::vector<Tensor*>& din) {
    const Tensor& x = *in[0];
    Tensor* dx = din[0];
    switch (kind) {
    case Prim::matmul: {
        const Tensor& y = *in[1];
        const std::size_t n = x.dim(0), k = x.dim(1), m = y.dim(1);
        if (dx)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += dout[i * m + j] * y[p * m + j];
                    (*dx)[i * k + p] += s;
                }
        if (Tensor* dy = din[1])
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double a = x[i * k + p];
                    if (a == 0.0) continue;
                    for (std::size_t j = 0; j < m; ++j) (*dy)[p * m + j] += a * dout[i * m + j];
                }
        return;
    }
    case Prim::transpose: {
        if (!dx) return;
        const std::size_t n = x.dim(0), m = x.dim(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) (*dx)[i * m + j] += dout[j * n + i];
        return;
    }
    case Prim::add:
    case Prim::sub:
        for (std::size_t i = 0; i < dout.size(); ++i) {
            if (dx) (*dx)[i] += dout[i];
            if (din[1]) (*din[1])[i] += kind == Prim::add ? dout[i] : -dout[i];
        }
        return;
    case Prim::mul:
        for (std::size_t i = 0; i < dout.size(); ++i) {
            if (dx) (*dx)[i] += dout[i] * (*in[1])[i];
            if (din[1]) (*din[1])[i] += dout[i] * x[i];
        }
        return;
    case Prim::add_bias:
    case Prim::scale_cols: {
        const std::size_t m = x.dim(1);
        const Tensor& b = *in[1];
        for (std::size_t i = 0; i < dout.size(); ++i) {
            const std::size_t j = i % m;
            if (kind == Prim::add_bias) {
                if (dx) (*dx)[i] += dout[i];
                if (din[1]) (*din[1])[j] += dout[i];
            } else {
                if (dx) (*dx)[i] += dout[i] * b[j];
                if (din[1]) (*din[1])[j] += dout[i] * x[i];
            }
        }
        return;
    }
    case Prim::affine:
    case Prim::tanh:
    case Prim::sigmoid:
    case Prim::square:
    case Prim::rsqrt:
        if (!dx) return;
        for (std::size_t i = 0; i < dout.size(); ++i) {
            const double y = out[i];
            double d = 0.0;
            switch (kind) {
            case Prim::affine: d = attr.a; break;
            case Prim::tanh: d = 1.0 - y * y; break;
            case Prim::sigmoid: d = y * (1.0 - y); break;
            case Prim::square: d = 2.0 * x[i]; break;
            default: d = -0.5 * y * y * y;
            }
            (*dx)[i] += dout[i] * d;
        }
        return;
    case Prim::softmax: {
        if (!dx) return;
        const auto s = split_axis(x.shape(), attr.axis);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t r = 0; r < s.inner; ++r) {
                const std::size_t base = o * s.n * s.inner + r;
                double dot = 0.0;
                for (std::size_t j = 0; j < s.n; ++j) dot += dout[base + j * s.inner] * out[base + j * s.inner];
                for (std::size_t j = 0; j < s.n; ++j) {
                    const std::size_t at = base + j * s.inner;
                    (*dx)[at] += out[at] * (dout[at] - dot);
                }
            }
        return;
    }
    case Prim::concat: {
        const std::size_t n = x.dim(0), total = out.dim(1);
        std::size_t off = 0;
        for (std::size_t t = 0; t < in.size(); ++t) {
            const std::size_t w = in[t]->dim(1);
            if (din[t])
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < w; ++j) (*din[t])[i * w + j] += dout[i * total + off + j];
            off += w;
        }
        return;
    }
    case Prim::slice_cols: {
        if (!dx) return;
        const std::size_t n = x.dim(0), m = x.dim(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < attr.width; ++j) (*dx)[i * m + attr.offset + j] += dout[i * attr.width + j];
        return;
    }
    case Prim::reshape:
        if (!dx) return;
        for (std::size_t i = 0; i < dout.size(); ++i) (*dx)[i] += dout[i];
        return;
    case Prim::max_pieces: {
        if (!dx) return;
        const std::size_t k = attr.width, n = x.dim(0), cols = x.dim(1), m = cols / k;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t u = 0; u < m; ++u) {
                // Lowest index wins ties.
                std::size_t arg = 0;
                for (std::size_t j = 1; j < k; ++j)
                    if (x[i * cols + u * k + j] > x[i * cols + u * k + arg]) arg = j;
                (*dx)[i * cols + u * k + arg] += dout[i * m + u];
            }
        return;
    }
    case Prim::col_mean: {
        if (!dx) return;
        const std::size_t n = x.dim(0), m = x.dim(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) (*dx)[i * m + j] += dout[j] / static_cast<double>(n);
        return;
    }
    case Prim::sum:
    case Prim::mean: {
        if (!dx) return;
        const double g = kind == Prim::sum ? dout[0] : dout[0] / static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) (*dx)[i] += g;
        return;
    }
    case Prim::bce_logits:
    case Prim::bce_probs: {
        const Tensor& y = *in[1];
        const double scale = dout[0] / static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (kind == Prim::bce_logits) {
                if (dx) (*dx)[i] += scale * (sigmoid(x[i]) - y[i]);
                if (din[1]) (*din[1])[i] -= scale * x[i];
            } else {
                const double p = x[i];
                const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
                const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
                if (dx && !clamped) (*dx)[i] += scale * (-y[i] / pc + (1.0 - y[i]) / (1.0 - pc));
                if (din[1]) (*din[1])[i] -= scale * (std::log(pc) - std::log1p(-pc));
            }
        }
        return;
    }
    }
}

}  // namespace

Parameter::Parameter(std::string n, Tensor v, MaxNormAxis axis)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()), max_norm(axis) {
    value.require_finite("parameter '" + name + "'");
}

void Parameter::zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    std::fill(grad.data().begin(), grad.data().end(), 0.0);
}

std::string_view prim_name(Prim kind) { return info(kind).name; }

Prim prim_from_name(std::string_view name) {
    for (const auto& p : kPrims)
        if (p.name == name) return p.kind;
    throw std::invalid_argument("unknown primitive '" + std::string(name) + "'");
}

Tensor apply_primitive(Prim kind, std::span<const Tensor> inputs, const Attr& attr) {
    std::vector<const Tensor*> in;
    for (const auto& t : inputs) in.push_back(&t);
    return forward(kind, in, attr);
}

NodeId Graph::input(Tensor value) {
    value.require_finite("graph input");
    Node n;
    n.leaf = Leaf::input;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
}

NodeId Graph::param(Parameter& p) {
    auto [it, inserted] = params_.emplace(p.name, &p);
    if (!inserted && it->second != &p)
        throw std::invalid_argument("graph: two distinct parameters named '" + p.name + "'");
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    Node n;
    n.leaf = Leaf::param;
    n.value = p.value;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
}

NodeId Graph::apply(Prim kind, std::span<const NodeId> inputs, const Attr& attr) {
    std::vector<const Tensor*> in;
    in.reserve(inputs.size());
    for (auto id : inputs) in.push_back(&node(id).value);
    Node n;
    n.value = forward(kind, in, attr);
    n.kind = kind;
    n.inputs.assign(inputs.begin(), inputs.end());
    n.attr = attr;
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
}

const Graph::Node& Graph::node(NodeId id) const {
    if (id.index >= nodes_.size()) throw std::out_of_range("graph: node id not in this graph");
    return nodes_[id.index];
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

const Tensor& Graph::grad(NodeId id) const {
    const Node& n = node(id);
    if (n.grad.shape() != n.value.shape()) throw std::logic_error("graph: gradient requested before backward()");
    return n.grad;
}

Prim Graph::kind(NodeId id) const { return node(id).kind; }

void Graph::backward(NodeId loss) {
    if (nodes_.empty() || loss.index >= nodes_.size())
        throw std::logic_error("backward: graph has not been evaluated up to the loss node");
    if (nodes_[loss.index].value.size() != 1)
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.index].value.shape()));

    for (auto& n : nodes_) n.grad = Tensor(n.value.shape());
    std::vector<char> live(nodes_.size(), 0);
    live[loss.index] = 1;
    nodes_[loss.index].grad[0] = 1.0;

    for (std::size_t i = loss.index + 1; i-- > 0;) {
        if (!live[i]) continue;
        Node& n = nodes_[i];
        if (n.leaf == Leaf::param) {
            for (std::size_t j = 0; j < n.grad.size(); ++j) n.param->grad[j] += n.grad[j];
            continue;
        }
        if (n.leaf == Leaf::input) continue;
        std::vector<const Tensor*> in;
        std::vector<Tensor*> din;
        for (auto id : n.inputs) {
            in.push_back(&nodes_[id.index].value);
            din.push_back(&nodes_[id.index].grad);
            live[id.index] = 1;
        }
        backward_prim(n.kind, in, n.value, n.grad, n.attr, din);
    }
}

}  // namespace gmu
