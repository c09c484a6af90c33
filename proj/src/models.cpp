// SPDX-License-Identifier: Apache-2.0
#include "gmu/models.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace gmu {
namespace {

constexpr std::array<std::pair<ModelKind, const char*>, 8> kKindNames{{
    {ModelKind::gmu, "gmu"},
    {ModelKind::maxout_mlp, "maxout_mlp"},
    {ModelKind::logistic, "logistic"},
    {ModelKind::moe_tied, "moe_tied"},
    {ModelKind::moe_untied, "moe_untied"},
    {ModelKind::concat, "concat"},
    {ModelKind::linear_sum, "linear_sum"},
    {ModelKind::avg_probs, "avg_probs"},
}};

std::vector<std::size_t> selected_inputs(const ModelSpec& s) {
    if (!s.inputs.empty()) return s.inputs;
    std::vector<std::size_t> all(s.input_dims.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
}

std::vector<NodeId> bind(Graph& g, std::span<const Tensor> xs, std::size_t expected) {
    if (xs.size() != expected)
        throw ShapeError("model: " + std::to_string(xs.size()) + " modalities given, " + std::to_string(expected) +
                         " expected");
    std::vector<NodeId> ids;
    for (const auto& x : xs) ids.push_back(g.input(x));
    return ids;
}

NodeId concat_all(Graph& g, std::span<const NodeId> ids) {
    return ids.size() == 1 ? ids[0] : g.concat(ids);
}

std::string stat_key(const BatchNorm& bn, const char* stat) {
    const std::string& g = bn.gamma.name;
    return g.substr(0, g.size() - std::strlen(".gamma")) + "." + stat;
}

}  // namespace

std::string model_kind_name(ModelKind kind) {
    for (auto [k, n] : kKindNames)
        if (k == kind) return n;
    throw std::invalid_argument("unknown model kind");
}

ModelKind model_kind_from_name(const std::string& name) {
    for (auto [k, n] : kKindNames)
        if (name == n) return k;
    throw std::invalid_argument("unknown model kind '" + name + "'");
}

void ModelSpec::validate() const {
    if (input_dims.empty()) throw std::invalid_argument("model: no input modalities");
    for (auto d : input_dims)
        if (d == 0) throw std::invalid_argument("model: empty modality");
    if (labels == 0) throw std::invalid_argument("model: no labels");
    if (pieces < 2) throw std::invalid_argument("model: maxout needs at least 2 pieces");
    for (auto i : inputs)
        if (i >= input_dims.size()) throw std::invalid_argument("model: input index out of range");
    const bool multi = kind == ModelKind::gmu || kind == ModelKind::moe_tied || kind == ModelKind::moe_untied ||
                       kind == ModelKind::linear_sum || kind == ModelKind::avg_probs;
    if (multi && input_dims.size() < 2) throw std::invalid_argument("model: fusion needs at least two modalities");
    if ((kind == ModelKind::maxout_mlp || kind == ModelKind::concat || kind == ModelKind::linear_sum ||
         kind == ModelKind::avg_probs) &&
        hidden_layers == 0)
        throw std::invalid_argument("model: " + model_kind_name(kind) + " needs at least one hidden layer");
    if (gmu_direct && (kind != ModelKind::gmu || hidden_layers != 0))
        throw std::invalid_argument("model: direct GMU output needs kind gmu and no hidden layers");
}

Model::Model(ModelSpec spec, std::size_t hidden_size, double init_range, Rng& rng)
    : spec_(std::move(spec)), hidden_size_(hidden_size) {
    spec_.validate();
    if (spec_.gmu_direct) hidden_size_ = spec_.labels;
    if (hidden_size_ == 0) throw std::invalid_argument("model: hidden size must be positive");
    const auto& dims = spec_.input_dims;
    auto stack = [&](const std::string& name, std::size_t in, std::size_t layers) {
        return MlpParams::init(name, in, hidden_size_, layers, spec_.pieces, spec_.labels, init_range,
                               spec_.batch_norm, rng);
    };
    std::size_t total = 0;
    for (auto d : dims) total += d;

    switch (spec_.kind) {
        case ModelKind::gmu:
            if (dims.size() == 2)
                gmu2_ = GmuBimodalParams::init("gmu", dims[0], dims[1], hidden_size_, init_range, spec_.gmu_bias, rng);
            else
                gmuk_ = GmuMultimodalParams::init("gmu", dims, hidden_size_, init_range, spec_.gmu_bias, rng);
            if (!spec_.gmu_direct) stacks_.push_back(stack("top", hidden_size_, spec_.hidden_layers));
            break;
        case ModelKind::maxout_mlp:
        case ModelKind::logistic: {
            std::size_t in = 0;
            for (auto i : selected_inputs(spec_)) in += dims[i];
            stacks_.push_back(stack("mlp", in, spec_.kind == ModelKind::logistic ? 0 : spec_.hidden_layers));
            break;
        }
        case ModelKind::concat:
            stacks_.push_back(stack("mlp", total, spec_.hidden_layers));
            break;
        case ModelKind::linear_sum:
            for (std::size_t i = 0; i < dims.size(); ++i)
                projections_.emplace_back("proj" + std::to_string(i), uniform_init({hidden_size_, dims[i]}, init_range, rng),
                                          MaxNormAxis::rows);
            stacks_.push_back(stack("mlp", hidden_size_, spec_.hidden_layers));
            break;
        case ModelKind::avg_probs:
            for (std::size_t i = 0; i < dims.size(); ++i)
                stacks_.push_back(stack("mlp" + std::to_string(i), dims[i], spec_.hidden_layers));
            break;
        case ModelKind::moe_tied:
        case ModelKind::moe_untied:
            moe_ = MoEParams::init("moe", dims, spec_.labels, hidden_size_, spec_.expert_layers, spec_.pieces,
                                   init_range, spec_.batch_norm,
                                   spec_.kind == ModelKind::moe_tied ? GateMode::tied : GateMode::untied, rng);
            break;
    }
}

Model::Nodes Model::forward(Graph& g, std::span<const Tensor> xs, const Tensor* targets, const ForwardContext& ctx) {
    const auto ids = bind(g, xs, spec_.input_dims.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (xs[i].rank() != 2 || xs[i].cols() != spec_.input_dims[i])
            throw ShapeError("model: modality " + std::to_string(i) + " has shape " + shape_str(xs[i].shape()) +
                             ", expected " + std::to_string(spec_.input_dims[i]) + " features");
    auto drop = [&](NodeId x) {
        if (ctx.mode != Mode::train || ctx.dropout == 0.0) return x;
        if (!ctx.rng) throw std::invalid_argument("model: dropout needs an rng");
        return dropout(g, x, ctx.dropout, *ctx.rng, ctx.mode);
    };
    Nodes out{};
    std::optional<NodeId> logits;
    switch (spec_.kind) {
        case ModelKind::gmu: {
            NodeId h;
            if (gmu2_) {
                const auto n = gmu_bimodal(g, ids[0], ids[1], *gmu2_);
                h = n.h;
                out.gate = n.z;
            } else {
                h = gmu_multimodal(g, ids, *gmuk_).h;
            }
            logits = spec_.gmu_direct ? h : mlp_logits(g, drop(h), stacks_[0], ctx);
            break;
        }
        case ModelKind::maxout_mlp:
        case ModelKind::logistic: {
            std::vector<NodeId> sel;
            for (auto i : selected_inputs(spec_)) sel.push_back(ids[i]);
            logits = mlp_logits(g, concat_all(g, sel), stacks_[0], ctx);
            break;
        }
        case ModelKind::concat:
            logits = mlp_logits(g, concat_all(g, ids), stacks_[0], ctx);
            break;
        case ModelKind::linear_sum:
            logits = mlp_logits(g, linear_sum(g, ids, projections_), stacks_[0], ctx);
            break;
        case ModelKind::avg_probs: {
            NodeId sum{}, loss{};
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const NodeId li = mlp_logits(g, ids[i], stacks_[i], ctx);
                const NodeId pi = g.sigmoid(li);
                sum = i == 0 ? pi : g.add(sum, pi);
                if (targets) {
                    const NodeId bi = g.bce_logits(li, g.input(*targets));
                    loss = i == 0 ? bi : g.add(loss, bi);
                }
            }
            out.probs = g.affine(sum, 1.0 / static_cast<double>(ids.size()), 0.0);
            if (targets) out.loss = loss;
            return out;
        }
        case ModelKind::moe_tied:
        case ModelKind::moe_untied: {
            const auto n = moe(g, ids, *moe_, ctx);
            out.probs = n.probs;
            if (targets) out.loss = g.bce_probs(n.probs, g.input(*targets));
            return out;
        }
    }
    out.probs = g.sigmoid(*logits);
    if (targets) out.loss = g.bce_logits(*logits, g.input(*targets));
    return out;
}

Tensor Model::predict(std::span<const Tensor> xs) const {
    Model copy = *this;
    Graph g;
    return g.value(copy.forward(g, xs, nullptr, ForwardContext{}).probs);
}

Tensor Model::gate_activations(std::span<const Tensor> xs) const {
    if (!gmu2_) throw std::logic_error("model: gate activations need a bimodal GMU");
    Model copy = *this;
    Graph g;
    return g.value(*copy.forward(g, xs, nullptr, ForwardContext{}).gate);
}

template <class F>
void Model::visit(F&& f) {
    auto linear = [&](LinearParams& p) {
        f(&p.w, nullptr);
        if (p.b) f(&*p.b, nullptr);
    };
    auto mlp = [&](MlpParams& m) {
        for (auto& layer : m.hidden) {
            f(&layer.w, nullptr);
            f(&layer.b, nullptr);
            if (layer.bn) {
                f(&layer.bn->gamma, nullptr);
                f(&layer.bn->beta, nullptr);
                f(nullptr, &*layer.bn);
            }
        }
        linear(m.head);
    };
    if (gmu2_) {
        for (auto* p : {&gmu2_->w_v, &gmu2_->w_t, &gmu2_->w_z}) f(p, nullptr);
        for (auto* b : {&gmu2_->b_v, &gmu2_->b_t, &gmu2_->b_z})
            if (*b) f(&**b, nullptr);
    }
    if (gmuk_) {
        for (auto& p : gmuk_->w) f(&p, nullptr);
        for (auto& p : gmuk_->w_z) f(&p, nullptr);
        for (auto& p : gmuk_->b) f(&p, nullptr);
        for (auto& p : gmuk_->b_z) f(&p, nullptr);
    }
    for (auto& p : projections_) f(&p, nullptr);
    for (auto& s : stacks_) mlp(s);
    if (moe_) {
        for (auto& e : moe_->experts) mlp(e);
        linear(moe_->gate);
    }
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    visit([&](Parameter* p, BatchNorm*) {
        if (p) out.push_back(p);
    });
    return out;
}

std::vector<const Parameter*> Model::parameters() const {
    std::vector<const Parameter*> out;
    for (auto* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
    return out;
}

std::map<std::string, Tensor> Model::state() const {
    std::map<std::string, Tensor> out;
    const_cast<Model*>(this)->visit([&](Parameter* p, BatchNorm* bn) {
        if (p) out.emplace(p->name, p->value);
        if (bn) {
            out.emplace(stat_key(*bn, "running_mean"), bn->running_mean);
            out.emplace(stat_key(*bn, "running_var"), bn->running_var);
        }
    });
    return out;
}

void Model::load_state(const std::map<std::string, Tensor>& state) {
    std::size_t used = 0;
    auto take = [&](const std::string& key, Tensor& dst) {
        auto it = state.find(key);
        if (it == state.end()) throw std::invalid_argument("model state: missing entry " + key);
        if (it->second.shape() != dst.shape())
            throw std::invalid_argument("model state: " + key + " has shape " + shape_str(it->second.shape()) +
                                        ", expected " + shape_str(dst.shape()));
        if (!it->second.all_finite()) throw std::invalid_argument("model state: non-finite values in " + key);
        ++used;
    };
    // Validate everything before writing anything.
    visit([&](Parameter* p, BatchNorm* bn) {
        if (p) take(p->name, p->value);
        if (bn) {
            take(stat_key(*bn, "running_mean"), bn->running_mean);
            take(stat_key(*bn, "running_var"), bn->running_var);
        }
    });
    if (used != state.size()) throw std::invalid_argument("model state: unexpected extra entries");
    visit([&](Parameter* p, BatchNorm* bn) {
        if (p) {
            p->value = state.at(p->name);
            p->zero_grad();
        }
        if (bn) {
            bn->running_mean = state.at(stat_key(*bn, "running_mean"));
            bn->running_var = state.at(stat_key(*bn, "running_var"));
        }
    });
}

std::string state_digest(const std::map<std::string, Tensor>& state) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* data, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : state) {
        mix(name.data(), name.size());
        for (auto d : t.shape()) {
            const std::uint64_t d64 = d;
            mix(&d64, sizeof d64);
        }
        for (double v : t.data()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            mix(&bits, sizeof bits);
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace gmu
