// SPDX-License-Identifier: Apache-2.0
//
// Model building blocks: the gated multimodal unit (bimodal and k-modal),
// maxout layers, logistic heads, mixture of experts, and the concatenation /
// linear-sum / average-probability fusion baselines.
//
// Each block comes in two forms: a graph form used for training, which binds
// the block's Parameters into a Graph, and a tensor form that evaluates a
// forward pass on its own.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmu/graph.hpp"
#include "gmu/regularize.hpp"
#include "gmu/rng.hpp"

namespace gmu {

/// Uniform in [-range, range].
Tensor uniform_init(const Shape& shape, double range, Rng& rng);

/// Dropout and mode settings threaded through forward passes.
struct ForwardContext {
    Mode mode = Mode::eval;
    double dropout = 0.0;
    Rng* rng = nullptr;
};

/// Affine map x -> x W^T + b, W stored as [out, in].
struct LinearParams {
    Parameter w;
    std::optional<Parameter> b;

    static LinearParams init(const std::string& name, std::size_t in, std::size_t out, double range, bool bias,
                             Rng& rng);
    std::size_t in() const { return w.value.dim(1); }
    std::size_t out() const { return w.value.dim(0); }
};

NodeId linear(Graph& g, NodeId x, LinearParams& p);

// ---------------------------------------------------------------------------
// Gated multimodal unit

/// h_v = tanh(W_v x_v), h_t = tanh(W_t x_t), z = sigma(W_z [x_v, x_t]),
/// h = z * h_v + (1 - z) * h_t. Biases are off unless requested.
struct GmuBimodalParams {
    Parameter w_v;  // [d_h, d_v]
    Parameter w_t;  // [d_h, d_t]
    Parameter w_z;  // [d_h, d_v + d_t]
    std::optional<Parameter> b_v, b_t, b_z;

    static GmuBimodalParams init(const std::string& name, std::size_t d_v, std::size_t d_t, std::size_t d_h,
                                 double range, bool bias, Rng& rng);
    /// Builds from explicit matrices; throws ShapeError if extents disagree.
    static GmuBimodalParams from(Tensor w_v, Tensor w_t, Tensor w_z);

    std::size_t d_v() const { return w_v.value.dim(1); }
    std::size_t d_t() const { return w_t.value.dim(1); }
    std::size_t d_h() const { return w_v.value.dim(0); }
    void validate() const;
};

struct GmuNodes {
    NodeId h;
    NodeId z;
    NodeId h_v;
    NodeId h_t;
};

GmuNodes gmu_bimodal(Graph& g, NodeId x_v, NodeId x_t, GmuBimodalParams& p);

struct GmuOutput {
    Tensor h;
    Tensor z;
    Tensor h_v;
    Tensor h_t;
};

GmuOutput gmu_bimodal_forward(const Tensor& x_v, const Tensor& x_t, const GmuBimodalParams& p);

/// k-modal unit: h_i = tanh(W_i x_i), z_i = sigma(W_{z_i} [x_1..x_k]),
/// h = sum_i z_i * h_i. Gates are independent sigmoids (not normalized).
struct GmuMultimodalParams {
    std::vector<Parameter> w;    // w[i]: [d_h, d_i]
    std::vector<Parameter> w_z;  // w_z[i]: [d_h, sum d_j]
    std::vector<Parameter> b;    // empty, or one [d_h] per modality
    std::vector<Parameter> b_z;

    static GmuMultimodalParams init(const std::string& name, std::span<const std::size_t> dims, std::size_t d_h,
                                    double range, bool bias, Rng& rng);
    std::size_t modalities() const { return w.size(); }
    std::size_t d_h() const { return w.empty() ? 0 : w[0].value.dim(0); }
    void validate() const;
};

struct GmuMultiNodes {
    NodeId h;
    std::vector<NodeId> z;
    std::vector<NodeId> h_i;
};

GmuMultiNodes gmu_multimodal(Graph& g, std::span<const NodeId> xs, GmuMultimodalParams& p);

struct GmuMultiOutput {
    Tensor h;
    std::vector<Tensor> z;
};

GmuMultiOutput gmu_multimodal_forward(std::span<const Tensor> xs, const GmuMultimodalParams& p);

// ---------------------------------------------------------------------------
// Maxout

/// Unit u outputs max_j (s . W[:, u, j] + b[u, j]).
struct MaxoutLayerParams {
    Parameter w;  // [d, m, k]
    Parameter b;  // [m, k]
    std::optional<BatchNorm> bn;

    static MaxoutLayerParams init(const std::string& name, std::size_t d, std::size_t m, std::size_t k, double range,
                                  bool batch_norm, Rng& rng);
    std::size_t in() const { return w.value.dim(0); }
    std::size_t units() const { return w.value.dim(1); }
    std::size_t pieces() const { return w.value.dim(2); }
    void validate() const;
};

/// Affine pieces, then optional batch norm over the m*k pre-activations,
/// then the max over pieces.
NodeId maxout(Graph& g, NodeId x, MaxoutLayerParams& p, Mode mode);

/// Stack of maxout layers (each followed by dropout) and a logistic head.
/// With no hidden layers this is logistic regression.
struct MlpParams {
    std::vector<MaxoutLayerParams> hidden;
    LinearParams head;

    static MlpParams init(const std::string& name, std::size_t in, std::size_t hidden_size, std::size_t layers,
                          std::size_t pieces, std::size_t labels, double range, bool batch_norm, Rng& rng);
    std::size_t in() const { return hidden.empty() ? head.in() : hidden.front().in(); }
    std::size_t labels() const { return head.out(); }
};

/// Returns the head's logits [N, Q].
NodeId mlp_logits(Graph& g, NodeId x, MlpParams& p, const ForwardContext& ctx);

/// Eval-mode per-label sigmoid probabilities.
Tensor maxout_mlp_forward(const Tensor& x, const MlpParams& p);

// ---------------------------------------------------------------------------
// Mixture of experts

enum class GateMode { tied, untied };

/// One expert per modality; the gate reads the concatenated modality
/// features and is softmax-normalized over experts, either once per sample
/// (tied) or once per sample and label (untied).
struct MoEParams {
    std::vector<MlpParams> experts;
    LinearParams gate;  // out = k (tied) or k * Q (untied)
    GateMode mode = GateMode::tied;

    static MoEParams init(const std::string& name, std::span<const std::size_t> dims, std::size_t labels,
                          std::size_t expert_hidden_size, std::size_t expert_layers, std::size_t pieces, double range,
                          bool batch_norm, GateMode mode, Rng& rng);
    std::size_t labels() const { return experts.empty() ? 0 : experts.front().labels(); }
    void validate() const;
};

struct MoENodes {
    NodeId probs;
    /// Per-expert weights broadcast to [N, Q].
    std::vector<NodeId> weights;
    /// Raw softmax output: [N, k] (tied) or [N, k, Q] (untied).
    NodeId gate;
};

MoENodes moe(Graph& g, std::span<const NodeId> xs, MoEParams& p, const ForwardContext& ctx);

struct MoEOutput {
    Tensor probs;
    Tensor gate;
};

MoEOutput moe_forward(std::span<const Tensor> xs, const MoEParams& p);

// ---------------------------------------------------------------------------
// Fusion baselines

Tensor fusion_concat(std::span<const Tensor> xs);
/// Inverse of fusion_concat for the given column widths.
std::vector<Tensor> split_cols(const Tensor& x, std::span<const std::size_t> widths);

/// sum_i x_i P_i^T with each P_i stored as [d_h, d_i].
NodeId linear_sum(Graph& g, std::span<const NodeId> xs, std::span<Parameter> projections);
Tensor fusion_linear_sum(std::span<const Tensor> xs, std::span<const Tensor> projections);

/// Mean of the probability matrices, then 1 where mean >= threshold.
Tensor fusion_avg_probs(std::span<const Tensor> probs, double threshold = 0.5);

}  // namespace gmu
