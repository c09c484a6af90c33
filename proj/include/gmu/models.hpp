// SPDX-License-Identifier: Apache-2.0
//
// Trainable multilabel classifiers built from the layer library.
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmu/layers.hpp"

namespace gmu {

enum class ModelKind {
    gmu,         // GMU over all modalities, then a maxout stack and a logistic head
    maxout_mlp,  // maxout stack on the concatenation of the selected modalities
    logistic,    // logistic regression on the concatenation of the selected modalities
    moe_tied,    // one expert per modality, one gate weight per expert
    moe_untied,  // one gate weight per expert and label
    concat,      // maxout stack on all modalities concatenated
    linear_sum,  // per-modality projections summed, then a maxout stack
    avg_probs,   // one maxout stack per modality, probabilities averaged
};

std::string model_kind_name(ModelKind kind);
/// Throws std::invalid_argument on unknown names.
ModelKind model_kind_from_name(const std::string& name);

struct ModelSpec {
    ModelKind kind = ModelKind::gmu;
    std::vector<std::size_t> input_dims;  // every modality of the dataset, in order
    /// Modalities read by maxout_mlp and logistic; empty means all.
    std::vector<std::size_t> inputs;
    std::size_t labels = 1;
    std::size_t hidden_layers = 2;  // maxout layers above the fusion step
    std::size_t pieces = 2;
    bool batch_norm = true;
    bool gmu_bias = false;
    /// GMU output used directly as the logits: no stack, no head, and the
    /// hidden size is forced to the label count.
    bool gmu_direct = false;
    std::size_t expert_layers = 2;  // 0 gives logistic experts

    void validate() const;
};

class Model {
public:
    struct Nodes {
        NodeId probs;
        std::optional<NodeId> loss;
        std::optional<NodeId> gate;  // bimodal GMU z
    };

    /// Weights uniform in [-init_range, init_range], biases zero.
    Model(ModelSpec spec, std::size_t hidden_size, double init_range, Rng& rng);

    const ModelSpec& spec() const { return spec_; }
    std::size_t hidden_size() const { return hidden_size_; }

    /// Builds the forward pass; adds a loss node when `targets` is given.
    Nodes forward(Graph& g, std::span<const Tensor> xs, const Tensor* targets, const ForwardContext& ctx);

    /// Eval-mode probabilities [N, Q].
    Tensor predict(std::span<const Tensor> xs) const;
    /// Eval-mode gate activations z [N, d_h]; bimodal GMU models only.
    Tensor gate_activations(std::span<const Tensor> xs) const;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    /// Every learned value and running statistic, keyed by name.
    std::map<std::string, Tensor> state() const;
    /// Throws std::invalid_argument on missing, extra or misshaped entries.
    void load_state(const std::map<std::string, Tensor>& state);

private:
    template <class F>
    void visit(F&& f);

    ModelSpec spec_;
    std::size_t hidden_size_ = 0;
    std::optional<GmuBimodalParams> gmu2_;
    std::optional<GmuMultimodalParams> gmuk_;
    std::vector<Parameter> projections_;
    std::vector<MlpParams> stacks_;
    std::optional<MoEParams> moe_;
};

/// Stable 64-bit FNV-1a digest of a state map, as 16 hex digits.
std::string state_digest(const std::map<std::string, Tensor>& state);

}  // namespace gmu
