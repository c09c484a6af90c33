// SPDX-License-Identifier: Apache-2.0
//
// Batch normalization, inverted dropout and max-norm projection.
#pragma once

#include <string>

#include "gmu/graph.hpp"
#include "gmu/rng.hpp"

namespace gmu {

enum class Mode { train, eval };

/// Per-unit batch normalization state: learned scale/shift plus running
/// statistics used in eval mode.
struct BatchNorm {
    BatchNorm() = default;
    BatchNorm(const std::string& name, std::size_t width);

    Parameter gamma;
    Parameter beta;
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.9;
    double eps = 1e-5;

    std::size_t width() const { return gamma.value.size(); }
};

struct BatchNormNodes {
    NodeId normalized;  // before the gamma/beta affine
    NodeId out;
};

/// Train mode normalizes by the batch statistics (biased variance) and folds
/// them into the running statistics (unbiased variance); eval mode uses the
/// running statistics. Train mode needs at least two rows.
BatchNormNodes batch_norm(Graph& g, NodeId x, BatchNorm& bn, Mode mode);

struct BatchNormOutput {
    Tensor normalized;
    Tensor out;
};
BatchNormOutput batch_norm_forward(const Tensor& x, BatchNorm& bn, Mode mode);

/// Inverted dropout: zeroes entries with probability `rate` and scales the
/// survivors by 1 / (1 - rate). Identity in eval mode or when rate == 0.
NodeId dropout(Graph& g, NodeId x, double rate, Rng& rng, Mode mode);
Tensor dropout_forward(const Tensor& x, double rate, Rng& rng, Mode mode);

/// Rescales every row whose L2 norm exceeds `c` to norm exactly `c`.
Tensor max_norm_project(const Tensor& w, double c);

/// Applies max_norm_project along the parameter's declared axis. The tensor is
/// viewed as [dim(0), rest]; `cols` constrains each column of that view.
void apply_max_norm(Parameter& p, double c);

/// Largest L2 norm among the constrained vectors of `p` (0 if unconstrained).
double max_constrained_norm(const Parameter& p);

}  // namespace gmu
