// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "gmu/graph.hpp"

namespace gmu {

/// Builds a fresh graph and returns its scalar loss node.
using LossBuilder = std::function<NodeId(Graph&)>;

/// Compares backward() against central differences for every entry of
/// `param` and returns the largest
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
/// `param.value` is restored on return; gradients of every parameter the
/// builder touches are left zeroed.
double gradient_check(const LossBuilder& build, Parameter& param, double step = 1e-6);

}  // namespace gmu
