// SPDX-License-Identifier: Apache-2.0
//
// Adam with bias-corrected moments.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gmu/graph.hpp"

namespace gmu {

struct AdamState {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<Tensor> m;  // one per parameter, created on first step
    std::vector<Tensor> v;
};

/// One update from each parameter's `grad`. Throws NonFiniteError naming the
/// parameter, before touching any state, if a gradient entry is not finite.
void adam_step(std::span<Parameter* const> params, AdamState& state);

}  // namespace gmu
