// SPDX-License-Identifier: Apache-2.0
//
// In-memory multimodal multilabel dataset.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gmu/tensor.hpp"

namespace gmu {

struct MultilabelDataset {
    std::vector<std::string> ids;
    std::vector<std::string> modality_names;
    std::vector<Tensor> features;  // one [N, d_i] matrix per modality
    Tensor labels;                 // [N, Q], entries 0 or 1
    std::vector<std::string> label_names;

    std::size_t size() const { return labels.rank() == 2 ? labels.rows() : 0; }
    std::size_t label_count() const { return label_names.size(); }
    std::vector<std::size_t> dims() const;

    /// Throws std::invalid_argument describing the first inconsistency.
    void validate() const;
    MultilabelDataset subset(std::span<const std::size_t> rows) const;
};

}  // namespace gmu
