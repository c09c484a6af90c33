// SPDX-License-Identifier: Apache-2.0
#include "gmu/dataset.hpp"

#include <set>
#include <stdexcept>

namespace gmu {

std::vector<std::size_t> MultilabelDataset::dims() const {
    std::vector<std::size_t> d;
    for (const auto& f : features) d.push_back(f.cols());
    return d;
}

void MultilabelDataset::validate() const {
    if (labels.rank() != 2) throw std::invalid_argument("dataset: labels must be a matrix");
    const std::size_t n = labels.rows();
    if (label_names.size() != labels.cols()) throw std::invalid_argument("dataset: label name count mismatch");
    if (ids.size() != n) throw std::invalid_argument("dataset: id count mismatch");
    if (features.empty()) throw std::invalid_argument("dataset: no modalities");
    if (modality_names.size() != features.size()) throw std::invalid_argument("dataset: modality name count mismatch");
    for (std::size_t m = 0; m < features.size(); ++m) {
        if (features[m].rank() != 2 || features[m].rows() != n)
            throw std::invalid_argument("dataset: modality " + modality_names[m] + " has shape " +
                                        shape_str(features[m].shape()) + " for " + std::to_string(n) + " samples");
        if (!features[m].all_finite())
            throw std::invalid_argument("dataset: modality " + modality_names[m] + " has non-finite values");
    }
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != 0.0 && labels[i] != 1.0)
            throw std::invalid_argument("dataset: non-binary label for id " + ids[i / labels.cols()]);
    std::set<std::string> seen;
    for (const auto& id : ids)
        if (!seen.insert(id).second) throw std::invalid_argument("dataset: duplicate id " + id);
}

MultilabelDataset MultilabelDataset::subset(std::span<const std::size_t> rows) const {
    MultilabelDataset out;
    out.modality_names = modality_names;
    out.label_names = label_names;
    for (auto r : rows) out.ids.push_back(ids.at(r));
    for (const auto& f : features) out.features.push_back(f.gather_rows(rows));
    out.labels = labels.gather_rows(rows);
    return out;
}

}  // namespace gmu
