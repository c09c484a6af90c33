// SPDX-License-Identifier: Apache-2.0
//
// Multilabel f-score averages, per-label scores and gate-activation analysis.
//
// Conventions where a ratio has a zero denominator:
//   - a sample with no predicted and no true labels scores f1 = 1;
//   - precision, recall and f1 of a label (and the micro scores) are 0.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmu/tensor.hpp"

namespace gmu {

/// Binary [N, Q] matrix with label names.
class LabelMatrix {
public:
    LabelMatrix() = default;
    /// Throws std::invalid_argument on entries outside {0, 1} or a size
    /// mismatch. Names default to "label0".."label{Q-1}".
    LabelMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> values,
                std::vector<std::string> names = {});
    /// Entries must be exactly 0.0 or 1.0.
    static LabelMatrix from_tensor(const Tensor& t, std::vector<std::string> names = {});

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j] != 0; }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<std::uint8_t>& values() const { return values_; }
    Tensor to_tensor() const;

    bool operator==(const LabelMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> values_;
    std::vector<std::string> names_;
};

/// 1 where prob >= threshold. Probabilities must lie in [0, 1].
LabelMatrix threshold_probs(const Tensor& probs, double threshold = 0.5, std::vector<std::string> names = {});

struct LabelScore {
    std::string name;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t support = 0;  // true instances, tp + fn
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// support: sum_j Q_j f1_j / sum_j Q_j. literal: (1 / Q^2) sum_j Q_j f1_j,
/// the unnormalized form, kept for comparison with published numbers.
enum class WeightedMode { support, literal };

struct MetricsReport {
    std::size_t n = 0;
    std::size_t q = 0;
    double f1_samples = 0.0;
    double f1_micro = 0.0;
    double f1_macro = 0.0;
    double f1_weighted = 0.0;
    double precision_micro = 0.0;
    double recall_micro = 0.0;
    WeightedMode weighted_mode = WeightedMode::support;
    std::vector<LabelScore> labels;
};

MetricsReport multilabel_f1(const LabelMatrix& pred, const LabelMatrix& truth,
                            WeightedMode weighted_mode = WeightedMode::support);

struct GateFractions {
    std::string label;
    std::size_t predicted = 0;
    /// Unset when no sample was predicted positive for the label.
    std::optional<double> visual_pct;
    std::optional<double> textual_pct;
};

/// For each label, over the samples predicted positive: averages the
/// selected units' z per sample and reports the share with mean z > 0.5
/// (visual) and mean z <= 0.5 (textual), in percent.
std::vector<GateFractions> gate_activation_fractions(const Tensor& z, const LabelMatrix& pred,
                                                     std::span<const std::size_t> selected_units);

/// Mutual information (nats) between z > 0.5 for one unit and one label column.
double binary_mutual_information(const Tensor& z, std::size_t unit, const LabelMatrix& pred, std::size_t label);

/// Score of every unit: max over labels of binary_mutual_information.
std::vector<double> unit_mutual_information(const Tensor& z, const LabelMatrix& pred);

/// Indices of the top_k units by score, ties broken by lower index.
std::vector<std::size_t> select_units_by_mutual_information(const Tensor& z, const LabelMatrix& pred,
                                                            std::size_t top_k);

}  // namespace gmu
