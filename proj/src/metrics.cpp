// SPDX-License-Identifier: Apache-2.0
#include "gmu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gmu {
namespace {

std::vector<std::string> default_names(std::size_t q) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < q; ++j) names.push_back("label" + std::to_string(j));
    return names;
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

void require_unit_matrix(const Tensor& z, const LabelMatrix& pred, const char* what) {
    if (z.rank() != 2 || z.rows() != pred.rows())
        throw ShapeError(std::string(what) + ": z " + shape_str(z.shape()) + " vs " + std::to_string(pred.rows()) +
                         " predictions");
    for (double v : z.data())
        if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error(std::string(what) + ": gate value outside [0, 1]");
}

}  // namespace

LabelMatrix::LabelMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> values,
                         std::vector<std::string> names)
    : rows_(rows), cols_(cols), values_(std::move(values)), names_(std::move(names)) {
    if (values_.size() != rows_ * cols_) throw std::invalid_argument("label matrix: size mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (values_[i] > 1)
            throw std::invalid_argument("label matrix: non-binary value at row " + std::to_string(i / cols_) +
                                        ", column " + std::to_string(i % cols_));
    if (names_.empty()) names_ = default_names(cols_);
    if (names_.size() != cols_) throw std::invalid_argument("label matrix: name count differs from column count");
}

LabelMatrix LabelMatrix::from_tensor(const Tensor& t, std::vector<std::string> names) {
    std::vector<std::uint8_t> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] != 0.0 && t[i] != 1.0)
            throw std::invalid_argument("label matrix: non-binary value at row " + std::to_string(i / t.cols()) +
                                        ", column " + std::to_string(i % t.cols()));
        v[i] = t[i] == 1.0;
    }
    return LabelMatrix(t.rows(), t.cols(), std::move(v), std::move(names));
}

Tensor LabelMatrix::to_tensor() const {
    Tensor t({rows_, cols_});
    for (std::size_t i = 0; i < values_.size(); ++i) t[i] = values_[i];
    return t;
}

LabelMatrix threshold_probs(const Tensor& probs, double threshold, std::vector<std::string> names) {
    std::vector<std::uint8_t> v(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!(probs[i] >= 0.0 && probs[i] <= 1.0))
            throw std::domain_error("threshold_probs: probability outside [0, 1] at flat index " + std::to_string(i));
        v[i] = probs[i] >= threshold;
    }
    return LabelMatrix(probs.rows(), probs.cols(), std::move(v), std::move(names));
}

MetricsReport multilabel_f1(const LabelMatrix& pred, const LabelMatrix& truth, WeightedMode weighted_mode) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw ShapeError("multilabel_f1: prediction [" + std::to_string(pred.rows()) + ", " +
                         std::to_string(pred.cols()) + "] vs truth [" + std::to_string(truth.rows()) + ", " +
                         std::to_string(truth.cols()) + "]");
    if (pred.names() != truth.names()) throw std::invalid_argument("multilabel_f1: label names or order differ");

    const std::size_t n = truth.rows(), q = truth.cols();
    MetricsReport r;
    r.n = n;
    r.q = q;
    r.weighted_mode = weighted_mode;
    r.labels.resize(q);
    for (std::size_t j = 0; j < q; ++j) r.labels[j].name = truth.names()[j];

    double sample_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t inter = 0, np = 0, nt = 0;
        for (std::size_t j = 0; j < q; ++j) {
            const bool p = pred(i, j), t = truth(i, j);
            inter += p && t;
            np += p;
            nt += t;
            auto& s = r.labels[j];
            s.tp += p && t;
            s.fp += p && !t;
            s.fn += !p && t;
        }
        sample_sum += np + nt == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
    }
    r.f1_samples = n ? sample_sum / static_cast<double>(n) : 0.0;

    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    double macro = 0.0, weighted = 0.0;
    for (auto& s : r.labels) {
        s.support = s.tp + s.fn;
        s.precision = ratio(static_cast<double>(s.tp), static_cast<double>(s.tp + s.fp));
        s.recall = ratio(static_cast<double>(s.tp), static_cast<double>(s.tp + s.fn));
        s.f1 = harmonic(s.precision, s.recall);
        tp += s.tp;
        fp += s.fp;
        fn += s.fn;
        support += s.support;
        macro += s.f1;
        weighted += static_cast<double>(s.support) * s.f1;
    }
    r.f1_macro = q ? macro / static_cast<double>(q) : 0.0;
    if (weighted_mode == WeightedMode::support)
        r.f1_weighted = ratio(weighted, static_cast<double>(support));
    else
        r.f1_weighted = q ? weighted / static_cast<double>(q * q) : 0.0;
    r.precision_micro = ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
    r.recall_micro = ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
    r.f1_micro = harmonic(r.precision_micro, r.recall_micro);
    return r;
}

std::vector<GateFractions> gate_activation_fractions(const Tensor& z, const LabelMatrix& pred,
                                                     std::span<const std::size_t> selected_units) {
    if (selected_units.empty()) throw std::invalid_argument("gate_activation_fractions: no units selected");
    require_unit_matrix(z, pred, "gate_activation_fractions");
    for (auto u : selected_units)
        if (u >= z.cols()) throw std::out_of_range("gate_activation_fractions: unit index out of range");

    std::vector<double> mean_z(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double s = 0.0;
        for (auto u : selected_units) s += z(i, u);
        mean_z[i] = s / static_cast<double>(selected_units.size());
    }
    std::vector<GateFractions> out;
    for (std::size_t j = 0; j < pred.cols(); ++j) {
        GateFractions f;
        f.label = pred.names()[j];
        std::size_t visual = 0;
        for (std::size_t i = 0; i < pred.rows(); ++i) {
            if (!pred(i, j)) continue;
            ++f.predicted;
            visual += mean_z[i] > 0.5;
        }
        if (f.predicted) {
            f.visual_pct = 100.0 * static_cast<double>(visual) / static_cast<double>(f.predicted);
            f.textual_pct = 100.0 - *f.visual_pct;
        }
        out.push_back(std::move(f));
    }
    return out;
}

double binary_mutual_information(const Tensor& z, std::size_t unit, const LabelMatrix& pred, std::size_t label) {
    const std::size_t n = pred.rows();
    if (n == 0) return 0.0;
    double joint[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < n; ++i) joint[z(i, unit) > 0.5 ? 1 : 0][pred(i, label) ? 1 : 0] += 1.0;
    double mi = 0.0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            if (joint[a][b] == 0.0) continue;
            const double pa = (joint[a][0] + joint[a][1]) / static_cast<double>(n);
            const double pb = (joint[0][b] + joint[1][b]) / static_cast<double>(n);
            const double pab = joint[a][b] / static_cast<double>(n);
            mi += pab * std::log(pab / (pa * pb));
        }
    return std::max(mi, 0.0);
}

std::vector<double> unit_mutual_information(const Tensor& z, const LabelMatrix& pred) {
    require_unit_matrix(z, pred, "unit_mutual_information");
    std::vector<double> scores(z.cols(), 0.0);
    for (std::size_t u = 0; u < z.cols(); ++u)
        for (std::size_t j = 0; j < pred.cols(); ++j)
            scores[u] = std::max(scores[u], binary_mutual_information(z, u, pred, j));
    return scores;
}

std::vector<std::size_t> select_units_by_mutual_information(const Tensor& z, const LabelMatrix& pred,
                                                            std::size_t top_k) {
    if (z.rank() != 2 || top_k > z.cols())
        throw std::invalid_argument("select_units_by_mutual_information: top_k exceeds unit count");
    const auto scores = unit_mutual_information(z, pred);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(top_k);
    return order;
}

}  // namespace gmu
