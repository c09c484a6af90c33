// SPDX-License-Identifier: Apache-2.0
//
// Two-modality generative benchmark with a latent informative-modality bit,
// GMU vs logistic experiments, and a multilabel fusion task.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gmu/dataset.hpp"
#include "gmu/models.hpp"
#include "gmu/training.hpp"

namespace gmu {

/// Diagonal Gaussian.
struct Gaussian {
    std::vector<double> mean;
    std::vector<double> stddev;

    static Gaussian isotropic(std::size_t d, double mean, double stddev);
};

/// C ~ Bernoulli(p_c), M ~ Bernoulli(p_m). When M = 1 the visual features come
/// from visual[C] and the text features from text_noise; when M = 0 the roles
/// swap: visual_noise and text[C].
struct SyntheticParams {
    std::size_t d = 2;
    double p_c = 0.5;
    double p_m = 0.5;
    Gaussian visual[2];
    Gaussian text[2];
    Gaussian visual_noise;
    Gaussian text_noise;
    std::size_t n_per_class = 200;
    std::uint64_t seed = 0;

    /// Class means -1.5 / +1.5, noise mean +4, unit deviations.
    static SyntheticParams defaults(std::size_t d = 2);
    /// Class means -1.5 / +1.5 with zero-mean noise: the Bayes log-odds are
    /// linear in (x_v, x_t), so logistic regression is already optimal.
    static SyntheticParams centered_noise(std::size_t d = 2);
    /// Class means -3 / +3, noise mean +8, unit deviations.
    static SyntheticParams well_separated(std::size_t d = 2);
    /// Class means and noise means built from scalars, unit deviations.
    static SyntheticParams symmetric(std::size_t d, double class_mean, double noise_mean);

    /// Throws std::invalid_argument.
    void validate() const;
};

struct SyntheticSample {
    std::vector<double> x_v;
    std::vector<double> x_t;
    int c = 0;
    int m = 0;  // evaluation only
};

/// Exactly n_per_class samples of each class: C is drawn from Bernoulli(p_c)
/// and redrawn while its class is full.
std::vector<SyntheticSample> generate_synthetic(const SyntheticParams& params);

/// What a trainer may see: features (visual, text) and the class as a single
/// label column. The latent bit is dropped.
MultilabelDataset observe(const std::vector<SyntheticSample>& samples);

struct SyntheticSplit {
    std::vector<SyntheticSample> train;
    std::vector<SyntheticSample> test;
};

/// Per class, a seeded shuffle then the first round(train_fraction * n) rows.
SyntheticSplit stratified_split(const std::vector<SyntheticSample>& samples, double train_fraction, Rng& rng);

/// Training budget shared by both models of an experiment.
struct SyntheticTraining {
    double train_fraction = 0.7;
    double learning_rate = 0.05;
    std::size_t epochs = 150;
    std::size_t batch_size = 32;
    double init_range = 0.01;
    double max_norm = 20.0;
};

struct SyntheticRecord {
    std::uint64_t seed = 0;
    double gmu_accuracy = 0.0;
    double logistic_accuracy = 0.0;
    /// Pearson correlation of held-out z (mean over units) with M; 0 when
    /// either is constant.
    double gate_latent_correlation = 0.0;
    bool gmu_diverged = false;
    bool logistic_diverged = false;

    bool operator==(const SyntheticRecord&) const = default;
};

struct SyntheticModels {
    SyntheticRecord record;
    Model gmu;
    Model logistic;
    SyntheticSplit split;
};

/// Single-unit bimodal GMU whose output h is the logit, against logistic
/// regression on [x_v, x_t]; same split, optimizer and budget.
SyntheticModels train_synthetic_models(const SyntheticParams& params, const SyntheticTraining& training = {});
SyntheticRecord run_synthetic_experiment(const SyntheticParams& params, const SyntheticTraining& training = {});

struct SuiteAggregate {
    std::size_t n = 0;
    std::size_t wins = 0;
    std::size_t ties = 0;
    std::size_t losses = 0;
    double tie_tolerance = 0.005;
    double mean_correlation = 0.0;
    double mean_abs_correlation = 0.0;
    double mean_gmu_accuracy = 0.0;
    double mean_logistic_accuracy = 0.0;
    std::vector<SyntheticRecord> records;
};

/// Experiment i uses seed derive_seed(master_seed, i). A win needs the GMU
/// ahead by more than tie_tolerance (accuracy as a fraction).
SuiteAggregate run_synthetic_suite(const SyntheticParams& base, std::size_t n_experiments,
                                   std::uint64_t master_seed, const SyntheticTraining& training = {},
                                   std::size_t jobs = 1, double tie_tolerance = 0.005);

/// Folds records in index order.
SuiteAggregate aggregate_records(std::vector<SyntheticRecord> records, double tie_tolerance);

struct GridRow {
    double x_v = 0.0;
    double x_t = 0.0;
    double z = 0.0;
    double p = 0.0;
};

/// resolution x resolution lattice, x_v in the outer loop, both axes from lo
/// to hi inclusive. Needs a bimodal GMU with one feature per modality.
std::vector<GridRow> export_activation_grid(const Model& model, double v_lo, double v_hi, double t_lo, double t_hi,
                                            std::size_t resolution);

/// Share of samples whose nearest lattice point has z > 0.5 exactly when the
/// visual modality is the informative one (M = 1), i.e. the gate suppresses
/// the noisy modality. `rows` must come from export_activation_grid.
double grid_gate_agreement(const std::vector<GridRow>& rows, std::size_t resolution,
                           const std::vector<SyntheticSample>& samples);

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

/// Multilabel fusion task. Every sample carries all q labels in one
/// modality, chosen by a latent bit (visual with probability p_visual); the
/// other modality is replaced by class-independent noise. Within the
/// informative modality label j owns a block of d / q coordinates with mean
/// +signal (label on) or -signal (off) and unit noise.
struct FusionTaskParams {
    std::size_t n = 1200;
    std::size_t d = 8;  // per modality
    std::size_t q = 4;
    double label_rate = 0.4;
    double signal = 1.0;
    double noise_mean = 3.0;
    double p_visual = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

MultilabelDataset generate_fusion_task(const FusionTaskParams& params);

}  // namespace gmu
