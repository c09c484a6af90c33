// SPDX-License-Identifier: Apache-2.0
//
// Minibatch training with Adam, max-norm projection and best-epoch
// selection, plus random hyperparameter search.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gmu/dataset.hpp"
#include "gmu/models.hpp"

namespace gmu {

struct HyperConfig {
    std::size_t hidden_size = 128;
    double learning_rate = 1e-2;
    double dropout = 0.5;
    double max_norm = 10.0;
    double init_range = 1e-2;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;  // epochs without dev improvement before stopping
    std::uint64_t seed = 0;

    /// What training itself accepts: learning rate >= 0, dropout in [0, 1),
    /// positive max-norm, init range, batch size and epoch count.
    void validate() const;

    bool operator==(const HyperConfig&) const = default;
};

/// Ranges explored by the random search.
struct SearchSpace {
    std::vector<std::size_t> hidden_sizes{64, 128, 256, 512};
    double learning_rate_lo = 1e-3, learning_rate_hi = 1e-1;
    double dropout_lo = 0.3, dropout_hi = 0.7;
    double max_norm_lo = 5.0, max_norm_hi = 20.0;
    double init_range_lo = 1e-3, init_range_hi = 1e-1;
    /// Learning rate and init range drawn log-uniformly; linear-uniform otherwise.
    bool log_scale = true;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;

    bool contains(const HyperConfig& c) const;
};

/// Draws every field from `space`; the seed comes from `rng` too.
HyperConfig sample_hyper_config(const SearchSpace& space, Rng& rng);

struct TrainReport {
    std::vector<double> train_loss;    // per epoch, mean over samples
    std::vector<double> dev_macro_f1;  // per epoch, empty without a dev set
    std::size_t best_epoch = 0;        // zero-based
    double best_dev_macro_f1 = 0.0;
    std::size_t epochs_run = 0;
    std::size_t steps = 0;
    std::string snapshot_id;  // digest of the retained parameters
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    HyperConfig config;
    bool diverged = false;
    std::string failure;  // diagnostic when diverged
};

struct TrainResult {
    TrainReport report;
    Model model;  // parameters of the best epoch
};

struct TrainOptions {
    /// Called after every optimizer step and projection.
    std::function<void(const Model&)> after_step;
};

/// Shuffles the training rows each epoch (a final batch of one row joins the
/// previous batch), steps Adam on every minibatch and projects max-norm
/// constrained weights. With a dev set the best dev macro-f1 epoch is kept and
/// training stops after `patience` epochs without improvement; without one
/// the last epoch is kept. A non-finite loss or gradient stops training and
/// sets `diverged`, keeping the best parameters seen so far.
TrainResult train_model(const ModelSpec& spec, const MultilabelDataset& train, const MultilabelDataset* dev,
                        const HyperConfig& config, const TrainOptions& options = {});

struct SearchResult {
    std::size_t best_index = 0;
    std::vector<TrainReport> trials;
    Model best_model;
};

/// Trains one model per config on `jobs` threads and keeps the highest best
/// dev macro-f1, ties to the lowest index. Diverged trials lose to any
/// finished one.
SearchResult search_over_configs(const ModelSpec& spec, const MultilabelDataset& train,
                                 const MultilabelDataset& dev, const std::vector<HyperConfig>& configs,
                                 std::size_t jobs = 1);

/// Trial i samples its config from a stream derived from (master_seed, i),
/// so results do not depend on `jobs`.
SearchResult random_hyperparameter_search(const ModelSpec& spec, const MultilabelDataset& train,
                                          const MultilabelDataset& dev, std::size_t n_trials,
                                          std::uint64_t master_seed, const SearchSpace& space = {},
                                          std::size_t jobs = 1);

/// Runs body(i) for i in [0, n) on up to `jobs` threads. The first exception
/// thrown (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body);

}  // namespace gmu
