// SPDX-License-Identifier: Apache-2.0
#include "gmu/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "gmu/metrics.hpp"
#include "gmu/optim.hpp"
#include "gmu/regularize.hpp"

namespace gmu {
namespace {

enum Stream : std::uint64_t { init_stream = 0, shuffle_stream = 1, dropout_stream = 2 };

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    if (out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back()[0]);
        out.pop_back();
    }
    return out;
}

void check_compatible(const ModelSpec& spec, const MultilabelDataset& d, const char* what) {
    d.validate();
    if (d.dims() != spec.input_dims)
        throw std::invalid_argument(std::string(what) + " set modality widths do not match the model");
    if (d.label_count() != spec.labels)
        throw std::invalid_argument(std::string(what) + " set label count does not match the model");
}

double dev_macro_f1(const Model& model, const MultilabelDataset& dev) {
    const Tensor probs = model.predict(dev.features);
    return multilabel_f1(threshold_probs(probs, 0.5, dev.label_names), LabelMatrix::from_tensor(dev.labels, dev.label_names))
        .f1_macro;
}

bool better(const TrainReport& a, const TrainReport& b) {
    if (a.diverged != b.diverged) return !a.diverged;
    return a.best_dev_macro_f1 > b.best_dev_macro_f1;
}

}  // namespace

void HyperConfig::validate() const {
    if (hidden_size == 0) throw std::invalid_argument("config: hidden_size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("config: learning_rate must be finite and >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("config: dropout must lie in [0, 1)");
    if (!(max_norm > 0.0)) throw std::invalid_argument("config: max_norm must be positive");
    if (!(init_range > 0.0) || !std::isfinite(init_range))
        throw std::invalid_argument("config: init_range must be positive");
    if (batch_size == 0) throw std::invalid_argument("config: batch_size must be positive");
    if (max_epochs == 0) throw std::invalid_argument("config: max_epochs must be positive");
}

bool SearchSpace::contains(const HyperConfig& c) const {
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    return std::find(hidden_sizes.begin(), hidden_sizes.end(), c.hidden_size) != hidden_sizes.end() &&
           in(c.learning_rate, learning_rate_lo, learning_rate_hi) && in(c.dropout, dropout_lo, dropout_hi) &&
           in(c.max_norm, max_norm_lo, max_norm_hi) && in(c.init_range, init_range_lo, init_range_hi) &&
           c.batch_size == batch_size && c.max_epochs == max_epochs && c.patience == patience;
}

HyperConfig sample_hyper_config(const SearchSpace& s, Rng& rng) {
    if (s.hidden_sizes.empty()) throw std::invalid_argument("search space: no hidden sizes");
    auto scaled = [&](double lo, double hi) {
        // Clamp guards the upper edge against exp(log(hi)) rounding above hi.
        return s.log_scale ? std::clamp(rng.log_uniform(lo, hi), lo, hi) : rng.uniform(lo, hi);
    };
    HyperConfig c;
    c.hidden_size = s.hidden_sizes[rng.uniform_index(s.hidden_sizes.size())];
    c.learning_rate = scaled(s.learning_rate_lo, s.learning_rate_hi);
    c.dropout = rng.uniform(s.dropout_lo, s.dropout_hi);
    c.max_norm = rng.uniform(s.max_norm_lo, s.max_norm_hi);
    c.init_range = scaled(s.init_range_lo, s.init_range_hi);
    c.batch_size = s.batch_size;
    c.max_epochs = s.max_epochs;
    c.patience = s.patience;
    c.seed = rng.next_u64();
    return c;
}

TrainResult train_model(const ModelSpec& spec, const MultilabelDataset& train, const MultilabelDataset* dev,
                        const HyperConfig& config, const TrainOptions& options) {
    config.validate();
    check_compatible(spec, train, "training");
    if (dev) check_compatible(spec, *dev, "dev");
    if (train.size() == 0) throw std::invalid_argument("training set is empty");

    const auto start = std::chrono::steady_clock::now();
    Rng init_rng(derive_seed(config.seed, init_stream));
    Rng shuffle_rng(derive_seed(config.seed, shuffle_stream));
    Rng dropout_rng(derive_seed(config.seed, dropout_stream));

    Model model(spec, config.hidden_size, config.init_range, init_rng);
    AdamState adam;
    adam.alpha = config.learning_rate;
    const auto params = model.parameters();

    TrainReport report;
    report.seed = config.seed;
    report.config = config;
    std::map<std::string, Tensor> best_state = model.state();
    std::size_t since_best = 0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const ForwardContext ctx{Mode::train, config.dropout, &dropout_rng};

    for (std::size_t epoch = 0; epoch < config.max_epochs && !report.diverged; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (const auto& batch : make_batches(order, config.batch_size)) {
            std::vector<Tensor> xs;
            for (const auto& f : train.features) xs.push_back(f.gather_rows(batch));
            const Tensor y = train.labels.gather_rows(batch);
            for (auto* p : params) p->zero_grad();
            Graph g;
            const auto nodes = model.forward(g, xs, &y, ctx);
            const double loss = g.value(*nodes.loss).item();
            if (!std::isfinite(loss)) {
                report.diverged = true;
                report.failure = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(report.steps + 1);
                break;
            }
            g.backward(*nodes.loss);
            try {
                adam_step(params, adam);
            } catch (const NonFiniteError& e) {
                report.diverged = true;
                report.failure = e.what();
                break;
            }
            for (auto* p : params) apply_max_norm(*p, config.max_norm);
            ++report.steps;
            if (auto bad = std::find_if(params.begin(), params.end(), [](auto* p) { return !p->value.all_finite(); });
                bad != params.end()) {
                report.diverged = true;
                report.failure = "non-finite value in " + (*bad)->name + " after step " + std::to_string(report.steps);
                break;
            }
            loss_sum += loss * static_cast<double>(batch.size());
            if (options.after_step) options.after_step(model);
        }
        if (report.diverged) break;
        report.train_loss.push_back(loss_sum / static_cast<double>(train.size()));
        report.epochs_run = epoch + 1;

        if (!dev) {
            report.best_epoch = epoch;
            best_state = model.state();
            continue;
        }
        const double f1 = dev_macro_f1(model, *dev);
        report.dev_macro_f1.push_back(f1);
        if (epoch == 0 || f1 > report.best_dev_macro_f1) {
            report.best_dev_macro_f1 = f1;
            report.best_epoch = epoch;
            best_state = model.state();
            since_best = 0;
        } else if (++since_best >= config.patience && config.patience > 0) {
            break;
        }
    }
    if (dev || report.diverged) model.load_state(best_state);
    report.snapshot_id = state_digest(model.state());
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return TrainResult{std::move(report), std::move(model)};
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

SearchResult search_over_configs(const ModelSpec& spec, const MultilabelDataset& train,
                                 const MultilabelDataset& dev, const std::vector<HyperConfig>& configs,
                                 std::size_t jobs) {
    if (configs.empty()) throw std::invalid_argument("search: at least one trial is required");
    std::vector<std::optional<TrainResult>> results(configs.size());
    parallel_for(configs.size(), jobs, [&](std::size_t i) { results[i] = train_model(spec, train, &dev, configs[i]); });

    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i)
        if (better(results[i]->report, results[best]->report)) best = i;
    std::vector<TrainReport> trials;
    for (auto& r : results) trials.push_back(r->report);
    return SearchResult{best, std::move(trials), std::move(results[best]->model)};
}

SearchResult random_hyperparameter_search(const ModelSpec& spec, const MultilabelDataset& train,
                                          const MultilabelDataset& dev, std::size_t n_trials,
                                          std::uint64_t master_seed, const SearchSpace& space, std::size_t jobs) {
    if (n_trials == 0) throw std::invalid_argument("search: n_trials must be at least 1");
    std::vector<HyperConfig> configs;
    for (std::size_t i = 0; i < n_trials; ++i) {
        Rng rng(derive_seed(master_seed, i));
        configs.push_back(sample_hyper_config(space, rng));
    }
    return search_over_configs(spec, train, dev, configs, jobs);
}

}  // namespace gmu
