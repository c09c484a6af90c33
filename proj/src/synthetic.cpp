// SPDX-License-Identifier: Apache-2.0
#include "gmu/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gmu {
namespace {

std::vector<double> draw(const Gaussian& g, Rng& rng) {
    std::vector<double> x(g.mean.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal(g.mean[i], g.stddev[i]);
    return x;
}

void check_gaussian(const Gaussian& g, std::size_t d, const char* what) {
    if (g.mean.size() != d || g.stddev.size() != d)
        throw std::invalid_argument(std::string("synthetic: ") + what + " has the wrong dimension");
    for (std::size_t i = 0; i < d; ++i) {
        if (!std::isfinite(g.mean[i])) throw std::invalid_argument(std::string("synthetic: ") + what + " mean not finite");
        if (!(g.stddev[i] > 0.0) || !std::isfinite(g.stddev[i]))
            throw std::invalid_argument(std::string("synthetic: ") + what + " needs positive deviations");
    }
}

double accuracy(const Tensor& probs, const Tensor& labels) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < labels.rows(); ++i) ok += (probs(i, 0) >= 0.5) == (labels(i, 0) == 1.0);
    return static_cast<double>(ok) / static_cast<double>(labels.rows());
}

}  // namespace

Gaussian Gaussian::isotropic(std::size_t d, double mean, double stddev) {
    return Gaussian{std::vector<double>(d, mean), std::vector<double>(d, stddev)};
}

SyntheticParams SyntheticParams::symmetric(std::size_t d, double class_mean, double noise_mean) {
    SyntheticParams p;
    p.d = d;
    p.visual[0] = p.text[0] = Gaussian::isotropic(d, -class_mean, 1.0);
    p.visual[1] = p.text[1] = Gaussian::isotropic(d, class_mean, 1.0);
    p.visual_noise = p.text_noise = Gaussian::isotropic(d, noise_mean, 1.0);
    return p;
}

SyntheticParams SyntheticParams::defaults(std::size_t d) { return symmetric(d, 1.5, 4.0); }
SyntheticParams SyntheticParams::centered_noise(std::size_t d) { return symmetric(d, 1.5, 0.0); }
SyntheticParams SyntheticParams::well_separated(std::size_t d) { return symmetric(d, 3.0, 8.0); }

void SyntheticParams::validate() const {
    if (d == 0) throw std::invalid_argument("synthetic: d must be positive");
    if (!(p_c >= 0.0 && p_c <= 1.0) || !(p_m >= 0.0 && p_m <= 1.0))
        throw std::invalid_argument("synthetic: rates must lie in [0, 1]");
    if (n_per_class == 0) throw std::invalid_argument("synthetic: n_per_class must be positive");
    check_gaussian(visual[0], d, "visual class 0");
    check_gaussian(visual[1], d, "visual class 1");
    check_gaussian(text[0], d, "text class 0");
    check_gaussian(text[1], d, "text class 1");
    check_gaussian(visual_noise, d, "visual noise");
    check_gaussian(text_noise, d, "text noise");
}

std::vector<SyntheticSample> generate_synthetic(const SyntheticParams& p) {
    p.validate();
    Rng rng(p.seed);
    std::size_t left[2] = {p.n_per_class, p.n_per_class};
    std::vector<SyntheticSample> out;
    out.reserve(2 * p.n_per_class);
    while (left[0] + left[1] > 0) {
        int c;
        if (left[0] == 0 || p.p_c == 1.0)
            c = left[1] ? 1 : 0;
        else if (left[1] == 0 || p.p_c == 0.0)
            c = left[0] ? 0 : 1;
        else
            c = rng.bernoulli(p.p_c) ? 1 : 0;
        if (left[c] == 0) continue;
        --left[c];
        SyntheticSample s;
        s.c = c;
        s.m = rng.bernoulli(p.p_m) ? 1 : 0;
        // Both branches are drawn every time so the stream layout does not depend on M.
        auto y_v = draw(p.visual[c], rng), noise_v = draw(p.visual_noise, rng);
        auto y_t = draw(p.text[c], rng), noise_t = draw(p.text_noise, rng);
        s.x_v = s.m ? std::move(y_v) : std::move(noise_v);
        s.x_t = s.m ? std::move(noise_t) : std::move(y_t);
        out.push_back(std::move(s));
    }
    return out;
}

MultilabelDataset observe(const std::vector<SyntheticSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("observe: no samples");
    const std::size_t n = samples.size(), dv = samples[0].x_v.size(), dt = samples[0].x_t.size();
    MultilabelDataset d;
    d.modality_names = {"visual", "text"};
    d.label_names = {"class"};
    d.features = {Tensor({n, dv}), Tensor({n, dt})};
    d.labels = Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        d.ids.push_back(std::to_string(i));
        for (std::size_t j = 0; j < dv; ++j) d.features[0](i, j) = samples[i].x_v[j];
        for (std::size_t j = 0; j < dt; ++j) d.features[1](i, j) = samples[i].x_t[j];
        d.labels(i, 0) = samples[i].c;
    }
    return d;
}

SyntheticSplit stratified_split(const std::vector<SyntheticSample>& samples, double train_fraction, Rng& rng) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("split: train fraction must lie in (0, 1)");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].c].push_back(i);
    SyntheticSplit split;
    for (auto& idx : by_class) {
        rng.shuffle(idx);
        const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
        for (std::size_t k = 0; k < idx.size(); ++k) (k < n_train ? split.train : split.test).push_back(samples[idx[k]]);
    }
    return split;
}

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
    const double n = static_cast<double>(a.size());
    if (a.empty()) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

SyntheticModels train_synthetic_models(const SyntheticParams& params, const SyntheticTraining& t) {
    const auto samples = generate_synthetic(params);
    Rng split_rng(derive_seed(params.seed, 1));
    auto split = stratified_split(samples, t.train_fraction, split_rng);
    const auto train = observe(split.train), test = observe(split.test);

    HyperConfig c;
    c.learning_rate = t.learning_rate;
    c.dropout = 0.0;
    c.max_norm = t.max_norm;
    c.init_range = t.init_range;
    c.batch_size = t.batch_size;
    c.max_epochs = t.epochs;
    c.hidden_size = 1;

    ModelSpec gmu_spec;
    gmu_spec.kind = ModelKind::gmu;
    gmu_spec.input_dims = train.dims();
    gmu_spec.labels = 1;
    gmu_spec.hidden_layers = 0;
    gmu_spec.gmu_direct = true;
    ModelSpec logistic_spec = gmu_spec;
    logistic_spec.kind = ModelKind::logistic;
    logistic_spec.gmu_direct = false;

    c.seed = derive_seed(params.seed, 2);
    auto g = train_model(gmu_spec, train, nullptr, c);
    c.seed = derive_seed(params.seed, 3);
    auto l = train_model(logistic_spec, train, nullptr, c);

    SyntheticRecord r;
    r.seed = params.seed;
    r.gmu_accuracy = accuracy(g.model.predict(test.features), test.labels);
    r.logistic_accuracy = accuracy(l.model.predict(test.features), test.labels);
    r.gmu_diverged = g.report.diverged;
    r.logistic_diverged = l.report.diverged;
    const Tensor z = g.model.gate_activations(test.features);
    std::vector<double> zs(z.rows()), ms(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double s = 0.0;
        for (std::size_t u = 0; u < z.cols(); ++u) s += z(i, u);
        zs[i] = s / static_cast<double>(z.cols());
        ms[i] = split.test[i].m;
    }
    r.gate_latent_correlation = pearson_correlation(zs, ms);
    return SyntheticModels{r, std::move(g.model), std::move(l.model), std::move(split)};
}

SyntheticRecord run_synthetic_experiment(const SyntheticParams& params, const SyntheticTraining& training) {
    return train_synthetic_models(params, training).record;
}

SuiteAggregate aggregate_records(std::vector<SyntheticRecord> records, double tie_tolerance) {
    SuiteAggregate a;
    a.n = records.size();
    a.tie_tolerance = tie_tolerance;
    for (const auto& r : records) {
        const double diff = r.gmu_accuracy - r.logistic_accuracy;
        if (diff > tie_tolerance)
            ++a.wins;
        else if (diff < -tie_tolerance)
            ++a.losses;
        else
            ++a.ties;
        a.mean_correlation += r.gate_latent_correlation;
        a.mean_abs_correlation += std::abs(r.gate_latent_correlation);
        a.mean_gmu_accuracy += r.gmu_accuracy;
        a.mean_logistic_accuracy += r.logistic_accuracy;
    }
    if (a.n) {
        const double n = static_cast<double>(a.n);
        a.mean_correlation /= n;
        a.mean_abs_correlation /= n;
        a.mean_gmu_accuracy /= n;
        a.mean_logistic_accuracy /= n;
    }
    a.records = std::move(records);
    return a;
}

SuiteAggregate run_synthetic_suite(const SyntheticParams& base, std::size_t n_experiments, std::uint64_t master_seed,
                                   const SyntheticTraining& training, std::size_t jobs, double tie_tolerance) {
    if (n_experiments == 0) throw std::invalid_argument("suite: n_experiments must be at least 1");
    base.validate();
    std::vector<SyntheticRecord> records(n_experiments);
    parallel_for(n_experiments, jobs, [&](std::size_t i) {
        SyntheticParams p = base;
        p.seed = derive_seed(master_seed, i);
        records[i] = run_synthetic_experiment(p, training);
    });
    return aggregate_records(std::move(records), tie_tolerance);
}

std::vector<GridRow> export_activation_grid(const Model& model, double v_lo, double v_hi, double t_lo, double t_hi,
                                            std::size_t resolution) {
    const auto& spec = model.spec();
    if (spec.kind != ModelKind::gmu || spec.input_dims != std::vector<std::size_t>{1, 1})
        throw std::invalid_argument("grid export needs a bimodal GMU with one feature per modality");
    if (resolution < 2) throw std::invalid_argument("grid export: resolution must be at least 2");
    if (!(v_hi > v_lo) || !(t_hi > t_lo)) throw std::invalid_argument("grid export: empty bounds");
    const std::size_t n = resolution * resolution;
    Tensor xv({n, 1}), xt({n, 1});
    auto at = [&](double lo, double hi, std::size_t k) {
        return k + 1 == resolution ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(resolution - 1);
    };
    for (std::size_t i = 0; i < resolution; ++i)
        for (std::size_t j = 0; j < resolution; ++j) {
            xv[i * resolution + j] = at(v_lo, v_hi, i);
            xt[i * resolution + j] = at(t_lo, t_hi, j);
        }
    const std::vector<Tensor> xs{xv, xt};
    const Tensor z = model.gate_activations(xs), p = model.predict(xs);
    std::vector<GridRow> rows(n);
    for (std::size_t r = 0; r < n; ++r) {
        double zm = 0.0;
        for (std::size_t u = 0; u < z.cols(); ++u) zm += z(r, u);
        rows[r] = GridRow{xv[r], xt[r], zm / static_cast<double>(z.cols()), p(r, 0)};
    }
    return rows;
}

double grid_gate_agreement(const std::vector<GridRow>& rows, std::size_t resolution,
                           const std::vector<SyntheticSample>& samples) {
    if (resolution < 2 || rows.size() != resolution * resolution)
        throw std::invalid_argument("grid agreement: row count does not match the resolution");
    if (samples.empty()) throw std::invalid_argument("grid agreement: no samples");
    const double v_lo = rows.front().x_v, v_hi = rows.back().x_v;
    const double t_lo = rows.front().x_t, t_hi = rows.back().x_t;
    auto nearest = [&](double x, double lo, double hi) {
        const double k = std::round((x - lo) / (hi - lo) * static_cast<double>(resolution - 1));
        return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(resolution - 1)));
    };
    std::size_t agree = 0;
    for (const auto& s : samples) {
        if (s.x_v.size() != 1 || s.x_t.size() != 1)
            throw std::invalid_argument("grid agreement: samples need one feature per modality");
        const auto& r = rows[nearest(s.x_v[0], v_lo, v_hi) * resolution + nearest(s.x_t[0], t_lo, t_hi)];
        agree += (r.z > 0.5) == (s.m == 1);
    }
    return static_cast<double>(agree) / static_cast<double>(samples.size());
}

void FusionTaskParams::validate() const {
    if (n < 2 || q == 0) throw std::invalid_argument("fusion task: need n >= 2 and q >= 1");
    if (d < q) throw std::invalid_argument("fusion task: d must give each label at least one coordinate");
    if (!(label_rate > 0.0 && label_rate < 1.0)) throw std::invalid_argument("fusion task: label_rate in (0, 1)");
    if (!(p_visual >= 0.0 && p_visual <= 1.0)) throw std::invalid_argument("fusion task: p_visual in [0, 1]");
}

MultilabelDataset generate_fusion_task(const FusionTaskParams& p) {
    p.validate();
    Rng rng(p.seed);
    const std::size_t block = p.d / p.q;
    MultilabelDataset out;
    out.modality_names = {"visual", "text"};
    for (std::size_t j = 0; j < p.q; ++j) out.label_names.push_back("label" + std::to_string(j));
    out.features = {Tensor({p.n, p.d}), Tensor({p.n, p.d})};
    out.labels = Tensor({p.n, p.q});
    for (std::size_t i = 0; i < p.n; ++i) {
        out.ids.push_back(std::to_string(i));
        for (std::size_t j = 0; j < p.q; ++j) out.labels(i, j) = rng.bernoulli(p.label_rate) ? 1.0 : 0.0;
        const std::size_t informative = rng.bernoulli(p.p_visual) ? 0 : 1;
        for (std::size_t m = 0; m < 2; ++m) {
            Tensor& f = out.features[m];
            for (std::size_t k = 0; k < p.d; ++k) {
                const double e = rng.normal();
                if (m != informative) {
                    f(i, k) = p.noise_mean + e;
                    continue;
                }
                const double y = out.labels(i, std::min(k / block, p.q - 1));
                f(i, k) = (2.0 * y - 1.0) * p.signal + e;
            }
        }
    }
    return out;
}

}  // namespace gmu
