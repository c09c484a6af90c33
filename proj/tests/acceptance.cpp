// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// all pass.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>

#include "gmu/cli.hpp"
#include "gmu/io.hpp"
#include "gmu/synthetic.hpp"
#include "metrics_oracle.hpp"
#include "prim_cases.hpp"
#include "test_util.hpp"

using namespace gmu;
using namespace gmu::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

std::size_t jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

// --- 1 ---------------------------------------------------------------------

/// Smallest gap between the two largest pieces over every max_pieces node.
double kink_margin(const Graph& g) {
    double margin = INFINITY;
    for (std::size_t id = 0; id < g.size(); ++id) {
        const NodeId n{id};
        if (g.kind(n) != Prim::max_pieces) continue;
        const Tensor& x = g.value(g.inputs(n)[0]);
        const std::size_t k = g.attr(n).width;
        for (std::size_t start = 0; start < x.size(); start += k) {
            std::vector<double> v(x.data().begin() + start, x.data().begin() + start + k);
            std::sort(v.begin(), v.end());
            margin = std::min(margin, v[k - 1] - v[k - 2]);
        }
    }
    return margin;
}

/// Largest |analytic - central difference| over the entries of `p`.
double abs_gradient_error(const LossBuilder& build, Parameter& p, double step) {
    Tensor analytic;
    {
        Graph g;
        const NodeId loss = build(g);
        for (auto& [name, q] : g.parameters()) q->zero_grad();
        g.backward(loss);
        analytic = p.grad;
        for (auto& [name, q] : g.parameters()) q->zero_grad();
    }
    const auto eval = [&] {
        Graph g;
        return g.value(build(g))[0];
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double saved = p.value[i];
        p.value[i] = saved + step;
        const double up = eval();
        p.value[i] = saved - step;
        const double down = eval();
        p.value[i] = saved;
        worst = std::max(worst, std::abs(analytic[i] - (up - down) / (2.0 * step)));
    }
    return worst;
}

Outcome gradient_fidelity() {
    constexpr int kPoints = 20;
    constexpr double kTol = 1e-5, kStep = 1e-6;
    double worst_prim = 0.0;
    Rng rng(2024);
    for (const auto& c : prim_cases()) {
        for (int point = 0; point < kPoints;) {
            std::vector<Parameter> ps;
            for (auto& t : c.inputs(rng)) ps.emplace_back("in" + std::to_string(ps.size()), std::move(t));
            const auto build = [&](Graph& g) {
                std::vector<NodeId> ids;
                for (auto& p : ps) ids.push_back(g.param(p));
                return weighted_sum(g, g.apply(c.kind, ids, c.attr), 99 + point);
            };
            std::vector<Parameter*> ptrs;
            for (auto& p : ps) ptrs.push_back(&p);
            if (!well_conditioned(build, ptrs)) continue;
            ++point;
            for (auto& p : ps) worst_prim = std::max(worst_prim, gradient_check(build, p, kStep));
        }
    }

    struct LayerCase {
        const char* name;
        ModelKind kind;
        std::vector<std::size_t> dims;
        bool batch_norm = false;
    };
    const std::vector<LayerCase> layers{
        {"gmu", ModelKind::gmu, {3, 2}},          {"gmu k=3", ModelKind::gmu, {3, 2, 4}},
        {"maxout_mlp", ModelKind::maxout_mlp, {3, 2}}, {"logistic", ModelKind::logistic, {3, 2}},
        {"moe_tied", ModelKind::moe_tied, {3, 2}},  {"moe_untied", ModelKind::moe_untied, {3, 2}},
        {"linear_sum", ModelKind::linear_sum, {3, 2}}, {"concat", ModelKind::concat, {3, 2}},
        {"maxout_mlp+bn", ModelKind::maxout_mlp, {3, 2}, true}, {"gmu+bn", ModelKind::gmu, {3, 2}, true},
    };
    double worst_layer = 0.0, worst_shift = 0.0;
    std::string worst_name = "-";
    std::size_t resampled = 0;
    bool starved = false;
    for (const auto& lc : layers) {
        for (int point = 0, attempts = 0; point < kPoints; ++attempts) {
            if (attempts == 2000) {
                starved = true;
                worst_name = std::string(lc.name) + ": no usable points";
                break;
            }
            ModelSpec spec;
            spec.kind = lc.kind;
            spec.input_dims = lc.dims;
            spec.labels = 2;
            spec.hidden_layers = lc.kind == ModelKind::logistic ? 0 : 1;
            spec.expert_layers = 1;
            spec.gmu_bias = true;
            spec.batch_norm = lc.batch_norm;
            Model model(spec, 3, 1.0, rng);
            std::vector<Tensor> xs;
            for (auto d : lc.dims) xs.push_back(random_tensor({6, d}, rng, -1.0, 1.0));
            const Tensor y = random_binary({6, 2}, rng);
            const ForwardContext ctx{Mode::train, 0.0, nullptr};
            const LossBuilder build = [&](Graph& g) { return *model.forward(g, xs, &y, ctx).loss; };
            // Maxout biases feeding batch norm: absolute check.
            std::vector<Parameter*> params, shifts;
            for (auto* p : model.parameters())
                (lc.batch_norm && p->name.find(".maxout") != std::string::npos && p->name.ends_with(".b") ? shifts
                                                                                                         : params)
                    .push_back(p);
            {
                Graph g;
                build(g);
                if (kink_margin(g) < 1e-4) {
                    ++resampled;
                    continue;
                }
            }
            if (!well_conditioned(build, params)) {
                ++resampled;
                continue;
            }
            ++point;
            for (auto* p : params) {
                const double e = gradient_check(build, *p, kStep);
                if (e > worst_layer) {
                    worst_layer = e;
                    worst_name = lc.name;
                }
            }
            for (auto* p : shifts) worst_shift = std::max(worst_shift, abs_gradient_error(build, *p, kStep));
        }
    }
    return {!starved && worst_prim < kTol && worst_layer < kTol && worst_shift < 1e-8,
            fmt("primitives max rel err %.2e, layers max rel err %.2e", worst_prim, worst_layer) + " (" +
                worst_name + "), " + std::to_string(kPoints) + " points each, " + std::to_string(resampled) +
                fmt(" degenerate points resampled, tol 1e-5; pre-bn maxout biases max abs err %.2e (tol 1e-8)",
                    worst_shift)};
}

// --- 2 ---------------------------------------------------------------------

Outcome synthetic_suite() {
    const auto a = run_synthetic_suite(SyntheticParams::defaults(), 1000, 7, {}, jobs());
    return {a.wins >= 250 && a.losses <= 10,
            "n=1000 seed 7: wins " + std::to_string(a.wins) + " (need >= 250), ties " + std::to_string(a.ties) +
                ", losses " + std::to_string(a.losses) + " (need <= 10)" +
                fmt(", mean acc gmu %.4f logistic %.4f", a.mean_gmu_accuracy, a.mean_logistic_accuracy)};
}

// --- 3 ---------------------------------------------------------------------

Outcome gate_latent_recovery() {
    const auto a = run_synthetic_suite(SyntheticParams::well_separated(), 50, 7, {}, jobs());
    std::size_t strong = 0;
    for (const auto& r : a.records) strong += std::abs(r.gate_latent_correlation) >= 0.90;
    return {a.mean_abs_correlation >= 0.95 && strong >= 45,
            fmt("mean |corr(z, M)| %.4f (need >= 0.95), ", a.mean_abs_correlation) + std::to_string(strong) +
                "/50 seeds >= 0.90 (need >= 45)"};
}

// --- 4 ---------------------------------------------------------------------

Outcome metrics_oracle() {
    Rng rng(4);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(8), q = 1 + rng.uniform_index(4);
        std::vector<std::uint8_t> p(n * q), t(n * q);
        for (auto& v : p) v = rng.bernoulli(0.45);
        for (auto& v : t) v = rng.bernoulli(0.45);
        const LabelMatrix pred(n, q, p), truth(n, q, t);
        const auto r = multilabel_f1(pred, truth);
        const auto b = brute_force(pred, truth);
        worst = std::max({worst, std::abs(r.f1_samples - b.samples), std::abs(r.f1_micro - b.micro),
                          std::abs(r.f1_macro - b.macro), std::abs(r.f1_weighted - b.weighted)});
    }
    const auto y = rows_of(3, {{0}, {1, 2}, {0, 2}});
    const auto perfect = multilabel_f1(y, y);
    const bool hand1 = perfect.f1_samples == 1.0 && perfect.f1_micro == 1.0 && perfect.f1_macro == 1.0 &&
                       perfect.f1_weighted == 1.0;
    const bool hand2 = multilabel_f1(rows_of(2, {{0, 1}}), rows_of(2, {{0}})).f1_samples == 2.0 / 3.0;
    const auto mm = multilabel_f1(rows_of(2, {{0}, {0}}), rows_of(2, {{0}, {1}}));
    const bool hand3 = mm.precision_micro == 0.5 && mm.recall_micro == 0.5 && mm.f1_micro == 0.5 &&
                       mm.f1_macro == (2.0 / 3.0 + 0.0) / 2.0;
    const int hands = hand1 + hand2 + hand3;
    return {worst <= 1e-12 && hands == 3,
            fmt("1000 random pairs, max |diff| vs brute force %.2e (tol 1e-12); ", worst) + std::to_string(hands) +
                "/3 hand examples exact"};
}

// --- 5 ---------------------------------------------------------------------

Outcome fusion_advantage() {
    HyperConfig c;
    c.hidden_size = 64;
    c.learning_rate = 0.01;
    c.dropout = 0.3;
    c.init_range = 0.05;
    c.max_norm = 10.0;
    c.batch_size = 64;
    c.max_epochs = 60;
    c.patience = 20;
    const char* names[4] = {"gmu", "visual-only", "text-only", "concat"};
    double mean[4] = {0, 0, 0, 0};
    constexpr int kSeeds = 10;
    for (int s = 0; s < kSeeds; ++s) {
        FusionTaskParams fp;
        fp.seed = derive_seed(100, s);
        fp.n = 1000;
        const auto train = generate_fusion_task(fp);
        fp.seed = derive_seed(200, s);
        fp.n = 400;
        const auto dev = generate_fusion_task(fp);
        fp.seed = derive_seed(300, s);
        fp.n = 1000;
        const auto test = generate_fusion_task(fp);

        ModelSpec base;
        base.input_dims = train.dims();
        base.labels = train.label_count();
        base.hidden_layers = 1;
        ModelSpec specs[4] = {base, base, base, base};
        specs[0].kind = ModelKind::gmu;
        specs[1].kind = ModelKind::maxout_mlp;
        specs[1].inputs = {0};
        specs[2].kind = ModelKind::maxout_mlp;
        specs[2].inputs = {1};
        specs[3].kind = ModelKind::concat;
        c.seed = derive_seed(400, s);
        const auto truth = LabelMatrix::from_tensor(test.labels, test.label_names);
        for (int k = 0; k < 4; ++k) {
            const auto r = train_model(specs[k], train, &dev, c);
            const auto pred = threshold_probs(r.model.predict(test.features), 0.5, test.label_names);
            mean[k] += multilabel_f1(pred, truth).f1_macro / kSeeds;
        }
    }
    std::string detail = "mean test macro-f1 over 10 seeds:";
    for (int k = 0; k < 4; ++k) detail += std::string(" ") + names[k] + fmt(" %.4f", mean[k]);
    return {mean[0] >= mean[1] && mean[0] >= mean[2] && mean[0] >= mean[3], detail};
}

// --- 6 ---------------------------------------------------------------------

Outcome regularizer_invariants() {
    // Max-norm after every step.
    double worst_excess = -INFINITY;
    std::size_t steps = 0;
    Rng data_rng(6);
    const auto data = make_dataset({random_tensor({96, 5}, data_rng, -3, 3), random_tensor({96, 4}, data_rng, -3, 3)},
                                   random_binary({96, 3}, data_rng));
    HyperConfig c;
    c.hidden_size = 8;
    c.learning_rate = 0.5;
    c.max_norm = 0.5;
    c.init_range = 0.5;
    c.dropout = 0.2;
    c.batch_size = 16;
    c.max_epochs = 15;
    for (ModelKind kind : {ModelKind::gmu, ModelKind::maxout_mlp, ModelKind::moe_untied, ModelKind::linear_sum}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.input_dims = data.dims();
        spec.labels = 3;
        TrainOptions opt;
        opt.after_step = [&](const Model& m) {
            ++steps;
            for (const auto* p : m.parameters())
                if (p->max_norm != MaxNormAxis::none)
                    worst_excess = std::max(worst_excess, max_constrained_norm(*p) - c.max_norm);
        };
        train_model(spec, data, nullptr, c, opt);
    }

    // Batch norm train-mode statistics. Literal tolerances on entries uniform in
    // [-10, 30]; across wide scales the variance must equal v / (v + eps).
    double worst_mean = 0.0, worst_var = 0.0, worst_eps_var = 0.0;
    Rng rng(66);
    for (int trial = 0; trial < 400; ++trial) {
        const bool literal = trial % 2 == 0;
        const std::size_t n = 8 + rng.uniform_index(57), w = 1 + rng.uniform_index(6);
        Tensor x({n, w});
        for (std::size_t j = 0; j < w; ++j) {
            const double loc = rng.uniform(-50, 50), scale = std::exp(rng.uniform(-3, 3));
            for (std::size_t i = 0; i < n; ++i) x(i, j) = literal ? rng.uniform(-10, 30) : loc + scale * rng.normal();
        }
        BatchNorm bn("bn", w);
        const Tensor z = batch_norm_forward(x, bn, Mode::train).normalized;
        for (std::size_t j = 0; j < w; ++j) {
            double m = 0, v = 0, mu = 0, raw = 0;
            for (std::size_t i = 0; i < n; ++i) m += z(i, j) / n;
            for (std::size_t i = 0; i < n; ++i) v += (z(i, j) - m) * (z(i, j) - m) / n;
            for (std::size_t i = 0; i < n; ++i) mu += x(i, j) / n;
            for (std::size_t i = 0; i < n; ++i) raw += (x(i, j) - mu) * (x(i, j) - mu) / n;
            worst_mean = std::max(worst_mean, std::abs(m));
            if (literal)
                worst_var = std::max(worst_var, std::abs(v - 1.0));
            else
                worst_eps_var = std::max(worst_eps_var, std::abs(v / (raw / (raw + bn.eps)) - 1.0));
        }
    }

    // Dropout: exact identity in eval mode, unbiased in train mode.
    const Tensor x = random_tensor({1000, 1000}, rng, 0.5, 1.5);
    const bool identity = dropout_forward(x, 0.5, rng, Mode::eval) == x && dropout_forward(x, 0.0, rng, Mode::train) == x;
    double worst_mc = 0.0;
    for (double rate : {0.2, 0.5}) {
        const Tensor y = dropout_forward(x, rate, rng, Mode::train);
        double sx = 0, sy = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            sx += x[i];
            sy += y[i];
        }
        worst_mc = std::max(worst_mc, std::abs(sy / sx - 1.0));
    }

    const bool pass = worst_excess <= 1e-9 && steps > 0 && worst_mean < 1e-7 && worst_var < 1e-6 &&
                      worst_eps_var < 1e-9 && identity && worst_mc < 0.01;
    return {pass, fmt("max-norm worst excess %.2e over ", worst_excess) + std::to_string(steps) +
                      fmt(" steps; bn |mean| %.2e, |var-1| %.2e, wide-scale var vs v/(v+eps) rel %.2e; ", worst_mean,
                          worst_var, worst_eps_var) +
                      (identity ? "dropout eval identity" : "dropout eval NOT identity") +
                      fmt(", train mean rel err %.4f at 1e6 entries", worst_mc)};
}

// --- 7 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

Outcome cli_determinism() {
    const fs::path dir = fs::temp_directory_path() / "gmu_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ostringstream sink;
    if (run_cli({"synth-data", "--seed", "5", "--out", (dir / "data").string()}, sink, sink) != 0)
        return {false, "synth-data failed: " + sink.str()};
    const std::string data_keys = R"("modalities": ["visual", "text"], "features.visual": "data/visual.csv",
        "features.text": "data/text.csv")";
    put(dir / "train.json", "{" + data_keys + R"(, "train_labels": "data/train_labels.csv",
        "dev_labels": "data/dev_labels.csv", "test_labels": "data/test_labels.csv", "hidden_size": 32,
        "max_epochs": 10})");
    put(dir / "search.json", "{" + data_keys + R"(, "train_labels": "data/train_labels.csv",
        "dev_labels": "data/dev_labels.csv", "trials": 4, "search.max_epochs": 5, "search.hidden_sizes": [16, 32]})");
    put(dir / "eval.json", "{" + data_keys + R"(, "model_file": "model/model.json", "labels": "data/test_labels.csv"})");
    put(dir / "pred.json", R"({"labels": "data/test_labels.csv", "predictions": "data/test_labels.csv"})");
    put(dir / "suite.json", R"({"experiments": 40, "train.epochs": 60})");
    put(dir / "grid.json", R"({"synthetic.d": 1, "grid.resolution": 31})");
    if (run_cli({"train", "--config", (dir / "train.json").string(), "--out", (dir / "model").string()}, sink, sink) !=
        0)
        return {false, "model training failed: " + sink.str()};

    struct Command {
        std::vector<std::string> args;
        std::vector<std::string> files;
    };
    const std::vector<Command> commands{
        {{"train", "--config", "train.json", "--seed", "3"}, {"train_report.json", "model.json"}},
        {{"evaluate", "--config", "eval.json"}, {"metrics.json"}},
        {{"evaluate", "--config", "pred.json"}, {"metrics.json"}},
        {{"hypersearch", "--config", "search.json", "--seed", "9"}, {"search_report.json", "model.json"}},
        {{"synth-run", "--seed", "4"}, {"synth_record.json"}},
        {{"synth-suite", "--config", "suite.json", "--seed", "7"}, {"suite.json"}},
        {{"synth-grid", "--config", "grid.json", "--seed", "7"}, {"grid.csv", "grid_report.json", "model.json"}},
        {{"gate-analysis", "--config", "eval.json"}, {"gate_analysis.json"}},
        {{"synth-data", "--seed", "8"}, {"visual.csv", "text.csv", "labels.csv", "train_labels.csv"}},
    };
    std::size_t identical = 0;
    std::string failed;
    for (const auto& cmd : commands) {
        std::vector<std::string> seen;
        for (const char* j : {"1", "4", "1"}) {
            auto args = cmd.args;
            for (auto& a : args)
                if (a.size() > 5 && a.substr(a.size() - 5) == ".json") a = (dir / a).string();
            const fs::path out = dir / (cmd.args[0] + "_" + std::to_string(&cmd - commands.data()) + "_" +
                                        std::to_string(seen.size()));
            args.insert(args.end(), {"--jobs", j, "--out", out.string()});
            std::ostringstream o, e;
            if (run_cli(args, o, e) != 0) return {false, cmd.args[0] + " failed: " + e.str()};
            std::string bytes;
            for (const auto& f : cmd.files) bytes += slurp(out / f) + '\x1f';
            seen.push_back(bytes);
        }
        if (seen[0] == seen[1] && seen[0] == seen[2])
            ++identical;
        else
            failed += " " + cmd.args[0];
    }
    return {identical == commands.size(), std::to_string(identical) + "/" + std::to_string(commands.size()) +
                                              " command runs byte-identical across repeats and --jobs 1/4" +
                                              (failed.empty() ? "" : "; differing:" + failed)};
}

// --- 8 ---------------------------------------------------------------------

Outcome grid_sanity() {
    constexpr std::size_t kRes = 121;
    const auto agreement = [&](std::uint64_t seed, std::size_t* held_out) {
        auto p = SyntheticParams::defaults(1);
        p.seed = seed;
        const auto m = train_synthetic_models(p);
        if (held_out) *held_out = m.split.test.size();
        const auto rows = export_activation_grid(m.gmu, -6.0, 9.0, -6.0, 9.0, kRes);
        return grid_gate_agreement(rows, kRes, m.split.test);
    };
    std::size_t held_out = 0;
    const double agree = agreement(7, &held_out);
    std::size_t above = 0;
    double lowest = 1.0;
    for (std::uint64_t s = 1; s <= 20; ++s) {
        const double a = agreement(s, nullptr);
        above += a >= 0.90;
        lowest = std::min(lowest, a);
    }
    return {agree >= 0.90, "d=1 default model (seed 7), " + std::to_string(held_out) + " held-out samples, " +
                               fmt("%.4f on the side suppressing their noisy modality (need >= 0.90); ", agree) +
                               "seeds 1-20: " + std::to_string(above) + fmt("/20 >= 0.90, lowest %.4f", lowest)};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient fidelity", gradient_fidelity},
        {"synthetic suite", synthetic_suite},
        {"gate-latent recovery", gate_latent_recovery},
        {"metrics oracle", metrics_oracle},
        {"fusion advantage", fusion_advantage},
        {"regularizer invariants", regularizer_invariants},
        {"determinism", cli_determinism},
        {"grid export sanity", grid_sanity},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        all = all && o.pass;
        std::printf("%s %zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
