// SPDX-License-Identifier: Apache-2.0
#include "gmu/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <optional>

#include "gmu/io.hpp"

namespace gmu {
namespace {

namespace fs = std::filesystem;

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> n;
    std::size_t jobs = 1;
};

struct Context {
    Flags flags;
    RunConfig cfg;
    std::uint64_t seed = 0;
    std::ostream& out;
};

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

Json envelope(const std::string& command, const Context& ctx, Json result) {
    return {{"command", command},
            {"code_version", kCodeVersion},
            {"seed", ctx.seed},
            {"config", ctx.cfg.resolved()},
            {"result", std::move(result)}};
}

std::vector<ModalityFile> modality_files(RunConfig& cfg) {
    const auto names = cfg.get_strings("modalities", {});
    if (names.empty()) throw DataError("config: 'modalities' must list at least one modality");
    std::vector<ModalityFile> files;
    for (const auto& name : names) files.push_back({name, cfg.resolve_path(cfg.require_string("features." + name))});
    return files;
}

std::optional<MultilabelDataset> optional_split(RunConfig& cfg, const std::vector<ModalityFile>& files,
                                                const std::string& key) {
    if (!cfg.has(key)) return std::nullopt;
    return load_dataset(files, cfg.resolve_path(cfg.require_string(key)));
}

ModelSpec model_spec(RunConfig& cfg, const MultilabelDataset& d) {
    ModelSpec s;
    s.kind = model_kind_from_name(cfg.get_string("model", model_kind_name(s.kind)));
    s.input_dims = d.dims();
    s.labels = d.label_count();
    s.inputs = cfg.get_sizes("inputs", {});
    s.hidden_layers = cfg.get_size("hidden_layers", s.kind == ModelKind::logistic ? 0 : s.hidden_layers);
    s.pieces = cfg.get_size("pieces", s.pieces);
    s.batch_norm = cfg.get_bool("batch_norm", s.batch_norm);
    s.gmu_bias = cfg.get_bool("gmu_bias", s.gmu_bias);
    s.expert_layers = cfg.get_size("expert_layers", s.expert_layers);
    s.validate();
    return s;
}

HyperConfig hyper_config(RunConfig& cfg, std::uint64_t seed) {
    HyperConfig c;
    c.hidden_size = cfg.get_size("hidden_size", c.hidden_size);
    c.learning_rate = cfg.get_double("learning_rate", c.learning_rate);
    c.dropout = cfg.get_double("dropout", c.dropout);
    c.max_norm = cfg.get_double("max_norm", c.max_norm);
    c.init_range = cfg.get_double("init_range", c.init_range);
    c.batch_size = cfg.get_size("batch_size", c.batch_size);
    c.max_epochs = cfg.get_size("max_epochs", c.max_epochs);
    c.patience = cfg.get_size("patience", c.patience);
    c.seed = seed;
    c.validate();
    return c;
}

WeightedMode weighted_mode(RunConfig& cfg) {
    const auto m = cfg.get_string("weighted_mode", "support");
    if (m == "support") return WeightedMode::support;
    if (m == "literal") return WeightedMode::literal;
    throw DataError("config: weighted_mode must be 'support' or 'literal'");
}

MetricsReport evaluate_model(const Model& model, const MultilabelDataset& d, double threshold, WeightedMode mode) {
    const auto pred = threshold_probs(model.predict(d.features), threshold, d.label_names);
    return multilabel_f1(pred, LabelMatrix::from_tensor(d.labels, d.label_names), mode);
}

SyntheticParams synthetic_params(RunConfig& cfg, std::optional<std::size_t> force_d = std::nullopt) {
    const auto preset = cfg.get_string("synthetic.preset", "default");
    const std::size_t d = cfg.get_size("synthetic.d", force_d.value_or(2));
    if (force_d && d != *force_d) throw DataError("config: synth-grid needs synthetic.d = 1");
    SyntheticParams p;
    if (preset == "default")
        p = SyntheticParams::defaults(d);
    else if (preset == "well_separated")
        p = SyntheticParams::well_separated(d);
    else if (preset == "centered_noise")
        p = SyntheticParams::centered_noise(d);
    else
        throw DataError("config: synthetic.preset must be default, well_separated or centered_noise");
    if (cfg.has("synthetic.class_mean") || cfg.has("synthetic.noise_mean")) {
        const double cm = cfg.get_double("synthetic.class_mean", p.visual[1].mean[0]);
        const double nm = cfg.get_double("synthetic.noise_mean", p.visual_noise.mean[0]);
        p = SyntheticParams::symmetric(d, cm, nm);
    }
    p.p_c = cfg.get_double("synthetic.p_c", p.p_c);
    p.p_m = cfg.get_double("synthetic.p_m", p.p_m);
    p.n_per_class = cfg.get_size("synthetic.n_per_class", p.n_per_class);
    p.validate();
    return p;
}

SyntheticTraining synthetic_training(RunConfig& cfg) {
    SyntheticTraining t;
    t.train_fraction = cfg.get_double("train.train_fraction", t.train_fraction);
    t.learning_rate = cfg.get_double("train.learning_rate", t.learning_rate);
    t.epochs = cfg.get_size("train.epochs", t.epochs);
    t.batch_size = cfg.get_size("train.batch_size", t.batch_size);
    t.init_range = cfg.get_double("train.init_range", t.init_range);
    t.max_norm = cfg.get_double("train.max_norm", t.max_norm);
    return t;
}

// ---------------------------------------------------------------------------

int cmd_train(Context& ctx) {
    const auto files = modality_files(ctx.cfg);
    const auto train = load_dataset(files, ctx.cfg.resolve_path(ctx.cfg.require_string("train_labels")));
    const auto dev = optional_split(ctx.cfg, files, "dev_labels");
    const auto test = optional_split(ctx.cfg, files, "test_labels");
    const auto spec = model_spec(ctx.cfg, train);
    const auto hyper = hyper_config(ctx.cfg, ctx.seed);
    const double threshold = ctx.cfg.get_double("threshold", 0.5);
    const auto mode = weighted_mode(ctx.cfg);
    ctx.cfg.require_all_used();

    const auto r = train_model(spec, train, dev ? &*dev : nullptr, hyper);
    Json result{{"train", to_json(r.report)}, {"model", to_json(spec)}};
    if (test && !r.report.diverged) result["test_metrics"] = to_json(evaluate_model(r.model, *test, threshold, mode));
    const fs::path dir(ctx.flags.out);
    write_report(envelope("train", ctx, result), dir / "train_report.json");
    write_model(r.model, dir / "model.json");
    ctx.out << "train: " << model_kind_name(spec.kind) << " epochs " << r.report.epochs_run << " best_epoch "
            << r.report.best_epoch << " final_loss "
            << (r.report.train_loss.empty() ? std::string("n/a") : fixed(r.report.train_loss.back()))
            << (dev ? " dev_macro_f1 " + fixed(r.report.best_dev_macro_f1) : "")
            << (result.contains("test_metrics") ? " test_macro_f1 " + fixed(result["test_metrics"]["f1_macro"]) : "")
            << " snapshot " << r.report.snapshot_id << " (" << fixed(r.report.wall_seconds, 1) << " s)\n";
    if (r.report.diverged) throw TrainingDiverged(r.report.failure);
    return 0;
}

int cmd_evaluate(Context& ctx) {
    const auto mode = weighted_mode(ctx.cfg);
    const double threshold = ctx.cfg.get_double("threshold", 0.5);
    MetricsReport report;
    if (ctx.cfg.has("predictions")) {
        const auto labels_path = ctx.cfg.resolve_path(ctx.cfg.require_string("labels"));
        const auto preds_path = ctx.cfg.resolve_path(ctx.cfg.require_string("predictions"));
        ctx.cfg.require_all_used();
        // Labels alone: read through the dataset loader with the label file standing in as a modality.
        const auto truth = load_dataset({{"labels", labels_path}}, labels_path);
        const Tensor probs = load_matrix_by_id(preds_path, truth.ids, truth.label_names);
        report = multilabel_f1(threshold_probs(probs, threshold, truth.label_names),
                               LabelMatrix::from_tensor(truth.labels, truth.label_names), mode);
    } else {
        const Model model = read_model(ctx.cfg.resolve_path(ctx.cfg.require_string("model_file")));
        const auto files = modality_files(ctx.cfg);
        const auto d = load_dataset(files, ctx.cfg.resolve_path(ctx.cfg.require_string("labels")));
        ctx.cfg.require_all_used();
        report = evaluate_model(model, d, threshold, mode);
    }
    write_report(envelope("evaluate", ctx, to_json(report)), fs::path(ctx.flags.out) / "metrics.json");
    ctx.out << "evaluate: n " << report.n << " f1_samples " << fixed(report.f1_samples) << " f1_micro "
            << fixed(report.f1_micro) << " f1_macro " << fixed(report.f1_macro) << " f1_weighted "
            << fixed(report.f1_weighted) << "\n";
    return 0;
}

int cmd_hypersearch(Context& ctx) {
    const auto files = modality_files(ctx.cfg);
    const auto train = load_dataset(files, ctx.cfg.resolve_path(ctx.cfg.require_string("train_labels")));
    const auto dev = load_dataset(files, ctx.cfg.resolve_path(ctx.cfg.require_string("dev_labels")));
    const auto test = optional_split(ctx.cfg, files, "test_labels");
    const auto spec = model_spec(ctx.cfg, train);
    SearchSpace space;
    space.hidden_sizes = ctx.cfg.get_sizes("search.hidden_sizes", space.hidden_sizes);
    space.batch_size = ctx.cfg.get_size("search.batch_size", space.batch_size);
    space.max_epochs = ctx.cfg.get_size("search.max_epochs", space.max_epochs);
    space.patience = ctx.cfg.get_size("search.patience", space.patience);
    space.log_scale = ctx.cfg.get_bool("search.log_scale", space.log_scale);
    const std::size_t trials = ctx.flags.n ? *ctx.flags.n : ctx.cfg.get_size("trials", 25);
    const double threshold = ctx.cfg.get_double("threshold", 0.5);
    const auto mode = weighted_mode(ctx.cfg);
    ctx.cfg.require_all_used();

    const auto r = random_hyperparameter_search(spec, train, dev, trials, ctx.seed, space, ctx.flags.jobs);
    Json list = Json::array();
    for (const auto& t : r.trials) list.push_back(to_json(t));
    Json result{{"trials", trials}, {"best_index", r.best_index}, {"trial_reports", list}, {"model", to_json(spec)}};
    if (test) result["test_metrics"] = to_json(evaluate_model(r.best_model, *test, threshold, mode));
    const fs::path dir(ctx.flags.out);
    write_report(envelope("hypersearch", ctx, result), dir / "search_report.json");
    write_model(r.best_model, dir / "model.json");
    const auto& best = r.trials[r.best_index];
    ctx.out << "hypersearch: " << trials << " trials, best " << r.best_index << " dev_macro_f1 "
            << fixed(best.best_dev_macro_f1) << " hidden " << best.config.hidden_size << " lr "
            << fixed(best.config.learning_rate, 5) << "\n";
    if (best.diverged) throw TrainingDiverged("every trial diverged");
    return 0;
}

int cmd_synth_run(Context& ctx) {
    auto params = synthetic_params(ctx.cfg);
    const auto training = synthetic_training(ctx.cfg);
    ctx.cfg.require_all_used();
    params.seed = ctx.seed;
    const auto r = run_synthetic_experiment(params, training);
    write_report(envelope("synth-run", ctx, Json{{"record", to_json(r)}, {"params", to_json(params)}}),
                 fs::path(ctx.flags.out) / "synth_record.json");
    ctx.out << "synth-run: gmu " << fixed(r.gmu_accuracy) << " logistic " << fixed(r.logistic_accuracy)
            << " corr(z, M) " << fixed(r.gate_latent_correlation) << "\n";
    if (r.gmu_diverged || r.logistic_diverged) throw TrainingDiverged("synthetic training diverged");
    return 0;
}

int cmd_synth_suite(Context& ctx) {
    const auto params = synthetic_params(ctx.cfg);
    const auto training = synthetic_training(ctx.cfg);
    const std::size_t n = ctx.flags.n ? *ctx.flags.n : ctx.cfg.get_size("experiments", 1000);
    const double tol = ctx.cfg.get_double("tie_tolerance", 0.005);
    ctx.cfg.require_all_used();
    const auto start = std::chrono::steady_clock::now();
    const auto a = run_synthetic_suite(params, n, ctx.seed, training, ctx.flags.jobs, tol);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_report(envelope("synth-suite", ctx, Json{{"aggregate", to_json(a)}, {"params", to_json(params)},
                                                   {"training", to_json(training)}, {"experiments", n}}),
                 fs::path(ctx.flags.out) / "suite.json");
    ctx.out << "synth-suite: " << n << " experiments, wins " << a.wins << " ties " << a.ties << " losses "
            << a.losses << " mean |corr| " << fixed(a.mean_abs_correlation) << " (" << fixed(secs, 1) << " s)\n";
    return 0;
}

int cmd_synth_grid(Context& ctx) {
    auto params = synthetic_params(ctx.cfg, 1);
    const auto training = synthetic_training(ctx.cfg);
    double lo = 0.0, hi = 0.0;
    for (const auto* g : {&params.visual[0], &params.visual[1], &params.text[0], &params.text[1],
                          &params.visual_noise, &params.text_noise}) {
        lo = std::min(lo, g->mean[0] - 3.0 * g->stddev[0]);
        hi = std::max(hi, g->mean[0] + 3.0 * g->stddev[0]);
    }
    const std::size_t res = ctx.cfg.get_size("grid.resolution", 61);
    const double v_lo = ctx.cfg.get_double("grid.v_lo", lo), v_hi = ctx.cfg.get_double("grid.v_hi", hi);
    const double t_lo = ctx.cfg.get_double("grid.t_lo", lo), t_hi = ctx.cfg.get_double("grid.t_hi", hi);
    ctx.cfg.require_all_used();
    params.seed = ctx.seed;
    const auto m = train_synthetic_models(params, training);
    const auto rows = export_activation_grid(m.gmu, v_lo, v_hi, t_lo, t_hi, res);
    const double agreement = grid_gate_agreement(rows, res, m.split.test);
    const fs::path dir(ctx.flags.out);
    write_text(dir / "grid.csv", format_grid(rows));
    write_model(m.gmu, dir / "model.json");
    write_report(envelope("synth-grid", ctx,
                          Json{{"record", to_json(m.record)}, {"params", to_json(params)},
                               {"held_out_gate_agreement", agreement}, {"rows", rows.size()}}),
                 dir / "grid_report.json");
    ctx.out << "synth-grid: " << rows.size() << " lattice points, held-out gate agreement " << fixed(agreement)
            << ", gmu " << fixed(m.record.gmu_accuracy) << "\n";
    return 0;
}

int cmd_gate_analysis(Context& ctx) {
    const Model model = read_model(ctx.cfg.resolve_path(ctx.cfg.require_string("model_file")));
    const auto files = modality_files(ctx.cfg);
    const auto d = load_dataset(files, ctx.cfg.resolve_path(ctx.cfg.require_string("labels")));
    const std::size_t top_k = ctx.cfg.get_size("top_k", 16);
    const double threshold = ctx.cfg.get_double("threshold", 0.5);
    ctx.cfg.require_all_used();
    if (model.spec().kind != ModelKind::gmu || model.spec().input_dims.size() != 2)
        throw DataError("gate-analysis needs a bimodal GMU model");
    const Tensor z = model.gate_activations(d.features);
    const auto pred = threshold_probs(model.predict(d.features), threshold, d.label_names);
    const auto scores = unit_mutual_information(z, pred);
    const auto units = select_units_by_mutual_information(z, pred, std::min(top_k, z.cols()));
    const auto fractions = gate_activation_fractions(z, pred, units);
    write_report(envelope("gate-analysis", ctx,
                          Json{{"units", units}, {"mutual_information", scores}, {"fractions", to_json(fractions)}}),
                 fs::path(ctx.flags.out) / "gate_analysis.json");
    ctx.out << "gate-analysis: " << units.size() << " units selected over " << d.size() << " samples\n";
    return 0;
}

int cmd_synth_data(Context& ctx) {
    const auto task = ctx.cfg.get_string("task", "fusion");
    MultilabelDataset d;
    if (task == "fusion") {
        FusionTaskParams p;
        p.n = ctx.cfg.get_size("fusion.n", p.n);
        p.d = ctx.cfg.get_size("fusion.d", p.d);
        p.q = ctx.cfg.get_size("fusion.q", p.q);
        p.label_rate = ctx.cfg.get_double("fusion.label_rate", p.label_rate);
        p.signal = ctx.cfg.get_double("fusion.signal", p.signal);
        p.noise_mean = ctx.cfg.get_double("fusion.noise_mean", p.noise_mean);
        p.p_visual = ctx.cfg.get_double("fusion.p_visual", p.p_visual);
        ctx.cfg.require_all_used();
        p.seed = ctx.seed;
        d = generate_fusion_task(p);
    } else if (task == "synthetic") {
        auto p = synthetic_params(ctx.cfg);
        ctx.cfg.require_all_used();
        p.seed = ctx.seed;
        d = observe(generate_synthetic(p));
    } else {
        throw DataError("config: task must be 'fusion' or 'synthetic'");
    }
    const fs::path dir(ctx.flags.out);
    write_dataset(d, dir);
    // 60/20/20 split of the rows in a seeded order.
    std::vector<std::size_t> order(d.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(ctx.seed, 99));
    rng.shuffle(order);
    const std::size_t a = d.size() * 6 / 10, b = d.size() * 8 / 10;
    const std::pair<const char*, std::pair<std::size_t, std::size_t>> parts[] = {
        {"train_labels.csv", {0, a}}, {"dev_labels.csv", {a, b}}, {"test_labels.csv", {b, d.size()}}};
    for (const auto& [name, range] : parts) {
        std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(range.first),
                                      order.begin() + static_cast<std::ptrdiff_t>(range.second));
        std::sort(rows.begin(), rows.end());
        const auto part = d.subset(rows);
        std::string text = "id";
        for (const auto& l : part.label_names) text += "," + l;
        text += "\n";
        for (std::size_t i = 0; i < part.size(); ++i) {
            text += part.ids[i];
            for (std::size_t j = 0; j < part.label_count(); ++j) text += part.labels(i, j) == 1.0 ? ",1" : ",0";
            text += "\n";
        }
        write_text(dir / name, text);
    }
    ctx.out << "synth-data: " << task << " " << d.size() << " samples, " << d.features.size() << " modalities, "
            << d.label_count() << " labels\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Gated multimodal units: training, evaluation and synthetic experiments", "gmu"};
    app.require_subcommand(1);
    Flags flags;
    struct Command {
        const char* name;
        const char* help;
        bool needs_config;
        int (*run)(Context&);
    };
    const Command commands[] = {
        {"train", "train one model", true, cmd_train},
        {"evaluate", "score predictions or a saved model against labels", true, cmd_evaluate},
        {"hypersearch", "random hyperparameter search with dev-set selection", true, cmd_hypersearch},
        {"synth-run", "one GMU vs logistic synthetic experiment", false, cmd_synth_run},
        {"synth-suite", "many synthetic experiments with derived seeds", false, cmd_synth_suite},
        {"synth-grid", "gate and prediction lattice of a 1-D synthetic GMU", false, cmd_synth_grid},
        {"gate-analysis", "gate activation fractions per label", true, cmd_gate_analysis},
        {"synth-data", "write a generated dataset as CSV files", false, cmd_synth_data},
    };
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    std::uint64_t seed_flag = 0;
    std::size_t n_flag = 0;
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        auto* opt = sub->add_option("--config", flags.config, "run config (JSON object)");
        if (c.needs_config) opt->required();
        sub->add_option("--seed", seed_flag, "master seed, overrides the config");
        sub->add_option("--out", flags.out, "output directory")->required();
        sub->add_option("--n", n_flag, "trials or experiments")->check(CLI::PositiveNumber);
        sub->add_option("--jobs", flags.jobs, "worker threads; does not change results")->check(CLI::PositiveNumber);
        subs.emplace_back(sub, &c);
    }

    std::vector<std::string> argv_store{"gmu"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    for (auto& [sub, command] : subs) {
        if (!sub->parsed()) continue;
        if (sub->count("--seed")) flags.seed = seed_flag;
        if (sub->count("--n")) flags.n = n_flag;
        try {
            Context ctx{flags, flags.config.empty() ? RunConfig::parse("{}", "defaults") : RunConfig::load(flags.config),
                        0, out};
            const std::uint64_t cfg_seed = ctx.cfg.get_size("seed", 0);
            ctx.seed = flags.seed.value_or(cfg_seed);
            return command->run(ctx);
        } catch (const TrainingDiverged& e) {
            err << "error: training diverged: " << e.what() << "\n";
            return 4;
        } catch (const DataError& e) {
            err << "error: " << e.what() << "\n";
            return 3;
        } catch (const std::invalid_argument& e) {
            err << "error: " << e.what() << "\n";
            return 3;
        } catch (const std::domain_error& e) {
            err << "error: " << e.what() << "\n";
            return 3;
        } catch (const std::out_of_range& e) {
            err << "error: " << e.what() << "\n";
            return 3;
        } catch (const Json::exception& e) {
            err << "error: " << e.what() << "\n";
            return 3;
        } catch (const std::exception& e) {
            err << "error: " << e.what() << "\n";
            return 1;
        }
    }
    return 2;
}

}  // namespace gmu
