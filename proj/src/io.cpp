// SPDX-License-Identifier: Apache-2.0
#include "gmu/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace gmu {

#ifndef GMU_CODE_VERSION
#define GMU_CODE_VERSION "dev"
#endif
const char* const kCodeVersion = GMU_CODE_VERSION;

namespace {

namespace fs = std::filesystem;

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines;  // source line per row
};

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open");
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            if (t.header.empty() || t.header[0] != "id")
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": first header column must be 'id'");
            continue;
        }
        if (cells.size() != t.header.size())
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " columns, found " + std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
        t.lines.push_back(lineno);
    }
    if (t.header.empty()) throw DataError(path.string() + ": empty file");
    return t;
}

double parse_number(const std::string& s, const fs::path& path, std::size_t line, const std::string& column) {
    double v = 0.0;
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end || s.empty())
        throw DataError(path.string() + ":" + std::to_string(line) + ": column '" + column + "': not a number: '" + s +
                        "'");
    if (!std::isfinite(v))
        throw DataError(path.string() + ":" + std::to_string(line) + ": column '" + column + "': non-finite value");
    return v;
}

std::unordered_map<std::string, std::size_t> index_ids(const CsvTable& t, const fs::path& path) {
    std::unordered_map<std::string, std::size_t> idx;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        if (!idx.emplace(t.rows[r][0], r).second)
            throw DataError(path.string() + ":" + std::to_string(t.lines[r]) + ": duplicate id '" + t.rows[r][0] + "'");
    return idx;
}

std::string fmt(double v, int digits) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

Json round_floats(const Json& j, const std::string& where) {
    if (j.is_number_float()) {
        const double v = j.get<double>();
        if (!std::isfinite(v)) throw DataError("report: non-finite value at " + (where.empty() ? "/" : where));
        return std::strtod(fmt(v, 9).c_str(), nullptr);
    }
    if (j.is_object()) {
        Json out = Json::object();
        for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = round_floats(it.value(), where + "/" + it.key());
        return out;
    }
    if (j.is_array()) {
        Json out = Json::array();
        for (std::size_t i = 0; i < j.size(); ++i) out.push_back(round_floats(j[i], where + "/" + std::to_string(i)));
        return out;
    }
    return j;
}

Json tensor_json(const Tensor& t) { return Json{{"shape", t.shape()}, {"values", t.values()}}; }

Tensor tensor_from(const Json& j) { return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>()); }

const char* weighted_name(WeightedMode m) { return m == WeightedMode::support ? "support" : "literal"; }

}  // namespace

// ---------------------------------------------------------------------------

MultilabelDataset load_dataset(const std::vector<ModalityFile>& modalities, const fs::path& labels_path) {
    if (modalities.empty()) throw DataError("dataset: no modality files");
    const CsvTable labels = read_csv(labels_path);
    index_ids(labels, labels_path);
    MultilabelDataset d;
    const std::size_t n = labels.rows.size(), q = labels.header.size() - 1;
    if (q == 0) throw DataError(labels_path.string() + ": no label columns");
    d.label_names.assign(labels.header.begin() + 1, labels.header.end());
    d.labels = Tensor({n, q});
    for (std::size_t i = 0; i < n; ++i) {
        d.ids.push_back(labels.rows[i][0]);
        for (std::size_t j = 0; j < q; ++j) {
            const std::string& cell = labels.rows[i][j + 1];
            if (cell != "0" && cell != "1")
                throw DataError(labels_path.string() + ":" + std::to_string(labels.lines[i]) + ": column '" +
                                d.label_names[j] + "': label must be 0 or 1, found '" + cell + "'");
            d.labels(i, j) = cell == "1";
        }
    }
    for (const auto& m : modalities) {
        const CsvTable t = read_csv(m.path);
        const auto idx = index_ids(t, m.path);
        const std::size_t dim = t.header.size() - 1;
        if (dim == 0) throw DataError(m.path.string() + ": no feature columns");
        Tensor f({n, dim});
        for (std::size_t i = 0; i < n; ++i) {
            auto it = idx.find(d.ids[i]);
            if (it == idx.end())
                throw DataError(m.path.string() + ": id '" + d.ids[i] + "' from " + labels_path.string() + ":" +
                                std::to_string(labels.lines[i]) + " is missing");
            const auto& row = t.rows[it->second];
            for (std::size_t k = 0; k < dim; ++k)
                f(i, k) = parse_number(row[k + 1], m.path, t.lines[it->second], t.header[k + 1]);
        }
        d.modality_names.push_back(m.name);
        d.features.push_back(std::move(f));
    }
    d.validate();
    return d;
}

std::vector<ModalityFile> write_dataset(const MultilabelDataset& d, const fs::path& dir) {
    d.validate();
    fs::create_directories(dir);
    std::vector<ModalityFile> files;
    for (std::size_t m = 0; m < d.features.size(); ++m) {
        std::ostringstream out;
        out << "id";
        for (std::size_t k = 0; k < d.features[m].cols(); ++k) out << ",f" << k;
        out << '\n';
        for (std::size_t i = 0; i < d.size(); ++i) {
            out << d.ids[i];
            for (std::size_t k = 0; k < d.features[m].cols(); ++k) out << ',' << fmt(d.features[m](i, k), 17);
            out << '\n';
        }
        const fs::path p = dir / (d.modality_names[m] + ".csv");
        write_text(p, out.str());
        files.push_back({d.modality_names[m], p});
    }
    std::ostringstream out;
    out << "id";
    for (const auto& name : d.label_names) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < d.size(); ++i) {
        out << d.ids[i];
        for (std::size_t j = 0; j < d.label_count(); ++j) out << ',' << (d.labels(i, j) == 1.0 ? '1' : '0');
        out << '\n';
    }
    write_text(dir / "labels.csv", out.str());
    return files;
}

Tensor load_matrix_by_id(const fs::path& path, const std::vector<std::string>& ids,
                         const std::vector<std::string>& columns) {
    const CsvTable t = read_csv(path);
    const auto idx = index_ids(t, path);
    if (std::vector<std::string>(t.header.begin() + 1, t.header.end()) != columns)
        throw DataError(path.string() + ": columns differ from the label file");
    Tensor out({ids.size(), columns.size()});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = idx.find(ids[i]);
        if (it == idx.end()) throw DataError(path.string() + ": id '" + ids[i] + "' is missing");
        for (std::size_t j = 0; j < columns.size(); ++j)
            out(i, j) = parse_number(t.rows[it->second][j + 1], path, t.lines[it->second], columns[j]);
    }
    if (t.rows.size() != ids.size()) throw DataError(path.string() + ": row count differs from the label file");
    return out;
}

// ---------------------------------------------------------------------------

std::string format_report(const Json& report) { return round_floats(report, "").dump(2) + "\n"; }

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void write_report(const Json& report, const fs::path& path) { write_text(path, format_report(report)); }

Json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open");
    try {
        return Json::parse(in, nullptr, true, true);
    } catch (const Json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

Json to_json(const MetricsReport& r) {
    Json labels = Json::array();
    for (const auto& s : r.labels)
        labels.push_back({{"name", s.name},
                          {"tp", s.tp},
                          {"fp", s.fp},
                          {"fn", s.fn},
                          {"support", s.support},
                          {"precision", s.precision},
                          {"recall", s.recall},
                          {"f1", s.f1}});
    return {{"n", r.n},
            {"q", r.q},
            {"f1_samples", r.f1_samples},
            {"f1_micro", r.f1_micro},
            {"f1_macro", r.f1_macro},
            {"f1_weighted", r.f1_weighted},
            {"precision_micro", r.precision_micro},
            {"recall_micro", r.recall_micro},
            {"weighted_mode", weighted_name(r.weighted_mode)},
            {"labels", labels}};
}

MetricsReport metrics_from_json(const Json& j) {
    MetricsReport r;
    r.n = j.at("n");
    r.q = j.at("q");
    r.f1_samples = j.at("f1_samples");
    r.f1_micro = j.at("f1_micro");
    r.f1_macro = j.at("f1_macro");
    r.f1_weighted = j.at("f1_weighted");
    r.precision_micro = j.at("precision_micro");
    r.recall_micro = j.at("recall_micro");
    r.weighted_mode = j.at("weighted_mode") == "literal" ? WeightedMode::literal : WeightedMode::support;
    for (const auto& l : j.at("labels")) {
        LabelScore s;
        s.name = l.at("name");
        s.tp = l.at("tp");
        s.fp = l.at("fp");
        s.fn = l.at("fn");
        s.support = l.at("support");
        s.precision = l.at("precision");
        s.recall = l.at("recall");
        s.f1 = l.at("f1");
        r.labels.push_back(s);
    }
    return r;
}

Json to_json(const HyperConfig& c) {
    return {{"hidden_size", c.hidden_size}, {"learning_rate", c.learning_rate}, {"dropout", c.dropout},
            {"max_norm", c.max_norm},       {"init_range", c.init_range},       {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},   {"patience", c.patience},           {"seed", c.seed}};
}

HyperConfig hyper_from_json(const Json& j) {
    HyperConfig c;
    c.hidden_size = j.at("hidden_size");
    c.learning_rate = j.at("learning_rate");
    c.dropout = j.at("dropout");
    c.max_norm = j.at("max_norm");
    c.init_range = j.at("init_range");
    c.batch_size = j.at("batch_size");
    c.max_epochs = j.at("max_epochs");
    c.patience = j.at("patience");
    c.seed = j.at("seed");
    return c;
}

Json to_json(const TrainReport& r) {
    return {{"train_loss", r.train_loss},
            {"dev_macro_f1", r.dev_macro_f1},
            {"best_epoch", r.best_epoch},
            {"best_dev_macro_f1", r.best_dev_macro_f1},
            {"epochs_run", r.epochs_run},
            {"steps", r.steps},
            {"snapshot_id", r.snapshot_id},
            {"seed", r.seed},
            {"config", to_json(r.config)},
            {"diverged", r.diverged},
            {"failure", r.failure}};
}

Json to_json(const ModelSpec& s) {
    return {{"kind", model_kind_name(s.kind)}, {"input_dims", s.input_dims},     {"inputs", s.inputs},
            {"labels", s.labels},              {"hidden_layers", s.hidden_layers}, {"pieces", s.pieces},
            {"batch_norm", s.batch_norm},      {"gmu_bias", s.gmu_bias},         {"gmu_direct", s.gmu_direct},
            {"expert_layers", s.expert_layers}};
}

ModelSpec model_spec_from_json(const Json& j) {
    ModelSpec s;
    s.kind = model_kind_from_name(j.at("kind"));
    s.input_dims = j.at("input_dims").get<std::vector<std::size_t>>();
    s.inputs = j.at("inputs").get<std::vector<std::size_t>>();
    s.labels = j.at("labels");
    s.hidden_layers = j.at("hidden_layers");
    s.pieces = j.at("pieces");
    s.batch_norm = j.at("batch_norm");
    s.gmu_bias = j.at("gmu_bias");
    s.gmu_direct = j.at("gmu_direct");
    s.expert_layers = j.at("expert_layers");
    return s;
}

Json to_json(const SyntheticParams& p) {
    auto g = [](const Gaussian& x) { return Json{{"mean", x.mean}, {"stddev", x.stddev}}; };
    return {{"d", p.d},
            {"p_c", p.p_c},
            {"p_m", p.p_m},
            {"visual", {g(p.visual[0]), g(p.visual[1])}},
            {"text", {g(p.text[0]), g(p.text[1])}},
            {"visual_noise", g(p.visual_noise)},
            {"text_noise", g(p.text_noise)},
            {"n_per_class", p.n_per_class}};
}

Json to_json(const SyntheticTraining& t) {
    return {{"train_fraction", t.train_fraction}, {"learning_rate", t.learning_rate}, {"epochs", t.epochs},
            {"batch_size", t.batch_size},         {"init_range", t.init_range},       {"max_norm", t.max_norm}};
}

Json to_json(const SyntheticRecord& r) {
    return {{"seed", r.seed},
            {"gmu_accuracy", r.gmu_accuracy},
            {"logistic_accuracy", r.logistic_accuracy},
            {"gate_latent_correlation", r.gate_latent_correlation},
            {"gmu_diverged", r.gmu_diverged},
            {"logistic_diverged", r.logistic_diverged}};
}

Json to_json(const SuiteAggregate& a) {
    Json records = Json::array();
    for (const auto& r : a.records) records.push_back(to_json(r));
    return {{"n", a.n},
            {"wins", a.wins},
            {"ties", a.ties},
            {"losses", a.losses},
            {"tie_tolerance", a.tie_tolerance},
            {"mean_correlation", a.mean_correlation},
            {"mean_abs_correlation", a.mean_abs_correlation},
            {"mean_gmu_accuracy", a.mean_gmu_accuracy},
            {"mean_logistic_accuracy", a.mean_logistic_accuracy},
            {"records", records}};
}

Json to_json(const std::vector<GateFractions>& f) {
    Json out = Json::array();
    for (const auto& g : f) {
        Json e{{"label", g.label}, {"predicted", g.predicted}};
        e["visual_pct"] = g.visual_pct ? Json(*g.visual_pct) : Json(nullptr);
        e["textual_pct"] = g.textual_pct ? Json(*g.textual_pct) : Json(nullptr);
        out.push_back(e);
    }
    return out;
}

void write_model(const Model& m, const fs::path& path) {
    Json state = Json::object();
    for (const auto& [name, t] : m.state()) state[name] = tensor_json(t);
    const Json j{{"spec", to_json(m.spec())},
                 {"hidden_size", m.hidden_size()},
                 {"state", state},
                 {"code_version", kCodeVersion}};
    // Full precision so a reloaded model predicts identically.
    write_text(path, j.dump(1) + "\n");
}

Model read_model(const fs::path& path) {
    const Json j = read_json(path);
    try {
        Rng rng(0);
        Model m(model_spec_from_json(j.at("spec")), j.at("hidden_size"), 1e-3, rng);
        std::map<std::string, Tensor> state;
        for (auto it = j.at("state").begin(); it != j.at("state").end(); ++it) state[it.key()] = tensor_from(*it);
        m.load_state(state);
        return m;
    } catch (const Json::exception& e) {
        throw DataError(path.string() + ": malformed model file: " + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string format_grid(const std::vector<GridRow>& rows) {
    std::string out = "x_v,x_t,z,p\n";
    for (const auto& r : rows)
        out += fmt(r.x_v, 9) + "," + fmt(r.x_t, 9) + "," + fmt(r.z, 9) + "," + fmt(r.p, 9) + "\n";
    return out;
}

// ---------------------------------------------------------------------------

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
    RunConfig c;
    c.origin_ = origin;
    try {
        c.values_ = Json::parse(text, nullptr, true, true);
    } catch (const Json::parse_error& e) {
        throw DataError(origin + ": " + e.what());
    }
    if (!c.values_.is_object()) throw DataError(origin + ": top level must be an object");
    for (auto it = c.values_.begin(); it != c.values_.end(); ++it) {
        if (it->is_object()) throw DataError(origin + ": key '" + it.key() + "': nested objects are not allowed");
        c.used_[it.key()] = false;
    }
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open config");
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig c = parse(ss.str(), path.string());
    c.base_ = path.parent_path();
    return c;
}

const Json* RunConfig::find(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_[key] = true;
    return &*it;
}

bool RunConfig::has(const std::string& key) const { return values_.contains(key); }

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) {
    const Json* v = find(key);
    if (v && !v->is_string()) throw DataError(origin_ + ": key '" + key + "' must be a string");
    std::string out = v ? v->get<std::string>() : fallback;
    resolved_[key] = out;
    return out;
}

std::string RunConfig::require_string(const std::string& key) {
    if (!has(key)) throw DataError(origin_ + ": missing required key '" + key + "'");
    return get_string(key, "");
}

double RunConfig::get_double(const std::string& key, double fallback) {
    const Json* v = find(key);
    if (v && !v->is_number()) throw DataError(origin_ + ": key '" + key + "' must be a number");
    const double out = v ? v->get<double>() : fallback;
    resolved_[key] = out;
    return out;
}

std::size_t RunConfig::get_size(const std::string& key, std::size_t fallback) {
    const Json* v = find(key);
    if (v && !v->is_number_unsigned()) throw DataError(origin_ + ": key '" + key + "' must be a non-negative integer");
    const std::size_t out = v ? v->get<std::size_t>() : fallback;
    resolved_[key] = out;
    return out;
}

bool RunConfig::get_bool(const std::string& key, bool fallback) {
    const Json* v = find(key);
    if (v && !v->is_boolean()) throw DataError(origin_ + ": key '" + key + "' must be true or false");
    const bool out = v ? v->get<bool>() : fallback;
    resolved_[key] = out;
    return out;
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& key, std::vector<std::size_t> fallback) {
    const Json* v = find(key);
    if (v) {
        if (!v->is_array()) throw DataError(origin_ + ": key '" + key + "' must be a list of integers");
        fallback.clear();
        for (const auto& e : *v) {
            if (!e.is_number_unsigned()) throw DataError(origin_ + ": key '" + key + "' must hold integers");
            fallback.push_back(e.get<std::size_t>());
        }
    }
    resolved_[key] = fallback;
    return fallback;
}

std::vector<std::string> RunConfig::get_strings(const std::string& key, std::vector<std::string> fallback) {
    const Json* v = find(key);
    if (v) {
        if (!v->is_array()) throw DataError(origin_ + ": key '" + key + "' must be a list of strings");
        fallback.clear();
        for (const auto& e : *v) {
            if (!e.is_string()) throw DataError(origin_ + ": key '" + key + "' must hold strings");
            fallback.push_back(e.get<std::string>());
        }
    }
    resolved_[key] = fallback;
    return fallback;
}

std::vector<std::pair<std::string, std::string>> RunConfig::get_prefixed(const std::string& prefix) {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto it = values_.begin(); it != values_.end(); ++it)
        if (it.key().rfind(prefix, 0) == 0) {
            const std::string rest = it.key().substr(prefix.size());
            out.emplace_back(rest, get_string(it.key(), ""));
        }
    return out;
}

void RunConfig::require_all_used() const {
    std::string unknown;
    for (const auto& [k, used] : used_)
        if (!used) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty()) throw DataError(origin_ + ": unknown keys: " + unknown);
}

fs::path RunConfig::resolve_path(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() || base_.empty() ? path : base_ / path;
}

}  // namespace gmu
