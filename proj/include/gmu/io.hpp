// SPDX-License-Identifier: Apache-2.0
//
// Dataset files, reports, model snapshots and run configs.
#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gmu/dataset.hpp"
#include "gmu/metrics.hpp"
#include "gmu/models.hpp"
#include "gmu/synthetic.hpp"
#include "gmu/training.hpp"

namespace gmu {

using Json = nlohmann::json;

extern const char* const kCodeVersion;

/// Malformed input files or configs.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training stopped on a non-finite loss, gradient or parameter.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Datasets: comma-separated, header line, first column `id`.

struct ModalityFile {
    std::string name;
    std::filesystem::path path;
};

/// Inner join of the modality files on the label file's ids, in label-file
/// row order. Modality rows without labels are skipped, so one feature file
/// can serve several label files (train, dev, test).
MultilabelDataset load_dataset(const std::vector<ModalityFile>& modalities, const std::filesystem::path& labels);

/// Writes `<modality>.csv` per modality and `labels.csv` into `dir` at full
/// precision; returns the modality file list for load_dataset.
std::vector<ModalityFile> write_dataset(const MultilabelDataset& d, const std::filesystem::path& dir);

/// Label file with probabilities or 0/1 predictions, same layout as labels.
Tensor load_matrix_by_id(const std::filesystem::path& path, const std::vector<std::string>& ids,
                         const std::vector<std::string>& columns);

// ---------------------------------------------------------------------------
// Reports: key-sorted JSON, floats rounded to 9 significant digits.

/// Throws DataError naming the path of the first NaN or infinity.
std::string format_report(const Json& report);
void write_report(const Json& report, const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

Json to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const Json& j);
Json to_json(const HyperConfig& c);
HyperConfig hyper_from_json(const Json& j);
Json to_json(const TrainReport& r);
Json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const Json& j);
Json to_json(const SyntheticParams& p);
Json to_json(const SyntheticTraining& t);
Json to_json(const SyntheticRecord& r);
Json to_json(const SuiteAggregate& a);
Json to_json(const std::vector<GateFractions>& f);

/// Model snapshot at full precision.
void write_model(const Model& m, const std::filesystem::path& path);
Model read_model(const std::filesystem::path& path);

/// Header x_v,x_t,z,p; 9 significant digits.
std::string format_grid(const std::vector<GridRow>& rows);

// ---------------------------------------------------------------------------
// Run configs: one flat JSON object (comments allowed). Every key must be
// consumed by the command; leftovers are reported as unknown.

class RunConfig {
public:
    RunConfig() = default;
    static RunConfig parse(const std::string& text, const std::string& origin = "config");
    static RunConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback);
    std::string require_string(const std::string& key);
    double get_double(const std::string& key, double fallback);
    std::size_t get_size(const std::string& key, std::size_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<std::size_t> get_sizes(const std::string& key, std::vector<std::size_t> fallback);
    std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback);
    /// Keys starting with `prefix`, in sorted order, with the prefix removed.
    std::vector<std::pair<std::string, std::string>> get_prefixed(const std::string& prefix);

    /// Throws DataError listing keys never read.
    void require_all_used() const;
    /// Values as resolved, defaults included.
    const Json& resolved() const { return resolved_; }
    /// Paths in the config are relative to this directory.
    std::filesystem::path resolve_path(const std::string& p) const;

private:
    const Json* find(const std::string& key);
    std::string origin_;
    std::filesystem::path base_;
    Json values_ = Json::object();
    Json resolved_ = Json::object();
    std::map<std::string, bool> used_;
};

}  // namespace gmu
