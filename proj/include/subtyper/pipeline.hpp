#pragma once

#include "subtyper/biomarker.hpp"
#include "subtyper/cluster.hpp"
#include "subtyper/dataset.hpp"
#include "subtyper/export.hpp"
#include "subtyper/model.hpp"
#include "subtyper/survstats.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace subtyper {

struct DataSettings {
    std::vector<BlockSource> blocks;
    std::optional<std::filesystem::path> clinical;
    std::vector<std::string> categorical;  ///< clinical columns forced to categorical
    std::optional<std::filesystem::path> reference_labels;
};

struct ClusterSettings {
    std::string mode = "auto";  ///< "fixed" (needs k) or "auto" (consensus over [k_min, k_max])
    std::optional<std::size_t> k;
    std::size_t k_min = 2;
    std::size_t k_max = 10;
    std::size_t resamples = 100;
    double rate = 0.8;
    std::size_t restarts = 10;
};

struct EvaluationSettings {
    bool enabled = true;
    std::size_t permutations = 10000;
    double alpha = 0.05;
};

struct BiomarkerSettings {
    bool enabled = true;
    ForestConfig forest;
    std::size_t top_k = 5;
};

/// Seeds handed to each stage, all derived from the master seed.
struct StageSeeds {
    std::uint64_t model = 0;
    std::uint64_t kmeans = 0;
    std::uint64_t consensus = 0;
    std::uint64_t permutations = 0;
    std::uint64_t forest = 0;
};

struct RunConfig {
    DataSettings data;
    ModelConfig model;
    bool model_seed_given = false;  ///< model.seed set explicitly rather than derived
    ClusterSettings cluster;
    EvaluationSettings evaluation;
    BiomarkerSettings biomarkers;
    std::filesystem::path output = "subtyper-out";
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    /// Dotted names of every field that fell back to its default.
    std::vector<std::string> defaulted;

    /// Relative paths resolve against `base_dir`.
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static RunConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    /// Checks settings and that every referenced input file exists. Throws ConfigError.
    void validate(bool require_data = true) const;
    StageSeeds seeds() const;
};

struct PreparedData {
    OmicsDataset dataset;     ///< after mean imputation, before scaling
    Standardizer transform;
    Matrix features;          ///< standardized, blocks concatenated
    std::vector<std::string> feature_names;
    std::optional<ClinicalTable> clinical;  ///< aligned to dataset.sample_ids
    std::optional<ClusterAssignment> reference;  ///< aligned to dataset.sample_ids
};

/// Load, align, impute and standardize.
PreparedData prepare(const RunConfig& config, std::vector<std::string>* log = nullptr);

struct FitOutcome {
    AutoencoderParams params;
    TrainReport report;
    Matrix latent;
};

FitOutcome fit_model(const RunConfig& config, const Matrix& features);

struct ClusterOutcome {
    ClusterAssignment labels;
    std::optional<KSelection> selection;  ///< auto mode only
};

ClusterOutcome cluster_latent(const RunConfig& config, const Matrix& latent);

struct Evaluation {
    std::string skipped;  ///< reason the survival test did not run, if it did not
    std::optional<TestResult> logrank;
    std::size_t samples_with_survival = 0;
    std::vector<GroupCurve> curves;
    EnrichmentReport enrichment;
    std::optional<double> nmi;
    std::optional<double> ari;
};

Evaluation evaluate(const RunConfig& config, const ClusterAssignment& labels, const ClinicalTable* clinical,
                    const ClusterAssignment* reference);

struct BiomarkerOutcome {
    std::string skipped;
    ImportanceRanking ranking;
    std::vector<Biomarker> top;
};

BiomarkerOutcome find_biomarkers(const RunConfig& config, const Matrix& features, const ClusterAssignment& labels,
                                 std::span<const std::string> names);

nlohmann::json evaluation_json(const Evaluation& e);
nlohmann::json cluster_json(const ClusterOutcome& c);

/// Run bookkeeping written to manifest.json. Holds timings; metrics.json never does.
class Manifest {
public:
    Manifest(std::string command, const RunConfig& config);

    /// Times `fn` as stage `name`. Failures are recorded (and the manifest written
    /// when a directory is set) before the error is rethrown with the stage name prefixed.
    template <typename Fn>
    auto stage(const std::string& name, Fn&& fn) {
        const auto start = std::chrono::steady_clock::now();
        try {
            if constexpr (std::is_void_v<std::invoke_result_t<Fn&>>) {
                fn();
                finish(name, start);
            } else {
                auto result = fn();
                finish(name, start);
                return result;
            }
        } catch (...) {
            fail(name, start);
        }
    }

    void set_directory(const std::filesystem::path& dir) { dir_ = dir; }
    void output(const std::string& file);
    void note(const std::string& message);
    void notes(const std::vector<std::string>& messages);
    void set(const std::string& key, nlohmann::json value);
    void complete();
    /// Writes the manifest into `dir`, appending to an existing manifest's invocations when `append` is set.
    void write(const std::filesystem::path& dir, bool append = false) const;
    const nlohmann::json& json() const { return j_; }

private:
    void finish(const std::string& name, std::chrono::steady_clock::time_point start);
    [[noreturn]] void fail(const std::string& name, std::chrono::steady_clock::time_point start);

    nlohmann::json j_;
    std::filesystem::path dir_;
};

struct RunSummary {
    std::filesystem::path output;
    std::size_t k = 0;
    nlohmann::json metrics;
    nlohmann::json manifest;
};

/**
 * Full pipeline: prepare, train, encode, cluster, evaluate, rank biomarkers,
 * and write every artifact into `config.output`. On failure the manifest is
 * still written, marked incomplete, and the error is rethrown with the stage
 * name prefixed.
 */
RunSummary run(const RunConfig& config);

/**
 * Write a simulated cohort as one CSV per block (samples in rows), clinical.csv,
 * planted_labels.csv and a config.json pointing at them. Returns the config.
 */
nlohmann::json write_simulation(const SimulatedData& sim, const std::filesystem::path& dir, std::uint64_t seed);

/// Version string recorded in manifests.
std::string version();

} // namespace subtyper
