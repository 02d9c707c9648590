#pragma once

#include "subtyper/cluster.hpp"
#include "subtyper/matrix.hpp"
#include "subtyper/survstats.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace subtyper {

struct OmicsBlock {
    std::string name;
    std::vector<std::string> features;
    Matrix values;  ///< samples x features, NaN where missing
};

/// Omics blocks sharing one sample order.
struct OmicsDataset {
    std::vector<std::string> sample_ids;
    std::vector<OmicsBlock> blocks;

    std::size_t samples() const { return sample_ids.size(); }
    std::size_t features() const;
    /// Blocks side by side, in block order.
    Matrix concatenated() const;
    /// "block:feature" for every concatenated column.
    std::vector<std::string> feature_names() const;
    /// Throws DataError on inconsistent shapes, duplicate ids or duplicate names.
    void validate() const;
};

/// Per-sample clinical data; rows follow `sample_ids`.
struct ClinicalTable {
    std::vector<std::string> sample_ids;
    std::vector<std::optional<SurvivalRecord>> survival;
    std::vector<ClinicalCovariate> covariates;

    /// Rows reordered to `ids`; ids absent from the table get no survival and missing covariates.
    ClinicalTable aligned_to(std::span<const std::string> ids, std::vector<std::string>* log = nullptr) const;
    std::size_t with_survival() const;
};

/// Delimited text with a header row and a leading id column.
struct DelimitedMatrix {
    std::vector<std::string> row_ids;
    std::vector<std::string> columns;
    Matrix values;
};

/// True for "", "NA" and "NaN" in any letter case.
bool is_missing_token(std::string_view cell);

/**
 * Reads a comma- or tab-separated numeric matrix (delimiter taken from the
 * header line). With `transpose`, rows are features and columns samples.
 * Missing tokens become NaN; anything else non-numeric raises ParseError
 * with the 1-based file line and column.
 */
DelimitedMatrix read_matrix(const std::filesystem::path& path, bool transpose = false);

struct BlockSource {
    std::string name;
    std::filesystem::path path;
    bool transpose = false;
};

/// Loads every block and keeps the samples present in all of them, in first-file order.
OmicsDataset load_omics(std::span<const BlockSource> sources, std::vector<std::string>* log = nullptr);

/**
 * Clinical table: a sample id column, then optional `time` and `event`
 * columns, then covariates. A covariate is numeric when every present value
 * parses as a number, unless it is listed in `categorical`.
 */
ClinicalTable load_clinical(const std::filesystem::path& path, std::span<const std::string> categorical = {},
                            std::vector<std::string>* log = nullptr);

/// Missing values replaced by their column mean; all-missing columns become 0 and are logged.
OmicsDataset impute_mean(const OmicsDataset& dataset, std::vector<std::string>* log = nullptr);

/// Per-feature z-score with population sd; zero-sd features map to 0.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> sd;

    static Standardizer fit(const Matrix& x);
    Matrix apply(const Matrix& x) const;

    nlohmann::json to_json() const;
    static Standardizer from_json(const nlohmann::json& j);
};

struct Standardized {
    OmicsDataset dataset;
    Standardizer transform;
};

Standardized standardize(const OmicsDataset& dataset);

struct SimulationSpec {
    std::size_t samples = 400;
    std::vector<std::string> block_names{"cnv", "methylation", "mrna"};
    std::vector<std::size_t> block_dims{80, 70, 50};
    std::vector<double> block_scales{1.0, 0.2, 5.0};  ///< per-block raw unit, exercises standardization
    std::size_t clusters = 4;
    double separation = 2.0;            ///< sd of per-feature cluster offsets, in noise units
    double informative_fraction = 0.8;  ///< share of features carrying cluster signal
    double missing_rate = 0.01;
    double baseline_hazard = 1.0 / 1000.0;  ///< per day, cluster 0
    std::vector<double> hazard_ratios{1.0, 2.0, 4.0, 8.0};  ///< cycled when clusters exceed the list
    double censor_rate = 1.0 / 2000.0;  ///< hazard of the independent censoring time
    double covariate_association = 0.6;  ///< spread of P(sex = M) across clusters
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static SimulationSpec from_json(const nlohmann::json& j, std::vector<std::string>* defaulted = nullptr);
};

struct SimulatedData {
    OmicsDataset dataset;
    ClinicalTable clinical;
    ClusterAssignment planted;
};

/**
 * Gaussian clusters with centred per-feature offsets, exponential survival
 * with cluster-specific hazards, independent exponential censoring, a
 * categorical covariate ("sex") whose mix shifts with cluster and an
 * independent numeric covariate ("age").
 */
SimulatedData simulate(const SimulationSpec& spec);

} // namespace subtyper
