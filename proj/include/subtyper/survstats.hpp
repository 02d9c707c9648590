#pragma once

#include "subtyper/cluster.hpp"
#include "subtyper/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace subtyper {

/// Follow-up time in days and whether death was observed (false = censored).
struct SurvivalRecord {
    std::string sample_id;
    double time = 0.0;
    bool event = false;
};

/// Product-limit estimate at each distinct observed time.
struct SurvivalCurve {
    std::vector<double> times;
    std::vector<double> survival;      ///< S(t) just after times[i]
    std::vector<std::size_t> at_risk;  ///< subjects with time >= times[i]
    std::vector<std::size_t> deaths;
    std::vector<std::size_t> censored;
};

struct TestResult {
    double statistic = 0.0;
    std::size_t degrees_of_freedom = 0;
    double p_asymptotic = 1.0;
    std::optional<double> p_empirical;
    std::size_t permutations = 0;
    std::vector<std::string> warnings;
};

/// P(X >= x) for X ~ chi-square with `df` degrees of freedom.
double chi_square_upper_tail(double x, double df);

/// Kaplan-Meier estimator. Censor-only times shrink the risk set without a step.
SurvivalCurve km_curve(std::span<const SurvivalRecord> records);

/**
 * k-group log-rank test; `groups.labels[i]` is the group of `records[i]`.
 *
 * The statistic is (O - E)^T V^- (O - E) over the first g-1 non-empty
 * groups, with the hypergeometric covariance at each death time. Groups
 * without records are dropped (with a warning) and the degrees of freedom
 * shrink accordingly.
 */
TestResult logrank(const ClusterAssignment& groups, std::span<const SurvivalRecord> records);

/**
 * Log-rank test plus a permutation p-value (1 + #{T_b >= T_obs}) / (B + 1).
 * Permutation b shuffles the labels with stream `derive_seed(seed, b)`.
 */
TestResult empirical_p(const ClusterAssignment& groups, std::span<const SurvivalRecord> records,
                       std::size_t permutations, std::uint64_t seed, std::size_t threads = 1);

/// Pearson chi-square on the cluster x category table. Empty strings are missing.
TestResult chi_square(const ClusterAssignment& labels, std::span<const std::string> categories);

/// Kruskal-Wallis H with tie correction. NaN values are missing.
TestResult kruskal_wallis(const ClusterAssignment& labels, std::span<const double> values);

/// Mutual information normalized by sqrt(H(a) H(b)).
double nmi(const ClusterAssignment& a, const ClusterAssignment& b);

/// Hubert-Arabie adjusted Rand index.
double ari(const ClusterAssignment& a, const ClusterAssignment& b);

/// One clinical parameter. Categorical values use "" for missing, numeric values NaN.
struct ClinicalCovariate {
    std::string name;
    bool categorical = false;
    std::vector<std::string> categories;  ///< per sample when categorical, "" = missing
    std::vector<double> values;           ///< per sample when numeric, NaN = missing
};

struct EnrichmentEntry {
    std::string parameter;
    std::string test;  ///< "chi-square" or "kruskal-wallis"
    TestResult result;
    bool significant = false;
    std::string skipped;  ///< non-empty when the test could not be run
};

struct EnrichmentReport {
    std::vector<EnrichmentEntry> entries;
    std::size_t significant_count = 0;
};

/// Chi-square for categorical covariates, Kruskal-Wallis for numeric; raw p < alpha counts as significant.
EnrichmentReport enrichment(const ClusterAssignment& labels, std::span<const ClinicalCovariate> covariates,
                            double alpha = 0.05);

struct FriedmanResult {
    TestResult test;
    std::vector<double> mean_ranks;          ///< per method; rank 1 = highest score
    double critical_difference = 0.0;        ///< Nemenyi CD at the requested alpha
    std::vector<std::vector<bool>> differs;  ///< differs[i][j]: |R_i - R_j| > CD
};

/// Friedman rank test over methods (rows) x datasets (columns), higher score is better.
FriedmanResult friedman(const Matrix& scores, double alpha = 0.05);

/// Upper-alpha quantile of the studentized range for k means and infinite df.
double studentized_range_quantile(std::size_t k, double alpha);

} // namespace subtyper
