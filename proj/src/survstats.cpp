#include "subtyper/survstats.hpp"

#include "subtyper/errors.hpp"
#include "subtyper/parallel.hpp"
#include "subtyper/rng.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace subtyper {

namespace {

void check_records(std::span<const SurvivalRecord> records) {
    for (const auto& r : records) {
        if (!(r.time > 0.0) || !std::isfinite(r.time)) {
            throw DataError("survival record '" + r.sample_id + "' has a non-positive or non-finite time");
        }
    }
}

// Records sorted by time, grouped into blocks of equal time.
class RiskSetTable {
public:
    explicit RiskSetTable(std::span<const SurvivalRecord> records) : records_(records) {
        order_.resize(records.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::stable_sort(order_.begin(), order_.end(),
                         [&](std::size_t a, std::size_t b) { return records[a].time < records[b].time; });
        for (std::size_t i = 0; i < order_.size(); ++i) {
            if (i == 0 || records[order_[i]].time != records[order_[i - 1]].time) {
                starts_.push_back(i);
            }
        }
        starts_.push_back(order_.size());
    }

    struct Tables {
        std::vector<double> observed;
        std::vector<double> expected;
        std::vector<double> covariance;  // groups x groups, row-major
    };

    Tables compute(std::span<const std::size_t> group, std::size_t groups) const {
        Tables t{std::vector<double>(groups), std::vector<double>(groups), std::vector<double>(groups * groups)};
        std::vector<double> at_risk(groups, 0.0);
        for (std::size_t g : group) {
            at_risk[g] += 1.0;
        }
        double total_at_risk = static_cast<double>(group.size());
        std::vector<double> deaths(groups);
        std::vector<double> leaving(groups);
        for (std::size_t b = 0; b + 1 < starts_.size(); ++b) {
            std::fill(deaths.begin(), deaths.end(), 0.0);
            std::fill(leaving.begin(), leaving.end(), 0.0);
            double d = 0.0;
            for (std::size_t i = starts_[b]; i < starts_[b + 1]; ++i) {
                const std::size_t rec = order_[i];
                const std::size_t g = group[rec];
                leaving[g] += 1.0;
                if (records_[rec].event) {
                    deaths[g] += 1.0;
                    d += 1.0;
                }
            }
            if (d > 0.0) {
                const double n = total_at_risk;
                for (std::size_t g = 0; g < groups; ++g) {
                    t.observed[g] += deaths[g];
                    t.expected[g] += at_risk[g] * d / n;
                }
                // Single subject at risk: hypergeometric variance is zero.
                if (n > 1.0) {
                    const double factor = d * (n - d) / (n - 1.0);
                    for (std::size_t g = 0; g < groups; ++g) {
                        const double pg = at_risk[g] / n;
                        for (std::size_t h = 0; h < groups; ++h) {
                            const double ph = at_risk[h] / n;
                            t.covariance[g * groups + h] += factor * pg * ((g == h ? 1.0 : 0.0) - ph);
                        }
                    }
                }
            }
            for (std::size_t g = 0; g < groups; ++g) {
                at_risk[g] -= leaving[g];
                total_at_risk -= leaving[g];
            }
        }
        return t;
    }

private:
    std::span<const SurvivalRecord> records_;
    std::vector<std::size_t> order_;
    std::vector<std::size_t> starts_;
};

struct LogrankValue {
    double statistic = 0.0;
    std::size_t df = 0;
};

LogrankValue logrank_statistic(const RiskSetTable& table, std::span<const std::size_t> group, std::size_t groups) {
    const auto t = table.compute(group, groups);
    std::vector<std::size_t> used;
    for (std::size_t g = 0; g < groups; ++g) {
        if (t.expected[g] > 0.0) {
            used.push_back(g);
        }
    }
    if (used.size() < 2) {
        return {};
    }
    const std::size_t m = used.size() - 1;
    Eigen::MatrixXd v(m, m);
    Eigen::VectorXd z(m);
    for (std::size_t a = 0; a < m; ++a) {
        z(static_cast<Eigen::Index>(a)) = t.observed[used[a]] - t.expected[used[a]];
        for (std::size_t b = 0; b < m; ++b) {
            v(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = t.covariance[used[a] * groups + used[b]];
        }
    }
    const Eigen::VectorXd x = v.completeOrthogonalDecomposition().solve(z);
    const double stat = std::max(0.0, z.dot(x));
    return {std::isfinite(stat) ? stat : 0.0, m};
}

// Compact labels to 0..g-1 over groups that actually own records.
std::size_t compact_groups(const ClusterAssignment& groups, std::vector<std::size_t>& out,
                           std::vector<std::string>& warnings) {
    const std::size_t k = std::max(groups.k, groups.labels.empty()
                                                 ? std::size_t{0}
                                                 : *std::max_element(groups.labels.begin(), groups.labels.end()) + 1);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t l : groups.labels) {
        ++counts[l];
    }
    std::vector<std::size_t> remap(k, 0);
    std::size_t next = 0;
    for (std::size_t g = 0; g < k; ++g) {
        if (counts[g] == 0) {
            warnings.push_back("group " + std::to_string(g) + " has no records and was excluded");
        } else {
            remap[g] = next++;
        }
    }
    out.resize(groups.labels.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = remap[groups.labels[i]];
    }
    return next;
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) {
            ++j;
        }
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) {
            ranks[order[t]] = rank;
        }
        i = j + 1;
    }
    return ranks;
}

double tie_sum(std::span<const double> values) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) {
            ++j;
        }
        const double t = static_cast<double>(j - i);
        acc += t * t * t - t;
        i = j;
    }
    return acc;
}

double entropy(const std::vector<double>& counts, double n) {
    double h = 0.0;
    for (double c : counts) {
        if (c > 0.0) {
            h -= c / n * std::log(c / n);
        }
    }
    return h;
}

void require_same_length(const ClusterAssignment& a, const ClusterAssignment& b, const char* what) {
    if (a.size() != b.size()) {
        throw ArgumentError(std::string(what) + ": partitions have different lengths (" + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()) + ")");
    }
}

struct Contingency {
    std::vector<double> table;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> row_sums;
    std::vector<double> col_sums;
};

Contingency contingency(const ClusterAssignment& a, const ClusterAssignment& b) {
    const auto ca = ClusterAssignment::from_labels(std::span<const std::size_t>(a.labels));
    const auto cb = ClusterAssignment::from_labels(std::span<const std::size_t>(b.labels));
    Contingency c;
    c.rows = ca.k;
    c.cols = cb.k;
    c.table.assign(c.rows * c.cols, 0.0);
    c.row_sums.assign(c.rows, 0.0);
    c.col_sums.assign(c.cols, 0.0);
    for (std::size_t i = 0; i < ca.size(); ++i) {
        c.table[ca.labels[i] * c.cols + cb.labels[i]] += 1.0;
        c.row_sums[ca.labels[i]] += 1.0;
        c.col_sums[cb.labels[i]] += 1.0;
    }
    return c;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

} // namespace

double chi_square_upper_tail(double x, double df) {
    if (!(df > 0.0)) {
        throw ArgumentError("chi_square_upper_tail: df must be positive");
    }
    if (!(x > 0.0)) {
        return 1.0;
    }
    if (std::isinf(x)) {
        return 0.0;
    }
    return boost::math::gamma_q(df / 2.0, x / 2.0);
}

SurvivalCurve km_curve(std::span<const SurvivalRecord> records) {
    if (records.empty()) {
        throw DataError("km_curve: no survival records");
    }
    check_records(records);
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].time < records[b].time; });
    SurvivalCurve curve;
    std::size_t at_risk = records.size();
    // Between censorings the product of (n - d) / n telescopes, so each run
    // costs one division. Without censoring S is exactly (n - i) / n.
    double s = 1.0;
    double s_base = 1.0;
    std::size_t run_start = at_risk;
    for (std::size_t i = 0; i < order.size();) {
        const double t = records[order[i]].time;
        std::size_t deaths = 0;
        std::size_t censored = 0;
        std::size_t j = i;
        for (; j < order.size() && records[order[j]].time == t; ++j) {
            if (records[order[j]].event) {
                ++deaths;
            } else {
                ++censored;
            }
        }
        if (deaths > 0) {
            s = s_base * (static_cast<double>(at_risk - deaths) / static_cast<double>(run_start));
        }
        curve.times.push_back(t);
        curve.survival.push_back(s);
        curve.at_risk.push_back(at_risk);
        curve.deaths.push_back(deaths);
        curve.censored.push_back(censored);
        at_risk -= deaths + censored;
        if (censored > 0) {
            s_base = s;
            run_start = at_risk;
        }
        i = j;
    }
    return curve;
}

TestResult logrank(const ClusterAssignment& groups, std::span<const SurvivalRecord> records) {
    if (groups.size() != records.size()) {
        throw ArgumentError("logrank: " + std::to_string(groups.size()) + " labels for " +
                            std::to_string(records.size()) + " records");
    }
    check_records(records);
    TestResult out;
    std::vector<std::size_t> compact;
    const std::size_t g = compact_groups(groups, compact, out.warnings);
    if (g < 2) {
        throw ArgumentError("logrank: need at least two non-empty groups");
    }
    const RiskSetTable table(records);
    const LogrankValue v = logrank_statistic(table, compact, g);
    if (v.df == 0) {
        out.warnings.push_back("fewer than two groups have expected deaths; statistic set to 0");
    }
    out.statistic = v.statistic;
    out.degrees_of_freedom = v.df;
    out.p_asymptotic = v.df == 0 ? 1.0 : chi_square_upper_tail(v.statistic, static_cast<double>(v.df));
    return out;
}

TestResult empirical_p(const ClusterAssignment& groups, std::span<const SurvivalRecord> records,
                       std::size_t permutations, std::uint64_t seed, std::size_t threads) {
    if (permutations == 0) {
        throw ArgumentError("empirical_p: need at least one permutation");
    }
    TestResult out = logrank(groups, records);
    std::vector<std::size_t> compact;
    std::vector<std::string> ignored;
    const std::size_t g = compact_groups(groups, compact, ignored);
    const RiskSetTable table(records);
    const double observed = out.statistic;
    std::vector<double> stats(permutations);
    parallel_for(permutations, threads, [&](std::size_t b) {
        Rng rng(derive_seed(seed, b));
        std::vector<std::size_t> shuffled = compact;
        rng.shuffle(shuffled);
        stats[b] = logrank_statistic(table, shuffled, g).statistic;
    });
    // Relative slack absorbs summation-order noise between equivalent arrangements.
    const double threshold = observed - 1e-10 * std::max(1.0, observed);
    const auto exceed = std::count_if(stats.begin(), stats.end(), [&](double s) { return s >= threshold; });
    out.p_empirical = (1.0 + static_cast<double>(exceed)) / (static_cast<double>(permutations) + 1.0);
    out.permutations = permutations;
    return out;
}

TestResult chi_square(const ClusterAssignment& labels, std::span<const std::string> categories) {
    if (labels.size() != categories.size()) {
        throw ArgumentError("chi_square: labels and categories differ in length");
    }
    std::map<std::size_t, std::size_t> row_id;
    std::map<std::string, std::size_t> col_id;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (categories[i].empty()) {
            continue;
        }
        row_id.emplace(labels.labels[i], 0);
        col_id.emplace(categories[i], 0);
    }
    if (row_id.size() < 2 || col_id.size() < 2) {
        throw ArgumentError("chi_square: degenerate table (" + std::to_string(row_id.size()) + " clusters x " +
                            std::to_string(col_id.size()) + " categories after dropping missing values)");
    }
    std::size_t next = 0;
    for (auto& [key, id] : row_id) {
        id = next++;
    }
    next = 0;
    for (auto& [key, id] : col_id) {
        id = next++;
    }
    const std::size_t r = row_id.size();
    const std::size_t c = col_id.size();
    std::vector<double> observed(r * c, 0.0);
    std::vector<double> row_sum(r, 0.0);
    std::vector<double> col_sum(c, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (categories[i].empty()) {
            continue;
        }
        const std::size_t a = row_id[labels.labels[i]];
        const std::size_t b = col_id[categories[i]];
        observed[a * c + b] += 1.0;
        row_sum[a] += 1.0;
        col_sum[b] += 1.0;
        total += 1.0;
    }
    TestResult out;
    bool small = false;
    for (std::size_t a = 0; a < r; ++a) {
        for (std::size_t b = 0; b < c; ++b) {
            const double e = row_sum[a] * col_sum[b] / total;
            small = small || e < 5.0;
            const double diff = observed[a * c + b] - e;
            out.statistic += diff * diff / e;
        }
    }
    if (small) {
        out.warnings.push_back("some expected counts are below 5; the chi-square approximation may be poor");
    }
    out.degrees_of_freedom = (r - 1) * (c - 1);
    out.p_asymptotic = chi_square_upper_tail(out.statistic, static_cast<double>(out.degrees_of_freedom));
    return out;
}

TestResult kruskal_wallis(const ClusterAssignment& labels, std::span<const double> values) {
    if (labels.size() != values.size()) {
        throw ArgumentError("kruskal_wallis: labels and values differ in length");
    }
    std::vector<double> kept;
    std::vector<std::size_t> kept_label;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (std::isnan(values[i])) {
            continue;
        }
        kept.push_back(values[i]);
        kept_label.push_back(labels.labels[i]);
    }
    std::map<std::size_t, std::pair<double, double>> per_group;  // label -> (rank sum, count)
    const std::vector<double> ranks = average_ranks(kept);
    for (std::size_t i = 0; i < kept.size(); ++i) {
        auto& [rank_sum, count] = per_group[kept_label[i]];
        rank_sum += ranks[i];
        count += 1.0;
    }
    if (per_group.size() < 2) {
        throw ArgumentError("kruskal_wallis: need at least two groups with observed values");
    }
    TestResult out;
    out.degrees_of_freedom = per_group.size() - 1;
    const double n = static_cast<double>(kept.size());
    const double correction = 1.0 - tie_sum(kept) / (n * n * n - n);
    if (correction <= 0.0) {
        out.warnings.push_back("all values are tied; H set to 0");
        return out;
    }
    double acc = 0.0;
    for (const auto& [label, rc] : per_group) {
        acc += rc.first * rc.first / rc.second;
    }
    const double h = (12.0 / (n * (n + 1.0)) * acc - 3.0 * (n + 1.0)) / correction;
    out.statistic = std::max(0.0, h);
    out.p_asymptotic = chi_square_upper_tail(out.statistic, static_cast<double>(out.degrees_of_freedom));
    return out;
}

EnrichmentReport enrichment(const ClusterAssignment& labels, std::span<const ClinicalCovariate> covariates,
                            double alpha) {
    EnrichmentReport report;
    for (const auto& cov : covariates) {
        EnrichmentEntry entry;
        entry.parameter = cov.name;
        entry.test = cov.categorical ? "chi-square" : "kruskal-wallis";
        try {
            entry.result = cov.categorical ? chi_square(labels, cov.categories) : kruskal_wallis(labels, cov.values);
            entry.significant = entry.result.p_asymptotic < alpha;
        } catch (const ArgumentError& e) {
            entry.skipped = e.what();
        }
        report.significant_count += entry.significant ? 1 : 0;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

double nmi(const ClusterAssignment& a, const ClusterAssignment& b) {
    require_same_length(a, b, "nmi");
    if (a.size() == 0) {
        return 1.0;
    }
    const Contingency c = contingency(a, b);
    const double n = static_cast<double>(a.size());
    const double ha = entropy(c.row_sums, n);
    const double hb = entropy(c.col_sums, n);
    if (ha == 0.0 && hb == 0.0) {
        return 1.0;
    }
    if (ha == 0.0 || hb == 0.0) {
        return 0.0;
    }
    double mi = 0.0;
    for (std::size_t i = 0; i < c.rows; ++i) {
        for (std::size_t j = 0; j < c.cols; ++j) {
            const double nij = c.table[i * c.cols + j];
            if (nij > 0.0) {
                mi += nij / n * std::log(n * nij / (c.row_sums[i] * c.col_sums[j]));
            }
        }
    }
    return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

double ari(const ClusterAssignment& a, const ClusterAssignment& b) {
    require_same_length(a, b, "ari");
    const Contingency c = contingency(a, b);
    double index = 0.0;
    for (double v : c.table) {
        index += choose2(v);
    }
    double sum_a = 0.0;
    for (double v : c.row_sums) {
        sum_a += choose2(v);
    }
    double sum_b = 0.0;
    for (double v : c.col_sums) {
        sum_b += choose2(v);
    }
    const double pairs = choose2(static_cast<double>(a.size()));
    const double expected = pairs == 0.0 ? 0.0 : sum_a * sum_b / pairs;
    const double max_index = (sum_a + sum_b) / 2.0;
    const double denom = max_index - expected;
    if (denom == 0.0) {
        // Both partitions trivial (one cluster, or all singletons).
        return a.same_partition(b) ? 1.0 : 0.0;
    }
    return (index - expected) / denom;
}

double studentized_range_quantile(std::size_t k, double alpha) {
    if (k < 2) {
        throw ArgumentError("studentized_range_quantile: need at least two means");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ArgumentError("studentized_range_quantile: alpha must be in (0, 1)");
    }
    const boost::math::normal_distribution<double> normal;
    const double kk = static_cast<double>(k);
    // P(range <= q) = k * integral phi(z) [Phi(z) - Phi(z - q)]^(k-1) dz, Simpson on [-9, 9 + q].
    auto cdf = [&](double q) {
        constexpr int intervals = 4000;
        const double lo = -9.0;
        const double hi = 9.0 + q;
        const double h = (hi - lo) / intervals;
        double acc = 0.0;
        for (int i = 0; i <= intervals; ++i) {
            const double z = lo + h * i;
            const double f = boost::math::pdf(normal, z) *
                             std::pow(boost::math::cdf(normal, z) - boost::math::cdf(normal, z - q), kk - 1.0);
            const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
            acc += w * f;
        }
        return kk * acc * h / 3.0;
    };
    double lo = 0.0;
    double hi = 20.0;
    for (int iter = 0; iter < 100; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (cdf(mid) < 1.0 - alpha) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

FriedmanResult friedman(const Matrix& scores, double alpha) {
    const std::size_t k = scores.rows();
    const std::size_t n = scores.cols();
    if (k < 3 || n < 2) {
        throw ArgumentError("friedman: need at least 3 methods and 2 datasets, got " + shape_of(scores));
    }
    for (double v : scores.data()) {
        if (std::isnan(v)) {
            throw DataError("friedman: scores contain NaN");
        }
    }
    FriedmanResult out;
    out.mean_ranks.assign(k, 0.0);
    double ties = 0.0;
    std::vector<double> column(k);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < k; ++i) {
            column[i] = -scores(i, j);  // rank 1 = best score
        }
        const auto ranks = average_ranks(column);
        for (std::size_t i = 0; i < k; ++i) {
            out.mean_ranks[i] += ranks[i];
        }
        ties += tie_sum(column);
    }
    const double kk = static_cast<double>(k);
    const double nn = static_cast<double>(n);
    double spread = 0.0;
    for (double& r : out.mean_ranks) {
        spread += (r - nn * (kk + 1.0) / 2.0) * (r - nn * (kk + 1.0) / 2.0);
        r /= nn;
    }
    const double denom = nn * kk * (kk + 1.0) - ties / (kk - 1.0);
    out.test.degrees_of_freedom = k - 1;
    if (denom <= 0.0) {
        out.test.warnings.push_back("every dataset ranks all methods equal; statistic set to 0");
    } else {
        out.test.statistic = 12.0 * spread / denom;
        out.test.p_asymptotic = chi_square_upper_tail(out.test.statistic, kk - 1.0);
    }
    const double q = studentized_range_quantile(k, alpha) / std::sqrt(2.0);
    out.critical_difference = q * std::sqrt(kk * (kk + 1.0) / (6.0 * nn));
    out.differs.assign(k, std::vector<bool>(k, false));
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
            out.differs[a][b] = std::fabs(out.mean_ranks[a] - out.mean_ranks[b]) > out.critical_difference;
        }
    }
    return out;
}

} // namespace subtyper
