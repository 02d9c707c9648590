#include "subtyper/errors.hpp"
#include "subtyper/rng.hpp"
#include "subtyper/survstats.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

using namespace subtyper;

namespace {

std::vector<SurvivalRecord> records_from(std::initializer_list<std::pair<double, bool>> rows) {
    std::vector<SurvivalRecord> out;
    for (auto [t, e] : rows) {
        out.push_back({"s" + std::to_string(out.size()), t, e});
    }
    return out;
}

ClusterAssignment labels_of(std::vector<std::size_t> raw) {
    ClusterAssignment a;
    a.k = raw.empty() ? 0 : *std::max_element(raw.begin(), raw.end()) + 1;
    a.labels = std::move(raw);
    return a;
}

// Two-group log-rank by rescanning every record at each distinct death time.
double logrank_two_group_oracle(const std::vector<std::size_t>& group, const std::vector<SurvivalRecord>& rec) {
    std::vector<double> death_times;
    for (const auto& r : rec) {
        if (r.event) {
            death_times.push_back(r.time);
        }
    }
    std::sort(death_times.begin(), death_times.end());
    death_times.erase(std::unique(death_times.begin(), death_times.end()), death_times.end());
    double o_minus_e = 0.0;
    double var = 0.0;
    for (double t : death_times) {
        double n = 0, n1 = 0, d = 0, d1 = 0;
        for (std::size_t i = 0; i < rec.size(); ++i) {
            if (rec[i].time >= t) {
                n += 1;
                n1 += group[i] == 0 ? 1 : 0;
            }
            if (rec[i].time == t && rec[i].event) {
                d += 1;
                d1 += group[i] == 0 ? 1 : 0;
            }
        }
        o_minus_e += d1 - d * n1 / n;
        if (n > 1) {
            var += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1);
        }
    }
    return var > 0 ? o_minus_e * o_minus_e / var : 0.0;
}

std::vector<SurvivalRecord> random_records(Rng& rng, std::size_t n, bool integer_times) {
    std::vector<SurvivalRecord> rec(n);
    for (std::size_t i = 0; i < n; ++i) {
        rec[i].sample_id = "r" + std::to_string(i);
        rec[i].time = integer_times ? 1.0 + static_cast<double>(rng.below(8)) : rng.exponential(0.1);
        rec[i].event = rng.uniform() < 0.7;
    }
    return rec;
}

// Every set partition of n items as restricted growth strings.
std::vector<std::vector<std::size_t>> all_partitions(std::size_t n) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur(n, 0);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t used) {
        if (i == n) {
            out.push_back(cur);
            return;
        }
        for (std::size_t l = 0; l <= used && l < n; ++l) {
            cur[i] = l;
            rec(i + 1, std::max(used, l + 1));
        }
    };
    if (n > 0) {
        cur[0] = 0;
        rec(1, 1);
    }
    return out;
}

// ARI from raw pair agreement counts.
double ari_pairs(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, bool& degenerate) {
    double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const bool sa = a[i] == a[j];
            const bool sb = b[i] == b[j];
            n11 += sa && sb;
            n10 += sa && !sb;
            n01 += !sa && sb;
            n00 += !sa && !sb;
        }
    }
    const double denom = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    degenerate = denom == 0;
    return degenerate ? 0.0 : 2 * (n00 * n11 - n01 * n10) / denom;
}

} // namespace

TEST_CASE("chi-square upper tail matches table quantiles") {
    CHECK(std::fabs(chi_square_upper_tail(3.841, 1) - 0.050) < 1e-4);
    CHECK(std::fabs(chi_square_upper_tail(6.635, 1) - 0.010) < 1e-4);
    CHECK(std::fabs(chi_square_upper_tail(5.991, 2) - 0.050) < 1e-4);
    CHECK(std::fabs(chi_square_upper_tail(16.919, 9) - 0.050) < 1e-4);
    CHECK(chi_square_upper_tail(0.0, 3) == 1.0);
    CHECK_THROWS_AS(chi_square_upper_tail(1.0, 0), ArgumentError);
}

TEST_CASE("km_curve examples") {
    SUBCASE("no censoring steps by 1/n") {
        auto c = km_curve(records_from({{1, true}, {2, true}, {3, true}, {4, true}}));
        REQUIRE(c.survival.size() == 4);
        CHECK(c.survival == std::vector<double>{0.75, 0.5, 0.25, 0.0});
        CHECK(c.at_risk == std::vector<std::size_t>{4, 3, 2, 1});
    }
    SUBCASE("all censored stays at 1") {
        auto c = km_curve(records_from({{1, false}, {5, false}, {2, false}}));
        for (double s : c.survival) {
            CHECK(s == 1.0);
        }
    }
    SUBCASE("mixed six records") {
        // t: 1d 2d 3c 4d 4d 6c
        // S: 5/6, 5/6*4/5=4/6, same at censor, 4/6*(1-2/3)=2/9, same
        auto c = km_curve(records_from({{4, true}, {1, true}, {6, false}, {2, true}, {3, false}, {4, true}}));
        CHECK(c.times == std::vector<double>{1, 2, 3, 4, 6});
        CHECK(c.at_risk == std::vector<std::size_t>{6, 5, 4, 3, 1});
        CHECK(c.deaths == std::vector<std::size_t>{1, 1, 0, 2, 0});
        CHECK(c.censored == std::vector<std::size_t>{0, 0, 1, 0, 1});
        const std::vector<double> expect{5.0 / 6, 4.0 / 6, 4.0 / 6, 2.0 / 9, 2.0 / 9};
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(c.survival[i] == doctest::Approx(expect[i]).epsilon(1e-14));
        }
    }
    CHECK_THROWS_AS(km_curve(std::vector<SurvivalRecord>{}), DataError);
    CHECK_THROWS_AS(km_curve(records_from({{0.0, true}})), DataError);
}

TEST_CASE("km_curve properties on random data") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(40);
        auto rec = random_records(rng, n, trial % 2 == 0);
        auto c = km_curve(rec);
        double prev = 1.0;
        for (double s : c.survival) {
            CHECK(s <= prev);
            CHECK(s >= 0.0);
            prev = s;
        }
        for (auto& r : rec) {
            r.event = true;
        }
        c = km_curve(rec);
        std::size_t cumulative = 0;
        for (std::size_t i = 0; i < c.times.size(); ++i) {
            cumulative += c.deaths[i];
            CHECK(c.survival[i] == static_cast<double>(n - cumulative) / static_cast<double>(n));
        }
    }
}

TEST_CASE("logrank matches the two-group table oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 4 + rng.below(30);
        auto rec = random_records(rng, n, trial % 2 == 0);
        std::vector<std::size_t> g(n);
        for (std::size_t i = 0; i < n; ++i) {
            g[i] = i < 2 ? i : rng.below(2);
        }
        const double expect = logrank_two_group_oracle(g, rec);
        const auto got = logrank(labels_of(g), rec);
        CHECK(std::fabs(got.statistic - expect) <= 1e-9 * std::max(1.0, expect));
        if (expect > 0) {
            CHECK(got.degrees_of_freedom == 1);
        }
    }
}

TEST_CASE("logrank three groups agrees with explicit 2x2 inverse") {
    Rng rng(5);
    auto rec = random_records(rng, 45, false);
    std::vector<std::size_t> g(45);
    for (std::size_t i = 0; i < 45; ++i) {
        g[i] = i % 3;
    }
    // Oracle: accumulate O-E and V for groups 0 and 1 by rescanning.
    double z[2] = {0, 0};
    double v[2][2] = {{0, 0}, {0, 0}};
    for (const auto& ref : rec) {
        if (!ref.event) {
            continue;
        }
        const double t = ref.time;
        double n = 0, d = 0, nk[3] = {0, 0, 0}, dk[3] = {0, 0, 0};
        for (std::size_t i = 0; i < rec.size(); ++i) {
            if (rec[i].time >= t) {
                n += 1;
                nk[g[i]] += 1;
            }
            if (rec[i].time == t && rec[i].event) {
                d += 1;
                dk[g[i]] += 1;
            }
        }
        for (int a = 0; a < 2; ++a) {
            z[a] += dk[a] - d * nk[a] / n;
            for (int b = 0; b < 2; ++b) {
                const double f = n > 1 ? d * (n - d) / (n - 1) : 0.0;
                v[a][b] += f * (nk[a] / n) * ((a == b) - nk[b] / n);
            }
        }
    }
    const double det = v[0][0] * v[1][1] - v[0][1] * v[1][0];
    const double stat = (z[0] * (v[1][1] * z[0] - v[0][1] * z[1]) + z[1] * (-v[1][0] * z[0] + v[0][0] * z[1])) / det;
    const auto got = logrank(labels_of(g), rec);
    CHECK(got.degrees_of_freedom == 2);
    CHECK(got.statistic == doctest::Approx(stat).epsilon(1e-10));
}

TEST_CASE("logrank invariances") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 30;
        auto rec = random_records(rng, n, trial % 2 == 0);
        std::vector<std::size_t> g(n);
        for (std::size_t i = 0; i < n; ++i) {
            g[i] = i < 3 ? i : rng.below(3);
        }
        const double base = logrank(labels_of(g), rec).statistic;
        std::vector<std::size_t> relabeled(g);
        for (auto& l : relabeled) {
            l = (l + 1) % 3;
        }
        CHECK(logrank(labels_of(relabeled), rec).statistic == doctest::Approx(base).epsilon(1e-10));
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        std::vector<SurvivalRecord> rec2;
        std::vector<std::size_t> g2;
        for (std::size_t i : perm) {
            rec2.push_back(rec[i]);
            g2.push_back(g[i]);
        }
        CHECK(logrank(labels_of(g2), rec2).statistic == doctest::Approx(base).epsilon(1e-10));
    }
}

TEST_CASE("logrank edge cases") {
    SUBCASE("identical groups give zero") {
        auto rec = records_from({{1, true}, {1, true}, {3, false}, {3, false}, {5, true}, {5, true}});
        const auto r = logrank(labels_of({0, 1, 0, 1, 0, 1}), rec);
        CHECK(r.statistic == doctest::Approx(0.0));
        CHECK(r.p_asymptotic == doctest::Approx(1.0));
    }
    SUBCASE("sizes 1 and 99 with an early death in the small group") {
        std::vector<SurvivalRecord> rec;
        std::vector<std::size_t> g;
        rec.push_back({"a", 0.5, true});
        g.push_back(0);
        for (int i = 0; i < 99; ++i) {
            rec.push_back({"b" + std::to_string(i), 1.0 + i, i % 3 != 0});
            g.push_back(1);
        }
        const auto r = logrank(labels_of(g), rec);
        CHECK(std::isfinite(r.statistic));
        CHECK(r.p_asymptotic >= 0.0);
        CHECK(r.p_asymptotic <= 1.0);
    }
    SUBCASE("empty group is excluded with a warning") {
        auto rec = records_from({{1, true}, {2, true}, {3, true}, {4, false}});
        ClusterAssignment a = labels_of({0, 0, 2, 2});
        const auto r = logrank(a, rec);
        CHECK(r.degrees_of_freedom == 1);
        CHECK(r.warnings.size() == 1);
    }
    SUBCASE("single group is rejected") {
        auto rec = records_from({{1, true}, {2, true}});
        CHECK_THROWS_AS(logrank(labels_of({0, 0}), rec), ArgumentError);
    }
    SUBCASE("length mismatch") {
        auto rec = records_from({{1, true}, {2, true}});
        CHECK_THROWS_AS(logrank(labels_of({0, 1, 1}), rec), ArgumentError);
    }
}

TEST_CASE("empirical_p bounds and determinism") {
    Rng rng(9);
    auto rec = random_records(rng, 40, false);
    std::vector<std::size_t> g(40);
    for (std::size_t i = 0; i < 40; ++i) {
        g[i] = i % 2;
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = empirical_p(labels_of(g), rec, 1, seed);
        REQUIRE(r.p_empirical.has_value());
        CHECK((*r.p_empirical == 0.5 || *r.p_empirical == 1.0));
    }
    const auto a = empirical_p(labels_of(g), rec, 300, 4, 1);
    const auto b = empirical_p(labels_of(g), rec, 300, 4, 3);
    CHECK(*a.p_empirical == *b.p_empirical);
    CHECK(*a.p_empirical >= 1.0 / 301);
    CHECK(*a.p_empirical <= 1.0);
    CHECK(a.permutations == 300);
    CHECK_THROWS_AS(empirical_p(labels_of(g), rec, 0, 1), ArgumentError);
}

TEST_CASE("empirical_p reaches the floor on separated hazards") {
    Rng rng(31);
    std::vector<SurvivalRecord> rec;
    std::vector<std::size_t> g;
    for (std::size_t i = 0; i < 200; ++i) {
        const std::size_t grp = i % 2;
        rec.push_back({"x" + std::to_string(i), rng.exponential(grp == 0 ? 1.0 : 10.0), true});
        g.push_back(grp);
    }
    const auto r = empirical_p(labels_of(g), rec, 10000, 1, 2);
    CHECK(*r.p_empirical == doctest::Approx(1.0 / 10001).epsilon(1e-12));
}

TEST_CASE("chi_square examples") {
    SUBCASE("category equals cluster") {
        std::vector<std::size_t> g;
        std::vector<std::string> cat;
        for (int i = 0; i < 40; ++i) {
            g.push_back(i % 2);
            cat.push_back(i % 2 ? "M" : "F");
        }
        const auto r = chi_square(labels_of(g), cat);
        CHECK(r.statistic == doctest::Approx(40.0));
        CHECK(r.degrees_of_freedom == 1);
        CHECK(r.p_asymptotic == doctest::Approx(std::erfc(std::sqrt(20.0))).epsilon(1e-10));
        CHECK(r.p_asymptotic == doctest::Approx(2.54e-10).epsilon(0.01));
    }
    SUBCASE("exact balance gives zero") {
        std::vector<std::size_t> g;
        std::vector<std::string> cat;
        for (int i = 0; i < 40; ++i) {
            g.push_back(i % 2);
            cat.push_back((i / 2) % 2 ? "M" : "F");
        }
        const auto r = chi_square(labels_of(g), cat);
        CHECK(r.statistic == doctest::Approx(0.0));
        CHECK(r.p_asymptotic == 1.0);
    }
    SUBCASE("3x2 table against sum of (O-E)^2/E") {
        // rows: clusters, cols: A/B
        const double obs[3][2] = {{10, 20}, {25, 5}, {15, 15}};
        std::vector<std::size_t> g;
        std::vector<std::string> cat;
        for (std::size_t r = 0; r < 3; ++r) {
            for (std::size_t c = 0; c < 2; ++c) {
                for (int i = 0; i < obs[r][c]; ++i) {
                    g.push_back(r);
                    cat.push_back(c ? "B" : "A");
                }
            }
        }
        double stat = 0.0;
        const double total = 90;
        for (std::size_t r = 0; r < 3; ++r) {
            for (std::size_t c = 0; c < 2; ++c) {
                const double e = (obs[r][0] + obs[r][1]) * (obs[0][c] + obs[1][c] + obs[2][c]) / total;
                stat += (obs[r][c] - e) * (obs[r][c] - e) / e;
            }
        }
        const auto res = chi_square(labels_of(g), cat);
        CHECK(res.statistic == doctest::Approx(stat).epsilon(1e-12));
        CHECK(res.degrees_of_freedom == 2);
        CHECK(res.warnings.empty());

        // Invariance under row and column relabeling, and missing entries are dropped.
        std::vector<std::size_t> g2(g);
        for (auto& l : g2) {
            l = 2 - l;
        }
        std::vector<std::string> cat2(cat);
        for (auto& s : cat2) {
            s = s == "A" ? "zz" : "aa";
        }
        g2.push_back(0);
        cat2.push_back("");
        CHECK(chi_square(labels_of(g2), cat2).statistic == doctest::Approx(stat).epsilon(1e-12));
    }
    SUBCASE("small expected counts are flagged") {
        const auto r = chi_square(labels_of({0, 0, 1, 1}), std::vector<std::string>{"a", "b", "a", "a"});
        CHECK(!r.warnings.empty());
    }
    SUBCASE("degenerate tables") {
        CHECK_THROWS_AS(chi_square(labels_of({0, 1, 0}), std::vector<std::string>{"a", "a", "a"}), ArgumentError);
        CHECK_THROWS_AS(chi_square(labels_of({0, 0, 0}), std::vector<std::string>{"a", "b", "a"}), ArgumentError);
        CHECK_THROWS_AS(chi_square(labels_of({0, 1, 0}), std::vector<std::string>{"a", "", "a"}), ArgumentError);
    }
}

TEST_CASE("kruskal_wallis examples") {
    const std::vector<double> v{1, 2, 3, 101, 102, 103};
    const auto r = kruskal_wallis(labels_of({0, 0, 0, 1, 1, 1}), v);
    // 12/(6*7) * (6^2/3 + 15^2/3) - 3*7
    CHECK(r.statistic == doctest::Approx(12.0 / 42.0 * (12.0 + 75.0) - 21.0).epsilon(1e-12));
    CHECK(r.statistic == doctest::Approx(3.857142857).epsilon(1e-9));
    CHECK(r.degrees_of_freedom == 1);

    const auto same = kruskal_wallis(labels_of({0, 0, 0, 0, 1, 1, 1, 1}), std::vector<double>{1, 2, 3, 4, 4, 3, 2, 1});
    CHECK(same.statistic == doctest::Approx(0.0));
    CHECK(same.p_asymptotic > 0.05);

    const auto flat = kruskal_wallis(labels_of({0, 1, 0, 1}), std::vector<double>{5, 5, 5, 5});
    CHECK(flat.statistic == 0.0);
    CHECK(flat.p_asymptotic == 1.0);

    // Ties: groups {1,1,2} vs {2,3,3}; ranks 1.5,1.5,3.5 | 3.5,5.5,5.5
    const auto tied = kruskal_wallis(labels_of({0, 0, 0, 1, 1, 1}), std::vector<double>{1, 1, 2, 2, 3, 3});
    const double h = 12.0 / 42.0 * (6.5 * 6.5 / 3 + 14.5 * 14.5 / 3) - 21.0;
    const double c = 1.0 - 3 * 6.0 / (216.0 - 6.0);
    CHECK(tied.statistic == doctest::Approx(h / c).epsilon(1e-12));

    const auto nan_dropped = kruskal_wallis(labels_of({0, 0, 0, 1, 1, 1, 1}),
                                            std::vector<double>{1, 2, 3, 101, 102, 103, std::nan("")});
    CHECK(nan_dropped.statistic == doctest::Approx(r.statistic));
    CHECK_THROWS_AS(kruskal_wallis(labels_of({0, 0, 1}), std::vector<double>{1, 2, std::nan("")}), ArgumentError);
}

TEST_CASE("enrichment picks the test by covariate type") {
    std::vector<std::size_t> g;
    ClinicalCovariate sex{"sex", true, {}, {}};
    ClinicalCovariate age{"age", false, {}, {}};
    ClinicalCovariate flat{"stage", true, {}, {}};
    for (int i = 0; i < 40; ++i) {
        g.push_back(i % 2);
        sex.categories.push_back(i % 2 ? "M" : "F");
        age.values.push_back(50.0 + (i / 2) % 7);
        flat.categories.push_back("T1");
    }
    const std::vector<ClinicalCovariate> covs{sex, age, flat};
    const auto rep = enrichment(labels_of(g), covs);
    REQUIRE(rep.entries.size() == 3);
    CHECK(rep.entries[0].test == "chi-square");
    CHECK(rep.entries[0].significant);
    CHECK(rep.entries[1].test == "kruskal-wallis");
    CHECK(!rep.entries[1].significant);
    CHECK(!rep.entries[2].skipped.empty());
    CHECK(rep.significant_count == 1);
}

TEST_CASE("nmi and ari identities") {
    const auto a = labels_of({0, 0, 1, 1, 2, 2, 2});
    const auto b = labels_of({2, 2, 0, 0, 1, 1, 1});
    CHECK(nmi(a, a) == doctest::Approx(1.0));
    CHECK(ari(a, a) == doctest::Approx(1.0));
    CHECK(nmi(a, b) == doctest::Approx(1.0));
    CHECK(ari(a, b) == doctest::Approx(1.0));
    const auto one = labels_of({0, 0, 0, 0});
    const auto two = labels_of({0, 1, 0, 1});
    CHECK(nmi(one, one) == 1.0);
    CHECK(nmi(one, two) == 0.0);
    CHECK(nmi(two, one) == 0.0);
    CHECK_THROWS_AS(nmi(one, a), ArgumentError);
    CHECK_THROWS_AS(ari(one, a), ArgumentError);
}

TEST_CASE("ari matches pair counting on all partitions up to n=6") {
    for (std::size_t n = 1; n <= 6; ++n) {
        const auto parts = all_partitions(n);
        for (const auto& p : parts) {
            for (const auto& q : parts) {
                bool degenerate = false;
                const double expect = ari_pairs(p, q, degenerate);
                const double got = ari(labels_of(p), labels_of(q));
                if (degenerate) {
                    CHECK(got == (p == q ? 1.0 : 0.0));
                } else {
                    CHECK(got == doctest::Approx(expect).epsilon(1e-12).scale(1.0));
                }
                CHECK(got == ari(labels_of(q), labels_of(p)));
                CHECK(nmi(labels_of(p), labels_of(q)) == doctest::Approx(nmi(labels_of(q), labels_of(p))));
            }
        }
    }
}

TEST_CASE("nmi and ari are near zero for random labels") {
    Rng rng(404);
    std::vector<std::size_t> truth(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        truth[i] = i % 2;
    }
    double ari_sum = 0.0;
    double nmi_sum = 0.0;
    for (int t = 0; t < 1000; ++t) {
        std::vector<std::size_t> r(1000);
        for (auto& l : r) {
            l = rng.below(2);
        }
        ari_sum += ari(labels_of(truth), labels_of(r));
        if (t < 100) {
            nmi_sum += nmi(labels_of(truth), labels_of(r));
        }
    }
    CHECK(std::fabs(ari_sum / 1000) < 0.02);
    CHECK(nmi_sum / 100 < 0.02);
}

TEST_CASE("studentized range quantiles match the Nemenyi table") {
    const std::pair<std::size_t, double> table[] = {{2, 1.960}, {3, 2.343}, {4, 2.569}, {5, 2.728},
                                                    {6, 2.850}, {7, 2.949}, {8, 3.031}, {10, 3.164}};
    for (auto [k, q] : table) {
        CHECK(studentized_range_quantile(k, 0.05) / std::sqrt(2.0) == doctest::Approx(q).epsilon(1e-3));
    }
}

TEST_CASE("friedman examples") {
    SUBCASE("identical scores") {
        Matrix s(4, 5, 0.7);
        const auto r = friedman(s);
        CHECK(r.test.statistic == 0.0);
        CHECK(r.test.p_asymptotic == 1.0);
    }
    SUBCASE("3 methods x 4 datasets") {
        const Matrix s = Matrix::from_rows({{0.9, 0.8, 0.7, 0.95}, {0.7, 0.85, 0.6, 0.9}, {0.6, 0.5, 0.65, 0.3}});
        // ranks per dataset (1=best): d1 1,2,3  d2 2,1,3  d3 1,3,2  d4 1,2,3 -> sums 5, 8, 11
        const double stat = 12.0 / (4 * 3 * 4) * (25 + 64 + 121) - 3 * 4 * 4;
        const auto r = friedman(s);
        CHECK(r.test.statistic == doctest::Approx(stat).epsilon(1e-12));
        CHECK(r.test.degrees_of_freedom == 2);
        CHECK(r.mean_ranks[0] == doctest::Approx(1.25));
        CHECK(r.mean_ranks[2] == doctest::Approx(2.75));
    }
    SUBCASE("dominant method beats the worst") {
        Rng rng(3);
        Matrix s(10, 10);
        for (std::size_t j = 0; j < 10; ++j) {
            s(0, j) = 2.0;
            for (std::size_t i = 1; i < 10; ++i) {
                s(i, j) = rng.uniform();
            }
            s(9, j) = -1.0;
        }
        const auto r = friedman(s);
        CHECK(r.critical_difference == doctest::Approx(3.164 * std::sqrt(110.0 / 60.0)).epsilon(1e-3));
        CHECK(r.differs[0][9]);
        CHECK(!r.differs[0][0]);
        CHECK(r.test.p_asymptotic < 0.05);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(friedman(Matrix(2, 5, 1.0)), ArgumentError);
        Matrix s(3, 3, 1.0);
        s(1, 1) = std::nan("");
        CHECK_THROWS_AS(friedman(s), DataError);
    }
}
