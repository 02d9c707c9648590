#include "subtyper/cluster.hpp"
#include "subtyper/errors.hpp"
#include "subtyper/rng.hpp"
#include "subtyper/survstats.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

using namespace subtyper;

namespace {

Matrix random_points(Rng& rng, std::size_t n, std::size_t d, double spread = 1.0) {
    Matrix m(n, d);
    for (double& v : m.data()) {
        v = spread * rng.normal();
    }
    return m;
}

// n points around `k` centres placed `gap` apart on separate axes; truth[i] = i % k.
Matrix planted(Rng& rng, std::size_t n, std::size_t k, std::size_t d, double gap, std::vector<std::size_t>& truth) {
    Matrix m(n, d);
    truth.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        truth[i] = i % k;
        for (std::size_t j = 0; j < d; ++j) {
            m(i, j) = rng.normal() + (j == truth[i] % d ? gap : 0.0) + (truth[i] >= d && j == 0 ? -gap : 0.0);
        }
    }
    return m;
}

double partition_cost(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t k) {
    Matrix centre(k, x.cols());
    std::vector<double> count(k, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        count[labels[i]] += 1;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            centre(labels[i], j) += x(i, j);
        }
    }
    double cost = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double diff = x(i, j) - centre(labels[i], j) / count[labels[i]];
            cost += diff * diff;
        }
    }
    return cost;
}

// Minimum within-cluster sum of squares over every partition into exactly k blocks.
std::pair<double, std::vector<std::size_t>> exhaustive_kmeans(const Matrix& x, std::size_t k) {
    const std::size_t n = x.rows();
    std::vector<std::size_t> cur(n, 0);
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> arg;
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t used) {
        if (n - i < k - used) {
            return;
        }
        if (i == n) {
            const double c = partition_cost(x, cur, k);
            if (c < best) {
                best = c;
                arg = cur;
            }
            return;
        }
        for (std::size_t l = 0; l <= used && l < k; ++l) {
            cur[i] = l;
            rec(i + 1, std::max(used, l + 1));
        }
    };
    rec(1, 1);
    return {best, arg};
}

// Average linkage by recomputing mean pairwise distances between clusters each step.
std::vector<std::size_t> naive_average_linkage(const Matrix& d, std::size_t k) {
    const std::size_t n = d.rows();
    std::vector<std::vector<std::size_t>> clusters(n);
    for (std::size_t i = 0; i < n; ++i) {
        clusters[i] = {i};
    }
    while (clusters.size() > k) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t ba = 0, bb = 0;
        for (std::size_t a = 0; a < clusters.size(); ++a) {
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                double s = 0.0;
                for (std::size_t i : clusters[a]) {
                    for (std::size_t j : clusters[b]) {
                        s += d(i, j);
                    }
                }
                s /= static_cast<double>(clusters[a].size() * clusters[b].size());
                if (s < best) {
                    best = s;
                    ba = a;
                    bb = b;
                }
            }
        }
        clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    }
    std::vector<std::size_t> labels(n);
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        for (std::size_t i : clusters[c]) {
            labels[i] = c;
        }
    }
    return labels;
}

ClusterAssignment wrap(const std::vector<std::size_t>& raw) {
    return ClusterAssignment::from_labels(std::span<const std::size_t>(raw));
}

} // namespace

TEST_CASE("canonical labels") {
    const std::vector<long long> raw{7, 7, -1, 3, -1};
    const auto a = ClusterAssignment::from_labels(std::span<const long long>(raw));
    CHECK(a.labels == std::vector<std::size_t>{0, 0, 1, 2, 1});
    CHECK(a.k == 3);
    CHECK(a.same_partition(wrap({5, 5, 2, 9, 2})));
    CHECK(!a.same_partition(wrap({0, 1, 1, 2, 1})));
}

TEST_CASE("kmeans separable clouds") {
    Rng rng(1);
    Matrix x(40, 2);
    for (std::size_t i = 0; i < 40; ++i) {
        const double c = i < 20 ? 0.0 : 100.0;
        x(i, 0) = c + rng.normal();
        x(i, 1) = c + rng.normal();
    }
    std::vector<std::size_t> truth(40);
    for (std::size_t i = 0; i < 40; ++i) {
        truth[i] = i < 20 ? 0 : 1;
    }
    const auto r = kmeans_fit(x, 2, 5, 3);
    CHECK(r.assignment.same_partition(wrap(truth)));
    CHECK(r.assignment.inertia == doctest::Approx(partition_cost(x, truth, 2)).epsilon(1e-12));
    for (std::size_t t = 1; t < r.inertia_trace.size(); ++t) {
        CHECK(r.inertia_trace[t] <= r.inertia_trace[t - 1] * (1 + 1e-12));
    }
}

TEST_CASE("kmeans with k = n") {
    Rng rng(2);
    const Matrix x = random_points(rng, 7, 3);
    const auto a = kmeans(x, 7, 1, 9);
    CHECK(a.k == 7);
    CHECK(a.inertia == 0.0);
}

TEST_CASE("kmeans agrees with exhaustive search on small instances") {
    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 5 + rng.below(4);
        const std::size_t k = 2 + rng.below(2);
        const Matrix x = random_points(rng, n, 2);
        const auto [best, arg] = exhaustive_kmeans(x, k);
        const auto got = kmeans_fit(x, k, 20, 100 + trial);
        CHECK(got.assignment.inertia == doctest::Approx(best).epsilon(1e-9));
        CHECK(got.assignment.same_partition(wrap(arg)));

        // Shuffled input order yields the same partition after mapping back.
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        const auto shuffled = kmeans_fit(x.select_rows(perm), k, 20, 500 + trial);
        std::vector<std::size_t> back(n);
        for (std::size_t i = 0; i < n; ++i) {
            back[perm[i]] = shuffled.assignment.labels[i];
        }
        CHECK(wrap(back).same_partition(got.assignment));
    }
}

TEST_CASE("kmeans n=6 two-partition oracle") {
    const Matrix x = Matrix::from_rows({{0, 0}, {1, 0}, {0, 1}, {5, 5}, {6, 5}, {2.5, 2.4}});
    const auto [best, arg] = exhaustive_kmeans(x, 2);
    const auto got = kmeans(x, 2, 10, 0);
    CHECK(got.same_partition(wrap(arg)));
    CHECK(got.inertia == doctest::Approx(best));
}

TEST_CASE("kmeans inertia trace is non-increasing") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix x = random_points(rng, 60, 3);
        const auto r = kmeans_fit(x, 5, 1, trial);
        for (std::size_t t = 1; t < r.inertia_trace.size(); ++t) {
            CHECK(r.inertia_trace[t] <= r.inertia_trace[t - 1] * (1 + 1e-12));
        }
        CHECK(r.iterations <= 300);
    }
}

TEST_CASE("kmeans handles duplicate points and errors") {
    Matrix dup(6, 2, 1.0);
    const auto a = kmeans(dup, 3, 2, 1);
    CHECK(a.k == 3);
    CHECK(a.inertia == 0.0);
    CHECK_THROWS_AS(kmeans(dup, 0, 1, 1), ArgumentError);
    CHECK_THROWS_AS(kmeans(dup, 7, 1, 1), ArgumentError);
    dup(2, 1) = std::nan("");
    CHECK_THROWS_AS(kmeans(dup, 2, 1, 1), DataError);
}

TEST_CASE("consensus structure") {
    Rng rng(5);
    std::vector<std::size_t> truth;
    const Matrix x = planted(rng, 30, 3, 3, 30.0, truth);
    SUBCASE("rate 1 gives a 0/1 block matrix") {
        const auto m = consensus(x, 3, 10, 1.0, 1);
        CHECK(m.unsampled_pairs == 0);
        for (std::size_t i = 0; i < 30; ++i) {
            CHECK(m.consensus(i, i) == 1.0);
            for (std::size_t j = 0; j < 30; ++j) {
                CHECK(m.consensus(i, j) == m.consensus(j, i));
                CHECK(m.consensus(i, j) == (truth[i] == truth[j] ? 1.0 : 0.0));
            }
        }
    }
    SUBCASE("single resample gives 0/1 on co-sampled pairs") {
        const auto m = consensus(x, 3, 1, 0.5, 2);
        std::size_t flagged = 0;
        for (std::size_t i = 0; i < 30; ++i) {
            for (std::size_t j = 0; j < 30; ++j) {
                const double v = m.consensus(i, j);
                CHECK((v == 0.0 || v == 1.0));
                if (m.flagged(i, j)) {
                    CHECK(v == 0.0);
                    ++flagged;
                }
            }
        }
        CHECK(flagged == 2 * m.unsampled_pairs);
        CHECK(m.unsampled_pairs > 0);
    }
    SUBCASE("thread count does not change the result") {
        const auto a = consensus(x, 4, 20, 0.8, 9, 1);
        const auto b = consensus(x, 4, 20, 0.8, 9, 4);
        CHECK(a.consensus == b.consensus);
        CHECK(a.cosampled == b.cosampled);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(consensus(x, 3, 0, 0.8, 1), ArgumentError);
        CHECK_THROWS_AS(consensus(x, 3, 5, 0.0, 1), ArgumentError);
        CHECK_THROWS_AS(consensus(x, 3, 5, 1.5, 1), ArgumentError);
        CHECK_THROWS_AS(consensus(x, 4, 5, 0.1, 1), ArgumentError);
    }
}

TEST_CASE("subsample size") {
    CHECK(subsample_size(100, 0.8) == 80);
    CHECK(subsample_size(10, 0.25) == 3);
    CHECK(subsample_size(7, 1.0) == 7);
    CHECK(subsample_size(30, 0.1) == 3);
}

TEST_CASE("consensus on planted 3-cluster data") {
    Rng rng(6);
    std::vector<std::size_t> truth;
    const Matrix x = planted(rng, 120, 3, 5, 6.0, truth);
    const auto m = consensus(x, 3, 100, 0.8, 17);
    double within = 0.0, between = 0.0;
    double nw = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < 120; ++i) {
        for (std::size_t j = i + 1; j < 120; ++j) {
            if (truth[i] == truth[j]) {
                within += m.consensus(i, j);
                nw += 1;
            } else {
                between += m.consensus(i, j);
                nb += 1;
            }
        }
    }
    CHECK(within / nw >= 0.9);
    CHECK(between / nb <= 0.1);
    CHECK(pac_score(m) < 0.05);
}

TEST_CASE("select_k recovers planted clusters") {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(1000 + seed);
        std::vector<std::size_t> truth;
        const Matrix x = planted(rng, 80, 4, 4, 8.0, truth);
        const auto sel = select_k(x, 2, 8, 30, 0.8, seed);
        CHECK(sel.pac.size() == 7);
        hits += sel.chosen_k == 4 ? 1 : 0;
        if (seed == 0) {
            const auto again = select_k(x, 2, 8, 30, 0.8, seed, 3);
            CHECK(again.pac == sel.pac);
            CHECK(again.chosen_k == sel.chosen_k);
            CHECK(again.chosen.consensus == sel.chosen.consensus);
        }
    }
    CHECK(hits >= 8);
}

TEST_CASE("select_k on duplicated two-cluster data") {
    Rng rng(8);
    std::vector<std::size_t> truth;
    const Matrix base = planted(rng, 30, 2, 3, 10.0, truth);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 30; ++i) {
        idx.push_back(i);
        idx.push_back(i);
    }
    const Matrix x = base.select_rows(idx);
    const auto sel = select_k(x, 2, 5, 30, 0.8, 4);
    CHECK(sel.chosen_k == 2);
}

TEST_CASE("select_k on a single blob returns") {
    Rng rng(9);
    const Matrix x = random_points(rng, 40, 2);
    const auto sel = select_k(x, 2, 5, 10, 0.8, 1);
    CHECK(sel.chosen_k >= 2);
    CHECK(sel.chosen_k <= 5);
    CHECK(sel.pac.size() == 4);
    CHECK_THROWS_AS(select_k(x, 1, 5, 10, 0.8, 1), ArgumentError);
    CHECK_THROWS_AS(select_k(x, 4, 3, 10, 0.8, 1), ArgumentError);
    CHECK_THROWS_AS(select_k(x, 2, 21, 10, 0.8, 1), ArgumentError);
}

TEST_CASE("average linkage matches the naive merge loop") {
    Rng rng(10);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 3 + rng.below(15);
        const Matrix pts = random_points(rng, n, 2);
        Matrix d(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                d(i, j) = std::hypot(pts(i, 0) - pts(j, 0), pts(i, 1) - pts(j, 1));
            }
        }
        for (std::size_t k = 1; k <= n; ++k) {
            CHECK(average_linkage(d, k).same_partition(wrap(naive_average_linkage(d, k))));
        }
    }
}

TEST_CASE("consensus_labels examples") {
    SUBCASE("two perfect blocks") {
        ConsensusMatrix m;
        m.consensus = Matrix(6, 6);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 6; ++j) {
                m.consensus(i, j) = (i < 3) == (j < 3) ? 1.0 : 0.0;
            }
        }
        CHECK(consensus_labels(m, 2).labels == std::vector<std::size_t>{0, 0, 0, 1, 1, 1});
    }
    SUBCASE("identity gives singletons") {
        ConsensusMatrix m;
        m.consensus = Matrix::identity(5);
        const auto a = consensus_labels(m, 5);
        CHECK(a.k == 5);
        CHECK(a.labels == std::vector<std::size_t>{0, 1, 2, 3, 4});
    }
    SUBCASE("noisy planted blocks") {
        Rng rng(12);
        const std::size_t n = 90;
        std::vector<std::size_t> truth(n);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = rng.below(3);
        }
        ConsensusMatrix m;
        m.consensus = Matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m.consensus(i, i) = 1.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double base = truth[i] == truth[j] ? 0.8 : 0.2;
                const double v = std::clamp(base + 0.15 * rng.normal(), 0.0, 1.0);
                m.consensus(i, j) = v;
                m.consensus(j, i) = v;
            }
        }
        CHECK(ari(consensus_labels(m, 3), wrap(truth)) >= 0.9);
    }
    SUBCASE("errors") {
        ConsensusMatrix m;
        m.consensus = Matrix::identity(3);
        CHECK_THROWS_AS(consensus_labels(m, 0), ArgumentError);
        CHECK_THROWS_AS(consensus_labels(m, 4), ArgumentError);
        CHECK_THROWS_AS(average_linkage(Matrix(2, 3), 1), ShapeError);
    }
}
