#include "subtyper/cluster.hpp"

#include "subtyper/errors.hpp"
#include "subtyper/parallel.hpp"
#include "subtyper/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace subtyper {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

template <typename T>
ClusterAssignment canonical(std::span<const T> raw) {
    ClusterAssignment out;
    out.labels.reserve(raw.size());
    std::map<T, std::size_t> ids;
    for (const T& v : raw) {
        auto [it, inserted] = ids.emplace(v, ids.size());
        out.labels.push_back(it->second);
    }
    out.k = ids.size();
    return out;
}

Matrix seed_plus_plus(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    Matrix centroids(k, points.cols());
    std::vector<bool> chosen(n, false);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t pick = static_cast<std::size_t>(rng.below(n));
    for (std::size_t c = 0; c < k; ++c) {
        chosen[pick] = true;
        std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
        if (c + 1 == k) {
            break;
        }
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centroids.row(c)));
            total += nearest[i];
        }
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double running = 0.0;
            pick = n;
            std::size_t last_positive = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (nearest[i] <= 0.0) {
                    continue;
                }
                last_positive = i;
                running += nearest[i];
                if (running > target) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) {
                pick = last_positive;
            }
        } else {
            // Every remaining point coincides with a centre.
            pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
        }
    }
    return centroids;
}

struct Restart {
    std::vector<std::size_t> labels;
    Matrix centroids;
    std::vector<double> trace;
    double inertia = 0.0;
    std::size_t iterations = 0;
};

Restart lloyd(const Matrix& points, std::size_t k, Rng& rng, std::size_t max_iterations, double tolerance) {
    const std::size_t n = points.rows();
    const std::size_t d = points.cols();
    Restart r;
    r.centroids = seed_plus_plus(points, k, rng);
    r.labels.assign(n, 0);
    std::vector<double> dist(n);
    std::vector<std::size_t> counts(k);
    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = squared_distance(points.row(i), r.centroids.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double dc = squared_distance(points.row(i), r.centroids.row(c));
                if (dc < best_d) {
                    best_d = dc;
                    best = c;
                }
            }
            r.labels[i] = best;
            dist[i] = best_d;
            ++counts[best];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) {
                continue;
            }
            std::size_t far = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[r.labels[i]] > 1 && (far == n || dist[i] > dist[far])) {
                    far = i;
                }
            }
            --counts[r.labels[far]];
            r.labels[far] = c;
            dist[far] = 0.0;
            counts[c] = 1;
        }

        Matrix updated(k, d);
        for (std::size_t i = 0; i < n; ++i) {
            auto dst = updated.row(r.labels[i]);
            auto src = points.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                dst[j] += src[j];
            }
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            for (double& v : updated.row(c)) {
                v /= static_cast<double>(counts[c]);
            }
            shift = std::max(shift, std::sqrt(squared_distance(updated.row(c), r.centroids.row(c))));
        }
        r.centroids = std::move(updated);
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            inertia += squared_distance(points.row(i), r.centroids.row(r.labels[i]));
        }
        r.trace.push_back(inertia);
        r.inertia = inertia;
        r.iterations = iter + 1;
        if (shift < tolerance) {
            break;
        }
    }
    return r;
}

} // namespace

ClusterAssignment ClusterAssignment::from_labels(std::span<const long long> raw) { return canonical(raw); }

ClusterAssignment ClusterAssignment::from_labels(std::span<const std::size_t> raw) { return canonical(raw); }

bool ClusterAssignment::same_partition(const ClusterAssignment& other) const {
    if (labels.size() != other.labels.size()) {
        return false;
    }
    return from_labels(std::span<const std::size_t>(labels)).labels ==
           from_labels(std::span<const std::size_t>(other.labels)).labels;
}

KMeansResult kmeans_fit(const Matrix& points, std::size_t k, std::size_t restarts, std::uint64_t seed,
                        std::size_t max_iterations, double tolerance) {
    const std::size_t n = points.rows();
    if (k == 0) {
        throw ArgumentError("kmeans: k must be at least 1");
    }
    if (k > n) {
        throw ArgumentError("kmeans: k = " + std::to_string(k) + " exceeds the " + std::to_string(n) + " points");
    }
    if (!points.all_finite()) {
        throw DataError("kmeans: points contain non-finite values");
    }
    restarts = std::max<std::size_t>(restarts, 1);
    Restart best;
    for (std::size_t r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, r));
        Restart run = lloyd(points, k, rng, max_iterations, tolerance);
        if (r == 0 || run.inertia < best.inertia) {
            best = std::move(run);
        }
    }

    KMeansResult out;
    out.assignment = ClusterAssignment::from_labels(std::span<const std::size_t>(best.labels));
    out.assignment.inertia = best.inertia;
    out.centroids = Matrix(k, points.cols());
    for (std::size_t i = 0; i < n; ++i) {
        auto src = best.centroids.row(best.labels[i]);
        std::copy(src.begin(), src.end(), out.centroids.row(out.assignment.labels[i]).begin());
    }
    out.inertia_trace = std::move(best.trace);
    out.iterations = best.iterations;
    return out;
}

ClusterAssignment kmeans(const Matrix& points, std::size_t k, std::size_t restarts, std::uint64_t seed) {
    return kmeans_fit(points, k, restarts, seed).assignment;
}

std::size_t subsample_size(std::size_t n, double rate) {
    return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n) - 1e-9));
}

ConsensusMatrix consensus(const Matrix& points, std::size_t k, std::size_t resamples, double rate,
                          std::uint64_t seed, std::size_t threads) {
    if (!(rate > 0.0 && rate <= 1.0)) {
        throw ArgumentError("consensus: subsample rate must be in (0, 1]");
    }
    if (resamples == 0) {
        throw ArgumentError("consensus: need at least one resample");
    }
    const std::size_t n = points.rows();
    const std::size_t m = subsample_size(n, rate);
    if (k == 0 || k > m) {
        throw ArgumentError("consensus: k = " + std::to_string(k) + " does not fit a subsample of " +
                            std::to_string(m) + " points");
    }

    std::vector<std::vector<std::size_t>> drawn(resamples);
    std::vector<std::vector<std::size_t>> labels(resamples);
    parallel_for(resamples, threads, [&](std::size_t r) {
        Rng rng(derive_seed(seed, r));
        drawn[r] = rng.sample_without_replacement(n, m);
        const std::uint64_t kmeans_seed = rng.next_u64();
        labels[r] = kmeans(points.select_rows(drawn[r]), k, 1, kmeans_seed).labels;
    });

    ConsensusMatrix out;
    out.cosampled.assign(n * n, 0);
    std::vector<std::uint32_t> together(n * n, 0);
    for (std::size_t r = 0; r < resamples; ++r) {
        const auto& idx = drawn[r];
        for (std::size_t a = 0; a < idx.size(); ++a) {
            for (std::size_t b = a + 1; b < idx.size(); ++b) {
                const std::size_t i = idx[a];
                const std::size_t j = idx[b];
                ++out.cosampled[i * n + j];
                if (labels[r][a] == labels[r][b]) {
                    ++together[i * n + j];
                }
            }
        }
    }
    out.consensus = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out.consensus(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const std::uint32_t c = out.cosampled[i * n + j];
            out.cosampled[j * n + i] = c;
            const double v = c == 0 ? 0.0 : static_cast<double>(together[i * n + j]) / static_cast<double>(c);
            if (c == 0) {
                ++out.unsampled_pairs;
            }
            out.consensus(i, j) = v;
            out.consensus(j, i) = v;
        }
        out.cosampled[i * n + i] = 0;
    }
    return out;
}

double pac_score(const ConsensusMatrix& m, double lower, double upper) {
    std::size_t counted = 0;
    std::size_t ambiguous = 0;
    for (std::size_t i = 0; i < m.n(); ++i) {
        for (std::size_t j = i + 1; j < m.n(); ++j) {
            if (m.cosampled_count(i, j) == 0) {
                continue;
            }
            ++counted;
            const double v = m.consensus(i, j);
            if (v > lower && v < upper) {
                ++ambiguous;
            }
        }
    }
    return counted == 0 ? 0.0 : static_cast<double>(ambiguous) / static_cast<double>(counted);
}

KSelection select_k(const Matrix& points, std::size_t k_min, std::size_t k_max, std::size_t resamples, double rate,
                    std::uint64_t seed, std::size_t threads) {
    const std::size_t n = points.rows();
    if (k_min < 2 || k_min > k_max || 2 * k_max > n) {
        throw ArgumentError("select_k: need 2 <= k_min <= k_max <= n/2 (got [" + std::to_string(k_min) + ", " +
                            std::to_string(k_max) + "] for n = " + std::to_string(n) + ")");
    }
    KSelection out;
    out.k_min = k_min;
    out.k_max = k_max;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = k_min; k <= k_max; ++k) {
        ConsensusMatrix m = consensus(points, k, resamples, rate, derive_seed(seed, k), threads);
        const double pac = pac_score(m);
        out.pac.push_back(pac);
        if (pac < best) {
            best = pac;
            out.chosen_k = k;
            out.chosen = std::move(m);
        }
    }
    return out;
}

ClusterAssignment average_linkage(const Matrix& distances, std::size_t k) {
    const std::size_t n = distances.rows();
    if (distances.cols() != n) {
        throw ShapeError("average_linkage: distance matrix must be square, got " + shape_of(distances));
    }
    if (k == 0 || k > n) {
        throw ArgumentError("average_linkage: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }
    Matrix d = distances;
    std::vector<std::size_t> size(n, 1);
    std::vector<bool> active(n, true);
    struct Merge {
        std::size_t a, b;
        double height;
    };
    std::vector<Merge> merges;
    std::vector<std::size_t> chain;
    std::size_t remaining = n;

    // Nearest-neighbour chain; valid because average linkage is reducible.
    while (remaining > 1) {
        if (chain.empty()) {
            chain.push_back(static_cast<std::size_t>(std::find(active.begin(), active.end(), true) - active.begin()));
        }
        const std::size_t a = chain.back();
        const std::size_t prev = chain.size() >= 2 ? chain[chain.size() - 2] : n;
        std::size_t b = prev;
        double best = prev == n ? std::numeric_limits<double>::infinity() : d(a, prev);
        for (std::size_t c = 0; c < n; ++c) {
            if (!active[c] || c == a || c == prev) {
                continue;
            }
            if (d(a, c) < best || (b == n && d(a, c) <= best)) {
                best = d(a, c);
                b = c;
            }
        }
        if (b == prev && prev != n) {
            chain.pop_back();
            chain.pop_back();
            const std::size_t keep = std::min(a, b);
            const std::size_t drop = std::max(a, b);
            merges.push_back({keep, drop, best});
            for (std::size_t c = 0; c < n; ++c) {
                if (!active[c] || c == keep || c == drop) {
                    continue;
                }
                const double v = (static_cast<double>(size[keep]) * d(keep, c) +
                                  static_cast<double>(size[drop]) * d(drop, c)) /
                                 static_cast<double>(size[keep] + size[drop]);
                d(keep, c) = v;
                d(c, keep) = v;
            }
            size[keep] += size[drop];
            active[drop] = false;
            --remaining;
        } else {
            chain.push_back(b);
        }
    }

    std::stable_sort(merges.begin(), merges.end(), [](const Merge& x, const Merge& y) { return x.height < y.height; });
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&parent](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (std::size_t m = 0; m + k < n; ++m) {
        const std::size_t ra = find(merges[m].a);
        const std::size_t rb = find(merges[m].b);
        parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    std::vector<std::size_t> roots(n);
    for (std::size_t i = 0; i < n; ++i) {
        roots[i] = find(i);
    }
    return ClusterAssignment::from_labels(std::span<const std::size_t>(roots));
}

ClusterAssignment consensus_labels(const ConsensusMatrix& m, std::size_t k) {
    if (k == 0) {
        throw ArgumentError("consensus_labels: k must be at least 1");
    }
    Matrix dissimilarity(m.n(), m.n());
    for (std::size_t i = 0; i < m.n(); ++i) {
        for (std::size_t j = 0; j < m.n(); ++j) {
            dissimilarity(i, j) = i == j ? 0.0 : 1.0 - m.consensus(i, j);
        }
    }
    return average_linkage(dissimilarity, k);
}

} // namespace subtyper
