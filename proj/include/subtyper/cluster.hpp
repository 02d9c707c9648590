#pragma once

#include "subtyper/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace subtyper {

/**
 * Cluster label per sample, in input order.
 *
 * Labels produced by this library are canonical: clusters are numbered in
 * order of first appearance, so equal partitions compare equal.
 */
struct ClusterAssignment {
    std::vector<std::size_t> labels;
    std::size_t k = 0;
    double inertia = 0.0;

    std::size_t size() const { return labels.size(); }

    /// Relabel arbitrary integer ids to 0..k-1 by first appearance.
    static ClusterAssignment from_labels(std::span<const long long> raw);
    static ClusterAssignment from_labels(std::span<const std::size_t> raw);

    /// Same partition, ignoring cluster ids.
    bool same_partition(const ClusterAssignment& other) const;
};

struct KMeansResult {
    ClusterAssignment assignment;
    Matrix centroids;                  ///< k x d, rows in canonical label order
    std::vector<double> inertia_trace; ///< per Lloyd iteration, for the returned restart
    std::size_t iterations = 0;
};

/**
 * Lloyd's algorithm with k-means++ seeding.
 *
 * Each restart iterates until the largest centroid shift drops below
 * `tolerance` or `max_iterations` is reached; the restart with the lowest
 * inertia wins (earlier restart on ties). A cluster that empties takes the
 * point farthest from its current centroid. Equidistant points go to the
 * lower-numbered centroid.
 */
KMeansResult kmeans_fit(const Matrix& points, std::size_t k, std::size_t restarts, std::uint64_t seed,
                        std::size_t max_iterations = 300, double tolerance = 1e-6);

ClusterAssignment kmeans(const Matrix& points, std::size_t k, std::size_t restarts, std::uint64_t seed);

/// Pairwise co-clustering frequencies over resampled k-means runs.
struct ConsensusMatrix {
    Matrix consensus;                   ///< n x n, symmetric, diagonal 1
    std::vector<std::uint32_t> cosampled; ///< n x n row-major: times each pair was drawn together
    std::size_t unsampled_pairs = 0;    ///< off-diagonal pairs (i < j) never drawn together; their entry is 0

    std::size_t n() const { return consensus.rows(); }
    std::uint32_t cosampled_count(std::size_t i, std::size_t j) const { return cosampled[i * n() + j]; }
    bool flagged(std::size_t i, std::size_t j) const { return i != j && cosampled_count(i, j) == 0; }
};

/// Number of rows drawn per resample: ceil(rate * n), guarded against rounding up exact products.
std::size_t subsample_size(std::size_t n, double rate);

/**
 * Monti-style consensus: each resample draws ceil(rate * n) rows without
 * replacement and runs single-restart k-means on them. Resample r uses the
 * stream `derive_seed(seed, r)`, so the result is identical for any thread count.
 */
ConsensusMatrix consensus(const Matrix& points, std::size_t k, std::size_t resamples, double rate,
                          std::uint64_t seed, std::size_t threads = 1);

/// Proportion of ambiguous clustering: share of co-sampled pairs with consensus in (lower, upper).
double pac_score(const ConsensusMatrix& m, double lower = 0.1, double upper = 0.9);

struct KSelection {
    std::size_t k_min = 0;
    std::size_t k_max = 0;
    std::vector<double> pac;   ///< pac[i] belongs to k_min + i
    std::size_t chosen_k = 0;
    ConsensusMatrix chosen;    ///< consensus matrix for chosen_k
};

/// Consensus for every k in [k_min, k_max]; picks the smallest k with minimal PAC.
KSelection select_k(const Matrix& points, std::size_t k_min, std::size_t k_max, std::size_t resamples, double rate,
                    std::uint64_t seed, std::size_t threads = 1);

/// Average-linkage hierarchical clustering on 1 - M, cut to k clusters.
ClusterAssignment consensus_labels(const ConsensusMatrix& m, std::size_t k);
ClusterAssignment average_linkage(const Matrix& distances, std::size_t k);

} // namespace subtyper
