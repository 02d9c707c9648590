#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace subtyper {

/// One step of the SplitMix64 sequence. Used for seeding and seed derivation.
std::uint64_t splitmix64(std::uint64_t& state);

/**
 * Seed for an independent sub-stream (a resample, a tree, a permutation).
 *
 * Defined as the SplitMix64 output after mixing `master` with
 * `stream * 0x9E3779B97F4A7C15`; every parallel or per-replicate consumer in
 * the library derives its seed this way so results do not depend on
 * scheduling.
 */
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/**
 * xoshiro256** generator seeded through SplitMix64.
 *
 * All derived draws (uniform, normal, bounded integers, shuffles) are
 * implemented here rather than via `<random>` distributions, whose output
 * is implementation-defined, so a seed reproduces across compilers.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, bound); bound must be positive.
    std::uint64_t below(std::uint64_t bound);
    /// Standard normal via the Box-Muller transform (no cached second value).
    double normal();
    double normal(double mean, double sd);
    double exponential(double rate);

    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }
    template <typename T>
    void shuffle(std::vector<T>& values) {
        shuffle(std::span<T>(values));
    }

    /// `count` distinct indices from [0, n), in ascending order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
};

} // namespace subtyper
