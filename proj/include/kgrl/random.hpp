#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kgrl {

/// 64-bit finalizer from SplitMix64. Bijective, so distinct inputs never collide.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a over bytes; used for labels and config hashing.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derive a child seed from a parent seed and an index path.
template <class... Ix>
constexpr std::uint64_t derive_seed(std::uint64_t parent, Ix... path) noexcept {
    std::uint64_t s = mix64(parent);
    ((s = mix64(s ^ mix64(static_cast<std::uint64_t>(path) + 0x632be59bd9b4e019ULL))), ...);
    return s;
}

/**
 * SplitMix64 engine. Satisfies UniformRandomBitGenerator.
 *
 * The planner creates one engine per tree node, so construction has to be
 * a single word copy; mt19937_64 spends more time seeding than sampling there.
 */
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0x5eedULL) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double normal() { return gauss_(*this); }

    double normal(double mean, double sd) { return sd == 0.0 ? mean : mean + sd * normal(); }

    std::uint64_t state() const noexcept { return state_; }

    /// Independent child stream.
    Rng split(std::uint64_t index) const noexcept { return Rng(derive_seed(state_, index)); }

private:
    std::uint64_t state_;
    std::normal_distribution<double> gauss_;
};

/// Index drawn proportionally to non-negative weights via inverse CDF.
class DiscreteSampler {
public:
    DiscreteSampler() = default;

    explicit DiscreteSampler(const std::vector<double>& weights) {
        cdf_.reserve(weights.size());
        double acc = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("DiscreteSampler: weights must be finite and >= 0");
            acc += w;
            cdf_.push_back(acc);
        }
        if (!(acc > 0.0)) throw std::invalid_argument("DiscreteSampler: weights sum to zero");
    }

    std::size_t operator()(Rng& rng) const {
        const double u = rng.uniform() * cdf_.back();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        if (it == cdf_.end()) --it;
        return static_cast<std::size_t>(it - cdf_.begin());
    }

    std::size_t size() const noexcept { return cdf_.size(); }

private:
    std::vector<double> cdf_;
};

/**
 * Named random streams hash-split from one root seed.
 *
 * A label always maps to the same stream; registering a label twice is an
 * error so two consumers cannot silently share randomness.
 */
class SeedSchedule {
public:
    explicit SeedSchedule(std::uint64_t root) : root_(root) {}

    std::uint64_t root() const noexcept { return root_; }

    std::uint64_t seed_for(std::string_view label) const noexcept { return derive_seed(root_, fnv1a64(label)); }

    Rng claim(const std::string& label) {
        if (!claimed_.insert(label).second) throw std::invalid_argument("SeedSchedule: duplicate label '" + label + "'");
        return Rng(seed_for(label));
    }

    std::vector<Rng> claim_all(const std::vector<std::string>& labels) {
        std::vector<Rng> out;
        out.reserve(labels.size());
        for (const auto& l : labels) out.push_back(claim(l));
        return out;
    }

private:
    std::uint64_t root_;
    std::set<std::string> claimed_;
};

}  // namespace kgrl
