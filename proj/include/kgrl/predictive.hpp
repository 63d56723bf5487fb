#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "kgrl/ensemble.hpp"
#include "kgrl/kinetics.hpp"
#include "kgrl/parallel.hpp"
#include "kgrl/random.hpp"
#include "kgrl/trajectory.hpp"

namespace kgrl {

struct MarginalSummary {
    double mean = 0.0;
    double variance = 0.0;
    double q05 = 0.0;
    double q50 = 0.0;
    double q95 = 0.0;
};

/// Per-horizon predictive summaries; index h = 0 is the start state.
struct PredictiveSummary {
    std::vector<MarginalSummary> rho;
    std::vector<MarginalSummary> inhibitor;
};

/// Linear-interpolation empirical quantile (type 7). Sorts in place.
inline double empirical_quantile(std::vector<double>& xs, double q) {
    if (xs.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
    std::sort(xs.begin(), xs.end());
    const double pos = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline MarginalSummary summarize(std::vector<double> xs) {
    MarginalSummary m;
    const double n = static_cast<double>(xs.size());
    for (double x : xs) m.mean += x;
    m.mean /= n;
    for (double x : xs) m.variance += (x - m.mean) * (x - m.mean);
    m.variance = xs.size() > 1 ? m.variance / (n - 1.0) : 0.0;
    m.q05 = empirical_quantile(xs, 0.05);
    m.q50 = empirical_quantile(xs, 0.50);
    m.q95 = empirical_quantile(xs, 0.95);
    return m;
}

/**
 * Monte Carlo h-step look-ahead from `start`. Each draw picks a particle in
 * proportion to its weight, draws the batch growth rates and simulates the
 * hybrid model forward under the plan (indexed by absolute step).
 */
inline PredictiveSummary posterior_predict(const PosteriorEnsemble& ensemble, const ProcessState& start, int h_steps, int n_mc,
                                           const InterventionPlan& plan, std::uint64_t seed, double dt = 3.0,
                                           unsigned jobs = 1) {
    if (ensemble.empty()) throw std::invalid_argument("posterior_predict: ensemble is empty");
    if (n_mc < 1) throw std::invalid_argument("posterior_predict: n_mc must be >= 1");
    if (h_steps < 0) throw std::invalid_argument("posterior_predict: h_steps must be >= 0");
    const EnsembleSampler sampler(ensemble);
    const auto H = static_cast<std::size_t>(h_steps) + 1;
    const auto N = static_cast<std::size_t>(n_mc);
    std::vector<double> rho(H * N), inh(H * N);
    parallel_for(N, jobs, [&](std::size_t n) {
        Rng rng(derive_seed(seed, n));
        Rng pick = rng.split(7);
        const ModelTheta& theta = sampler(pick);
        Rng batch = rng.split(0);
        const BatchRates rates = draw_batch_rates(theta, batch);
        ProcessState s = start;
        rho[n] = s.rho;
        inh[n] = s.inhibitor;
        for (std::size_t h = 1; h < H; ++h) {
            if (h > 1) s = apply_action(s, plan.at(s.step), plan.expansion_factor);
            s = hybrid_step_sample(s, theta, rates.at_hour(s.hour, theta.t_star), dt, rng);
            rho[h * N + n] = s.rho;
            inh[h * N + n] = s.inhibitor;
        }
    });
    PredictiveSummary out;
    for (std::size_t h = 0; h < H; ++h) {
        out.rho.push_back(summarize({rho.begin() + static_cast<std::ptrdiff_t>(h * N), rho.begin() + static_cast<std::ptrdiff_t>((h + 1) * N)}));
        out.inhibitor.push_back(summarize({inh.begin() + static_cast<std::ptrdiff_t>(h * N), inh.begin() + static_cast<std::ptrdiff_t>((h + 1) * N)}));
    }
    return out;
}

}  // namespace kgrl
