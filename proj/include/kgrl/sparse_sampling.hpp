#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>

#include "kgrl/parallel.hpp"
#include "kgrl/random.hpp"
#include "kgrl/trajectory.hpp"

namespace kgrl {

/**
 * Sparse-sampling widths. Every node expands B posterior draws times J
 * transitions per action down to full_width_depth levels below the root;
 * deeper levels follow a single sampled path per action.
 */
struct PlannerConfig {
    int B = 3;
    int J = 2;
    int full_width_depth = 3;
    double node_budget = 5e6;
    unsigned jobs = 1;

    void validate() const {
        if (B < 1 || J < 1) throw std::invalid_argument("PlannerConfig: B and J must be >= 1");
        if (full_width_depth < 0) throw std::invalid_argument("PlannerConfig: full_width_depth must be >= 0");
        if (!(node_budget >= 1.0)) throw std::invalid_argument("PlannerConfig: node_budget must be >= 1");
    }
};

/**
 * A finite-horizon model the sparse sampler can expand. Stages run 1..H;
 * a state at stage H+1 is terminal.
 */
template <class M>
concept SparseModel = requires(const M& m, const typename M::State& s, Action a, const typename M::Param& th, Rng& rng) {
    { m.horizon() } -> std::convertible_to<int>;
    { m.stage(s) } -> std::convertible_to<int>;
    { m.max_actions() } -> std::convertible_to<std::size_t>;
    { m.actions(s) } -> std::convertible_to<std::vector<Action>>;
    { m.stage_reward(s, a) } -> std::convertible_to<double>;
    { m.terminal_reward(s) } -> std::convertible_to<double>;
    { m.draw_param(rng) } -> std::convertible_to<const typename M::Param&>;
    { m.step(s, a, th, rng) } -> std::convertible_to<typename M::State>;
};

/// Upper bound on the number of nodes expanded by vfun from `stage`.
template <SparseModel M>
double tree_size(const M& model, int stage, const PlannerConfig& cfg) {
    const int levels = model.horizon() - stage + 1;
    const double A = static_cast<double>(model.max_actions());
    double total = 1.0, layer = 1.0;
    for (int d = 0; d < levels; ++d) {
        const double w = d < cfg.full_width_depth ? static_cast<double>(cfg.B) * cfg.J : 1.0;
        layer *= A * w;
        total += layer;
        if (!std::isfinite(total)) break;
    }
    return total;
}

namespace detail {

/// Child streams depend on (node seed, b, j) only, so every action at a node sees the same draws.
inline std::uint64_t param_seed(std::uint64_t node, int b) { return derive_seed(node, static_cast<std::uint64_t>(b)); }
inline std::uint64_t transition_seed(std::uint64_t node, int b, int j) {
    return derive_seed(node, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(j));
}
inline std::uint64_t child_seed(std::uint64_t node, int b, int j) {
    return derive_seed(node, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(j), 1u);
}

template <SparseModel M>
double vfun_rec(const M& model, const typename M::State& s, const PlannerConfig& cfg, std::uint64_t seed, int depth);

template <SparseModel M>
double qfun_rec(const M& model, const typename M::State& s, Action a, const PlannerConfig& cfg, std::uint64_t seed,
                int depth, unsigned jobs) {
    const bool full = depth < cfg.full_width_depth;
    const int nb = full ? cfg.B : 1;
    const int nj = full ? cfg.J : 1;
    std::vector<double> values(static_cast<std::size_t>(nb) * nj);
    parallel_for(values.size(), jobs, [&](std::size_t k) {
        const int b = static_cast<int>(k) / nj;
        const int j = static_cast<int>(k) % nj;
        Rng prng(param_seed(seed, b));
        const auto& theta = model.draw_param(prng);
        Rng trng(transition_seed(seed, b, j));
        const auto next = model.step(s, a, theta, trng);
        values[k] = vfun_rec(model, next, cfg, child_seed(seed, b, j), depth + 1);
    });
    double sum = 0.0;
    for (double v : values) sum += v;
    return model.stage_reward(s, a) + sum / static_cast<double>(values.size());
}

template <SparseModel M>
double vfun_rec(const M& model, const typename M::State& s, const PlannerConfig& cfg, std::uint64_t seed, int depth) {
    if (model.stage(s) > model.horizon()) return model.terminal_reward(s);
    double best = -std::numeric_limits<double>::infinity();
    for (Action a : model.actions(s)) best = std::max(best, qfun_rec(model, s, a, cfg, seed, depth, 1u));
    return best;
}

template <SparseModel M>
void check_budget(const M& model, int stage, const PlannerConfig& cfg) {
    cfg.validate();
    const double n = tree_size(model, stage, cfg);
    if (n > cfg.node_budget) {
        throw std::invalid_argument(fmt::format("sparse sampling tree of {:.3g} nodes exceeds the budget of {:.3g}; "
                                                "reduce B*J or full_width_depth", n, cfg.node_budget));
    }
}

}  // namespace detail

/// Sample-average estimate of Q_t(s, a).
template <SparseModel M>
double qfun(const M& model, const typename M::State& s, Action a, const PlannerConfig& cfg, std::uint64_t seed) {
    if (model.stage(s) > model.horizon()) throw std::invalid_argument("qfun: state is terminal");
    detail::check_budget(model, model.stage(s), cfg);
    return detail::qfun_rec(model, s, a, cfg, seed, 0, cfg.jobs);
}

/// Estimate of V_t(s) = max_a Q_t(s, a); the terminal reward at stage H+1.
template <SparseModel M>
double vfun(const M& model, const typename M::State& s, const PlannerConfig& cfg, std::uint64_t seed) {
    if (model.stage(s) > model.horizon()) return model.terminal_reward(s);
    detail::check_budget(model, model.stage(s), cfg);
    double best = -std::numeric_limits<double>::infinity();
    for (Action a : model.actions(s)) best = std::max(best, detail::qfun_rec(model, s, a, cfg, seed, 0, cfg.jobs));
    return best;
}

}  // namespace kgrl
