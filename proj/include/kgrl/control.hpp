#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kgrl/decision.hpp"
#include "kgrl/ensemble.hpp"
#include "kgrl/ground_truth.hpp"
#include "kgrl/hybrid_model.hpp"
#include "kgrl/parallel.hpp"
#include "kgrl/sparse_sampling.hpp"

namespace kgrl {

/**
 * Decision problem driven by the hybrid model under posterior uncertainty.
 * Each tree transition draws a parameter set from the ensemble, a growth
 * rate for the current phase and the hybrid residuals.
 */
class HybridPlanningModel {
public:
    using State = ControlState;
    using Param = ModelTheta;

    HybridPlanningModel(const PosteriorEnsemble& ensemble, DecisionProblem problem)
        : sampler_(ensemble), weights_(ensemble.normalized_weights()), problem_(std::move(problem)) {
        problem_.validate();
    }

    const DecisionProblem& problem() const noexcept { return problem_; }
    int horizon() const noexcept { return problem_.horizon_steps; }
    int stage(const State& s) const noexcept { return s.process.step; }
    std::size_t max_actions() const noexcept { return problem_.interventions_enabled ? 2 : 1; }
    std::vector<Action> actions(const State& s) const { return feasible_actions(problem_, s); }
    double stage_reward(const State&, Action) const noexcept { return 0.0; }
    double terminal_reward(const State& s) const { return kgrl::terminal_reward(problem_, s); }
    const ModelTheta& draw_param(Rng& rng) const { return sampler_(rng); }

    State step(const State& s, Action a, const ModelTheta& theta, Rng& rng) const {
        State n = intervene(s, a);
        const PhaseParams& p = theta.at_hour(n.process.hour);
        const double r_g = rng.normal(p.mu_g, p.sigma_g);
        n.process = hybrid_step_sample(n.process, theta, r_g, problem_.dt, rng);
        return n;
    }

    State intervene(State s, Action a) const {
        s.process = apply_action(s.process, a, problem_.expansion_factor);
        if (a == Action::Exchange) ++s.exchanges;
        if (a == Action::Expand) ++s.expansions;
        return s;
    }

    /// Posterior-weighted mean transition at the mean growth rates.
    State expected_step(const State& s) const {
        State n = s;
        double rho = 0.0, inh = 0.0;
        const auto& models = sampler_.models();
        for (std::size_t k = 0; k < models.size(); ++k) {
            const PhaseParams& p = models[k].at_hour(s.process.hour);
            const ProcessState m = hybrid_step_mean(s.process, models[k], p.mu_g, problem_.dt);
            rho += weights_[k] * m.rho;
            inh += weights_[k] * m.inhibitor;
        }
        n.process.rho = std::max(0.0, rho);
        n.process.inhibitor = std::max(0.0, inh);
        n.process.step = s.process.step + 1;
        n.process.hour = s.process.hour + problem_.dt;
        return n;
    }

private:
    EnsembleSampler sampler_;
    std::vector<double> weights_;
    DecisionProblem problem_;
};

struct ControlStep {
    int step = 0;
    double hour = 0.0;
    double rho = 0.0;        ///< density the planner acted on
    double inhibitor = 0.0;  ///< planner's inhibitor estimate
    std::vector<Action> candidates;
    std::vector<double> q;
    Action chosen = Action::NoOp;
    double rho_true = std::numeric_limits<double>::quiet_NaN();
};

struct ControlTrace {
    std::vector<ControlStep> steps;
    ControlState final_state;           ///< planner's view at harvest
    double predicted_reward = 0.0;      ///< reward of final_state
    double realized_reward = std::numeric_limits<double>::quiet_NaN();
    double rho_true_final = std::numeric_limits<double>::quiet_NaN();

    InterventionPlan plan(double expansion_factor) const {
        InterventionPlan p;
        p.expansion_factor = expansion_factor;
        for (const auto& s : steps) p.per_step.push_back(s.chosen);
        return p;
    }
};

namespace detail {

inline ControlStep choose(const HybridPlanningModel& model, const ControlState& s, const PlannerConfig& cfg,
                          std::uint64_t seed) {
    ControlStep st;
    st.step = s.process.step;
    st.hour = s.process.hour;
    st.rho = s.process.rho;
    st.inhibitor = s.process.inhibitor;
    st.candidates = model.actions(s);
    const std::uint64_t node = derive_seed(seed, static_cast<std::uint64_t>(s.process.step));
    double best = -std::numeric_limits<double>::infinity();
    for (Action a : st.candidates) {
        const double q = st.candidates.size() == 1 ? std::numeric_limits<double>::quiet_NaN() : qfun(model, s, a, cfg, node);
        st.q.push_back(q);
        if (st.candidates.size() == 1 || q > best) {
            best = q;
            st.chosen = a;
        }
    }
    return st;
}

}  // namespace detail

/**
 * Greedy control against the model itself: each step picks the action with
 * the largest estimated Q and moves the state by the posterior-mean
 * transition.
 */
inline ControlTrace greedy_control(const HybridPlanningModel& model, double rho0, const PlannerConfig& cfg, std::uint64_t seed) {
    ControlTrace tr;
    ControlState s = ControlState::start(rho0);
    while (s.process.step <= model.horizon()) {
        ControlStep st = detail::choose(model, s, cfg, seed);
        s = model.expected_step(model.intervene(s, st.chosen));
        tr.steps.push_back(std::move(st));
    }
    tr.final_state = s;
    tr.predicted_reward = model.terminal_reward(s);
    return tr;
}

/**
 * Greedy control of a ground-truth batch. The planner sees the measured
 * density each step and carries its own inhibitor prediction; the realized
 * reward is computed from the batch's latent state.
 */
inline ControlTrace greedy_control(const HybridPlanningModel& model, GroundTruthProcess truth, const PlannerConfig& cfg,
                                   std::uint64_t seed) {
    const DecisionProblem& p = model.problem();
    ControlTrace tr;
    ControlState s = ControlState::start(truth.observe());
    ControlState real = ControlState::start(truth.initial_density());
    while (s.process.step <= model.horizon()) {
        ControlStep st = detail::choose(model, s, cfg, seed);
        st.rho_true = truth.latent().rho;
        const ControlState predicted = model.expected_step(model.intervene(s, st.chosen));
        truth.apply(st.chosen, p.expansion_factor);
        truth.advance();
        real = model.intervene(real, st.chosen);
        s = predicted;
        s.process.rho = truth.observe();
        tr.steps.push_back(std::move(st));
    }
    real.process = truth.latent();
    tr.final_state = s;
    tr.predicted_reward = model.terminal_reward(s);
    tr.realized_reward = terminal_reward(p, real);
    tr.rho_true_final = real.process.rho;
    return tr;
}

/// Harvest reward of a schedule averaged over replicated batches.
struct ScheduleScore {
    Schedule schedule;
    double mean = 0.0;
    double se = 0.0;
    std::vector<double> samples;  ///< per-replicate rewards, kept on request
};

namespace detail {

template <class Process>
void walk_schedules(const DecisionProblem& p, Process proc, ControlState cs, std::vector<Action>& prefix,
                    std::vector<double>& out) {
    if (cs.process.step > p.horizon_steps) {
        cs.rho_initial = proc.initial_density();
        out[schedule_index(p, prefix)] = terminal_reward(p, cs);
        return;
    }
    const auto acts = feasible_actions(p, cs);
    for (std::size_t k = 0; k < acts.size(); ++k) {
        const Action a = acts[k];
        Process q = k + 1 == acts.size() ? std::move(proc) : proc;
        q.apply(a, p.expansion_factor);
        q.advance();
        ControlState next = cs;
        if (a == Action::Exchange) ++next.exchanges;
        if (a == Action::Expand) ++next.expansions;
        next.process = q.latent();
        prefix.push_back(a);
        walk_schedules(p, std::move(q), next, prefix, out);
        prefix.pop_back();
    }
}

}  // namespace detail

/**
 * Mean harvest reward of every feasible open-loop schedule, ranked best
 * first (ties keep enumeration order). `make(r)` returns the process for
 * replicate r; every schedule within a replicate is evaluated on copies of
 * the same process, so schedules share all random draws.
 */
template <class Factory>
    requires std::invocable<Factory&, std::size_t>
std::vector<ScheduleScore> enumerate_open_loop(const DecisionProblem& p, Factory&& make, int n_reps, unsigned jobs = 1,
                                               bool keep_samples = false) {
    if (n_reps < 1) throw std::invalid_argument("enumerate_open_loop: n_reps must be >= 1");
    const auto schedules = enumerate_schedules(p);
    std::size_t slots = 0;
    for (const auto& s : schedules) slots = std::max(slots, s.index + 1);

    const auto R = static_cast<std::size_t>(n_reps);
    std::vector<double> rewards(R * slots, std::numeric_limits<double>::quiet_NaN());
    parallel_for(R, jobs, [&](std::size_t r) {
        auto proc = make(r);
        ControlState cs;
        cs.process = proc.latent();
        cs.rho_initial = proc.initial_density();
        std::vector<Action> prefix;
        std::vector<double> out(slots, std::numeric_limits<double>::quiet_NaN());
        detail::walk_schedules(p, std::move(proc), cs, prefix, out);
        std::copy(out.begin(), out.end(), rewards.begin() + static_cast<std::ptrdiff_t>(r * slots));
    });

    std::vector<ScheduleScore> scores;
    scores.reserve(schedules.size());
    for (const auto& s : schedules) {
        ScheduleScore sc;
        sc.schedule = s;
        double sum = 0.0;
        for (std::size_t r = 0; r < R; ++r) sum += rewards[r * slots + s.index];
        sc.mean = sum / static_cast<double>(R);
        if (R > 1) {
            double ss = 0.0;
            for (std::size_t r = 0; r < R; ++r) {
                const double d = rewards[r * slots + s.index] - sc.mean;
                ss += d * d;
            }
            sc.se = std::sqrt(ss / static_cast<double>(R - 1) / static_cast<double>(R));
        }
        if (keep_samples) {
            sc.samples.reserve(R);
            for (std::size_t r = 0; r < R; ++r) sc.samples.push_back(rewards[r * slots + s.index]);
        }
        scores.push_back(std::move(sc));
    }
    std::stable_sort(scores.begin(), scores.end(), [](const ScheduleScore& a, const ScheduleScore& b) { return a.mean > b.mean; });
    return scores;
}

/// Open-loop ranking on ground-truth batches.
inline std::vector<ScheduleScore> enumerate_open_loop(const DecisionProblem& p, const GroundTruthConfig& truth, int n_reps,
                                                      std::uint64_t seed, unsigned jobs = 1, bool keep_samples = false) {
    truth.validate();
    return enumerate_open_loop(
        p, [&](std::size_t r) { return GroundTruthProcess(truth, Rng(derive_seed(seed, r))); }, n_reps, jobs, keep_samples);
}

/// Open-loop ranking on hybrid-model batches with parameters drawn from the ensemble.
inline std::vector<ScheduleScore> enumerate_open_loop(const DecisionProblem& p, const PosteriorEnsemble& ensemble, double rho0,
                                                      int n_reps, std::uint64_t seed, unsigned jobs = 1,
                                                      bool keep_samples = false) {
    const EnsembleSampler sampler(ensemble);
    return enumerate_open_loop(
        p,
        [&](std::size_t r) {
            Rng rng(derive_seed(seed, r));
            Rng pick = rng.split(7);
            return HybridProcess(sampler(pick), rho0, p.dt, rng);
        },
        n_reps, jobs, keep_samples);
}

/// Realized reward of a fixed schedule on one ground-truth batch.
inline double evaluate_schedule(const DecisionProblem& p, const InterventionPlan& plan, GroundTruthProcess truth) {
    ControlState cs = ControlState::start(truth.initial_density());
    for (int t = 1; t <= p.horizon_steps; ++t) {
        const Action a = plan.at(t);
        cs.process = truth.latent();
        cs = apply_intervention(cs, a, p);
        truth.apply(a, p.expansion_factor);
        truth.advance();
    }
    cs.process = truth.latent();
    return terminal_reward(p, cs);
}

}  // namespace kgrl
