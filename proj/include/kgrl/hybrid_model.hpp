#pragma once

#include <stdexcept>

#include "kgrl/kinetics.hpp"
#include "kgrl/trajectory.hpp"

namespace kgrl {

/**
 * Simulates the discretized hybrid model for horizon_steps intervals.
 *
 * Growth rates are drawn once per phase for the whole trajectory (batch
 * effect), then each interval applies the scheduled intervention followed
 * by hybrid_step_sample. Returns horizon_steps + 1 rows starting from
 * (rho0, I = 0) at hour 0.
 */
inline Trajectory simulate_hybrid_trajectory(const ModelTheta& theta, double rho0, int horizon_steps, double dt,
                                             const InterventionPlan& plan, Rng& rng, bool expose_latent = false) {
    if (horizon_steps < 1) throw std::invalid_argument("simulate_hybrid_trajectory: horizon_steps must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("simulate_hybrid_trajectory: dt must be positive");

    Rng batch_rng = rng.split(0);
    const BatchRates rates = draw_batch_rates(theta, batch_rng);

    Trajectory tr;
    const auto rows = static_cast<std::size_t>(horizon_steps) + 1;
    tr.hours.reserve(rows);
    tr.rho_obs.reserve(rows);
    tr.interventions.reserve(rows);
    if (expose_latent) tr.inhibitor_true.reserve(rows);
    tr.batch_growth_rates = {rates.r_g[0], rates.r_g[1]};

    ProcessState s{rho0, 0.0, 1, 0.0};
    auto record = [&](const ProcessState& st, Action a) {
        tr.hours.push_back(st.hour);
        tr.rho_obs.push_back(st.rho);
        tr.interventions.push_back(a);
        if (expose_latent) tr.inhibitor_true.push_back(st.inhibitor);
    };
    for (int t = 1; t <= horizon_steps; ++t) {
        const Action a = plan.at(t);
        s = apply_action(s, a, plan.expansion_factor);
        record(s, a);
        s = hybrid_step_sample(s, theta, rates.at_hour(s.hour, theta.t_star), dt, rng);
    }
    record(s, Action::NoOp);
    return tr;
}

/**
 * One hybrid-model batch advanced interval by interval, with the same
 * interface as GroundTruthProcess. The batch rates come from split(0) and
 * the residuals from split(1), so copies taken at a decision point share
 * all future noise.
 */
class HybridProcess {
public:
    HybridProcess(const ModelTheta& theta, double rho0, double dt, Rng rng)
        : theta_(theta), dt_(dt), noise_(rng.split(1)) {
        Rng batch = rng.split(0);
        rates_ = draw_batch_rates(theta_, batch);
        state_ = ProcessState{rho0, 0.0, 1, 0.0};
        rho_initial_ = rho0;
    }

    const ProcessState& latent() const noexcept { return state_; }
    double initial_density() const noexcept { return rho_initial_; }
    const BatchRates& rates() const noexcept { return rates_; }

    void apply(Action a, double expansion_factor) { state_ = apply_action(state_, a, expansion_factor); }

    void advance() { state_ = hybrid_step_sample(state_, theta_, rates_.at_hour(state_.hour, theta_.t_star), dt_, noise_); }

private:
    ModelTheta theta_;
    double dt_;
    Rng noise_;
    BatchRates rates_{};
    ProcessState state_{};
    double rho_initial_ = 0.0;
};

}  // namespace kgrl
