#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "kgrl/kinetics.hpp"
#include "kgrl/trajectory.hpp"

namespace kgrl {

/// Stochastic cell-culture process used as the "real" plant.
struct GroundTruthConfig {
    ModelTheta theta = ModelTheta::reference(0.008);  ///< sigma_g holds the batch-effect std
    double sigma_n = 0.01;                             ///< Brownian noise std
    double sigma_m = 0.2;                              ///< measurement-error std
    double mu_rho0 = 3.0;
    double sigma_rho0 = 0.03;
    double dt_sde = 0.01;
    double dt_obs = 3.0;

    int substeps() const {
        const double n = dt_obs / dt_sde;
        const double r = std::round(n);
        if (r < 1.0 || std::abs(n - r) > 1e-9 * std::max(1.0, n)) {
            throw std::invalid_argument("GroundTruthConfig: dt_sde must divide dt_obs evenly");
        }
        return static_cast<int>(r);
    }

    void validate() const {
        theta.validate();
        for (double x : {sigma_n, sigma_m, sigma_rho0}) {
            if (!(x >= 0.0)) throw std::invalid_argument("GroundTruthConfig: standard deviations must be >= 0");
        }
        if (!(dt_sde > 0.0) || !(dt_obs > 0.0)) throw std::invalid_argument("GroundTruthConfig: time steps must be positive");
        (void)substeps();
    }
};

/**
 * One batch of the ground-truth process, advanced interval by interval.
 *
 * Euler-Maruyama on
 *   d rho = r_g rho phi(I) dt + sigma_n dW1
 *   d I   = d rho - r_d I dt + sigma_n dW2
 * with independent Wiener increments and clamping at zero. A batch whose
 * density has reached zero stays extinct. The batch draw
 * (initial density and per-phase growth rates), the Brownian increments and
 * the measurement errors come from separate child streams, so two batches
 * with the same seed see identical noise whatever actions are applied.
 */
class GroundTruthProcess {
public:
    GroundTruthProcess(const GroundTruthConfig& cfg, Rng rng)
        : cfg_(cfg), substeps_(cfg.substeps()), noise_(rng.split(1)), meas_(rng.split(2)) {
        Rng batch = rng.split(0);
        state_.rho = std::max(0.0, batch.normal(cfg.mu_rho0, cfg.sigma_rho0));
        rates_ = draw_batch_rates(cfg.theta, batch);
        rho_initial_ = state_.rho;
        switch_index_ = std::llround(cfg.theta.t_star / cfg.dt_sde);
    }

    const ProcessState& latent() const noexcept { return state_; }
    double initial_density() const noexcept { return rho_initial_; }
    const BatchRates& rates() const noexcept { return rates_; }
    const GroundTruthConfig& config() const noexcept { return cfg_; }

    /// Measured density at the current hour.
    double observe() { return state_.rho + (cfg_.sigma_m > 0.0 ? cfg_.sigma_m * meas_.normal() : 0.0); }

    void apply(Action a, double expansion_factor) {
        state_ = apply_action(state_, a, expansion_factor);
    }

    /// Integrates one observation interval.
    void advance() {
        const double dt = cfg_.dt_sde;
        const double sqdt = std::sqrt(dt);
        const bool noisy = cfg_.sigma_n > 0.0;
        for (int k = 0; k < substeps_; ++k, ++fine_index_) {
            const PhaseParams& p = fine_index_ < switch_index_ ? cfg_.theta.phases[0] : cfg_.theta.phases[1];
            const double r_g = fine_index_ < switch_index_ ? rates_.r_g[0] : rates_.r_g[1];
            const bool extinct = state_.rho <= 0.0;
            double drho = dt * growth_rate_term(state_.rho, state_.inhibitor, r_g, p.k_s, p.k_c);
            double dinh = drho - dt * p.r_d * state_.inhibitor;
            if (noisy) {
                const double w1 = cfg_.sigma_n * sqdt * noise_.normal();
                const double w2 = cfg_.sigma_n * sqdt * noise_.normal();
                drho += extinct ? 0.0 : w1;
                dinh += (extinct ? 0.0 : w1) + w2;
            }
            state_.rho = std::max(0.0, state_.rho + drho);
            state_.inhibitor = std::max(0.0, state_.inhibitor + dinh);
        }
        state_.step += 1;
        state_.hour = (state_.step - 1) * cfg_.dt_obs;
    }

private:
    GroundTruthConfig cfg_;
    int substeps_;
    Rng noise_;
    Rng meas_;
    ProcessState state_{};
    BatchRates rates_{};
    double rho_initial_ = 0.0;
    long long switch_index_ = 0;
    long long fine_index_ = 0;
};

/**
 * Full ground-truth batch over horizon_hours. Rows are recorded every
 * dt_obs after the intervention scheduled at that hour; rho_obs carries
 * measurement error, the latent series do not.
 */
inline Trajectory simulate_ground_truth(const GroundTruthConfig& cfg, double horizon_hours, const InterventionPlan& plan,
                                        Rng rng) {
    cfg.validate();
    const double steps_f = horizon_hours / cfg.dt_obs;
    const auto steps = static_cast<int>(std::llround(steps_f));
    if (steps < 1 || std::abs(steps_f - steps) > 1e-9) {
        throw std::invalid_argument("simulate_ground_truth: horizon must be a positive multiple of dt_obs");
    }
    GroundTruthProcess proc(cfg, rng);
    Trajectory tr;
    tr.batch_growth_rates = {proc.rates().r_g[0], proc.rates().r_g[1]};
    auto record = [&](Action a) {
        tr.hours.push_back(proc.latent().hour);
        tr.rho_true.push_back(proc.latent().rho);
        tr.inhibitor_true.push_back(proc.latent().inhibitor);
        tr.rho_obs.push_back(proc.observe());
        tr.interventions.push_back(a);
    };
    for (int t = 1; t <= steps; ++t) {
        const Action a = plan.at(t);
        proc.apply(a, plan.expansion_factor);
        record(a);
        proc.advance();
    }
    record(Action::NoOp);
    return tr;
}

}  // namespace kgrl
