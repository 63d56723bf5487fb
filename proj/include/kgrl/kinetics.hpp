#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgrl/random.hpp"

namespace kgrl {

/// Observable cell density plus latent inhibitor at a discrete time index.
struct ProcessState {
    double rho = 0.0;        ///< cell density, 10^6 cells/mL
    double inhibitor = 0.0;  ///< inhibitor concentration
    int step = 1;            ///< 1-based time index t
    double hour = 0.0;       ///< (step - 1) * dt

    friend bool operator==(const ProcessState&, const ProcessState&) = default;
};

/// Kinetic and residual-noise coefficients for one culture phase.
struct PhaseParams {
    double mu_g = 0.0;     ///< mean growth rate, 1/hr
    double sigma_g = 0.0;  ///< batch-to-batch std of the growth rate
    double k_s = 0.0;      ///< inhibitor sensitivity
    double k_c = 0.0;      ///< inhibitor threshold
    double r_d = 0.0;      ///< inhibitor decay, 1/hr
    double v_rho = 0.0;    ///< residual std on rho per step
    double v_I = 0.0;      ///< residual std on inhibitor per step

    static constexpr std::size_t size = 7;

    friend bool operator==(const PhaseParams&, const PhaseParams&) = default;
};

inline constexpr std::array<const char*, PhaseParams::size> kPhaseFieldNames = {
    "mu_g", "sigma_g", "k_s", "k_c", "r_d", "v_rho", "v_I"};

/// Phase index (1 = growth, 2 = stationary). The switch hour belongs to phase 2.
constexpr int phase_of(double hour, double t_star) noexcept { return hour < t_star ? 1 : 2; }

/// Two-phase hybrid model parameters.
struct ModelTheta {
    std::array<PhaseParams, 2> phases{};
    double t_star = 18.0;

    static constexpr std::size_t dimension = 2 * PhaseParams::size;

    const PhaseParams& phase(int p) const { return phases.at(static_cast<std::size_t>(p - 1)); }
    PhaseParams& phase(int p) { return phases.at(static_cast<std::size_t>(p - 1)); }
    const PhaseParams& at_hour(double hour) const { return phase(phase_of(hour, t_star)); }

    /// Flat layout: phase 1 fields then phase 2 fields, in PhaseParams order.
    std::vector<double> to_vector() const {
        std::vector<double> v;
        v.reserve(dimension);
        for (const auto& p : phases) {
            v.insert(v.end(), {p.mu_g, p.sigma_g, p.k_s, p.k_c, p.r_d, p.v_rho, p.v_I});
        }
        return v;
    }

    static ModelTheta from_vector(const std::vector<double>& v, double t_star = 18.0) {
        if (v.size() != dimension) throw std::invalid_argument("ModelTheta::from_vector: expected 14 values");
        ModelTheta th;
        th.t_star = t_star;
        for (std::size_t p = 0; p < 2; ++p) {
            const double* x = v.data() + p * PhaseParams::size;
            th.phases[p] = PhaseParams{x[0], x[1], x[2], x[3], x[4], x[5], x[6]};
        }
        return th;
    }

    /// Case-study ground truth: shared inhibition kinetics, slower stationary growth.
    static ModelTheta reference(double sigma_g = 0.0) {
        ModelTheta th;
        th.phases[0] = PhaseParams{0.057, sigma_g, 3.4, 2.6, 0.005, 0.0, 0.0};
        th.phases[1] = PhaseParams{0.0285, sigma_g, 3.4, 2.6, 0.005, 0.0, 0.0};
        return th;
    }

    void validate() const {
        for (const auto& p : phases) {
            for (double x : {p.mu_g, p.sigma_g, p.k_s, p.k_c, p.r_d, p.v_rho, p.v_I}) {
                if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("ModelTheta: parameters must be finite and >= 0");
            }
        }
        if (!(t_star > 0.0)) throw std::invalid_argument("ModelTheta: t_star must be positive");
    }

    friend bool operator==(const ModelTheta&, const ModelTheta&) = default;
};

/// 1 - (1 + e^{k_s (k_c - I)})^{-1}, saturated outside |argument| <= 700.
inline double inhibition_factor(double inhibitor, double k_s, double k_c) noexcept {
    const double a = k_s * (k_c - inhibitor);
    if (a > 700.0) return 1.0;
    if (a < -700.0) return 0.0;
    return 1.0 / (1.0 + std::exp(-a));
}

/// d(rho)/dt of the inhibited growth kinetics.
inline double growth_rate_term(double rho, double inhibitor, double r_g, double k_s, double k_c) noexcept {
    return r_g * rho * inhibition_factor(inhibitor, k_s, k_c);
}

/// dI/dt: inhibitor is produced with the cells and decays at rate r_d.
constexpr double inhibitor_term(double drho_dt, double inhibitor, double r_d) noexcept {
    return drho_dt - r_d * inhibitor;
}

/// Noiseless hybrid update over one interval of length dt, phase chosen at the interval start.
inline ProcessState hybrid_step_mean(const ProcessState& s, const ModelTheta& theta, double r_g, double dt) {
    const PhaseParams& p = theta.at_hour(s.hour);
    ProcessState next;
    next.rho = s.rho + dt * growth_rate_term(s.rho, s.inhibitor, r_g, p.k_s, p.k_c);
    next.inhibitor = s.inhibitor + (next.rho - s.rho) - dt * p.r_d * s.inhibitor;
    next.step = s.step + 1;
    next.hour = s.hour + dt;
    return next;
}

/**
 * Hybrid update with Gaussian residuals.
 *
 * The residual on rho enters the inhibitor increment through (rho' - rho);
 * both coordinates are clamped at zero afterwards. Zero density is
 * absorbing.
 */
inline ProcessState hybrid_step_sample(const ProcessState& s, const ModelTheta& theta, double r_g, double dt, Rng& rng) {
    const PhaseParams& p = theta.at_hour(s.hour);
    const double e_rho = p.v_rho > 0.0 ? p.v_rho * rng.normal() : 0.0;
    const double e_inh = p.v_I > 0.0 ? p.v_I * rng.normal() : 0.0;
    ProcessState next;
    const double rho = s.rho <= 0.0 ? 0.0 : s.rho + dt * growth_rate_term(s.rho, s.inhibitor, r_g, p.k_s, p.k_c) + e_rho;
    next.inhibitor = std::max(0.0, s.inhibitor + (rho - s.rho) - dt * p.r_d * s.inhibitor + e_inh);
    next.rho = std::max(0.0, rho);
    next.step = s.step + 1;
    next.hour = s.hour + dt;
    return next;
}

/// Per-phase growth rates realized for one batch.
struct BatchRates {
    std::array<double, 2> r_g{};
    double at_hour(double hour, double t_star) const { return r_g[static_cast<std::size_t>(phase_of(hour, t_star) - 1)]; }
};

inline BatchRates draw_batch_rates(const ModelTheta& theta, Rng& rng) {
    BatchRates b;
    for (std::size_t p = 0; p < 2; ++p) b.r_g[p] = rng.normal(theta.phases[p].mu_g, theta.phases[p].sigma_g);
    return b;
}

inline BatchRates mean_batch_rates(const ModelTheta& theta) {
    return BatchRates{{theta.phases[0].mu_g, theta.phases[1].mu_g}};
}

}  // namespace kgrl
