#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "kgrl/control.hpp"
#include "kgrl/decision.hpp"
#include "kgrl/ensemble.hpp"
#include "kgrl/kinetics.hpp"
#include "kgrl/parallel.hpp"
#include "kgrl/prior.hpp"
#include "kgrl/random.hpp"
#include "kgrl/trajectory.hpp"

namespace kgrl {

/// Noise-free mechanistic model: per-phase growth, shared inhibition kinetics.
struct DeterministicTheta {
    double mu1 = 0.0;
    double mu2 = 0.0;
    double k_s = 0.0;
    double k_c = 0.0;
    double r_d = 0.0;
    double t_star = 18.0;

    static constexpr std::size_t dimension = 5;

    std::array<double, dimension> to_array() const { return {mu1, mu2, k_s, k_c, r_d}; }
    static DeterministicTheta from_array(const std::array<double, dimension>& x, double t_star = 18.0) {
        return {x[0], x[1], x[2], x[3], x[4], t_star};
    }

    ModelTheta to_model() const {
        ModelTheta th;
        th.t_star = t_star;
        th.phases[0] = PhaseParams{mu1, 0.0, k_s, k_c, r_d, 0.0, 0.0};
        th.phases[1] = PhaseParams{mu2, 0.0, k_s, k_c, r_d, 0.0, 0.0};
        return th;
    }

    static DeterministicTheta reference() { return {0.057, 0.0285, 3.4, 2.6, 0.005, 18.0}; }
};

/// Fit box taken from the hybrid prior ranges.
struct LsBounds {
    std::array<double, DeterministicTheta::dimension> lower{0.0, 0.0, 0.0, 0.0, 0.0};
    std::array<double, DeterministicTheta::dimension> upper{0.2, 0.2, 5.0, 5.0, 0.05};

    static LsBounds from_prior(const BoxPrior& prior) {
        LsBounds b;
        const auto& lo = prior.lower();
        const auto& hi = prior.upper();
        constexpr std::array<std::size_t, 5> idx{0, 7, 2, 3, 4};
        for (std::size_t i = 0; i < idx.size(); ++i) {
            b.lower[i] = lo.at(idx[i]);
            b.upper[i] = hi.at(idx[i]);
        }
        return b;
    }
};

/**
 * The deterministic model advanced one observation interval at a time with
 * classical RK4. The phase switch sits on the fine grid at round(t_star / dt_fine).
 */
class OdeProcess {
public:
    OdeProcess(const DeterministicTheta& theta, double rho0, double dt_obs, double dt_fine)
        : theta_(theta), dt_obs_(dt_obs) {
        if (!(dt_fine > 0.0) || dt_fine > 0.1 + 1e-12) throw std::invalid_argument("OdeProcess: dt_fine must lie in (0, 0.1]");
        substeps_ = static_cast<int>(std::llround(dt_obs / dt_fine));
        if (substeps_ < 1 || std::abs(substeps_ * dt_fine - dt_obs) > 1e-9) {
            throw std::invalid_argument("OdeProcess: dt_fine must divide the observation interval");
        }
        h_ = dt_obs / substeps_;
        switch_index_ = std::llround(theta.t_star / h_);
        state_ = ProcessState{rho0, 0.0, 1, 0.0};
        rho_initial_ = rho0;
    }

    const ProcessState& latent() const noexcept { return state_; }
    double initial_density() const noexcept { return rho_initial_; }

    void apply(Action a, double expansion_factor) { state_ = apply_action(state_, a, expansion_factor); }

    void advance() {
        double y0 = state_.rho, y1 = state_.inhibitor;
        for (int k = 0; k < substeps_; ++k, ++fine_index_) {
            const double r_g = fine_index_ < switch_index_ ? theta_.mu1 : theta_.mu2;
            auto f = [&](double rho, double inh, double& d0, double& d1) {
                d0 = growth_rate_term(rho, inh, r_g, theta_.k_s, theta_.k_c);
                d1 = inhibitor_term(d0, inh, theta_.r_d);
            };
            double a0, a1, b0, b1, c0, c1, e0, e1;
            f(y0, y1, a0, a1);
            f(y0 + 0.5 * h_ * a0, y1 + 0.5 * h_ * a1, b0, b1);
            f(y0 + 0.5 * h_ * b0, y1 + 0.5 * h_ * b1, c0, c1);
            f(y0 + h_ * c0, y1 + h_ * c1, e0, e1);
            y0 += h_ / 6.0 * (a0 + 2.0 * b0 + 2.0 * c0 + e0);
            y1 += h_ / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + e1);
        }
        state_.rho = y0;
        state_.inhibitor = y1;
        state_.step += 1;
        state_.hour = (state_.step - 1) * dt_obs_;
    }

private:
    DeterministicTheta theta_;
    double dt_obs_;
    double h_ = 0.0;
    int substeps_ = 0;
    long long switch_index_ = 0;
    long long fine_index_ = 0;
    ProcessState state_{};
    double rho_initial_ = 0.0;
};

/// Noise-free trajectory on the observation grid, inhibitor exposed.
inline Trajectory ode_solve(const DeterministicTheta& theta, double rho0, double horizon_hours, double dt_fine,
                            const InterventionPlan& plan = {}, double dt_obs = 3.0) {
    const auto steps = static_cast<int>(std::llround(horizon_hours / dt_obs));
    if (steps < 1) throw std::invalid_argument("ode_solve: horizon must cover at least one interval");
    OdeProcess proc(theta, rho0, dt_obs, dt_fine);
    Trajectory tr;
    auto record = [&](Action a) {
        tr.hours.push_back(proc.latent().hour);
        tr.rho_obs.push_back(proc.latent().rho);
        tr.rho_true.push_back(proc.latent().rho);
        tr.inhibitor_true.push_back(proc.latent().inhibitor);
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

struct NelderMeadOptions {
    int max_evaluations = 2000;
    double f_tol = 1e-14;
    double x_tol = 1e-10;
    double initial_step = 0.1;
};

struct NelderMeadResult {
    std::vector<double> x;
    double f = 0.0;
    int evaluations = 0;
};

/**
 * Nelder-Mead on the unit box; trial points are projected onto [0, 1]^d.
 * Standard coefficients (reflection 1, expansion 2, contraction 1/2,
 * shrink 1/2).
 */
inline NelderMeadResult nelder_mead_unit_box(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x0, const NelderMeadOptions& opt = {}) {
    const std::size_t d = x0.size();
    auto clamp = [](std::vector<double> x) {
        for (double& v : x) v = std::clamp(v, 0.0, 1.0);
        return x;
    };
    int evals = 0;
    auto eval = [&](const std::vector<double>& x) {
        ++evals;
        return f(x);
    };
    std::vector<std::vector<double>> simplex{clamp(std::move(x0))};
    for (std::size_t i = 0; i < d; ++i) {
        auto x = simplex.front();
        x[i] += x[i] + opt.initial_step <= 1.0 ? opt.initial_step : -opt.initial_step;
        simplex.push_back(clamp(std::move(x)));
    }
    std::vector<double> fv;
    for (const auto& x : simplex) fv.push_back(eval(x));
    std::vector<std::size_t> order(d + 1);

    while (evals < opt.max_evaluations) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[d - 1];
        double spread = 0.0;
        for (std::size_t k = 1; k <= d; ++k) {
            for (std::size_t i = 0; i < d; ++i) spread = std::max(spread, std::abs(simplex[order[k]][i] - simplex[best][i]));
        }
        if (std::abs(fv[worst] - fv[best]) <= opt.f_tol * (1.0 + std::abs(fv[best])) && spread <= opt.x_tol) break;
        if (spread <= opt.x_tol * 1e-3) break;

        std::vector<double> centroid(d, 0.0);
        for (std::size_t k = 0; k < d; ++k) {
            for (std::size_t i = 0; i < d; ++i) centroid[i] += simplex[order[k]][i] / static_cast<double>(d);
        }
        auto along = [&](double c) {
            std::vector<double> x(d);
            for (std::size_t i = 0; i < d; ++i) x[i] = centroid[i] + c * (simplex[worst][i] - centroid[i]);
            return clamp(std::move(x));
        };
        const auto xr = along(-1.0);
        const double fr = eval(xr);
        if (fr < fv[best]) {
            const auto xe = along(-2.0);
            const double fe = eval(xe);
            if (fe < fr) {
                simplex[worst] = xe;
                fv[worst] = fe;
            } else {
                simplex[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            simplex[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        const bool outside = fr < fv[worst];
        const auto xc = along(outside ? -0.5 : 0.5);
        const double fc = eval(xc);
        if (fc < (outside ? fr : fv[worst])) {
            simplex[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (std::size_t k = 1; k <= d; ++k) {
            auto& x = simplex[order[k]];
            for (std::size_t i = 0; i < d; ++i) x[i] = simplex[best][i] + 0.5 * (x[i] - simplex[best][i]);
            fv[order[k]] = eval(x);
        }
    }
    const auto it = std::min_element(fv.begin(), fv.end());
    const auto k = static_cast<std::size_t>(it - fv.begin());
    return {simplex[k], *it, evals};
}

/// Sum of squared density residuals; each model run starts from the trajectory's first observation.
inline double ls_objective(const DeterministicTheta& theta, const std::vector<Trajectory>& dataset, double dt_fine,
                           double dt_obs = 3.0) {
    double ss = 0.0;
    for (const auto& tr : dataset) {
        OdeProcess proc(theta, tr.rho_obs.front(), dt_obs, dt_fine);
        InterventionPlan plan;
        plan.per_step = tr.interventions;
        for (std::size_t t = 0; t < tr.size(); ++t) {
            if (t > 0) {
                proc.advance();
                proc.apply(plan.at(static_cast<int>(t) + 1), plan.expansion_factor);
            }
            const double r = tr.rho_obs[t] - proc.latent().rho;
            ss += r * r;
        }
    }
    return ss;
}

struct LsFitOptions {
    int restarts = 20;
    double dt_fine = 0.1;
    double dt_obs = 3.0;
    double t_star = 18.0;
    NelderMeadOptions simplex{};
    unsigned jobs = 1;
};

struct LsFitResult {
    DeterministicTheta theta;
    double objective = 0.0;
    std::vector<double> restart_objectives;
    std::vector<double> restart_initial_objectives;
};

/// Best of `restarts` bounded simplex descents from uniform random starts.
inline LsFitResult ls_fit(const std::vector<Trajectory>& dataset, const LsBounds& bounds, const LsFitOptions& opt,
                          std::uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("ls_fit: dataset is empty");
    if (opt.restarts < 1) throw std::invalid_argument("ls_fit: restarts must be >= 1");
    constexpr std::size_t D = DeterministicTheta::dimension;
    auto decode = [&](const std::vector<double>& u) {
        std::array<double, D> x{};
        for (std::size_t i = 0; i < D; ++i) x[i] = bounds.lower[i] + u[i] * (bounds.upper[i] - bounds.lower[i]);
        return DeterministicTheta::from_array(x, opt.t_star);
    };
    auto objective = [&](const std::vector<double>& u) { return ls_objective(decode(u), dataset, opt.dt_fine, opt.dt_obs); };

    const auto R = static_cast<std::size_t>(opt.restarts);
    std::vector<NelderMeadResult> runs(R);
    std::vector<double> initial(R);
    parallel_for(R, opt.jobs, [&](std::size_t r) {
        Rng rng(derive_seed(seed, r));
        std::vector<double> u0(D);
        for (double& v : u0) v = rng.uniform();
        initial[r] = objective(u0);
        runs[r] = nelder_mead_unit_box(objective, u0, opt.simplex);
    });
    LsFitResult out;
    std::size_t best = 0;
    for (std::size_t r = 0; r < R; ++r) {
        out.restart_objectives.push_back(runs[r].f);
        if (runs[r].f < runs[best].f) best = r;
    }
    out.restart_initial_objectives = std::move(initial);
    out.theta = decode(runs[best].x);
    out.objective = runs[best].f;
    return out;
}

/// Highest-reward schedule of the deterministic model started from rho0.
inline ScheduleScore ls_decide(const DeterministicTheta& theta, const DecisionProblem& p, double rho0 = 3.0,
                               double dt_fine = 0.1) {
    auto ranking = enumerate_open_loop(
        p, [&](std::size_t) { return OdeProcess(theta, rho0, p.dt, dt_fine); }, 1);
    return ranking.front();
}

inline nlohmann::json deterministic_to_json(const DeterministicTheta& th) {
    nlohmann::json j = theta_to_json(th.to_model());
    j["kind"] = "deterministic_theta";
    return j;
}

inline DeterministicTheta deterministic_from_json(nlohmann::json j) {
    if (j.value("kind", std::string{}) != "deterministic_theta") throw std::invalid_argument("not a deterministic model document");
    j.erase("kind");
    const ModelTheta m = theta_from_json(j);
    const auto& a = m.phases[0];
    const auto& b = m.phases[1];
    if (a.k_s != b.k_s || a.k_c != b.k_c || a.r_d != b.r_d) {
        throw std::invalid_argument("deterministic model: inhibition kinetics must be shared across phases");
    }
    return {a.mu_g, b.mu_g, a.k_s, a.k_c, a.r_d, m.t_star};
}

}  // namespace kgrl
