#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "kgrl/abc_smc.hpp"
#include "kgrl/baseline_ls.hpp"
#include "kgrl/control.hpp"
#include "kgrl/decision.hpp"
#include "kgrl/ground_truth.hpp"
#include "kgrl/predictive.hpp"
#include "kgrl/prior.hpp"
#include "kgrl/random.hpp"

namespace kgrl {

/// One cell of the scenario grid.
struct Scenario {
    std::string b2b = "low";  ///< "high" or "low" batch-to-batch variation
    double sigma_g = 0.008;
    double sigma_n = 0.01;
    int m = 20;

    std::string label() const { return fmt::format("b2b={},sigma_n={:g},m={}", b2b, sigma_n, m); }

    GroundTruthConfig truth(GroundTruthConfig base) const {
        for (auto& p : base.theta.phases) p.sigma_g = sigma_g;
        base.sigma_n = sigma_n;
        return base;
    }
};

inline double b2b_sigma(std::string_view level) {
    if (level == "high") return 0.016;
    if (level == "low") return 0.008;
    throw std::invalid_argument(fmt::format("unknown batch-to-batch level '{}'", level));
}

inline std::vector<Scenario> scenario_grid(const std::vector<std::string>& b2b, const std::vector<double>& noise,
                                           const std::vector<int>& sizes) {
    std::vector<Scenario> out;
    for (const auto& level : b2b) {
        for (double sn : noise) {
            for (int m : sizes) {
                if (m < 1) throw std::invalid_argument("scenario dataset size must be >= 1");
                out.push_back(Scenario{level, b2b_sigma(level), sn, m});
            }
        }
    }
    return out;
}

struct MetricRow {
    std::string scenario;
    std::string method;
    std::string quantity;
    std::string horizon;
    double mean = 0.0;
    double se = 0.0;
    double ci95 = 0.0;  ///< 1.96 * se
    int n = 0;
};

struct MetricTable {
    std::vector<MetricRow> rows;

    const MetricRow* find(std::string_view scenario, std::string_view method, std::string_view quantity,
                          std::string_view horizon) const {
        for (const auto& r : rows) {
            if (r.scenario == scenario && r.method == method && r.quantity == quantity && r.horizon == horizon) return &r;
        }
        return nullptr;
    }

    void write_csv(std::ostream& os, std::string_view header_comment = {}) const {
        if (!header_comment.empty()) os << "# " << header_comment << '\n';
        os << "scenario,method,quantity,horizon,mean,se,ci95,n\n";
        for (const auto& r : rows) {
            os << fmt::format("\"{}\",{},{},{},{:.10g},{:.10g},{:.10g},{}\n", r.scenario, r.method, r.quantity, r.horizon, r.mean,
                              r.se, r.ci95, r.n);
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json rows_j = nlohmann::json::array();
        for (const auto& r : rows) {
            rows_j.push_back({{"scenario", r.scenario}, {"method", r.method}, {"quantity", r.quantity}, {"horizon", r.horizon},
                              {"mean", r.mean}, {"se", r.se}, {"ci95", r.ci95}, {"n", r.n}});
        }
        return rows_j;
    }
};

/// Mean, standard error of the mean and 1.96 SE over replications.
inline MetricRow summarize_replications(std::string scenario, std::string method, std::string quantity, std::string horizon,
                                        const std::vector<double>& xs) {
    MetricRow r{std::move(scenario), std::move(method), std::move(quantity), std::move(horizon), 0.0, 0.0, 0.0,
                static_cast<int>(xs.size())};
    if (xs.empty()) return r;
    for (double x : xs) r.mean += x;
    r.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - r.mean) * (x - r.mean);
        r.se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
    }
    r.ci95 = 1.96 * r.se;
    return r;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Percentile bootstrap interval for the mean.
inline Interval bootstrap_mean_ci(const std::vector<double>& xs, int resamples, Rng& rng, double level = 0.95) {
    if (xs.empty()) throw std::invalid_argument("bootstrap_mean_ci: empty sample");
    if (resamples < 1) throw std::invalid_argument("bootstrap_mean_ci: resamples must be >= 1");
    std::vector<double> means(static_cast<std::size_t>(resamples));
    const auto n = xs.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (auto& m : means) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += xs[pick(rng)];
        m = s / static_cast<double>(n);
    }
    const double a = 0.5 * (1.0 - level);
    auto copy = means;
    return {empirical_quantile(means, a), empirical_quantile(copy, 1.0 - a)};
}

/// m observed ground-truth batches without interventions; latent series removed.
inline std::vector<Trajectory> generate_dataset(const GroundTruthConfig& truth, int m, double horizon_hours, std::uint64_t seed,
                                                bool keep_latent = false) {
    std::vector<Trajectory> out;
    for (int i = 0; i < m; ++i) {
        Trajectory tr = simulate_ground_truth(truth, horizon_hours, InterventionPlan::none(),
                                              Rng(derive_seed(seed, static_cast<std::uint64_t>(i))));
        if (!keep_latent) {
            tr.rho_true.clear();
            tr.inhibitor_true.clear();
            tr.batch_growth_rates.clear();
        }
        out.push_back(std::move(tr));
    }
    return out;
}

struct ExperimentSettings {
    GroundTruthConfig truth_base{};
    BoxPrior prior = BoxPrior::hybrid_default();
    ABCConfig abc{};
    PlannerConfig planner{};
    LsFitOptions ls{};
    DecisionProblem exchange = DecisionProblem::medium_exchange();
    DecisionProblem expansion = DecisionProblem::expansion();
    int replications = 10;
    int n_test = 200;
    int n_mc = 200;
    std::vector<int> horizons{1, 6, 10};
    int n_eval = 20;
    int horizon_steps = 10;
    int bootstrap = 1000;
    int curve_reps = 1000;
    unsigned jobs = 1;

    double horizon_hours() const { return horizon_steps * truth_base.dt_obs; }
};

/// Everything fitted from one macro-replication's dataset.
struct ReplicationFits {
    std::vector<Trajectory> dataset;
    PosteriorEnsemble ensemble;
    LsFitResult ls;
};

inline std::uint64_t replication_seed(std::uint64_t root, const Scenario& sc, int r, std::string_view purpose) {
    return derive_seed(root, fnv1a64(sc.label()), static_cast<std::uint64_t>(r), fnv1a64(purpose));
}

inline ReplicationFits fit_replication(const Scenario& sc, int r, const ExperimentSettings& s, std::uint64_t root) {
    ReplicationFits f;
    f.dataset = generate_dataset(sc.truth(s.truth_base), sc.m, s.horizon_hours(), replication_seed(root, sc, r, "data"));
    ABCConfig abc = s.abc;
    abc.jobs = s.jobs;
    f.ensemble = abc_smc(f.dataset, s.prior, abc, replication_seed(root, sc, r, "abc"), s.truth_base.dt_obs,
                         s.truth_base.theta.t_star);
    LsFitOptions ls = s.ls;
    ls.jobs = s.jobs;
    ls.t_star = s.truth_base.theta.t_star;
    ls.dt_obs = s.truth_base.dt_obs;
    f.ls = ls_fit(f.dataset, LsBounds::from_prior(s.prior), ls, replication_seed(root, sc, r, "ls"));
    return f;
}

/// Per-replication mean absolute prediction errors, keyed by (method, quantity, h).
using ErrorSamples = std::map<std::string, std::vector<double>>;

inline std::string error_key(std::string_view method, std::string_view quantity, int h) {
    return fmt::format("{}|{}|{}", method, quantity, h);
}

/**
 * h-step prediction errors against latent truth on n_test fresh batches.
 * Both methods start from the batch's true initial density with zero
 * inhibitor; the hybrid point prediction is the posterior-predictive mean.
 */
inline void prediction_errors(const ReplicationFits& fits, const Scenario& sc, int r, const ExperimentSettings& s,
                              std::uint64_t root, ErrorSamples& out) {
    const GroundTruthConfig truth = sc.truth(s.truth_base);
    const int hmax = *std::max_element(s.horizons.begin(), s.horizons.end());
    const std::uint64_t test_seed = replication_seed(root, sc, r, "test");
    const std::uint64_t mc_seed = replication_seed(root, sc, r, "mc");
    std::map<std::string, double> sums;
    for (int k = 0; k < s.n_test; ++k) {
        const Trajectory tr = simulate_ground_truth(truth, s.horizon_hours(), InterventionPlan::none(),
                                                    Rng(derive_seed(test_seed, static_cast<std::uint64_t>(k))));
        const ProcessState start{tr.rho_true.front(), 0.0, 1, 0.0};
        const PredictiveSummary pred = posterior_predict(fits.ensemble, start, hmax, s.n_mc, InterventionPlan::none(),
                                                         derive_seed(mc_seed, static_cast<std::uint64_t>(k)), truth.dt_obs);
        const Trajectory ode = ode_solve(fits.ls.theta, start.rho, hmax * truth.dt_obs, s.ls.dt_fine, {}, truth.dt_obs);
        for (int h : s.horizons) {
            const auto i = static_cast<std::size_t>(h);
            sums[error_key("hybrid", "rho", h)] += std::abs(pred.rho[i].mean - tr.rho_true[i]);
            sums[error_key("hybrid", "inhibitor", h)] += std::abs(pred.inhibitor[i].mean - tr.inhibitor_true[i]);
            sums[error_key("ls", "rho", h)] += std::abs(ode.rho_true[i] - tr.rho_true[i]);
            sums[error_key("ls", "inhibitor", h)] += std::abs(ode.inhibitor_true[i] - tr.inhibitor_true[i]);
        }
    }
    for (const auto& [key, sum] : sums) out[key].push_back(sum / s.n_test);
}

struct DecisionOutcome {
    double hybrid = 0.0;  ///< mean realized reward of greedy control
    double ls = 0.0;      ///< mean realized reward of the LS schedule
    std::string ls_schedule;
};

/**
 * Greedy control and the LS schedule on the same n_eval ground-truth
 * batches (identical seeds, hence identical noise for both methods).
 */
inline DecisionOutcome decision_rewards(const ReplicationFits& fits, const Scenario& sc, int r, const ExperimentSettings& s,
                                        const DecisionProblem& problem, std::uint64_t root) {
    const GroundTruthConfig truth = sc.truth(s.truth_base);
    const std::string tag = std::string("eval-") + std::string(to_string(problem.kind));
    const std::uint64_t eval_seed = replication_seed(root, sc, r, tag);
    const std::uint64_t plan_seed = replication_seed(root, sc, r, tag + "-plan");
    const HybridPlanningModel model(fits.ensemble, problem);
    const ScheduleScore ls_best = ls_decide(fits.ls.theta, problem, truth.mu_rho0, s.ls.dt_fine);
    PlannerConfig pc = s.planner;
    pc.jobs = s.jobs;
    DecisionOutcome out;
    out.ls_schedule = ls_best.schedule.label;
    for (int e = 0; e < s.n_eval; ++e) {
        const GroundTruthProcess batch(truth, Rng(derive_seed(eval_seed, static_cast<std::uint64_t>(e))));
        out.hybrid += greedy_control(model, batch, pc, derive_seed(plan_seed, static_cast<std::uint64_t>(e))).realized_reward;
        out.ls += evaluate_schedule(problem, ls_best.schedule.plan, batch);
    }
    out.hybrid /= s.n_eval;
    out.ls /= s.n_eval;
    return out;
}

struct ExperimentResult {
    MetricTable prediction;
    MetricTable decision;
    std::vector<std::vector<DecisionOutcome>> exchange_outcomes;   ///< [scenario][replication]
    std::vector<std::vector<DecisionOutcome>> expansion_outcomes;  ///< [scenario][replication]
};

/// Macro-replications over the scenario grid; each replication fits once and feeds every requested metric.
inline ExperimentResult run_experiments(const std::vector<Scenario>& scenarios, const ExperimentSettings& s, bool prediction,
                                        bool decision, std::uint64_t root) {
    ExperimentResult res;
    for (const auto& sc : scenarios) {
        ErrorSamples errors;
        std::vector<DecisionOutcome> ex, xp;
        for (int r = 0; r < s.replications; ++r) {
            const ReplicationFits fits = fit_replication(sc, r, s, root);
            if (prediction) prediction_errors(fits, sc, r, s, root, errors);
            if (decision) {
                ex.push_back(decision_rewards(fits, sc, r, s, s.exchange, root));
                xp.push_back(decision_rewards(fits, sc, r, s, s.expansion, root));
            }
        }
        if (prediction) {
            for (const char* method : {"hybrid", "ls"}) {
                for (const char* q : {"rho", "inhibitor"}) {
                    for (int h : s.horizons) {
                        res.prediction.rows.push_back(summarize_replications(
                            sc.label(), method, q, fmt::format("{:g}h", h * s.truth_base.dt_obs), errors[error_key(method, q, h)]));
                    }
                }
            }
        }
        if (decision) {
            auto add = [&](const std::vector<DecisionOutcome>& xs, const char* quantity) {
                std::vector<double> h, l;
                for (const auto& o : xs) {
                    h.push_back(o.hybrid);
                    l.push_back(o.ls);
                }
                res.decision.rows.push_back(summarize_replications(sc.label(), "hybrid-rl", quantity, "harvest", h));
                res.decision.rows.push_back(summarize_replications(sc.label(), "ls-ode", quantity, "harvest", l));
            };
            add(ex, "cost_efficiency");
            add(xp, "expansion_profit");
            res.exchange_outcomes.push_back(std::move(ex));
            res.expansion_outcomes.push_back(std::move(xp));
        }
    }
    return res;
}

struct CurvePoint {
    double hour = 0.0;
    double mean = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::string method;
};

/// Exchange-hour reward curve with bootstrap bands from per-replicate rewards.
inline std::vector<CurvePoint> exchange_curve(const std::vector<ScheduleScore>& ranking, const DecisionProblem& p,
                                              const std::string& method, int resamples, std::uint64_t seed) {
    std::vector<const ScheduleScore*> by_index(static_cast<std::size_t>(p.horizon_steps) + 1, nullptr);
    for (const auto& sc : ranking) by_index.at(sc.schedule.index) = &sc;
    std::vector<CurvePoint> out;
    for (std::size_t k = 1; k < by_index.size(); ++k) {
        const ScheduleScore* sc = by_index[k];
        if (!sc) continue;
        CurvePoint pt{static_cast<double>(k - 1) * p.dt, sc->mean, sc->mean, sc->mean, method};
        if (sc->samples.size() > 1) {
            Rng rng(derive_seed(seed, k));
            const Interval ci = bootstrap_mean_ci(sc->samples, resamples, rng);
            pt.ci_lo = ci.lo;
            pt.ci_hi = ci.hi;
        }
        out.push_back(pt);
    }
    return out;
}

inline void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& pts, std::string_view header_comment = {}) {
    if (!header_comment.empty()) os << "# " << header_comment << '\n';
    os << "hour,mean,ci_lo,ci_hi,method\n";
    for (const auto& p : pts) os << fmt::format("{:g},{:.10g},{:.10g},{:.10g},{}\n", p.hour, p.mean, p.ci_lo, p.ci_hi, p.method);
}

struct Calibration {
    double unit_scale = 0.0;
    std::string best_schedule;
    double best_profit = 0.0;
};

/**
 * unit_scale at which the best open-loop expansion schedule on the ground
 * truth earns `target`. Mean profit is a_s u - c_s per schedule, so the
 * best-schedule profit is increasing and convex in u and reaches the target
 * first at min_s (target + c_s) / a_s.
 */
inline Calibration calibrate_unit_scale(DecisionProblem p, const GroundTruthConfig& truth, int n_reps, std::uint64_t seed,
                                        double target, unsigned jobs = 1) {
    p.unit_scale = 1.0;
    const auto ranking = enumerate_open_loop(p, truth, n_reps, seed, jobs);
    Calibration best{std::numeric_limits<double>::infinity(), "", 0.0};
    for (const auto& sc : ranking) {
        ControlState cs;
        cs.expansions = static_cast<int>(std::count(sc.schedule.plan.per_step.begin(), sc.schedule.plan.per_step.end(), Action::Expand));
        const double cost = operating_cost(p.horizon_hours(), medium_volume(p, cs), p.cost_time, p.cost_medium);
        const double a = sc.mean + cost;
        if (!(a > 0.0)) continue;
        const double u = (target + cost) / a;
        if (u < best.unit_scale) best = {u, sc.schedule.label, target};
    }
    return best;
}

}  // namespace kgrl
