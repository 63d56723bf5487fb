#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "kgrl/ensemble.hpp"
#include "kgrl/hybrid_model.hpp"
#include "kgrl/parallel.hpp"
#include "kgrl/prior.hpp"
#include "kgrl/random.hpp"
#include "kgrl/trajectory.hpp"

namespace kgrl {

enum class KernelShape { Diagonal, Full };

inline std::string to_string(KernelShape k) { return k == KernelShape::Full ? "full" : "diagonal"; }

inline KernelShape kernel_shape_from_string(const std::string& s) {
    if (s == "diagonal") return KernelShape::Diagonal;
    if (s == "full") return KernelShape::Full;
    throw std::invalid_argument(fmt::format("unknown kernel shape '{}' (expected diagonal or full)", s));
}

struct ABCConfig {
    int n_particles = 200;
    double keep_ratio = 0.5;
    int replications = 20;
    double min_accept_rate = 0.05;
    int max_generations = 50;
    double kernel_scale = 2.0;  ///< kernel covariance = kernel_scale * weighted particle covariance
    KernelShape kernel = KernelShape::Full;
    unsigned jobs = 1;

    int kept() const { return static_cast<int>(std::floor(keep_ratio * n_particles)); }

    void validate() const {
        if (!(keep_ratio > 0.0 && keep_ratio < 1.0)) throw std::invalid_argument("ABCConfig: keep_ratio must lie in (0, 1)");
        if (n_particles < 2) throw std::invalid_argument("ABCConfig: n_particles must be >= 2");
        if (replications < 1) throw std::invalid_argument("ABCConfig: replications must be >= 1");
        if (kept() < 1 || kept() >= n_particles) throw std::invalid_argument("ABCConfig: keep_ratio * n_particles must leave at least one kept and one refilled particle");
        if (max_generations < 1) throw std::invalid_argument("ABCConfig: max_generations must be >= 1");
        if (!(kernel_scale > 0.0)) throw std::invalid_argument("ABCConfig: kernel_scale must be positive");
    }
};

/// Euclidean distance between two observed series.
inline double trajectory_distance(std::span<const double> obs, std::span<const double> sim) {
    if (obs.size() != sim.size()) {
        throw std::invalid_argument(fmt::format("trajectory_distance: length mismatch ({} vs {})", obs.size(), sim.size()));
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const double d = obs[i] - sim[i];
        ss += d * d;
    }
    return std::sqrt(ss);
}

/// What abc_smc needs from a simulator: per-replicate distances to the data.
template <class M>
concept AbcSimulator = requires(const M& m, const std::vector<double>& theta, Rng& rng, std::vector<double>& out) {
    m.simulate_distances(theta, rng, out);
};

template <class P>
concept AbcPrior = requires(const P& p, const std::vector<double>& x, Rng& rng) {
    { p.sample(rng) } -> std::convertible_to<std::vector<double>>;
    { p.density(x) } -> std::convertible_to<double>;
    { p.contains(x) } -> std::convertible_to<bool>;
    { p.contains_coordinate(std::size_t{}, 0.0) } -> std::convertible_to<bool>;
};

/**
 * Hybrid-model simulator against an observed dataset. Every replicate is
 * started from the observation's own first measured density and reuses its
 * intervention annotations; only rho_obs enters the distance.
 */
class HybridAbcSimulator {
public:
    HybridAbcSimulator(const std::vector<Trajectory>& dataset, int replications, double dt, double t_star = 18.0)
        : replications_(replications), dt_(dt), t_star_(t_star) {
        if (dataset.empty()) throw std::invalid_argument("HybridAbcSimulator: dataset is empty");
        if (replications < 1) throw std::invalid_argument("HybridAbcSimulator: replications must be >= 1");
        for (const auto& tr : dataset) {
            if (tr.size() < 2) throw std::invalid_argument("HybridAbcSimulator: trajectories need at least two observations");
            observed_.push_back(tr.rho_obs);
            InterventionPlan plan;
            plan.per_step = tr.interventions;
            plans_.push_back(std::move(plan));
        }
    }

    std::size_t trajectories() const noexcept { return observed_.size(); }
    int replications() const noexcept { return replications_; }
    void set_expansion_factor(double n) {
        for (auto& p : plans_) p.expansion_factor = n;
    }

    void simulate_distances(const std::vector<double>& theta_vec, Rng& rng, std::vector<double>& out) const {
        const ModelTheta theta = ModelTheta::from_vector(theta_vec, t_star_);
        out.clear();
        out.reserve(observed_.size() * static_cast<std::size_t>(replications_));
        std::vector<double> sim;
        for (std::size_t i = 0; i < observed_.size(); ++i) {
            const auto& obs = observed_[i];
            const int steps = static_cast<int>(obs.size()) - 1;
            for (int j = 0; j < replications_; ++j) {
                Rng r = rng.split(i * 1'000'003ULL + static_cast<std::uint64_t>(j));
                simulate(theta, obs.front(), steps, plans_[i], r, sim);
                out.push_back(trajectory_distance(obs, sim));
            }
        }
    }

private:
    void simulate(const ModelTheta& theta, double rho0, int steps, const InterventionPlan& plan, Rng& rng,
                  std::vector<double>& out) const {
        Rng batch_rng = rng.split(0);
        const BatchRates rates = draw_batch_rates(theta, batch_rng);
        out.resize(static_cast<std::size_t>(steps) + 1);
        ProcessState s{rho0, 0.0, 1, 0.0};
        for (int t = 1; t <= steps; ++t) {
            if (t > 1) s = apply_action(s, plan.at(t), plan.expansion_factor);
            out[static_cast<std::size_t>(t - 1)] = s.rho;
            s = hybrid_step_sample(s, theta, rates.at_hour(s.hour, theta.t_star), dt_, rng);
        }
        out[static_cast<std::size_t>(steps)] = s.rho;
    }

    std::vector<std::vector<double>> observed_;
    std::vector<InterventionPlan> plans_;
    int replications_;
    double dt_;
    double t_star_;
};

/// Average distance q over all observation/replicate pairs.
template <AbcSimulator Sim>
double mean_distance(const std::vector<double>& theta, const Sim& sim, Rng& rng) {
    std::vector<double> d;
    sim.simulate_distances(theta, rng, d);
    if (d.empty()) throw std::invalid_argument("mean_distance: simulator produced no distances");
    return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

inline double mean_distance(const ModelTheta& theta, const std::vector<Trajectory>& dataset, int replications, Rng& rng,
                            double dt = 3.0) {
    HybridAbcSimulator sim(dataset, replications, dt, theta.t_star);
    return mean_distance(theta.to_vector(), sim, rng);
}

/**
 * Gaussian perturbation kernel. `factor` is the lower Cholesky factor of the
 * covariance (row-major); a diagonal kernel only fills the diagonal.
 * Coordinates with zero variance act as point masses.
 */
struct GaussianKernel {
    std::vector<double> variance;
    std::vector<double> factor;
    KernelShape shape = KernelShape::Diagonal;

    std::size_t dim() const noexcept { return variance.size(); }

    static GaussianKernel diagonal(std::vector<double> var) {
        GaussianKernel k;
        const std::size_t d = var.size();
        k.factor.assign(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i) k.factor[i * d + i] = std::sqrt(std::max(0.0, var[i]));
        k.variance = std::move(var);
        return k;
    }

    /// Falls back to the diagonal when the covariance is not positive definite.
    static GaussianKernel full(const std::vector<double>& cov, std::size_t d) {
        GaussianKernel k;
        k.shape = KernelShape::Full;
        k.variance.resize(d);
        for (std::size_t i = 0; i < d; ++i) k.variance[i] = cov[i * d + i];
        k.factor.assign(d * d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            double diag = cov[j * d + j];
            for (std::size_t m = 0; m < j; ++m) diag -= k.factor[j * d + m] * k.factor[j * d + m];
            if (!(diag > 1e-14 * std::max(1e-300, cov[j * d + j]))) return diagonal(k.variance);
            const double ljj = std::sqrt(diag);
            k.factor[j * d + j] = ljj;
            for (std::size_t i = j + 1; i < d; ++i) {
                double v = cov[i * d + j];
                for (std::size_t m = 0; m < j; ++m) v -= k.factor[i * d + m] * k.factor[j * d + m];
                k.factor[i * d + j] = v / ljj;
            }
        }
        return k;
    }

    /// log K(x | center).
    double log_density(const std::vector<double>& x, const std::vector<double>& center) const {
        constexpr double kLog2Pi = 1.8378770664093453;
        const std::size_t d = dim();
        std::vector<double> z(d, 0.0);
        double lp = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double r = x[i] - center[i];
            for (std::size_t m = 0; m < i; ++m) r -= factor[i * d + m] * z[m];
            const double lii = factor[i * d + i];
            if (lii > 0.0) {
                z[i] = r / lii;
                lp -= 0.5 * (kLog2Pi + z[i] * z[i]) + std::log(lii);
            } else if (r != 0.0) {
                return -INFINITY;
            }
        }
        return lp;
    }

    /// center + L z for a standard normal z.
    std::vector<double> draw(const std::vector<double>& center, Rng& rng) const {
        const std::size_t d = dim();
        std::vector<double> z(d);
        for (double& v : z) v = rng.normal();
        std::vector<double> x(center);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t m = 0; m <= i; ++m) x[i] += factor[i * d + m] * z[m];
        }
        return x;
    }
};

/// kernel_scale times the weighted covariance (or per-coordinate variance) of the particles.
inline GaussianKernel adapt_kernel(const std::vector<Particle>& particles, const std::vector<double>& normalized_weights,
                                   double kernel_scale, KernelShape shape = KernelShape::Diagonal) {
    const std::size_t dim = particles.front().theta.size();
    std::vector<double> mean(dim, 0.0), cov(dim * dim, 0.0);
    for (std::size_t n = 0; n < particles.size(); ++n) {
        for (std::size_t i = 0; i < dim; ++i) mean[i] += normalized_weights[n] * particles[n].theta[i];
    }
    for (std::size_t n = 0; n < particles.size(); ++n) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double di = particles[n].theta[i] - mean[i];
            for (std::size_t j = 0; j <= i; ++j) {
                cov[i * dim + j] += normalized_weights[n] * di * (particles[n].theta[j] - mean[j]);
            }
        }
    }
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            cov[i * dim + j] *= kernel_scale;
            cov[j * dim + i] = cov[i * dim + j];
        }
    }
    if (shape == KernelShape::Full) return GaussianKernel::full(cov, dim);
    std::vector<double> var(dim);
    for (std::size_t i = 0; i < dim; ++i) var[i] = cov[i * dim + i];
    return GaussianKernel::diagonal(std::move(var));
}

inline constexpr int kMaxPerturbAttempts = 10000;

/**
 * Draws from the kernel around theta conditioned on the prior support. A
 * diagonal kernel factorizes over a box prior, so each coordinate is redrawn
 * on its own; a full kernel redraws the whole vector.
 */
template <AbcPrior Prior>
std::vector<double> perturb(const std::vector<double>& theta, const GaussianKernel& kernel, const Prior& prior, Rng& rng,
                            int* attempts_out = nullptr) {
    if (kernel.shape == KernelShape::Full) {
        for (int attempt = 1; attempt <= kMaxPerturbAttempts; ++attempt) {
            std::vector<double> x = kernel.draw(theta, rng);
            if (prior.contains(x)) {
                if (attempts_out) *attempts_out = attempt;
                return x;
            }
        }
        throw std::runtime_error(fmt::format("perturb: no draw inside the prior support after {} attempts (degenerate kernel)",
                                             kMaxPerturbAttempts));
    }
    std::vector<double> x(theta);
    int worst = 1;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = kernel.variance[i];
        if (!(v > 0.0)) continue;
        const double sd = std::sqrt(v);
        int attempt = 1;
        for (;; ++attempt) {
            if (attempt > kMaxPerturbAttempts) {
                throw std::runtime_error(fmt::format("perturb: coordinate {} left the prior support {} times (degenerate kernel)", i,
                                                     kMaxPerturbAttempts));
            }
            x[i] = theta[i] + sd * rng.normal();
            if (prior.contains_coordinate(i, x[i])) break;
        }
        worst = std::max(worst, attempt);
    }
    if (!prior.contains(x)) throw std::runtime_error("perturb: perturbed parameter lies outside the prior support");
    if (attempts_out) *attempts_out = worst;
    return x;
}

/**
 * Log importance weight of a refilled particle:
 *   log p(theta) + log hits - log sum_j w_j K(theta | theta_j)
 * with w_j the normalized weights of the previous generation. -inf when
 * there are no hits or theta lies outside the prior.
 */
inline double log_importance_weight(const std::vector<double>& theta_new, std::size_t accepted_count,
                                    const std::vector<Particle>& previous, const std::vector<double>& normalized_weights,
                                    const GaussianKernel& kernel, double prior_density) {
    if (accepted_count == 0 || prior_density == 0.0) return -INFINITY;
    double max_term = -INFINITY;
    std::vector<double> terms(previous.size());
    for (std::size_t j = 0; j < previous.size(); ++j) {
        terms[j] = normalized_weights[j] > 0.0 ? std::log(normalized_weights[j]) + kernel.log_density(theta_new, previous[j].theta) : -INFINITY;
        max_term = std::max(max_term, terms[j]);
    }
    if (!std::isfinite(max_term)) throw std::runtime_error("importance_weight: kernel mixture density is zero (degenerate kernel)");
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - max_term);
    const double log_den = max_term + std::log(acc);
    return std::log(prior_density) + std::log(static_cast<double>(accepted_count)) - log_den;
}

inline double importance_weight(const std::vector<double>& theta_new, std::size_t accepted_count,
                                const std::vector<Particle>& previous, const std::vector<double>& normalized_weights,
                                const GaussianKernel& kernel, double prior_density) {
    return std::exp(log_importance_weight(theta_new, accepted_count, previous, normalized_weights, kernel, prior_density));
}

namespace detail {

struct Candidate {
    Particle particle;
    std::size_t hits = 0;
};

/// Keeps the `keep` smallest distances (stable on ties) and returns the keep-th smallest as tolerance.
inline double select_survivors(std::vector<Particle>& pool, std::size_t keep) {
    std::stable_sort(pool.begin(), pool.end(), [](const Particle& a, const Particle& b) { return a.distance < b.distance; });
    const double delta = pool[keep - 1].distance;
    pool.resize(keep);
    return delta;
}

/// exp(log w - max log w); all zeros when every log weight is -inf.
inline std::vector<double> relative_weights(const std::vector<double>& log_w) {
    const double top = *std::max_element(log_w.begin(), log_w.end());
    std::vector<double> w(log_w.size(), 0.0);
    if (!std::isfinite(top)) return w;
    for (std::size_t n = 0; n < w.size(); ++n) w[n] = std::exp(log_w[n] - top);
    return w;
}

inline std::vector<double> weighted_mean(const std::vector<Particle>& ps, const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    std::vector<double> m(ps.front().theta.size(), 0.0);
    if (!(total > 0.0)) return m;
    for (std::size_t n = 0; n < ps.size(); ++n) {
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += w[n] / total * ps[n].theta[i];
    }
    return m;
}

}  // namespace detail

/**
 * ABC-SMC with adaptive tolerance.
 *
 * Generation 0 samples N particles from the prior with unit weights. The
 * tolerance is the floor(alpha N)-th smallest mean distance; that many
 * particles survive. Each later generation refills N - N_alpha particles by
 * weighted resampling of the survivors and a Gaussian perturbation, weights
 * them against the previous tolerance, and re-selects survivors from the
 * union. Stops once the share of refills within the previous tolerance is
 * at most min_accept_rate, or after max_generations.
 *
 * Every particle evaluation uses its own stream derived from (seed,
 * generation, index), so results do not depend on `jobs`. Weights are
 * carried as logs during the run; the returned ensemble holds them rescaled
 * so that the largest is 1.
 */
template <AbcSimulator Sim, AbcPrior Prior>
PosteriorEnsemble abc_smc(const Sim& sim, const Prior& prior, const ABCConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto N = static_cast<std::size_t>(cfg.n_particles);
    const auto keep = static_cast<std::size_t>(cfg.kept());
    auto log_weights = [](const std::vector<Particle>& ps) {
        std::vector<double> lw;
        lw.reserve(ps.size());
        for (const auto& p : ps) lw.push_back(p.weight);
        return lw;
    };

    PosteriorEnsemble out;
    std::vector<Particle> pool(N);
    parallel_for(N, cfg.jobs, [&](std::size_t n) {
        Rng rng(derive_seed(seed, 0, n));
        Particle p;
        p.theta = prior.sample(rng);
        std::vector<double> d;
        sim.simulate_distances(p.theta, rng, d);
        p.distance = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
        p.weight = 0.0;
        pool[n] = std::move(p);
    });
    double delta = detail::select_survivors(pool, keep);
    std::vector<double> w = detail::relative_weights(log_weights(pool));
    out.tolerance_history.push_back(delta);
    out.mean_history.push_back(detail::weighted_mean(pool, w));

    double p_acc = 1.0;
    int generation = 1;
    while (p_acc > cfg.min_accept_rate && generation < cfg.max_generations) {
        ++generation;
        double total = 0.0;
        for (double x : w) total += x;
        if (!(total > 0.0)) throw std::runtime_error(fmt::format("abc_smc: all survivor weights are zero at generation {}", generation));
        std::vector<double> w_norm;
        w_norm.reserve(w.size());
        for (double x : w) w_norm.push_back(x / total);
        const GaussianKernel kernel = adapt_kernel(pool, w_norm, cfg.kernel_scale, cfg.kernel);
        const DiscreteSampler pick(w_norm);

        std::vector<detail::Candidate> fresh(N - keep);
        parallel_for(fresh.size(), cfg.jobs, [&](std::size_t k) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(generation), k));
            const auto& parent = pool[pick(rng)];
            detail::Candidate c;
            c.particle.theta = perturb(parent.theta, kernel, prior, rng);
            std::vector<double> d;
            sim.simulate_distances(c.particle.theta, rng, d);
            c.particle.distance = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
            c.hits = static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [&](double x) { return x <= delta; }));
            c.particle.weight = log_importance_weight(c.particle.theta, c.hits, pool, w_norm, kernel, prior.density(c.particle.theta));
            fresh[k] = std::move(c);
        });

        std::size_t within = 0;
        for (const auto& c : fresh) within += c.particle.distance <= delta ? 1 : 0;
        p_acc = static_cast<double>(within) / static_cast<double>(fresh.size());
        out.acceptance_history.push_back(p_acc);

        for (auto& c : fresh) pool.push_back(std::move(c.particle));
        delta = detail::select_survivors(pool, keep);
        w = detail::relative_weights(log_weights(pool));
        out.tolerance_history.push_back(delta);
        out.mean_history.push_back(detail::weighted_mean(pool, w));

        if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) {
            throw std::runtime_error(fmt::format("abc_smc: every surviving particle has zero weight after generation {} "
                                                 "(tolerance {:.6g}, acceptance {:.4f})", generation, delta, p_acc));
        }
    }
    for (std::size_t n = 0; n < pool.size(); ++n) pool[n].weight = w[n];
    out.generation = generation;
    out.particles = std::move(pool);
    return out;
}

/// Hybrid-model inference on a dataset of observed trajectories.
inline PosteriorEnsemble abc_smc(const std::vector<Trajectory>& dataset, const BoxPrior& prior, const ABCConfig& cfg,
                                 std::uint64_t seed, double dt = 3.0, double t_star = 18.0) {
    HybridAbcSimulator sim(dataset, cfg.replications, dt, t_star);
    PosteriorEnsemble e = abc_smc(sim, prior, cfg, seed);
    e.t_star = t_star;
    return e;
}

}  // namespace kgrl
