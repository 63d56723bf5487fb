#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgrl/kinetics.hpp"
#include "kgrl/random.hpp"

namespace kgrl {

struct Particle {
    std::vector<double> theta;
    double weight = 1.0;
    double distance = 0.0;
};

/// Weighted particle approximation of a posterior, as returned by abc_smc.
struct PosteriorEnsemble {
    std::vector<Particle> particles;
    int generation = 0;
    std::vector<double> tolerance_history;              ///< delta_1 >= delta_2 >= ...
    std::vector<double> acceptance_history;             ///< p_acc per refill generation
    std::vector<std::vector<double>> mean_history;      ///< weighted mean after each generation
    double t_star = 18.0;

    bool empty() const noexcept { return particles.empty(); }
    std::size_t size() const noexcept { return particles.size(); }
    std::size_t dimension() const { return particles.empty() ? 0 : particles.front().theta.size(); }

    std::vector<double> normalized_weights() const {
        double total = 0.0;
        for (const auto& p : particles) total += p.weight;
        if (!(total > 0.0) || !std::isfinite(total)) throw std::runtime_error("PosteriorEnsemble: weights do not sum to a positive finite value");
        std::vector<double> w;
        w.reserve(particles.size());
        for (const auto& p : particles) w.push_back(p.weight / total);
        return w;
    }

    std::vector<double> weighted_mean() const {
        const auto w = normalized_weights();
        std::vector<double> m(dimension(), 0.0);
        for (std::size_t n = 0; n < particles.size(); ++n) {
            for (std::size_t i = 0; i < m.size(); ++i) m[i] += w[n] * particles[n].theta[i];
        }
        return m;
    }

    ModelTheta theta(std::size_t n) const { return ModelTheta::from_vector(particles.at(n).theta, t_star); }

    /// A one-particle ensemble holding a fixed hybrid model.
    static PosteriorEnsemble point_mass(const ModelTheta& th) {
        PosteriorEnsemble e;
        e.particles.push_back(Particle{th.to_vector(), 1.0, 0.0});
        e.t_star = th.t_star;
        return e;
    }
};

/// Draws particle indices proportionally to weight.
class EnsembleSampler {
public:
    explicit EnsembleSampler(const PosteriorEnsemble& e) : sampler_(e.normalized_weights()) {
        models_.reserve(e.size());
        for (std::size_t n = 0; n < e.size(); ++n) models_.push_back(e.theta(n));
    }

    const ModelTheta& operator()(Rng& rng) const { return models_[sampler_(rng)]; }
    const std::vector<ModelTheta>& models() const noexcept { return models_; }

private:
    DiscreteSampler sampler_;
    std::vector<ModelTheta> models_;
};

inline nlohmann::json theta_to_json(const ModelTheta& th) {
    nlohmann::json j;
    for (int p = 1; p <= 2; ++p) {
        const auto v = th.phase(p);
        const std::vector<double> vals = {v.mu_g, v.sigma_g, v.k_s, v.k_c, v.r_d, v.v_rho, v.v_I};
        nlohmann::json phase;
        for (std::size_t i = 0; i < PhaseParams::size; ++i) phase[kPhaseFieldNames[i]] = vals[i];
        j["phase" + std::to_string(p)] = phase;
    }
    j["t_star"] = th.t_star;
    return j;
}

inline ModelTheta theta_from_json(const nlohmann::json& j) {
    ModelTheta th;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "phase1" && it.key() != "phase2" && it.key() != "t_star") {
            throw std::invalid_argument("theta: unknown key '" + it.key() + "'");
        }
    }
    th.t_star = j.value("t_star", 18.0);
    for (int p = 1; p <= 2; ++p) {
        const auto& phase = j.at("phase" + std::to_string(p));
        std::vector<double> vals(PhaseParams::size, 0.0);
        for (auto it = phase.begin(); it != phase.end(); ++it) {
            std::size_t i = 0;
            while (i < PhaseParams::size && it.key() != kPhaseFieldNames[i]) ++i;
            if (i == PhaseParams::size) throw std::invalid_argument("theta: unknown phase key '" + it.key() + "'");
            vals[i] = it.value().get<double>();
        }
        th.phase(p) = PhaseParams{vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6]};
    }
    th.validate();
    return th;
}

inline nlohmann::json ensemble_to_json(const PosteriorEnsemble& e) {
    nlohmann::json j;
    j["kind"] = "posterior_ensemble";
    j["generation"] = e.generation;
    j["t_star"] = e.t_star;
    j["tolerance_history"] = e.tolerance_history;
    j["acceptance_history"] = e.acceptance_history;
    nlohmann::json ps = nlohmann::json::array();
    for (const auto& p : e.particles) ps.push_back({{"theta", p.theta}, {"weight", p.weight}, {"distance", p.distance}});
    j["particles"] = ps;
    return j;
}

inline PosteriorEnsemble ensemble_from_json(const nlohmann::json& j) {
    if (j.value("kind", std::string{}) != "posterior_ensemble") throw std::invalid_argument("not a posterior ensemble document");
    PosteriorEnsemble e;
    e.generation = j.at("generation").get<int>();
    e.t_star = j.value("t_star", 18.0);
    e.tolerance_history = j.at("tolerance_history").get<std::vector<double>>();
    e.acceptance_history = j.value("acceptance_history", std::vector<double>{});
    for (const auto& p : j.at("particles")) {
        e.particles.push_back(Particle{p.at("theta").get<std::vector<double>>(), p.at("weight").get<double>(), p.at("distance").get<double>()});
    }
    if (e.particles.empty()) throw std::invalid_argument("posterior ensemble has no particles");
    (void)e.normalized_weights();
    return e;
}

}  // namespace kgrl
