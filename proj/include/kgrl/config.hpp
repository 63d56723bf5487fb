#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "kgrl/abc_smc.hpp"
#include "kgrl/baseline_ls.hpp"
#include "kgrl/decision.hpp"
#include "kgrl/ensemble.hpp"
#include "kgrl/experiments.hpp"
#include "kgrl/ground_truth.hpp"
#include "kgrl/prior.hpp"
#include "kgrl/random.hpp"
#include "kgrl/sparse_sampling.hpp"

namespace kgrl {

using json = nlohmann::json;

/// Every key the run configuration accepts, with its default value.
inline json default_config() {
    const BoxPrior prior = BoxPrior::hybrid_default();
    return json{
        {"seed", 20240601ULL},
        {"ground_truth",
         {{"theta", theta_to_json(ModelTheta::reference(0.008))},
          {"sigma_n", 0.01},
          {"sigma_m", 0.2},
          {"mu_rho0", 3.0},
          {"sigma_rho0", 0.03},
          {"dt_sde", 0.01},
          {"dt_obs", 3.0},
          {"horizon_hours", 30.0},
          {"m", 20}}},
        {"prior", {{"lower", prior.lower()}, {"upper", prior.upper()}}},
        {"abc",
         {{"n_particles", 200},
          {"keep_ratio", 0.5},
          {"replications", 20},
          {"min_accept_rate", 0.05},
          {"max_generations", 50},
          {"kernel_scale", 2.0},
          {"kernel", "full"}}},
        {"planner", {{"B", 3}, {"J", 2}, {"full_width_depth", 3}, {"node_budget", 5e6}}},
        {"problem",
         {{"kind", "expansion"},
          {"horizon_steps", 10},
          {"cost_time", 150.0},
          {"cost_medium", 10.0},
          {"price", 2e-6},
          {"expansion_factor", 4.0},
          {"max_exchanges", 1},
          {"max_expansions", 9},
          {"first_expansion_hour", 3.0},
          {"exchange_initial_liters", 100.0},
          {"exchange_liters", 100.0},
          {"expansion_initial_liters", 1.0},
          {"exchange_unit_scale", 1000.0},
          {"expansion_unit_scale", kDefaultExpansionUnitScale},
          {"interventions_enabled", true},
          {"rho0", 3.0}}},
        {"experiment",
         {{"kind", "all"},
          {"b2b", {"high", "low"}},
          {"sigma_n", {0.03, 0.01}},
          {"m", {3, 6, 20}},
          {"replications", 10},
          {"n_test", 200},
          {"n_mc", 200},
          {"horizons", {1, 6, 10}},
          {"n_eval", 20},
          {"bootstrap", 1000},
          {"curve_reps", 1000},
          {"open_loop_reps", 1000},
          {"ls_restarts", 20},
          {"ls_dt_fine", 0.1}}},
        {"io", {{"data_dir", "data"}, {"model", ""}, {"out_dir", "out"}}},
    };
}

namespace detail {

inline void merge_into(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) throw std::invalid_argument(fmt::format("config: '{}' must be an object", path.empty() ? "<root>" : path));
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw std::invalid_argument(fmt::format("config: unknown key '{}'", key));
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_into(slot, it.value(), key);
            continue;
        }
        const bool both_numbers = slot.is_number() && it.value().is_number();
        if (!both_numbers && slot.type() != it.value().type()) {
            throw std::invalid_argument(fmt::format("config: '{}' has the wrong type (expected {})", key, slot.type_name()));
        }
        if (slot.is_number_integer() && !it.value().is_number_integer()) {
            throw std::invalid_argument(fmt::format("config: '{}' must be an integer", key));
        }
        slot = it.value();
    }
}

}  // namespace detail

/// Overlays `patch` on `base`; keys absent from `base` are rejected.
inline json merge_config(json base, const json& patch) {
    detail::merge_into(base, patch, "");
    return base;
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(fmt::format("'{}' is not valid JSON: {}", path, e.what()));
    }
}

/// Hash of the canonical (key-sorted, compact) serialization.
inline std::uint64_t config_hash(const json& cfg) { return fnv1a64(cfg.dump()); }

inline std::string hash_hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

/// Provenance stamped into every output file.
struct Provenance {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::string command;

    std::string header() const { return fmt::format("kgrl config_hash={} seed={} command={}", hash_hex(config_hash), seed, command); }
    json to_json() const { return {{"config_hash", hash_hex(config_hash)}, {"seed", seed}, {"command", command}}; }
};

/// Typed view of a validated configuration document.
struct RunConfig {
    json doc;
    std::uint64_t seed = 0;
    GroundTruthConfig truth;
    double horizon_hours = 30.0;
    int m = 20;
    BoxPrior prior;
    ABCConfig abc;
    PlannerConfig planner;
    DecisionProblem exchange;
    DecisionProblem expansion;
    ProblemKind kind = ProblemKind::Expansion;
    double rho0 = 3.0;
    std::string experiment_kind;
    std::vector<Scenario> scenarios;
    ExperimentSettings settings;
    int open_loop_reps = 1000;
    std::string data_dir;
    std::string model_path;
    std::string out_dir;

    std::uint64_t hash() const { return config_hash(doc); }
    const DecisionProblem& problem() const { return kind == ProblemKind::MediumExchange ? exchange : expansion; }
    Provenance provenance(std::string command) const { return {hash(), seed, std::move(command)}; }
};

inline RunConfig parse_config(const json& doc) {
    RunConfig c;
    try {
        c.doc = doc;
        c.seed = doc.at("seed").get<std::uint64_t>();

        const json& g = doc.at("ground_truth");
        c.truth.theta = theta_from_json(g.at("theta"));
        c.truth.sigma_n = g.at("sigma_n").get<double>();
        c.truth.sigma_m = g.at("sigma_m").get<double>();
        c.truth.mu_rho0 = g.at("mu_rho0").get<double>();
        c.truth.sigma_rho0 = g.at("sigma_rho0").get<double>();
        c.truth.dt_sde = g.at("dt_sde").get<double>();
        c.truth.dt_obs = g.at("dt_obs").get<double>();
        c.horizon_hours = g.at("horizon_hours").get<double>();
        c.m = g.at("m").get<int>();
        c.truth.validate();
        if (c.m < 1) throw std::invalid_argument("ground_truth.m must be >= 1");
        if (!(c.truth.theta.t_star < c.horizon_hours)) throw std::invalid_argument("theta.t_star must lie inside the horizon");

        const json& pr = doc.at("prior");
        c.prior = BoxPrior(pr.at("lower").get<std::vector<double>>(), pr.at("upper").get<std::vector<double>>());
        if (c.prior.dimension() != ModelTheta::dimension) throw std::invalid_argument("prior bounds must have 14 entries");

        const json& a = doc.at("abc");
        c.abc.n_particles = a.at("n_particles").get<int>();
        c.abc.keep_ratio = a.at("keep_ratio").get<double>();
        c.abc.replications = a.at("replications").get<int>();
        c.abc.min_accept_rate = a.at("min_accept_rate").get<double>();
        c.abc.max_generations = a.at("max_generations").get<int>();
        c.abc.kernel_scale = a.at("kernel_scale").get<double>();
        c.abc.kernel = kernel_shape_from_string(a.at("kernel").get<std::string>());
        c.abc.validate();

        const json& pl = doc.at("planner");
        c.planner.B = pl.at("B").get<int>();
        c.planner.J = pl.at("J").get<int>();
        c.planner.full_width_depth = pl.at("full_width_depth").get<int>();
        c.planner.node_budget = pl.at("node_budget").get<double>();
        c.planner.validate();

        const json& p = doc.at("problem");
        c.kind = problem_kind_from_string(p.at("kind").get<std::string>());
        for (DecisionProblem* dp : {&c.exchange, &c.expansion}) {
            dp->horizon_steps = p.at("horizon_steps").get<int>();
            dp->dt = c.truth.dt_obs;
            dp->cost_time = p.at("cost_time").get<double>();
            dp->cost_medium = p.at("cost_medium").get<double>();
            dp->price = p.at("price").get<double>();
            dp->expansion_factor = p.at("expansion_factor").get<double>();
            dp->max_exchanges = p.at("max_exchanges").get<int>();
            dp->max_expansions = p.at("max_expansions").get<int>();
            dp->first_expansion_hour = p.at("first_expansion_hour").get<double>();
            dp->medium_per_exchange = p.at("exchange_liters").get<double>();
            dp->interventions_enabled = p.at("interventions_enabled").get<bool>();
        }
        c.exchange.kind = ProblemKind::MediumExchange;
        c.exchange.medium_initial = p.at("exchange_initial_liters").get<double>();
        c.exchange.unit_scale = p.at("exchange_unit_scale").get<double>();
        c.expansion.kind = ProblemKind::Expansion;
        c.expansion.medium_initial = p.at("expansion_initial_liters").get<double>();
        c.expansion.unit_scale = p.at("expansion_unit_scale").get<double>();
        c.exchange.validate();
        c.expansion.validate();
        c.rho0 = p.at("rho0").get<double>();
        if (std::abs(c.exchange.horizon_hours() - c.horizon_hours) > 1e-9) {
            throw std::invalid_argument("problem.horizon_steps * ground_truth.dt_obs must equal ground_truth.horizon_hours");
        }

        const json& e = doc.at("experiment");
        c.experiment_kind = e.at("kind").get<std::string>();
        if (c.experiment_kind != "all" && c.experiment_kind != "prediction" && c.experiment_kind != "decision" &&
            c.experiment_kind != "curves" && c.experiment_kind != "calibrate") {
            throw std::invalid_argument("experiment.kind must be one of all, prediction, decision, curves, calibrate");
        }
        c.scenarios = scenario_grid(e.at("b2b").get<std::vector<std::string>>(), e.at("sigma_n").get<std::vector<double>>(),
                                    e.at("m").get<std::vector<int>>());
        ExperimentSettings& s = c.settings;
        s.truth_base = c.truth;
        s.prior = c.prior;
        s.abc = c.abc;
        s.planner = c.planner;
        s.exchange = c.exchange;
        s.expansion = c.expansion;
        s.replications = e.at("replications").get<int>();
        s.n_test = e.at("n_test").get<int>();
        s.n_mc = e.at("n_mc").get<int>();
        s.horizons = e.at("horizons").get<std::vector<int>>();
        s.n_eval = e.at("n_eval").get<int>();
        s.bootstrap = e.at("bootstrap").get<int>();
        s.curve_reps = e.at("curve_reps").get<int>();
        s.horizon_steps = c.exchange.horizon_steps;
        s.ls.restarts = e.at("ls_restarts").get<int>();
        s.ls.dt_fine = e.at("ls_dt_fine").get<double>();
        c.open_loop_reps = e.at("open_loop_reps").get<int>();
        if (s.replications < 1 || s.n_test < 1 || s.n_mc < 1 || s.n_eval < 1 || s.bootstrap < 1 || s.curve_reps < 1 ||
            c.open_loop_reps < 1 || s.ls.restarts < 1) {
            throw std::invalid_argument("experiment counts must be >= 1");
        }
        if (s.horizons.empty()) throw std::invalid_argument("experiment.horizons must not be empty");
        for (int h : s.horizons) {
            if (h < 1 || h > s.horizon_steps) throw std::invalid_argument("experiment.horizons must lie in [1, horizon_steps]");
        }

        const json& io = doc.at("io");
        c.data_dir = io.at("data_dir").get<std::string>();
        c.model_path = io.at("model").get<std::string>();
        c.out_dir = io.at("out_dir").get<std::string>();
    } catch (const json::exception& ex) {
        throw std::invalid_argument(fmt::format("config: {}", ex.what()));
    }
    return c;
}

/// Defaults, then the file (if any), then explicit overrides.
inline RunConfig resolve_config(const std::string& path, const json& overrides) {
    json doc = default_config();
    if (!path.empty()) doc = merge_config(std::move(doc), load_json_file(path));
    doc = merge_config(std::move(doc), overrides);
    return parse_config(doc);
}

/// Preset sizes for the experiment section.
inline json scale_overrides(std::string_view scale) {
    if (scale == "desk") return {{"experiment", {{"replications", 10}, {"n_test", 200}}}};
    if (scale == "paper") return {{"experiment", {{"replications", 30}, {"n_test", 1000}}}};
    throw std::invalid_argument(fmt::format("unknown scale '{}' (expected desk or paper)", scale));
}

}  // namespace kgrl
