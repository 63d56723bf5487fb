#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "kgrl/abc_smc.hpp"
#include "kgrl/baseline_ls.hpp"
#include "kgrl/config.hpp"
#include "kgrl/control.hpp"
#include "kgrl/experiments.hpp"
#include "kgrl/ground_truth.hpp"

namespace fs = std::filesystem;
using namespace kgrl;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    unsigned jobs = 1;
    std::string out;
    std::string scale;
};

RunConfig load(const CommonFlags& f, const json& flag_overrides = json::object()) {
    json doc = default_config();
    if (!f.config.empty()) doc = merge_config(std::move(doc), load_json_file(f.config));
    if (!f.scale.empty()) doc = merge_config(std::move(doc), scale_overrides(f.scale));
    if (f.seed) doc["seed"] = *f.seed;
    if (!f.out.empty()) doc["io"]["out_dir"] = f.out;
    return parse_config(merge_config(std::move(doc), flag_overrides));
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << content;
    if (!out) throw std::runtime_error(fmt::format("write failed for '{}'", path.string()));
}

void write_json(const fs::path& path, json doc, const Provenance& prov) {
    doc["provenance"] = prov.to_json();
    write_file(path, doc.dump(2) + "\n");
}

void write_resolved_config(const RunConfig& cfg, const Provenance& prov) {
    write_json(fs::path(cfg.out_dir) / "config.json", json{{"config", cfg.doc}}, prov);
}

std::vector<Trajectory> load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error(fmt::format("data directory '{}' does not exist", dir.string()));
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Trajectory> out;
    for (const auto& p : files) {
        std::ifstream in(p);
        Trajectory tr = read_csv(in);
        tr.inhibitor_true.clear();
        out.push_back(std::move(tr));
    }
    if (out.empty()) throw std::runtime_error(fmt::format("no trajectory CSV files in '{}'", dir.string()));
    return out;
}

int cmd_simulate(const CommonFlags& f) {
    const RunConfig cfg = load(f);
    const Provenance prov = cfg.provenance("simulate");
    const fs::path out(cfg.out_dir);
    json files = json::array();
    for (int i = 0; i < cfg.m; ++i) {
        const Trajectory tr = simulate_ground_truth(cfg.truth, cfg.horizon_hours, InterventionPlan::none(),
                                                    Rng(derive_seed(cfg.seed, fnv1a64("simulate"), static_cast<std::uint64_t>(i))));
        std::ostringstream os;
        write_csv(os, tr, prov.header());
        const std::string name = fmt::format("traj_{:03d}.csv", i);
        write_file(out / name, os.str());
        files.push_back(name);
    }
    write_json(out / "manifest.json", json{{"kind", "dataset"}, {"files", files}, {"m", cfg.m}}, prov);
    write_resolved_config(cfg, prov);
    std::cout << fmt::format("wrote {} trajectories to {}\n", cfg.m, out.string());
    return 0;
}

int cmd_fit(const CommonFlags& f, const std::string& method, const std::string& data) {
    json overrides = json::object();
    if (!data.empty()) overrides["io"]["data_dir"] = data;
    const RunConfig cfg = load(f, overrides);
    const Provenance prov = cfg.provenance("fit-" + method);
    const auto dataset = load_dataset(cfg.data_dir);
    const fs::path out(cfg.out_dir);
    if (method == "abc") {
        ABCConfig abc = cfg.abc;
        abc.jobs = f.jobs;
        const PosteriorEnsemble e = abc_smc(dataset, cfg.prior, abc, derive_seed(cfg.seed, fnv1a64("fit-abc")), cfg.truth.dt_obs,
                                            cfg.truth.theta.t_star);
        json doc = ensemble_to_json(e);
        doc["posterior_mean"] = e.weighted_mean();
        write_json(out / "model.json", doc, prov);
        std::cout << fmt::format("abc: {} generations, final tolerance {:.6g}, posterior mean mu_g1 {:.5f}\n", e.generation,
                                 e.tolerance_history.back(), e.weighted_mean()[0]);
    } else if (method == "ls") {
        LsFitOptions opt = cfg.settings.ls;
        opt.jobs = f.jobs;
        opt.t_star = cfg.truth.theta.t_star;
        opt.dt_obs = cfg.truth.dt_obs;
        const LsFitResult r = ls_fit(dataset, LsBounds::from_prior(cfg.prior), opt, derive_seed(cfg.seed, fnv1a64("fit-ls")));
        json doc = deterministic_to_json(r.theta);
        doc["objective"] = r.objective;
        write_json(out / "model.json", doc, prov);
        std::cout << fmt::format("ls: objective {:.6g}, mu_g1 {:.5f}, mu_g2 {:.5f}\n", r.objective, r.theta.mu1, r.theta.mu2);
    } else {
        throw std::invalid_argument(fmt::format("unknown fit method '{}' (expected abc or ls)", method));
    }
    write_resolved_config(cfg, prov);
    return 0;
}

void write_trace_csv(std::ostream& os, const ControlTrace& tr, const std::string& header) {
    os << "# " << header << '\n' << "step,hour,rho,inhibitor_pred,action,q_none,q_exchange,q_expand\n";
    for (const auto& s : tr.steps) {
        std::string q[3];
        for (std::size_t k = 0; k < s.candidates.size(); ++k) {
            if (!std::isnan(s.q[k])) q[static_cast<int>(s.candidates[k])] = fmt::format("{:.10g}", s.q[k]);
        }
        os << fmt::format("{},{:g},{:.10g},{:.10g},{},{},{},{}\n", s.step, s.hour, s.rho, s.inhibitor, to_string(s.chosen), q[0], q[1], q[2]);
    }
}

void write_ranking_csv(std::ostream& os, const std::vector<ScheduleScore>& ranking, const std::string& header) {
    os << "# " << header << '\n' << "rank,schedule,mean,se\n";
    for (std::size_t k = 0; k < ranking.size(); ++k) {
        os << fmt::format("{},{},{:.10g},{:.10g}\n", k + 1, ranking[k].schedule.label, ranking[k].mean, ranking[k].se);
    }
}

int cmd_plan(const CommonFlags& f, const std::string& model_arg, const std::string& problem_arg, int reps_arg) {
    json overrides = json::object();
    if (!problem_arg.empty()) overrides["problem"]["kind"] = problem_arg;
    if (!model_arg.empty()) overrides["io"]["model"] = model_arg;
    if (reps_arg > 0) overrides["experiment"]["open_loop_reps"] = reps_arg;
    const RunConfig cfg = load(f, overrides);
    const std::string& model_path = cfg.model_path;
    if (model_path.empty()) throw std::invalid_argument("plan needs a model artifact (--model PATH or 'truth')");
    const DecisionProblem& problem = cfg.problem();
    const int reps = cfg.open_loop_reps;
    const Provenance prov = cfg.provenance(fmt::format("plan problem={} model={} reps={}", to_string(problem.kind),
                                                       model_path == "truth" ? "truth" : "artifact", reps));
    PlannerConfig pc = cfg.planner;
    pc.jobs = f.jobs;
    const std::uint64_t plan_seed = derive_seed(cfg.seed, fnv1a64("plan"));
    const std::uint64_t rank_seed = derive_seed(cfg.seed, fnv1a64("rank"));

    std::optional<ControlTrace> trace;
    std::vector<ScheduleScore> ranking;
    std::string model_kind;
    if (model_path == "truth") {
        model_kind = "ground_truth";
        const HybridPlanningModel model(PosteriorEnsemble::point_mass(cfg.truth.theta), problem);
        trace = greedy_control(model, cfg.rho0, pc, plan_seed);
        ranking = enumerate_open_loop(problem, cfg.truth, reps, rank_seed, f.jobs);
    } else {
        const json doc = load_json_file(model_path);
        model_kind = doc.value("kind", std::string{});
        json body = doc;
        body.erase("provenance");
        if (model_kind == "posterior_ensemble") {
            const PosteriorEnsemble e = ensemble_from_json(body);
            const HybridPlanningModel model(e, problem);
            trace = greedy_control(model, cfg.rho0, pc, plan_seed);
            ranking = enumerate_open_loop(problem, e, cfg.rho0, reps, rank_seed, f.jobs);
        } else if (model_kind == "deterministic_theta") {
            body.erase("objective");
            const DeterministicTheta th = deterministic_from_json(body);
            const HybridPlanningModel model(PosteriorEnsemble::point_mass(th.to_model()), problem);
            trace = greedy_control(model, cfg.rho0, pc, plan_seed);
            ranking = enumerate_open_loop(
                problem, [&](std::size_t) { return OdeProcess(th, cfg.rho0, problem.dt, cfg.settings.ls.dt_fine); }, 1);
        } else {
            throw std::invalid_argument(fmt::format("'{}' is not a model artifact (kind '{}')", model_path, model_kind));
        }
    }
    const fs::path out(cfg.out_dir);
    std::ostringstream ts, rs;
    write_trace_csv(ts, *trace, prov.header());
    write_ranking_csv(rs, ranking, prov.header());
    write_file(out / "trace.csv", ts.str());
    write_file(out / "ranking.csv", rs.str());
    json actions = json::array();
    for (const auto& s : trace->steps) actions.push_back(std::string(to_string(s.chosen)));
    write_json(out / "summary.json",
               json{{"problem", std::string(to_string(problem.kind))},
                    {"model", model_kind},
                    {"greedy_actions", actions},
                    {"greedy_schedule", schedule_label(problem, trace->plan(problem.expansion_factor))},
                    {"greedy_predicted_reward", trace->predicted_reward},
                    {"best_schedule", ranking.front().schedule.label},
                    {"best_mean_reward", ranking.front().mean},
                    {"best_se", ranking.front().se},
                    {"unit_scale", problem.unit_scale}},
               prov);
    write_resolved_config(cfg, prov);
    std::cout << fmt::format("greedy: {} (predicted {:.6g}); open-loop best: {} ({:.6g} +- {:.3g})\n",
                             schedule_label(problem, trace->plan(problem.expansion_factor)), trace->predicted_reward,
                             ranking.front().schedule.label, ranking.front().mean, ranking.front().se);
    return 0;
}

int cmd_experiment(const CommonFlags& f) {
    const RunConfig cfg = load(f);
    const Provenance prov = cfg.provenance("experiment " + cfg.experiment_kind);
    const fs::path out(cfg.out_dir);
    ExperimentSettings s = cfg.settings;
    s.jobs = f.jobs;
    const std::string& kind = cfg.experiment_kind;
    json summary = json::object();

    if (kind == "all" || kind == "prediction" || kind == "decision") {
        const bool pred = kind != "decision";
        const bool dec = kind != "prediction";
        const ExperimentResult res = run_experiments(cfg.scenarios, s, pred, dec, cfg.seed);
        if (pred) {
            std::ostringstream os;
            res.prediction.write_csv(os, prov.header());
            write_file(out / "prediction.csv", os.str());
            write_json(out / "prediction.json", json{{"rows", res.prediction.to_json()}}, prov);
        }
        if (dec) {
            std::ostringstream os;
            res.decision.write_csv(os, prov.header());
            write_file(out / "decision.csv", os.str());
            write_json(out / "decision.json", json{{"rows", res.decision.to_json()}}, prov);
        }
        summary["scenarios"] = cfg.scenarios.size();
        summary["replications"] = s.replications;
    }
    if (kind == "all" || kind == "curves") {
        const DecisionProblem& p = s.exchange;
        const std::uint64_t seed = derive_seed(cfg.seed, fnv1a64("curves"));
        std::vector<CurvePoint> pts;
        const auto truth = enumerate_open_loop(p, cfg.truth, s.curve_reps, seed, f.jobs, true);
        for (auto& pt : exchange_curve(truth, p, "truth", s.bootstrap, derive_seed(seed, 1))) pts.push_back(pt);
        const Scenario sc{"low", b2b_sigma("low"), cfg.truth.sigma_n, cfg.m};
        const ReplicationFits fits = fit_replication(sc, 0, s, seed);
        const auto hyb = enumerate_open_loop(p, fits.ensemble, cfg.rho0, s.curve_reps, derive_seed(seed, 2), f.jobs, true);
        for (auto& pt : exchange_curve(hyb, p, "hybrid", s.bootstrap, derive_seed(seed, 3))) pts.push_back(pt);
        const auto ode = enumerate_open_loop(
            p, [&](std::size_t) { return OdeProcess(fits.ls.theta, cfg.rho0, p.dt, s.ls.dt_fine); }, 1);
        for (auto& pt : exchange_curve(ode, p, "ls", s.bootstrap, derive_seed(seed, 4))) pts.push_back(pt);
        std::ostringstream os;
        write_curve_csv(os, pts, prov.header());
        write_file(out / "curves.csv", os.str());
        summary["truth_best_exchange"] = truth.front().schedule.label;
    }
    if (kind == "calibrate") {
        const Calibration c = calibrate_unit_scale(s.expansion, cfg.truth, cfg.open_loop_reps, derive_seed(cfg.seed, fnv1a64("calibrate")),
                                                   8593.85, f.jobs);
        summary["expansion_unit_scale"] = c.unit_scale;
        summary["best_schedule"] = c.best_schedule;
        summary["target_profit"] = c.best_profit;
        std::cout << fmt::format("expansion unit_scale {:.10g} (best schedule {})\n", c.unit_scale, c.best_schedule);
    }
    write_json(out / "summary.json", summary, prov);
    write_resolved_config(cfg, prov);
    std::cout << fmt::format("experiment '{}' written to {}\n", kind, out.string());
    return 0;
}

/// Re-derives the config hash from out/config.json and checks every output against it.
int cmd_verify(const CommonFlags& f) {
    const fs::path dir(f.out.empty() ? "out" : f.out);
    const json stored = load_json_file((dir / "config.json").string());
    const std::string expected = hash_hex(config_hash(parse_config(stored.at("config")).doc));
    int failures = 0;
    auto fail = [&](const fs::path& p, const std::string& why) {
        ++failures;
        std::cout << fmt::format("FAIL {}: {}\n", p.string(), why);
    };
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        if (p.extension() == ".csv") {
            std::ifstream in(p);
            std::string first;
            std::getline(in, first);
            if (first.find("config_hash=" + expected) == std::string::npos) fail(p, "header does not carry the config hash");
        } else if (p.extension() == ".json") {
            const json doc = load_json_file(p.string());
            if (!doc.contains("provenance") || doc["provenance"].value("config_hash", std::string{}) != expected) {
                fail(p, "provenance hash mismatch");
            }
        }
    }
    if (failures == 0) std::cout << fmt::format("ok: {} files carry config hash {}\n", files.size(), expected);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid-model Bayesian planning for cell-culture processes"};
    app.require_subcommand(1);
    CommonFlags flags;
    std::uint64_t seed_value = 0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config, "JSON run configuration");
        sub->add_option("--seed", seed_value, "root seed (overrides the config)");
        sub->add_option("--jobs", flags.jobs, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--out", flags.out, "output directory (overrides io.out_dir)");
        sub->add_option("--scale", flags.scale, "experiment size preset")->check(CLI::IsMember({"desk", "paper"}));
    };

    auto* simulate = app.add_subcommand("simulate", "generate ground-truth trajectories");
    add_common(simulate);

    auto* fit = app.add_subcommand("fit", "fit the hybrid posterior (abc) or the deterministic baseline (ls)");
    add_common(fit);
    std::string method = "abc", data;
    fit->add_option("--method", method, "abc or ls")->check(CLI::IsMember({"abc", "ls"}));
    fit->add_option("--data", data, "directory of trajectory CSV files (overrides io.data_dir)");

    auto* plan = app.add_subcommand("plan", "greedy control trace and open-loop schedule ranking");
    add_common(plan);
    std::string model, problem;
    int reps = 0;
    plan->add_option("--model", model, "model artifact, or 'truth' for the ground-truth process");
    plan->add_option("--problem", problem, "exchange or expansion")->check(CLI::IsMember({"exchange", "expansion"}));
    plan->add_option("--reps", reps, "open-loop replications (overrides experiment.open_loop_reps)");

    auto* experiment = app.add_subcommand("experiment", "run the scenario experiments");
    add_common(experiment);

    auto* verify = app.add_subcommand("verify", "check output files against the stored config hash");
    add_common(verify);

    CLI11_PARSE(app, argc, argv);
    try {
        for (auto* sub : app.get_subcommands()) {
            if (sub->count("--seed") > 0) flags.seed = seed_value;
        }
        if (simulate->parsed()) return cmd_simulate(flags);
        if (fit->parsed()) return cmd_fit(flags, method, data);
        if (plan->parsed()) return cmd_plan(flags, model, problem, reps);
        if (experiment->parsed()) return cmd_experiment(flags);
        if (verify->parsed()) return cmd_verify(flags);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
