#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kgrl/config.hpp"

using namespace kgrl;
namespace fs = std::filesystem;

TEST(Config, DefaultsParse) {
    const RunConfig c = parse_config(default_config());
    EXPECT_EQ(c.m, 20);
    EXPECT_EQ(c.abc.n_particles, 200);
    EXPECT_EQ(c.abc.kernel, KernelShape::Full);
    EXPECT_EQ(c.planner.B, 3);
    EXPECT_EQ(c.kind, ProblemKind::Expansion);
    EXPECT_EQ(c.expansion.unit_scale, kDefaultExpansionUnitScale);
    EXPECT_EQ(c.exchange.unit_scale, 1000.0);
    EXPECT_EQ(c.scenarios.size(), 12u);
    EXPECT_EQ(c.truth.theta.phases[0].mu_g, 0.057);
}

TEST(Config, MergeRejectsUnknownKeysAndWrongTypes) {
    const json base = default_config();
    EXPECT_THROW(merge_config(base, {{"sedd", 1}}), std::invalid_argument);
    EXPECT_THROW(merge_config(base, {{"abc", {{"particles", 10}}}}), std::invalid_argument);
    EXPECT_THROW(merge_config(base, {{"abc", {{"n_particles", "ten"}}}}), std::invalid_argument);
    EXPECT_THROW(merge_config(base, {{"abc", {{"n_particles", 10.5}}}}), std::invalid_argument);
    EXPECT_THROW(merge_config(base, {{"abc", 3}}), std::invalid_argument);
    const json ok = merge_config(base, {{"abc", {{"kernel_scale", 3}}}});
    EXPECT_EQ(ok["abc"]["kernel_scale"].get<double>(), 3.0);
    EXPECT_EQ(ok["abc"]["n_particles"], 200);
}

TEST(Config, KernelOptionAndValidation) {
    const json diag = merge_config(default_config(), {{"abc", {{"kernel", "diagonal"}}}});
    EXPECT_EQ(parse_config(diag).abc.kernel, KernelShape::Diagonal);
    EXPECT_THROW(parse_config(merge_config(default_config(), {{"abc", {{"kernel", "banded"}}}})), std::invalid_argument);
    EXPECT_THROW(parse_config(merge_config(default_config(), {{"problem", {{"horizon_steps", 9}}}})), std::invalid_argument);
    EXPECT_THROW(parse_config(merge_config(default_config(), {{"experiment", {{"kind", "everything"}}}})), std::invalid_argument);
    EXPECT_THROW(parse_config(merge_config(default_config(), {{"experiment", {{"horizons", {0}}}}})), std::invalid_argument);
}

TEST(Config, ScaleOverrides) {
    const RunConfig d = parse_config(merge_config(default_config(), scale_overrides("desk")));
    EXPECT_EQ(d.settings.replications, 10);
    const RunConfig p = parse_config(merge_config(default_config(), scale_overrides("paper")));
    EXPECT_EQ(p.settings.replications, 30);
    EXPECT_EQ(p.settings.n_test, 1000);
    EXPECT_THROW(scale_overrides("huge"), std::invalid_argument);
}

TEST(Config, HashStableAndSensitive) {
    const json a = default_config();
    EXPECT_EQ(config_hash(a), config_hash(default_config()));
    EXPECT_NE(config_hash(a), config_hash(merge_config(a, {{"seed", 7}})));
    EXPECT_EQ(hash_hex(0xabcULL), "0000000000000abc");
    const RunConfig c = parse_config(a);
    const Provenance prov = c.provenance("simulate");
    EXPECT_EQ(prov.header(), fmt::format("kgrl config_hash={} seed={} command=simulate", hash_hex(c.hash()), c.seed));
    EXPECT_EQ(prov.to_json()["seed"], c.seed);
}

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run(const std::string& args, const fs::path& cwd = fs::temp_directory_path()) {
    return std::system(fmt::format("cd {} && {} {} > /dev/null 2>&1", cwd.string(), KGRL_CLI_PATH, args).c_str());
}

}  // namespace

TEST(Cli, SimulateFitVerifyRoundTrip) {
    const fs::path dir = fs::temp_directory_path() / "kgrl_cli_smoke";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path cfg = dir / "cfg.json";
    std::ofstream(cfg) << R"({"ground_truth": {"m": 3}, "experiment": {"ls_restarts": 2}})";
    for (const char* sub : {"a", "b"}) {
        fs::create_directories(dir / sub);
        ASSERT_EQ(run(fmt::format("simulate --config {} --seed 5 --out data", cfg.string()), dir / sub), 0);
    }
    EXPECT_EQ(slurp(dir / "a" / "data" / "traj_002.csv"), slurp(dir / "b" / "data" / "traj_002.csv"));
    EXPECT_EQ(slurp(dir / "a" / "data" / "config.json"), slurp(dir / "b" / "data" / "config.json"));
    EXPECT_TRUE(fs::exists(dir / "a" / "data" / "manifest.json"));

    ASSERT_EQ(run(fmt::format("fit --method ls --config {} --seed 5 --data {} --out {}", cfg.string(), (dir / "a" / "data").string(),
                              (dir / "fit").string())),
              0);
    EXPECT_TRUE(fs::exists(dir / "fit" / "model.json"));
    EXPECT_EQ(run(fmt::format("verify --out {}", (dir / "fit").string())), 0);

    std::ofstream(dir / "fit" / "model.json", std::ios::app) << " ";
    std::ofstream(dir / "fit" / "stray.csv") << "# kgrl config_hash=0000000000000000\n";
    EXPECT_NE(run(fmt::format("verify --out {}", (dir / "fit").string())), 0);
    EXPECT_NE(run("simulate --scale huge"), 0);
    fs::remove_all(dir);
}
