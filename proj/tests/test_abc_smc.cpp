#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kgrl/abc_smc.hpp"
#include "kgrl/experiments.hpp"

using namespace kgrl;

namespace {

double normal_pdf(double x, double m, double var) {
    return std::exp(-0.5 * (x - m) * (x - m) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

// y ~ N(theta, 1), theta ~ N(0, prior_var).
struct ToySimulator {
    double y = 3.0;
    int L = 1;
    void simulate_distances(const std::vector<double>& theta, Rng& rng, std::vector<double>& out) const {
        out.clear();
        for (int j = 0; j < L; ++j) out.push_back(std::abs(y - (theta[0] + rng.normal())));
    }
};

struct GaussianPrior {
    double var = 4.0;
    std::vector<double> sample(Rng& rng) const { return {std::sqrt(var) * rng.normal()}; }
    double density(const std::vector<double>& x) const { return normal_pdf(x[0], 0.0, var); }
    bool contains(const std::vector<double>&) const { return true; }
    bool contains_coordinate(std::size_t, double) const { return true; }
};

ABCConfig toy_config() {
    ABCConfig c;
    c.replications = 1;
    return c;
}

}  // namespace

TEST(Distance, EuclideanOnSeries) {
    const std::vector<double> a{0.0, 0.0}, b{3.0, 4.0};
    EXPECT_DOUBLE_EQ(trajectory_distance(a, b), 5.0);
    EXPECT_DOUBLE_EQ(trajectory_distance(a, a), 0.0);
    std::vector<double> x(11), y(11);
    double ss = 0.0;
    for (int i = 0; i < 11; ++i) {
        x[i] = 3.0 + 0.4 * i;
        y[i] = 3.1 + 0.37 * i + 0.01 * i * i;
        ss += (x[i] - y[i]) * (x[i] - y[i]);
    }
    EXPECT_NEAR(trajectory_distance(x, y), std::sqrt(ss), 1e-14);
    EXPECT_DOUBLE_EQ(trajectory_distance(x, y), trajectory_distance(y, x));
    EXPECT_THROW(trajectory_distance(a, x), std::invalid_argument);
}

TEST(MeanDistance, ZeroForNoiselessReproduction) {
    const ModelTheta th = ModelTheta::reference(0.0);
    std::vector<Trajectory> ds;
    for (double r0 : {2.8, 3.0, 3.2}) {
        Rng rng(1);
        ds.push_back(simulate_hybrid_trajectory(th, r0, 10, 3.0, InterventionPlan::none(), rng));
    }
    Rng rng(2);
    EXPECT_NEAR(mean_distance(th, ds, 5, rng), 0.0, 1e-12);
}

TEST(MeanDistance, SingleReplicateIsOneDistance) {
    ModelTheta th = ModelTheta::reference(0.01);
    th.phases[0].v_rho = th.phases[1].v_rho = 0.05;
    const auto ds = generate_dataset(GroundTruthConfig{}, 1, 30.0, 9);
    HybridAbcSimulator sim(ds, 1, 3.0);
    Rng r1(4), r2(4);
    std::vector<double> d;
    sim.simulate_distances(th.to_vector(), r1, d);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_DOUBLE_EQ(mean_distance(th.to_vector(), sim, r2), d[0]);
}

TEST(MeanDistance, TruthBeatsPriorBoundary) {
    ModelTheta corner = ModelTheta::from_vector(BoxPrior::hybrid_default().upper());
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto ds = generate_dataset(GroundTruthConfig{}, 20, 30.0, derive_seed(31, seed));
        Rng a(seed), b(seed);
        wins += mean_distance(ModelTheta::reference(0.008), ds, 20, a) < mean_distance(corner, ds, 20, b) ? 1 : 0;
    }
    EXPECT_GE(wins, 19);
}

TEST(Kernel, DiagonalDensityMatchesNormal) {
    const GaussianKernel k = GaussianKernel::diagonal({0.5, 2.0});
    const double expect = std::log(normal_pdf(0.3, 0.0, 0.5) * normal_pdf(-1.0, 1.0, 2.0));
    EXPECT_NEAR(k.log_density({0.3, -1.0}, {0.0, 1.0}), expect, 1e-12);
}

TEST(Kernel, FullDensityMatchesBivariateFormula) {
    const double s1 = 0.4, s2 = 1.5, r = 0.7;
    const std::vector<double> cov{s1 * s1, r * s1 * s2, r * s1 * s2, s2 * s2};
    const GaussianKernel k = GaussianKernel::full(cov, 2);
    ASSERT_EQ(k.shape, KernelShape::Full);
    const double x = 0.2, y = -0.9;
    const double zx = x / s1, zy = y / s2;
    const double q = (zx * zx - 2 * r * zx * zy + zy * zy) / (1 - r * r);
    const double expect = -std::log(2 * std::numbers::pi * s1 * s2 * std::sqrt(1 - r * r)) - 0.5 * q;
    EXPECT_NEAR(k.log_density({x, y}, {0.0, 0.0}), expect, 1e-12);
}

TEST(Kernel, SingularCovarianceFallsBackToDiagonal) {
    const std::vector<double> cov{1.0, 1.0, 1.0, 1.0};
    EXPECT_EQ(GaussianKernel::full(cov, 2).shape, KernelShape::Diagonal);
}

TEST(Kernel, AdaptUsesTwiceWeightedVariance) {
    std::vector<Particle> ps{{{0.0, 0.0}, 1, 0}, {{1.0, 2.0}, 1, 0}, {{2.0, 1.0}, 1, 0}};
    const std::vector<double> w{0.5, 0.25, 0.25};
    // Weighted means 0.75, 0.75; weighted variances 0.6875, 0.6875; covariance 0.4375.
    const GaussianKernel d = adapt_kernel(ps, w, 2.0, KernelShape::Diagonal);
    EXPECT_NEAR(d.variance[0], 2 * 0.6875, 1e-12);
    EXPECT_NEAR(d.variance[1], 2 * 0.6875, 1e-12);
    const GaussianKernel f = adapt_kernel(ps, w, 2.0, KernelShape::Full);
    const double l00 = f.factor[0], l10 = f.factor[2], l11 = f.factor[3];
    EXPECT_NEAR(l00 * l00, 1.375, 1e-12);
    EXPECT_NEAR(l10 * l00, 2 * 0.4375, 1e-12);
    EXPECT_NEAR(l10 * l10 + l11 * l11, 1.375, 1e-12);
}

TEST(Perturb, ZeroCovarianceIsIdentity) {
    const BoxPrior prior({0.0, 0.0}, {1.0, 1.0});
    Rng rng(1);
    const std::vector<double> th{0.3, 0.6};
    EXPECT_EQ(perturb(th, GaussianKernel::diagonal({0.0, 0.0}), prior, rng), th);
}

TEST(Perturb, SmallKernelAtCenterAcceptsFirstTry) {
    const BoxPrior prior = BoxPrior::hybrid_default();
    std::vector<double> var(14);
    for (std::size_t i = 0; i < 14; ++i) var[i] = std::pow(1e-3 * prior.upper()[i], 2);
    Rng rng(1);
    int attempts = 0;
    const auto x = perturb(prior.center(), GaussianKernel::diagonal(var), prior, rng, &attempts);
    EXPECT_EQ(attempts, 1);
    EXPECT_TRUE(prior.contains(x));
}

TEST(Perturb, EmpiricalCovarianceMatchesKernel) {
    const BoxPrior wide({-100.0, -100.0}, {100.0, 100.0});
    const std::vector<double> cov{0.04, 0.018, 0.018, 0.09};
    for (const GaussianKernel& k : {GaussianKernel::diagonal({0.04, 0.09}), GaussianKernel::full(cov, 2)}) {
        Rng rng(5);
        const int n = 10000;
        double s0 = 0, s1 = 0, s00 = 0, s11 = 0, s01 = 0;
        for (int i = 0; i < n; ++i) {
            const auto x = perturb({1.0, 2.0}, k, wide, rng);
            s0 += x[0] - 1.0;
            s1 += x[1] - 2.0;
            s00 += (x[0] - 1.0) * (x[0] - 1.0);
            s11 += (x[1] - 2.0) * (x[1] - 2.0);
            s01 += (x[0] - 1.0) * (x[1] - 2.0);
        }
        EXPECT_NEAR(s00 / n, 0.04, 0.004);
        EXPECT_NEAR(s11 / n, 0.09, 0.009);
        const double c = k.shape == KernelShape::Full ? 0.018 : 0.0;
        EXPECT_NEAR(s01 / n, c, 0.1 * 0.06);
    }
}

TEST(Perturb, StaysInsideSupportAndGivesUp) {
    const BoxPrior prior({0.0}, {1.0});
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const auto x = perturb({0.01}, GaussianKernel::diagonal({0.25}), prior, rng);
        EXPECT_TRUE(prior.contains(x));
    }
    const BoxPrior narrow({0.0}, {1e-12});
    EXPECT_THROW(perturb({0.0}, GaussianKernel::diagonal({100.0}), narrow, rng), std::runtime_error);
    EXPECT_THROW(perturb({0.0}, GaussianKernel::full({100.0}, 1), narrow, rng), std::runtime_error);
}

TEST(ImportanceWeight, ZeroHitsGiveZero) {
    std::vector<Particle> prev{{{0.0}, 1, 0}};
    EXPECT_EQ(importance_weight({0.1}, 0, prev, {1.0}, GaussianKernel::diagonal({1.0}), 0.5), 0.0);
}

TEST(ImportanceWeight, SingleParentCollapses) {
    std::vector<Particle> prev{{{0.0}, 1, 0}};
    const double k = normal_pdf(0.3, 0.0, 0.2);
    EXPECT_NEAR(importance_weight({0.3}, 4, prev, {1.0}, GaussianKernel::diagonal({0.2}), 0.5), 0.5 * 4 / k, 1e-12);
}

TEST(ImportanceWeight, TwoParentHandCase) {
    std::vector<Particle> prev{{{0.0}, 1, 0}, {{1.0}, 3, 0}};
    const double den = 0.25 * normal_pdf(0.4, 0.0, 0.5) + 0.75 * normal_pdf(0.4, 1.0, 0.5);
    EXPECT_NEAR(importance_weight({0.4}, 3, prev, {0.25, 0.75}, GaussianKernel::diagonal({0.5}), 0.2), 0.2 * 3 / den, 1e-12);
}

TEST(ImportanceWeight, DegenerateKernelThrows) {
    std::vector<Particle> prev{{{0.0}, 1, 0}};
    EXPECT_THROW(importance_weight({0.5}, 1, prev, {1.0}, GaussianKernel::diagonal({0.0}), 1.0), std::runtime_error);
}

TEST(ImportanceWeight, LogFormStaysFiniteWhereLinearOverflows) {
    std::vector<Particle> prev{{{0.0}, 1, 0}};
    const GaussianKernel k = GaussianKernel::diagonal({1e-4});
    const double log_k = -0.5 * 0.25 / 1e-4 - 0.5 * std::log(2.0 * std::numbers::pi * 1e-4);
    const double lw = log_importance_weight({0.5}, 2, prev, {1.0}, k, 0.5);
    EXPECT_NEAR(lw, std::log(0.5) + std::log(2.0) - log_k, 1e-9);
    EXPECT_TRUE(std::isinf(importance_weight({0.5}, 2, prev, {1.0}, k, 0.5)));
    EXPECT_EQ(log_importance_weight({0.5}, 0, prev, {1.0}, k, 0.5), -INFINITY);
}

TEST(Survivors, KeepsLowerOrderStatistic) {
    std::vector<Particle> pool;
    for (double d : {5.0, 1.0, 4.0, 2.0, 3.0}) pool.push_back(Particle{{d}, 1.0, d});
    const double delta = detail::select_survivors(pool, 2);
    EXPECT_EQ(delta, 2.0);
    ASSERT_EQ(pool.size(), 2u);
    EXPECT_EQ(pool[0].distance, 1.0);
    EXPECT_EQ(pool[1].distance, 2.0);
}

TEST(AbcConfig, Validation) {
    ABCConfig c;
    EXPECT_EQ(c.kept(), 100);
    c.keep_ratio = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = ABCConfig{};
    c.n_particles = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = ABCConfig{};
    c.replications = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(kernel_shape_from_string("full"), KernelShape::Full);
    EXPECT_THROW(kernel_shape_from_string("banded"), std::invalid_argument);
}

TEST(AbcSmc, GenerationZeroHasUnitWeights) {
    ABCConfig c = toy_config();
    c.max_generations = 1;
    const auto e = abc_smc(ToySimulator{}, GaussianPrior{}, c, 1);
    EXPECT_EQ(e.size(), 100u);
    for (const auto& p : e.particles) EXPECT_EQ(p.weight, 1.0);
    EXPECT_EQ(e.tolerance_history.size(), 1u);
}

TEST(AbcSmc, InvariantsHold) {
    for (KernelShape shape : {KernelShape::Diagonal, KernelShape::Full}) {
        ABCConfig c = toy_config();
        c.kernel = shape;
        const auto e = abc_smc(ToySimulator{}, GaussianPrior{}, c, 2);
        EXPECT_EQ(e.size(), 100u);
        for (std::size_t g = 1; g < e.tolerance_history.size(); ++g) {
            EXPECT_LE(e.tolerance_history[g], e.tolerance_history[g - 1]);
        }
        const double delta = e.tolerance_history.back();
        for (const auto& p : e.particles) {
            EXPECT_LE(p.distance, delta);
            EXPECT_GE(p.weight, 0.0);
            EXPECT_LE(p.weight, 1.0);
        }
        const auto w = e.normalized_weights();
        double total = 0.0;
        for (double x : w) total += x;
        EXPECT_NEAR(total, 1.0, 1e-12);
        EXPECT_LE(e.generation, c.max_generations);
        if (e.generation < c.max_generations) {
            EXPECT_LE(e.acceptance_history.back(), c.min_accept_rate);
        }
    }
}

TEST(AbcSmc, ConjugateToyRecoversPosteriorMean) {
    const double analytic = 4.0 / 5.0 * 3.0;
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        sum += abc_smc(ToySimulator{}, GaussianPrior{}, toy_config(), derive_seed(100, seed)).weighted_mean()[0];
    }
    EXPECT_NEAR(sum / 20.0, analytic, 0.1 * analytic);
}

TEST(AbcSmc, SeedDeterministicAndThreadIndependent) {
    ABCConfig c = toy_config();
    c.replications = 3;
    const auto a = abc_smc(ToySimulator{}, GaussianPrior{}, c, 9);
    c.jobs = 3;
    const auto b = abc_smc(ToySimulator{}, GaussianPrior{}, c, 9);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t n = 0; n < a.size(); ++n) {
        EXPECT_EQ(a.particles[n].theta, b.particles[n].theta);
        EXPECT_EQ(a.particles[n].weight, b.particles[n].weight);
    }
    EXPECT_EQ(a.tolerance_history, b.tolerance_history);
}

TEST(AbcSmc, HybridFitStaysInSupport) {
    const auto ds = generate_dataset(GroundTruthConfig{}, 3, 30.0, 5);
    ABCConfig c;
    c.n_particles = 40;
    c.replications = 3;
    c.max_generations = 6;
    const BoxPrior prior = BoxPrior::hybrid_default();
    const auto e = abc_smc(ds, prior, c, 3);
    EXPECT_EQ(e.size(), 20u);
    for (const auto& p : e.particles) EXPECT_TRUE(prior.contains(p.theta));
    const auto j = ensemble_to_json(e);
    const auto back = ensemble_from_json(j);
    EXPECT_EQ(back.size(), e.size());
    EXPECT_EQ(back.particles.front().theta, e.particles.front().theta);
    EXPECT_EQ(back.tolerance_history, e.tolerance_history);
}
