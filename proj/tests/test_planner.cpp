#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kgrl/control.hpp"

using namespace kgrl;

namespace {

// Two stages, two actions, terminal reward 2 - x^2.
// Stage 1: NoOp draws x = theta + N(0, 0.5^2) with theta = +-0.5 equally likely;
//          Exchange pays 0.35 and leaves x = 0.
// Stage 2: NoOp keeps x; Exchange moves to 0.5 x + N(0, 0.5^2).
struct ToyMdp {
    struct State {
        int stage = 1;
        double x = 0.0;
    };
    using Param = double;

    std::array<double, 2> thetas{-0.5, 0.5};

    int horizon() const { return 2; }
    int stage(const State& s) const { return s.stage; }
    std::size_t max_actions() const { return 2; }
    std::vector<Action> actions(const State&) const { return {Action::NoOp, Action::Exchange}; }
    double stage_reward(const State& s, Action a) const { return s.stage == 1 && a == Action::Exchange ? -0.35 : 0.0; }
    double terminal_reward(const State& s) const { return 2.0 - s.x * s.x; }
    const double& draw_param(Rng& rng) const { return thetas[rng.uniform() < 0.5 ? 0 : 1]; }
    State step(const State& s, Action a, const double& theta, Rng& rng) const {
        State n{s.stage + 1, s.x};
        if (s.stage == 1) n.x = a == Action::NoOp ? theta + 0.5 * rng.normal() : 0.0;
        else if (a == Action::Exchange) n.x = 0.5 * s.x + 0.5 * rng.normal();
        return n;
    }
};

double phi(double x, double m, double s) {
    return std::exp(-0.5 * (x - m) * (x - m) / (s * s)) / (s * std::sqrt(2.0 * std::numbers::pi));
}

// E[max(2 - X^2, 1.75 - X^2 / 4)] for X ~ 0.5 N(-0.5, 0.25) + 0.5 N(0.5, 0.25), composite Simpson.
double toy_root_value() {
    const double a = -8.0, b = 8.0;
    const int n = 200000;
    const double h = (b - a) / n;
    auto f = [](double x) {
        const double v2 = std::max(2.0 - x * x, 1.75 - 0.25 * x * x);
        return v2 * 0.5 * (phi(x, -0.5, 0.5) + phi(x, 0.5, 0.5));
    };
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

PlannerConfig wide(int B, int J) {
    PlannerConfig c;
    c.B = B;
    c.J = J;
    return c;
}

}  // namespace

static_assert(SparseModel<ToyMdp>);
static_assert(SparseModel<HybridPlanningModel>);

TEST(ToyMdp, OracleValues) {
    EXPECT_NEAR(toy_root_value(), 1.7171589, 1e-6);
}

TEST(SparseSampling, TerminalStageReturnsReward) {
    const ToyMdp m;
    EXPECT_EQ(vfun(m, ToyMdp::State{3, 0.5}, wide(3, 2), 1), 1.75);
    EXPECT_THROW(qfun(m, ToyMdp::State{3, 0.5}, Action::NoOp, wide(3, 2), 1), std::invalid_argument);
}

TEST(SparseSampling, ValueIsMaxOfQUnderSharedSeeds) {
    const ToyMdp m;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const double v = vfun(m, ToyMdp::State{}, wide(4, 5), seed);
        const double q0 = qfun(m, ToyMdp::State{}, Action::NoOp, wide(4, 5), seed);
        const double q1 = qfun(m, ToyMdp::State{}, Action::Exchange, wide(4, 5), seed);
        EXPECT_EQ(v, std::max(q0, q1));
    }
}

TEST(SparseSampling, InteriorRewardZeroMeansQIsChildAverage) {
    const ToyMdp m;
    const ToyMdp::State s{2, 0.8};
    const PlannerConfig c = wide(3, 4);
    const std::uint64_t seed = 17;
    double sum = 0.0;
    for (int b = 0; b < 3; ++b) {
        for (int j = 0; j < 4; ++j) {
            Rng prng(detail::param_seed(seed, b));
            const double& th = m.draw_param(prng);
            Rng trng(detail::transition_seed(seed, b, j));
            sum += m.terminal_reward(m.step(s, Action::Exchange, th, trng));
        }
    }
    EXPECT_NEAR(qfun(m, s, Action::Exchange, c, seed), sum / 12.0, 1e-12);
}

TEST(SparseSampling, ConvergesToAnalyticValue) {
    const ToyMdp m;
    const double v = toy_root_value();
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) sum += vfun(m, ToyMdp::State{}, wide(20, 20), seed);
    EXPECT_NEAR(sum / 10.0, v, 0.02 * v);
}

TEST(SparseSampling, PicksAnalyticRootAction) {
    const ToyMdp m;
    int correct = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const double q0 = qfun(m, ToyMdp::State{}, Action::NoOp, wide(20, 20), derive_seed(5, seed));
        const double q1 = qfun(m, ToyMdp::State{}, Action::Exchange, wide(20, 20), derive_seed(5, seed));
        correct += q0 >= q1 ? 1 : 0;
    }
    EXPECT_GE(correct, 95);
}

TEST(SparseSampling, BudgetIsEnforced) {
    const ToyMdp m;
    PlannerConfig c = wide(100, 100);
    c.node_budget = 1000;
    EXPECT_THROW(vfun(m, ToyMdp::State{}, c, 1), std::invalid_argument);
    EXPECT_DOUBLE_EQ(tree_size(m, 1, wide(2, 3)), 1 + 12 + 144);
    c = wide(3, 2);
    c.full_width_depth = 1;
    EXPECT_DOUBLE_EQ(tree_size(m, 1, c), 1 + 12 + 24);
}

TEST(SparseSampling, ThreadIndependent) {
    const ToyMdp m;
    PlannerConfig c = wide(5, 4);
    const double a = vfun(m, ToyMdp::State{}, c, 3);
    c.jobs = 4;
    EXPECT_EQ(vfun(m, ToyMdp::State{}, c, 3), a);
}

namespace {

// Noiseless backward induction over the exchange problem by brute force.
double exchange_oracle(const ModelTheta& th, double rho0, const DecisionProblem& p, int& best_step) {
    double best = -INFINITY;
    best_step = -1;
    for (int k = 0; k <= p.horizon_steps; ++k) {
        ProcessState s{rho0, 0.0, 1, 0.0};
        for (int t = 1; t <= p.horizon_steps; ++t) {
            if (t == k) s.inhibitor = 0.0;
            s = hybrid_step_mean(s, th, th.at_hour(s.hour).mu_g, p.dt);
        }
        const double M = p.medium_initial + (k > 0 ? p.medium_per_exchange : 0.0);
        const double r = p.unit_scale * M * (s.rho - rho0) / (p.cost_time * p.horizon_hours() + p.cost_medium * M);
        if (r > best) {
            best = r;
            best_step = k;
        }
    }
    return best;
}

}  // namespace

TEST(HybridPlanner, NoiselessMatchesBackwardInduction) {
    const ModelTheta th = ModelTheta::reference(0.0);
    const auto p = DecisionProblem::medium_exchange();
    const HybridPlanningModel model(PosteriorEnsemble::point_mass(th), p);
    int k = 0;
    const double oracle = exchange_oracle(th, 3.0, p, k);
    PlannerConfig c = wide(1, 1);
    EXPECT_NEAR(vfun(model, ControlState::start(3.0), c, 1), oracle, 1e-9 * oracle);
    const ControlTrace tr = greedy_control(model, 3.0, c, 1);
    int chosen = 0;
    for (const auto& st : tr.steps) {
        if (st.chosen == Action::Exchange) chosen = st.step;
    }
    EXPECT_EQ(chosen, k);
    EXPECT_NEAR(tr.predicted_reward, oracle, 1e-9 * oracle);
}

TEST(HybridPlanner, ExpectedStepIsWeightedMean) {
    ModelTheta a = ModelTheta::reference(0.0), b = a;
    b.phases[0].mu_g = 0.1;
    PosteriorEnsemble e;
    e.particles = {{a.to_vector(), 1.0, 0}, {b.to_vector(), 3.0, 0}};
    const HybridPlanningModel model(e, DecisionProblem::medium_exchange());
    const ControlState s = ControlState::start(3.0);
    const ControlState n = model.expected_step(s);
    const double ra = hybrid_step_mean(s.process, a, 0.057, 3.0).rho;
    const double rb = hybrid_step_mean(s.process, b, 0.1, 3.0).rho;
    EXPECT_NEAR(n.process.rho, 0.25 * ra + 0.75 * rb, 1e-12);
    EXPECT_EQ(n.process.step, 2);
}

TEST(GreedyControl, DisabledInterventionsGiveNoOpRollout) {
    DecisionProblem p = DecisionProblem::medium_exchange();
    p.interventions_enabled = false;
    const ModelTheta th = ModelTheta::reference(0.0);
    const HybridPlanningModel model(PosteriorEnsemble::point_mass(th), p);
    const ControlTrace tr = greedy_control(model, 3.0, wide(2, 2), 4);
    ASSERT_EQ(tr.steps.size(), 10u);
    ProcessState s{3.0, 0.0, 1, 0.0};
    for (const auto& st : tr.steps) {
        EXPECT_EQ(st.chosen, Action::NoOp);
        EXPECT_EQ(st.candidates.size(), 1u);
        s = hybrid_step_mean(s, th, th.at_hour(s.hour).mu_g, 3.0);
    }
    EXPECT_NEAR(tr.final_state.process.rho, s.rho, 1e-12);
}

TEST(GreedyControl, TraceInvariantsAgainstGroundTruth) {
    ModelTheta th = ModelTheta::reference(0.008);
    th.phases[0].v_rho = th.phases[1].v_rho = 0.02;
    const HybridPlanningModel model(PosteriorEnsemble::point_mass(th), DecisionProblem::medium_exchange());
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const GroundTruthProcess batch(GroundTruthConfig{}, Rng(seed));
        const ControlTrace tr = greedy_control(model, batch, wide(3, 2), seed);
        ASSERT_EQ(tr.steps.size(), 10u);
        int exchanges = 0;
        for (const auto& st : tr.steps) {
            exchanges += st.chosen == Action::Exchange ? 1 : 0;
            if (st.candidates.size() > 1) {
                const auto best = std::max_element(st.q.begin(), st.q.end());
                EXPECT_EQ(st.chosen, st.candidates[static_cast<std::size_t>(best - st.q.begin())]);
            }
        }
        EXPECT_LE(exchanges, 1);
        const double replay = evaluate_schedule(model.problem(), tr.plan(4.0), batch);
        EXPECT_NEAR(tr.realized_reward, replay, 1e-9 * std::abs(replay));
    }
}

TEST(GreedyControl, ScalingRewardsKeepsChoices) {
    ModelTheta th = ModelTheta::reference(0.008);
    th.phases[0].v_rho = 0.03;
    const auto e = PosteriorEnsemble::point_mass(th);
    const HybridPlanningModel a(e, DecisionProblem::medium_exchange(1000.0));
    const HybridPlanningModel b(e, DecisionProblem::medium_exchange(7.0));
    const auto ta = greedy_control(a, 3.0, wide(2, 2), 9);
    const auto tb = greedy_control(b, 3.0, wide(2, 2), 9);
    for (std::size_t k = 0; k < ta.steps.size(); ++k) EXPECT_EQ(ta.steps[k].chosen, tb.steps[k].chosen);
}
