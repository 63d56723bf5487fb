#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "kgrl/kinetics.hpp"
#include "kgrl/trajectory.hpp"

namespace kgrl {

enum class ProblemKind { MediumExchange, Expansion };

inline std::string_view to_string(ProblemKind k) { return k == ProblemKind::MediumExchange ? "exchange" : "expansion"; }

inline ProblemKind problem_kind_from_string(std::string_view s) {
    if (s == "exchange" || s == "medium_exchange") return ProblemKind::MediumExchange;
    if (s == "expansion") return ProblemKind::Expansion;
    throw std::invalid_argument(fmt::format("unknown problem kind '{}'", s));
}

/// Expansion unit scale reproducing the reference harvest profit on the low-noise ground truth.
inline constexpr double kDefaultExpansionUnitScale = 5.55087e8;

/**
 * Finite-horizon harvest problem. Decisions are taken at steps 1..H (hours
 * 0 .. (H-1) dt), the batch is harvested at step H+1 and only the harvest
 * earns a reward.
 *
 * Medium volume: the exchange problem starts with medium_initial litres and
 * adds medium_per_exchange per exchange. The expansion problem starts from
 * medium_initial litres and each expansion tops the vessel up to n times its
 * volume, so after xi expansions M = medium_initial * n^xi.
 */
struct DecisionProblem {
    ProblemKind kind = ProblemKind::MediumExchange;
    int horizon_steps = 10;
    double dt = 3.0;
    double cost_time = 150.0;    ///< $/hr
    double cost_medium = 10.0;   ///< $/L
    double price = 2e-6;         ///< $/cell
    double expansion_factor = 4.0;
    double medium_initial = 100.0;
    double medium_per_exchange = 100.0;
    int max_exchanges = 1;
    int max_expansions = 9;
    double first_expansion_hour = 3.0;
    double unit_scale = 1000.0;
    bool interventions_enabled = true;

    static DecisionProblem medium_exchange(double unit_scale = 1000.0) {
        DecisionProblem p;
        p.kind = ProblemKind::MediumExchange;
        p.medium_initial = 100.0;
        p.unit_scale = unit_scale;
        return p;
    }

    static DecisionProblem expansion(double unit_scale = kDefaultExpansionUnitScale) {
        DecisionProblem p;
        p.kind = ProblemKind::Expansion;
        p.medium_initial = 1.0;
        p.unit_scale = unit_scale;
        return p;
    }

    double horizon_hours() const { return horizon_steps * dt; }
    Action intervention() const { return kind == ProblemKind::MediumExchange ? Action::Exchange : Action::Expand; }

    void validate() const {
        if (horizon_steps < 1) throw std::invalid_argument("DecisionProblem: horizon_steps must be >= 1");
        if (!(dt > 0.0)) throw std::invalid_argument("DecisionProblem: dt must be positive");
        if (!(expansion_factor > 1.0)) throw std::invalid_argument("DecisionProblem: expansion_factor must exceed 1");
        if (cost_time < 0.0 || cost_medium < 0.0 || price < 0.0) throw std::invalid_argument("DecisionProblem: costs and price must be >= 0");
        if (!(medium_initial > 0.0)) throw std::invalid_argument("DecisionProblem: medium_initial must be positive");
        if (!(unit_scale > 0.0)) throw std::invalid_argument("DecisionProblem: unit_scale must be positive");
        if (max_exchanges < 0 || max_expansions < 0) throw std::invalid_argument("DecisionProblem: intervention caps must be >= 0");
    }
};

/// Process state plus the bookkeeping needed for feasibility and reward.
struct ControlState {
    ProcessState process;
    double rho_initial = 0.0;
    int exchanges = 0;
    int expansions = 0;

    static ControlState start(double rho0) { return ControlState{ProcessState{rho0, 0.0, 1, 0.0}, rho0, 0, 0}; }
};

inline double operating_cost(double hours, double medium_liters, double cost_time, double cost_medium) {
    return cost_time * hours + cost_medium * medium_liters;
}

/// Cell yield per dollar spent.
inline double exchange_reward(double rho_T, double rho_0, double hours, double medium_liters, double cost_time,
                              double cost_medium, double unit_scale) {
    const double c = operating_cost(hours, medium_liters, cost_time, cost_medium);
    if (!(c > 0.0)) throw std::invalid_argument("exchange_reward: total cost must be positive");
    return unit_scale * medium_liters * (rho_T - rho_0) / c;
}

/// Revenue of the harvested cells minus operating cost.
inline double expansion_profit(double rho_T, int expansions, double hours, double medium_liters, double cost_time,
                               double cost_medium, double price, double n, double unit_scale) {
    return unit_scale * price * rho_T * std::pow(n, expansions) - operating_cost(hours, medium_liters, cost_time, cost_medium);
}

inline double medium_volume(const DecisionProblem& p, const ControlState& s) {
    if (p.kind == ProblemKind::MediumExchange) return p.medium_initial + p.medium_per_exchange * s.exchanges;
    return p.medium_initial * std::pow(p.expansion_factor, s.expansions);
}

inline double terminal_reward(const DecisionProblem& p, const ControlState& s) {
    const double hours = p.horizon_hours();
    const double M = medium_volume(p, s);
    if (p.kind == ProblemKind::MediumExchange) {
        return exchange_reward(s.process.rho, s.rho_initial, hours, M, p.cost_time, p.cost_medium, p.unit_scale);
    }
    return expansion_profit(s.process.rho, s.expansions, hours, M, p.cost_time, p.cost_medium, p.price, p.expansion_factor,
                            p.unit_scale);
}

/// Feasible actions at the state's step, no-op first.
inline std::vector<Action> feasible_actions(const DecisionProblem& p, const ControlState& s) {
    std::vector<Action> out{Action::NoOp};
    const int t = s.process.step;
    if (!p.interventions_enabled || t < 1 || t > p.horizon_steps) return out;
    if (p.kind == ProblemKind::MediumExchange) {
        if (s.exchanges < p.max_exchanges) out.push_back(Action::Exchange);
    } else {
        const double hour = (t - 1) * p.dt;
        if (hour >= p.first_expansion_hour - 1e-9 && s.expansions < p.max_expansions) out.push_back(Action::Expand);
    }
    return out;
}

inline bool is_feasible(const DecisionProblem& p, const ControlState& s, Action a) {
    for (Action f : feasible_actions(p, s)) {
        if (f == a) return true;
    }
    return false;
}

inline ControlState apply_intervention(ControlState s, Action a, const DecisionProblem& p) {
    if (!is_feasible(p, s, a)) {
        throw std::invalid_argument(fmt::format("apply_intervention: action '{}' is not feasible at step {}", to_string(a), s.process.step));
    }
    s.process = apply_action(s.process, a, p.expansion_factor);
    if (a == Action::Exchange) ++s.exchanges;
    if (a == Action::Expand) ++s.expansions;
    return s;
}

/// One open-loop schedule with its position in the enumeration order.
struct Schedule {
    std::size_t index = 0;
    InterventionPlan plan;
    std::string label;
};

inline std::string schedule_label(const DecisionProblem& p, const InterventionPlan& plan) {
    std::string hours;
    for (std::size_t i = 0; i < plan.per_step.size(); ++i) {
        if (plan.per_step[i] == Action::NoOp) continue;
        if (!hours.empty()) hours += '+';
        hours += fmt::format("{:g}", static_cast<double>(i) * p.dt);
    }
    if (hours.empty()) return "never";
    return fmt::format("{}@{}", to_string(p.intervention()), hours);
}

/**
 * Enumeration index of an action sequence: 0 for no intervention. For the
 * exchange problem index k means an exchange at step k. For the expansion
 * problem bit i corresponds to the i-th eligible decision step.
 */
inline std::size_t schedule_index(const DecisionProblem& p, const std::vector<Action>& per_step) {
    if (p.kind == ProblemKind::MediumExchange) {
        for (std::size_t i = 0; i < per_step.size(); ++i) {
            if (per_step[i] == Action::Exchange) return i + 1;
        }
        return 0;
    }
    const auto first = static_cast<std::size_t>(std::llround(p.first_expansion_hour / p.dt));
    std::size_t idx = 0;
    for (std::size_t i = first; i < per_step.size(); ++i) {
        if (per_step[i] == Action::Expand) idx |= std::size_t{1} << (i - first);
    }
    return idx;
}

/// All schedules reachable under the problem's feasibility rules, in index order.
inline std::vector<Schedule> enumerate_schedules(const DecisionProblem& p) {
    p.validate();
    std::vector<Schedule> out;
    const auto H = static_cast<std::size_t>(p.horizon_steps);
    auto push = [&](std::vector<Action> acts) {
        Schedule s;
        s.plan.per_step = std::move(acts);
        s.plan.expansion_factor = p.expansion_factor;
        s.index = schedule_index(p, s.plan.per_step);
        s.label = schedule_label(p, s.plan);
        out.push_back(std::move(s));
    };
    push(std::vector<Action>(H, Action::NoOp));
    if (!p.interventions_enabled) return out;
    if (p.kind == ProblemKind::MediumExchange) {
        if (p.max_exchanges < 1) return out;
        for (std::size_t k = 0; k < H; ++k) {
            std::vector<Action> a(H, Action::NoOp);
            a[k] = Action::Exchange;
            push(std::move(a));
        }
        return out;
    }
    const auto first = static_cast<std::size_t>(std::llround(p.first_expansion_hour / p.dt));
    if (first >= H) return out;
    const std::size_t slots = H - first;
    for (std::size_t mask = 1; mask < (std::size_t{1} << slots); ++mask) {
        if (std::popcount(mask) > p.max_expansions) continue;
        std::vector<Action> a(H, Action::NoOp);
        for (std::size_t b = 0; b < slots; ++b) {
            if (mask & (std::size_t{1} << b)) a[first + b] = Action::Expand;
        }
        push(std::move(a));
    }
    return out;
}

}  // namespace kgrl
