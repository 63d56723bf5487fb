#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "kgrl/kinetics.hpp"

namespace kgrl {

enum class Action : int { NoOp = 0, Exchange = 1, Expand = 2 };

inline std::string_view to_string(Action a) {
    switch (a) {
        case Action::NoOp: return "none";
        case Action::Exchange: return "exchange";
        case Action::Expand: return "expand";
    }
    return "?";
}

inline Action action_from_string(std::string_view s) {
    if (s == "none" || s.empty()) return Action::NoOp;
    if (s == "exchange") return Action::Exchange;
    if (s == "expand") return Action::Expand;
    throw std::invalid_argument(fmt::format("unknown action '{}'", s));
}

/// Instantaneous state map of an intervention. Exchange resets the inhibitor;
/// expansion dilutes density and inhibitor by the vessel scale factor.
inline ProcessState apply_action(ProcessState s, Action a, double expansion_factor) {
    switch (a) {
        case Action::NoOp: break;
        case Action::Exchange: s.inhibitor = 0.0; break;
        case Action::Expand:
            s.rho /= expansion_factor;
            s.inhibitor /= expansion_factor;
            break;
    }
    return s;
}

/// Interventions indexed by decision step (1-based); steps beyond the list are no-ops.
struct InterventionPlan {
    std::vector<Action> per_step;
    double expansion_factor = 4.0;

    Action at(int step) const {
        const auto i = static_cast<std::size_t>(step - 1);
        return step >= 1 && i < per_step.size() ? per_step[i] : Action::NoOp;
    }

    static InterventionPlan none() { return {}; }

    /// Plan with the given action at each listed decision hour.
    static InterventionPlan at_hours(const std::vector<double>& hours, Action a, double dt, double expansion_factor = 4.0) {
        InterventionPlan plan;
        plan.expansion_factor = expansion_factor;
        for (double h : hours) {
            const auto step = static_cast<std::size_t>(h / dt + 0.5) + 1;
            if (plan.per_step.size() < step) plan.per_step.resize(step, Action::NoOp);
            plan.per_step[step - 1] = a;
        }
        return plan;
    }
};

/**
 * Time-stamped densities. Each row holds the state after any intervention
 * taken at that hour. Latent series are filled only by the ground-truth
 * simulator or when explicitly requested.
 */
struct Trajectory {
    std::vector<double> hours;
    std::vector<double> rho_obs;
    std::vector<double> inhibitor_true;  // empty when not exposed
    std::vector<double> rho_true;        // empty when not exposed
    std::vector<Action> interventions;
    std::vector<double> batch_growth_rates;

    std::size_t size() const noexcept { return hours.size(); }
    bool has_inhibitor() const noexcept { return !inhibitor_true.empty(); }

    void validate() const {
        const std::size_t n = hours.size();
        if (rho_obs.size() != n || interventions.size() != n) throw std::invalid_argument("Trajectory: series lengths differ");
        if (!inhibitor_true.empty() && inhibitor_true.size() != n) throw std::invalid_argument("Trajectory: inhibitor series length differs");
        if (!rho_true.empty() && rho_true.size() != n) throw std::invalid_argument("Trajectory: latent density length differs");
        for (std::size_t i = 1; i < n; ++i) {
            if (!(hours[i] > hours[i - 1])) throw std::invalid_argument("Trajectory: hours must be strictly increasing");
        }
    }
};

/// CSV with columns hour,rho_obs[,inhibitor_true],intervention.
inline void write_csv(std::ostream& os, const Trajectory& tr, std::string_view header_comment = {}) {
    if (!header_comment.empty()) os << "# " << header_comment << '\n';
    os << "hour,rho_obs";
    if (tr.has_inhibitor()) os << ",inhibitor_true";
    os << ",intervention\n";
    for (std::size_t i = 0; i < tr.size(); ++i) {
        os << fmt::format("{:.6g},{:.17g}", tr.hours[i], tr.rho_obs[i]);
        if (tr.has_inhibitor()) os << fmt::format(",{:.17g}", tr.inhibitor_true[i]);
        os << ',' << to_string(tr.interventions[i]) << '\n';
    }
}

/// Inverse of write_csv. Comment lines starting with '#' are skipped.
inline Trajectory read_csv(std::istream& is) {
    Trajectory tr;
    std::string line;
    std::vector<std::string> columns;
    while (std::getline(is, line)) {
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        if (columns.empty()) {
            columns = cells;
            if (columns.size() < 3 || columns[0] != "hour" || columns[1] != "rho_obs" || columns.back() != "intervention") {
                throw std::invalid_argument("trajectory CSV: unexpected header '" + line + "'");
            }
            continue;
        }
        if (cells.size() != columns.size()) throw std::invalid_argument("trajectory CSV: ragged row '" + line + "'");
        tr.hours.push_back(std::stod(cells[0]));
        tr.rho_obs.push_back(std::stod(cells[1]));
        if (columns.size() == 4) tr.inhibitor_true.push_back(std::stod(cells[2]));
        tr.interventions.push_back(action_from_string(cells.back()));
    }
    tr.validate();
    return tr;
}

}  // namespace kgrl
