#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgrl/kinetics.hpp"
#include "kgrl/random.hpp"

namespace kgrl {

/// Independent uniform ranges; density is the product of the marginal densities.
class BoxPrior {
public:
    BoxPrior() = default;

    BoxPrior(std::vector<double> lower, std::vector<double> upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
        if (lower_.size() != upper_.size() || lower_.empty()) throw std::invalid_argument("BoxPrior: bounds must be non-empty and equal length");
        log_density_ = 0.0;
        for (std::size_t i = 0; i < lower_.size(); ++i) {
            if (!(lower_[i] < upper_[i])) throw std::invalid_argument("BoxPrior: lower must be < upper on every range");
            log_density_ -= std::log(upper_[i] - lower_[i]);
        }
    }

    /// Uniform box over the 14 hybrid-model coefficients used in the case study.
    static BoxPrior hybrid_default() {
        const std::vector<double> hi_phase = {0.2, 0.05, 5.0, 5.0, 0.05, 0.2, 0.2};
        std::vector<double> lo(ModelTheta::dimension, 0.0), hi;
        hi.insert(hi.end(), hi_phase.begin(), hi_phase.end());
        hi.insert(hi.end(), hi_phase.begin(), hi_phase.end());
        return {lo, hi};
    }

    std::size_t dimension() const noexcept { return lower_.size(); }
    const std::vector<double>& lower() const noexcept { return lower_; }
    const std::vector<double>& upper() const noexcept { return upper_; }

    bool contains(const std::vector<double>& x) const {
        if (x.size() != lower_.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!(x[i] >= lower_[i] && x[i] <= upper_[i])) return false;
        }
        return true;
    }

    bool contains_coordinate(std::size_t i, double v) const { return v >= lower_.at(i) && v <= upper_.at(i); }

    double density(const std::vector<double>& x) const { return contains(x) ? std::exp(log_density_) : 0.0; }
    double log_density(const std::vector<double>& x) const { return contains(x) ? log_density_ : -INFINITY; }

    std::vector<double> sample(Rng& rng) const {
        std::vector<double> x(lower_.size());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = lower_[i] + (upper_[i] - lower_[i]) * rng.uniform();
        return x;
    }

    std::vector<double> center() const {
        std::vector<double> c(lower_.size());
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.5 * (lower_[i] + upper_[i]);
        return c;
    }

private:
    std::vector<double> lower_;
    std::vector<double> upper_;
    double log_density_ = 0.0;
};

}  // namespace kgrl
