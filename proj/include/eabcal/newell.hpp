#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "eabcal/newell_params.hpp"
#include "eabcal/parallel.hpp"
#include "eabcal/trajectory.hpp"

namespace eabcal {

// sqrt(mean (obs-sim)^2) / sqrt(mean obs^2).
inline double nrmse(std::span<const double> obs, std::span<const double> sim) {
    if (obs.size() != sim.size()) throw InputError("nrmse: length mismatch");
    if (obs.empty()) throw InputError("nrmse: empty series");
    double err = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        err += (obs[i] - sim[i]) * (obs[i] - sim[i]);
        norm += obs[i] * obs[i];
    }
    if (norm == 0.0) throw InputError("nrmse: observed series is identically zero");
    return std::sqrt(err / norm);
}

// Inclusive arithmetic grid lo, lo+step, ..., hi. Values are rounded to 1e-9 so
// that e.g. 1.2 on the grid compares equal to the literal 1.2.
inline std::vector<double> value_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || hi < lo) throw InputError("value_grid: invalid range");
    std::vector<double> out;
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9);
    return out;
}

struct NewellGrid {
    std::vector<double> tau = value_grid(0.5, 2.0, 0.1);
    std::vector<double> delta = value_grid(2.0, 15.0, 1.0);
};

struct NewellFit {
    NewellParams params;
    double objective = 0.0;
    std::string group;
};

// Sum over pairs of NRMSE between the observed follower and the Newell shift
// of its leader.
inline double newell_objective(std::span<const CFPair> pairs, const NewellParams& p) {
    double total = 0.0;
    for (const auto& pair : pairs) {
        const auto sim = newell_shift(pair.leader, p);
        total += nrmse(pair.follower.positions(), sim.positions());
    }
    return total;
}

// Exhaustive grid search; ties go to the smaller tau, then the smaller delta.
inline NewellFit calibrate_newell(std::span<const CFPair> training, const NewellGrid& grid = {}) {
    if (training.empty()) throw InputError("calibrate_newell: empty training set");
    if (grid.tau.empty() || grid.delta.empty()) throw InputError("calibrate_newell: empty grid");
    const std::size_t nd = grid.delta.size();
    std::vector<double> obj(grid.tau.size() * nd);
    parallel_for(obj.size(), [&](std::size_t k) {
        obj[k] = newell_objective(training, {grid.tau[k / nd], grid.delta[k % nd]});
    });
    std::size_t best = 0;
    for (std::size_t k = 1; k < obj.size(); ++k)
        if (obj[k] < obj[best]) best = k;
    NewellFit fit;
    fit.params = {grid.tau[best / nd], grid.delta[best % nd]};
    fit.objective = obj[best];
    fit.group = training.front().label.group_key();
    return fit;
}

}  // namespace eabcal
