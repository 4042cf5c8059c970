#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eabcal/error.hpp"
#include "eabcal/newell_params.hpp"

namespace eabcal {

struct TrajectoryPoint {
    double t = 0.0;  // s
    double x = 0.0;  // m
    double v = 0.0;  // m/s
};

// Uniformly sampled longitudinal motion of one vehicle.
struct Trajectory {
    std::string vehicle_id;
    double dt = 0.1;
    std::vector<TrajectoryPoint> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    double t0() const { return points.front().t; }
    double t_end() const { return points.back().t; }
    double span() const { return t_end() - t0(); }

    std::vector<double> positions() const {
        std::vector<double> xs(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) xs[i] = points[i].x;
        return xs;
    }
    std::vector<double> speeds() const {
        std::vector<double> vs(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) vs[i] = points[i].v;
        return vs;
    }
};

enum class VehicleClass { HDV, ACC };
enum class SpeedRegime { Low, MedianHigh };

inline const char* to_string(VehicleClass c) { return c == VehicleClass::HDV ? "HDV" : "ACC"; }
inline const char* to_string(SpeedRegime s) { return s == SpeedRegime::Low ? "low" : "median_high"; }

inline VehicleClass parse_vehicle_class(const std::string& s) {
    if (s == "HDV" || s == "hdv") return VehicleClass::HDV;
    if (s == "ACC" || s == "acc") return VehicleClass::ACC;
    throw InputError("unknown vehicle class '" + s + "'");
}

inline SpeedRegime parse_speed_regime(const std::string& s) {
    if (s == "low") return SpeedRegime::Low;
    if (s == "median_high" || s == "high" || s == "median") return SpeedRegime::MedianHigh;
    throw InputError("unknown speed regime '" + s + "'");
}

struct PairLabel {
    VehicleClass vehicle_class = VehicleClass::ACC;
    std::string car_model = "X";
    std::string engine_mode = "normal";
    SpeedRegime speed_regime = SpeedRegime::MedianHigh;

    // Calibration group: model x engine x speed regime.
    std::string group_key() const {
        return std::string(to_string(vehicle_class)) + "-" + car_model + "-" + engine_mode + "-" +
               to_string(speed_regime);
    }
};

// Leader/follower pairing. Both trajectories share dt and the same time grid.
struct CFPair {
    Trajectory leader;
    Trajectory follower;
    PairLabel label;

    std::string id() const { return leader.vehicle_id + ">" + follower.vehicle_id; }
};

struct LeaderPhases {
    double decel_start = 0.0;
    double decel_end = 0.0;
    double accel_start = 0.0;
    double accel_end = 0.0;
};

// Central differences in the interior, one-sided at the ends.
inline std::vector<double> finite_difference_speeds(std::span<const double> xs, double dt) {
    const std::size_t n = xs.size();
    std::vector<double> v(n, 0.0);
    if (n < 2) return v;
    v.front() = (xs[1] - xs[0]) / dt;
    v.back() = (xs[n - 1] - xs[n - 2]) / dt;
    for (std::size_t i = 1; i + 1 < n; ++i) v[i] = (xs[i + 1] - xs[i - 1]) / (2.0 * dt);
    return v;
}

inline Trajectory make_trajectory(std::string id, double t0, double dt, std::span<const double> xs) {
    Trajectory tr;
    tr.vehicle_id = std::move(id);
    tr.dt = dt;
    const auto vs = finite_difference_speeds(xs, dt);
    tr.points.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        tr.points[i] = {t0 + static_cast<double>(i) * dt, xs[i], std::max(0.0, vs[i])};
    return tr;
}

// Position at an arbitrary time: linear interpolation on the grid, constant
// speed extrapolation (end-point speed) outside the recorded window.
inline double position_at(const Trajectory& tr, double t) {
    const auto& p = tr.points;
    const std::size_t n = p.size();
    if (t <= p.front().t) return p.front().x + p.front().v * (t - p.front().t);
    if (t >= p.back().t) return p.back().x + p.back().v * (t - p.back().t);
    const double u = (t - p.front().t) / tr.dt;
    auto i = static_cast<std::size_t>(u);
    if (i >= n - 1) i = n - 2;
    const double frac = (t - p[i].t) / (p[i + 1].t - p[i].t);
    return p[i].x + frac * (p[i + 1].x - p[i].x);
}

// Checks the structural invariants. Throws on time-axis violations, returns
// soft warnings (kinematic inconsistency) for the caller to report.
inline std::vector<std::string> validate_trajectory(const Trajectory& tr, double kinematic_tol = 0.5) {
    std::vector<std::string> warnings;
    if (tr.points.size() < 2) throw InputError("trajectory " + tr.vehicle_id + " has fewer than 2 points");
    if (!(tr.dt > 0.0)) throw InputError("trajectory " + tr.vehicle_id + " has non-positive dt");
    for (std::size_t i = 1; i < tr.points.size(); ++i) {
        const double step = tr.points[i].t - tr.points[i - 1].t;
        if (!(step > 0.0)) throw InputError("non-monotone time in trajectory " + tr.vehicle_id);
        if (std::abs(step - tr.dt) > 1e-6 * std::max(1.0, tr.dt))
            throw InputError("non-uniform sampling in trajectory " + tr.vehicle_id);
    }
    std::size_t backward = 0;
    for (std::size_t i = 1; i < tr.points.size(); ++i)
        if (tr.points[i].x < tr.points[i - 1].x - 1e-6) ++backward;
    if (backward > 0)
        warnings.push_back("trajectory " + tr.vehicle_id + ": " + std::to_string(backward) + " backward position steps");
    std::size_t bad = 0;
    for (std::size_t i = 0; i + 1 < tr.points.size(); ++i) {
        if (tr.points[i].v < 0.0) throw InputError("negative speed in trajectory " + tr.vehicle_id);
        const double fd = (tr.points[i + 1].x - tr.points[i].x) / tr.dt;
        if (i > 0 && std::abs(tr.points[i].v - fd) > kinematic_tol) ++bad;
    }
    if (bad > 0)
        warnings.push_back("trajectory " + tr.vehicle_id + ": " + std::to_string(bad) +
                           " samples exceed the kinematic tolerance");
    return warnings;
}

inline Trajectory resample(const Trajectory& tr, double dt_new) {
    if (!(dt_new > 0.0)) throw InputError("resample: dt must be positive");
    if (tr.points.size() < 2) throw InputError("resample: need at least 2 points");
    if (dt_new > 0.5 * tr.span()) throw InputError("resample: dt larger than half the trajectory span");
    const double t0 = tr.t0();
    const auto n = static_cast<std::size_t>(std::floor(tr.span() / dt_new + 1e-9)) + 1;
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = position_at(tr, t0 + static_cast<double>(i) * dt_new);
    return make_trajectory(tr.vehicle_id, t0, dt_new, xs);
}

// Space-time translation on the same grid: out.x(t) = tr.x(t - time_shift) - space_shift.
inline Trajectory shift(const Trajectory& tr, double time_shift, double space_shift, std::string id = {}) {
    Trajectory out;
    out.vehicle_id = id.empty() ? tr.vehicle_id + "_shift" : std::move(id);
    out.dt = tr.dt;
    out.points.resize(tr.points.size());
    std::vector<double> xs(tr.points.size());
    for (std::size_t i = 0; i < tr.points.size(); ++i) xs[i] = position_at(tr, tr.points[i].t - time_shift) - space_shift;
    const auto vs = finite_difference_speeds(xs, tr.dt);
    for (std::size_t i = 0; i < tr.points.size(); ++i) out.points[i] = {tr.points[i].t, xs[i], std::max(0.0, vs[i])};
    return out;
}

// Newell follower of `leader`: x(t + tau) = x_leader(t) - delta on the leader grid.
inline Trajectory newell_shift(const Trajectory& leader, const NewellParams& p) {
    p.validate();
    return shift(leader, p.tau, p.delta, leader.vehicle_id + "_newell");
}

namespace detail {

inline double window_mean_speed(const Trajectory& tr, bool from_start, double seconds) {
    const auto n = std::min<std::size_t>(tr.size(), std::max<std::size_t>(1, static_cast<std::size_t>(seconds / tr.dt)));
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += from_start ? tr.points[k].v : tr.points[tr.size() - 1 - k].v;
    return acc / static_cast<double>(n);
}

}  // namespace detail

// Locates the single slow-down/speed-up episode of a leader. Plateau speeds are
// the mean over the first/last second.
inline LeaderPhases detect_phases(const Trajectory& leader, double v_drop_frac = 0.1) {
    if (leader.size() < 3) throw InputError("detect_phases: trajectory too short");
    if (!(v_drop_frac > 0.0 && v_drop_frac < 1.0)) throw InputError("detect_phases: v_drop_frac must be in (0,1)");
    const double v_init = detail::window_mean_speed(leader, true, 1.0);
    const double v_final = detail::window_mean_speed(leader, false, 1.0);
    const auto& p = leader.points;
    const std::size_t n = p.size();

    std::size_t imin = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (p[i].v < p[imin].v) imin = i;
    const double vmin = p[imin].v;

    std::vector<bool> below(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ref = i <= imin ? v_init : v_final;
        below[i] = p[i].v < (1.0 - v_drop_frac) * ref;
    }
    // Count excursions below the threshold; excursions separated by < 1 s merge.
    const auto merge_gap = static_cast<std::size_t>(std::ceil(1.0 / leader.dt));
    std::size_t runs = 0;
    std::optional<std::size_t> last_below;
    for (std::size_t i = 0; i < n; ++i) {
        if (!below[i]) continue;
        if (!last_below || i - *last_below > merge_gap) ++runs;
        last_below = i;
    }
    if (runs == 0) throw InputError("no disturbance: leader speed never drops by the configured fraction");
    if (runs > 1) throw InputError("multiple disturbances in leader trajectory");

    std::size_t start = imin;
    while (start > 0 && below[start - 1]) --start;
    std::size_t end = imin;
    while (end + 1 < n && below[end + 1]) ++end;
    if (end + 1 < n) ++end;  // first sample back above the recovery threshold

    // The bottom of the dip may be a plateau; acceleration starts where it ends.
    const double plateau_tol = 0.02 * std::max(v_init - vmin, 1e-9);
    std::size_t last_min = imin;
    for (std::size_t i = imin; i <= end; ++i)
        if (p[i].v <= vmin + plateau_tol) last_min = i;

    LeaderPhases ph;
    ph.decel_start = p[start].t;
    ph.decel_end = p[imin].t;
    ph.accel_start = p[last_min].t;
    ph.accel_end = p[end].t;
    return ph;
}

// Builds a CFPair on the leader's grid restricted to the common window.
// The follower is re-interpolated when its grid is offset from the leader's.
inline CFPair make_pair(const Trajectory& leader, const Trajectory& follower, PairLabel label,
                        double min_overlap = 30.0) {
    if (std::abs(leader.dt - follower.dt) > 1e-9) throw InputError("pair " + leader.vehicle_id + ">" + follower.vehicle_id + ": dt mismatch");
    const double dt = leader.dt;
    const double lo = std::max(leader.t0(), follower.t0());
    const double hi = std::min(leader.t_end(), follower.t_end());
    if (hi - lo < min_overlap - 1e-9)
        throw InputError("pair " + leader.vehicle_id + ">" + follower.vehicle_id + ": common window shorter than " +
                         std::to_string(min_overlap) + " s");
    const auto first = static_cast<std::size_t>(std::ceil((lo - leader.t0()) / dt - 1e-6));
    const auto last = static_cast<std::size_t>(std::floor((hi - leader.t0()) / dt + 1e-6));

    CFPair pair;
    pair.label = std::move(label);
    pair.leader.vehicle_id = leader.vehicle_id;
    pair.leader.dt = dt;
    pair.follower.vehicle_id = follower.vehicle_id;
    pair.follower.dt = dt;
    std::vector<bool> interpolated;
    for (std::size_t i = first; i <= last && i < leader.size(); ++i) {
        const auto& lp = leader.points[i];
        const double fo = (lp.t - follower.t0()) / dt;
        const auto fi = static_cast<std::size_t>(std::llround(fo));
        const bool aligned = std::abs(fo - static_cast<double>(fi)) < 1e-6 && fi < follower.size();
        TrajectoryPoint fp = aligned ? follower.points[fi] : TrajectoryPoint{lp.t, position_at(follower, lp.t), 0.0};
        fp.t = lp.t;
        pair.leader.points.push_back(lp);
        pair.follower.points.push_back(fp);
        interpolated.push_back(!aligned);
    }
    // Speeds of re-interpolated samples come from the positions.
    const auto fv = finite_difference_speeds(pair.follower.positions(), dt);
    for (std::size_t i = 0; i < fv.size(); ++i)
        if (interpolated[i]) pair.follower.points[i].v = std::max(0.0, fv[i]);

    for (std::size_t i = 0; i < pair.leader.size(); ++i)
        if (pair.follower.points[i].x >= pair.leader.points[i].x)
            throw InputError("overtake: follower " + follower.vehicle_id + " reaches leader " + leader.vehicle_id +
                             " at t=" + std::to_string(pair.leader.points[i].t));
    return pair;
}

}  // namespace eabcal
