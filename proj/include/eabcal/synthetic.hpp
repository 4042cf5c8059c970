#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "eabcal/eab.hpp"
#include "eabcal/error.hpp"
#include "eabcal/rng.hpp"
#include "eabcal/trajectory.hpp"

namespace eabcal {

// Leader speed profile: cruise, linear deceleration, hold, linear acceleration,
// cruise. Positions are the exact integral of the speed.
struct SpeedProfile {
    double v_hi = 20.0;
    double v_lo = 8.0;
    double t_dec = 15.0;
    double decel = 1.5;  // m/s^2
    double hold = 6.0;
    double accel = 1.0;  // m/s^2
    double duration = 75.0;
    double dt = 0.1;
    double x0 = 0.0;

    double ramp_down() const { return (v_hi - v_lo) / decel; }
    double ramp_up() const { return (v_hi - v_lo) / accel; }

    LeaderPhases phases() const {
        const double de = t_dec + ramp_down();
        const double as = de + hold;
        return {t_dec, de, as, as + ramp_up()};
    }

    void validate() const {
        if (!(v_hi > v_lo && v_lo >= 0.0)) throw InputError("speed profile: need v_hi > v_lo >= 0");
        if (!(decel > 0.0 && accel > 0.0 && hold >= 0.0 && t_dec >= 0.0 && dt > 0.0))
            throw InputError("speed profile: invalid timing");
        if (phases().accel_end >= duration) throw InputError("speed profile: disturbance does not fit in the duration");
    }

    double speed(double t) const {
        const auto ph = phases();
        if (t <= ph.decel_start) return v_hi;
        if (t <= ph.decel_end) return v_hi - decel * (t - ph.decel_start);
        if (t <= ph.accel_start) return v_lo;
        if (t <= ph.accel_end) return v_lo + accel * (t - ph.accel_start);
        return v_hi;
    }

    double position(double t) const {
        const auto ph = phases();
        double x = x0 + v_hi * std::min(t, ph.decel_start);
        auto piece = [&](double a, double b, double v0, double acc) {
            if (t <= a) return;
            const double s = std::min(t, b) - a;
            x += v0 * s + 0.5 * acc * s * s;
        };
        piece(ph.decel_start, ph.decel_end, v_hi, -decel);
        piece(ph.decel_end, ph.accel_start, v_lo, 0.0);
        piece(ph.accel_start, ph.accel_end, v_lo, accel);
        piece(ph.accel_end, std::numeric_limits<double>::infinity(), v_hi, 0.0);
        return x;
    }

    Trajectory build(std::string id) const {
        validate();
        Trajectory tr;
        tr.vehicle_id = std::move(id);
        tr.dt = dt;
        const auto n = static_cast<std::size_t>(std::llround(duration / dt)) + 1;
        tr.points.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) * dt;
            tr.points.push_back({t, position(t), speed(t)});
        }
        return tr;
    }
};

inline const std::vector<std::string>& synthetic_profiles() {
    static const std::vector<std::string> names{"concave_acc",      "convex_acc",        "concave_convex_acc",
                                                "convex_concave_acc", "nondecreasing_hdv", "nonincreasing_acc",
                                                "equilibrium",       "mixed_fleet"};
    return names;
}

struct SyntheticOptions {
    std::size_t n_pairs = 8;
    double noise_sd = 0.0;       // m, added to follower positions
    double eta_jitter_sd = 0.0;  // smooth random deviation of eta from the plant
    NewellParams acc_params{0.9, 6.0};
    NewellParams hdv_params{1.2, 5.0};
    bool randomize_leader = true;
    bool shared_theta = false;  // every pair reuses the first pair's plant
};

struct PlantedPair {
    CFPair pair;
    EABParams theta;
    NewellParams params;
    std::string pattern;
    LeaderPhases phases;
    SpeedProfile profile;
};

namespace synthetic_detail {

inline double uni(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Segment slope that moves eta by `delta` in `seconds`.
inline double slope(double delta, double seconds) { return delta == 0.0 ? 0.0 : delta / seconds; }

// Planted parameters for one pattern, timed against the leader phases.
// `kind` is the pattern name without the vehicle-class suffix.
inline EABParams plant(const std::string& kind, const LeaderPhases& ph, Rng& rng) {
    const double e0 = uni(rng, 0.85, 1.15);
    const double dec = ph.decel_end - ph.decel_start;
    EABParams th;
    th.eta0 = th.eta1 = th.eta2 = th.eta3 = e0;
    th.t1 = ph.decel_start + uni(rng, -1.0, 1.0);
    if (kind == "equilibrium") return th;

    const double a = uni(rng, 0.25, 0.4);
    // Rise or dip over the first part of the deceleration, restore afterwards.
    const double first = dec * uni(rng, 0.4, 0.6);
    const double restore = uni(rng, 8.0, 12.0);
    if (kind == "concave" || kind == "convex") {
        const double s = kind == "concave" ? 1.0 : -1.0;
        th.eta1 = e0 + s * a;
        th.eta2 = th.eta3 = e0;  // full restoration
        th.eps0 = slope(th.eta1 - th.eta0, first);
        th.eps1 = slope(th.eta2 - th.eta1, restore);
    } else if (kind == "concave_convex" || kind == "convex_concave") {
        const double s = kind == "concave_convex" ? 1.0 : -1.0;
        const double b = uni(rng, 0.2, 0.3);
        th.eta1 = e0 + s * a;
        th.eta2 = e0 - s * b;
        th.eta3 = e0 + s * uni(rng, -0.03, 0.03);
        th.eps0 = slope(th.eta1 - th.eta0, first);
        th.eps1 = slope(th.eta2 - th.eta1, uni(rng, 10.0, 14.0));
        th.eps2 = slope(th.eta3 - th.eta2, uni(rng, 8.0, 12.0));
    } else if (kind == "nondecreasing" || kind == "nonincreasing") {
        const double s = kind == "nondecreasing" ? 1.0 : -1.0;
        th.eta1 = th.eta2 = th.eta3 = e0 + s * a;
        th.eps0 = slope(th.eta1 - th.eta0, dec * uni(rng, 0.8, 1.6));
    } else {
        throw InputError("unknown synthetic pattern '" + kind + "'");
    }
    return th;
}

inline std::string kind_of(const std::string& profile) {
    const auto cut = profile.rfind('_');
    return profile.substr(0, cut);
}

}  // namespace synthetic_detail

// Leader trapezoids with followers simulated from planted parameters. The
// result depends only on (profile, seed, options).
inline std::vector<PlantedPair> generate_synthetic(const std::string& profile, std::uint64_t seed,
                                                   const SyntheticOptions& opt = {}) {
    const auto& known = synthetic_profiles();
    if (std::find(known.begin(), known.end(), profile) == known.end())
        throw InputError("unknown synthetic profile '" + profile + "'");
    if (opt.n_pairs == 0) throw InputError("synthetic: n_pairs must be positive");
    if (opt.noise_sd < 0.0 || opt.eta_jitter_sd < 0.0) throw InputError("synthetic: noise levels must be nonnegative");

    std::vector<PlantedPair> out;
    for (std::size_t i = 0; i < opt.n_pairs; ++i) {
        auto rng = substream(seed, {i});
        std::string kind;
        VehicleClass vc = VehicleClass::ACC;
        if (profile == "mixed_fleet") {
            static const std::array<std::pair<const char*, VehicleClass>, 4> mix{
                {{"concave", VehicleClass::ACC},
                 {"convex", VehicleClass::ACC},
                 {"nondecreasing", VehicleClass::HDV},
                 {"concave_convex", VehicleClass::HDV}}};
            kind = mix[i % mix.size()].first;
            vc = mix[i % mix.size()].second;
        } else if (profile == "equilibrium") {
            kind = "equilibrium";
        } else {
            kind = synthetic_detail::kind_of(profile);
            vc = profile.ends_with("_hdv") ? VehicleClass::HDV : VehicleClass::ACC;
        }

        PlantedPair pp;
        pp.profile = SpeedProfile{};
        if (opt.randomize_leader) {
            pp.profile.v_hi = synthetic_detail::uni(rng, 18.0, 24.0);
            pp.profile.v_lo = synthetic_detail::uni(rng, 6.0, 10.0);
            pp.profile.decel = synthetic_detail::uni(rng, 1.2, 2.0);
            pp.profile.accel = synthetic_detail::uni(rng, 0.8, 1.2);
            pp.profile.hold = synthetic_detail::uni(rng, 4.0, 8.0);
        }
        pp.profile.x0 = 500.0;
        pp.phases = pp.profile.phases();
        pp.params = vc == VehicleClass::ACC ? opt.acc_params : opt.hdv_params;
        pp.theta = synthetic_detail::plant(kind, pp.phases, rng);
        if (opt.shared_theta && !out.empty()) pp.theta = out.front().theta;
        pp.pattern = kind;

        const std::string tag = std::to_string(i);
        auto leader = pp.profile.build("L" + tag);
        Trajectory follower;
        if (opt.eta_jitter_sd > 0.0) {
            // Four sinusoids with random periods and phases, scaled to the requested SD.
            std::array<double, 4> period{}, phase{};
            for (std::size_t k = 0; k < 4; ++k) {
                period[k] = synthetic_detail::uni(rng, 6.0, 20.0);
                phase[k] = synthetic_detail::uni(rng, 0.0, 2.0 * std::numbers::pi);
            }
            const EtaCurve curve(pp.theta);
            const double amp = opt.eta_jitter_sd / std::sqrt(2.0);
            auto eta = [&](double t) {
                double j = 0.0;
                for (std::size_t k = 0; k < 4; ++k) j += std::sin(2.0 * std::numbers::pi * t / period[k] + phase[k]);
                return std::max(curve(t - leader.t0()) + amp * j, 0.05);
            };
            std::array<double, 4> kinks{};
            for (std::size_t k = 0; k < 4; ++k) kinks[k] = leader.t0() + curve.breakpoints()[k];
            follower = simulate_follower_with(leader, pp.params, eta, curve.max_level() + 4.0 * amp, kinks, "F" + tag);
        } else {
            follower = simulate_follower(leader, pp.params, pp.theta, leader.t0(), "F" + tag);
        }
        if (opt.noise_sd > 0.0) {
            std::normal_distribution<double> noise(0.0, opt.noise_sd);
            auto xs = follower.positions();
            for (auto& x : xs) x += noise(rng);
            follower = make_trajectory(follower.vehicle_id, follower.t0(), follower.dt, xs);
        }
        PairLabel label{vc, "synthetic", "normal", pp.profile.v_hi < 15.0 ? SpeedRegime::Low : SpeedRegime::MedianHigh};
        pp.pair = make_pair(leader, follower, label);
        out.push_back(std::move(pp));
    }
    return out;
}

}  // namespace eabcal
