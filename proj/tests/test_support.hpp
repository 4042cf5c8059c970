#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "eabcal/trajectory.hpp"

namespace testing_support {

// Speed profile cruise -> linear ramp down -> hold -> linear ramp up -> cruise,
// with positions from the exact integral of the profile.
struct Trapezoid {
    double v_hi = 25.0;
    double v_lo = 10.0;
    double t_dec = 15.0;
    double ramp_down = 8.0;
    double hold = 6.0;
    double ramp_up = 10.0;

    double speed(double t) const {
        const double a = t_dec, b = a + ramp_down, c = b + hold, d = c + ramp_up;
        if (t <= a) return v_hi;
        if (t <= b) return v_hi + (v_lo - v_hi) * (t - a) / ramp_down;
        if (t <= c) return v_lo;
        if (t <= d) return v_lo + (v_hi - v_lo) * (t - c) / ramp_up;
        return v_hi;
    }

    double position(double t) const {
        const double a = t_dec, b = a + ramp_down, c = b + hold, d = c + ramp_up;
        auto seg = [](double v0, double v1, double len, double s) { return v0 * s + 0.5 * (v1 - v0) / len * s * s; };
        double x = 0.0;
        if (t <= a) return v_hi * t;
        x += v_hi * a;
        if (t <= b) return x + seg(v_hi, v_lo, ramp_down, t - a);
        x += seg(v_hi, v_lo, ramp_down, ramp_down);
        if (t <= c) return x + v_lo * (t - b);
        x += v_lo * hold;
        if (t <= d) return x + seg(v_lo, v_hi, ramp_up, t - c);
        x += seg(v_lo, v_hi, ramp_up, ramp_up);
        return x + v_hi * (t - d);
    }

    eabcal::Trajectory build(double total, double dt = 0.1, double x0 = 200.0, std::string id = "L") const {
        eabcal::Trajectory tr;
        tr.vehicle_id = std::move(id);
        tr.dt = dt;
        const auto n = static_cast<std::size_t>(std::llround(total / dt)) + 1;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) * dt;
            tr.points.push_back({t, x0 + position(t), speed(t)});
        }
        return tr;
    }
};

inline eabcal::Trajectory constant_speed(double v, double total, double dt = 0.1, double x0 = 0.0, std::string id = "C") {
    eabcal::Trajectory tr;
    tr.vehicle_id = std::move(id);
    tr.dt = dt;
    const auto n = static_cast<std::size_t>(std::llround(total / dt)) + 1;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        tr.points.push_back({t, x0 + v * t, v});
    }
    return tr;
}

}  // namespace testing_support
