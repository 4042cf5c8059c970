#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "eabcal/error.hpp"
#include "eabcal/stats.hpp"
#include "eabcal/trajectory.hpp"

namespace eabcal {

// Zone between two characteristic lines of slope w (through leader samples
// zone_dt apart), bounded by the first and the last trajectory. Flow and
// density are in SI units (veh/m, veh/s).
struct EdieZone {
    std::size_t index = 0;
    double t_start = 0.0;  // leader time of the left characteristic
    std::vector<std::array<double, 2>> polygon;  // (t, x) vertices
    std::vector<double> dt_i;  // s
    std::vector<double> dx_i;  // m
    double raw_area = 0.0;     // m s
    double area = 0.0;         // m s, raw * I / (I - 1)
    double k = 0.0;
    double q = 0.0;
};

struct FlowDensity {
    double k = 0.0;
    double q = 0.0;
};

inline FlowDensity edie_measure(const EdieZone& z) {
    if (!(z.area > 0.0)) throw InputError("edie_measure: zone area must be positive");
    double st = 0.0, sx = 0.0;
    for (double v : z.dt_i) st += v;
    for (double v : z.dx_i) sx += v;
    return {st / z.area, sx / z.area};
}

namespace hysteresis_detail {

// Time at which the trajectory meets x = x_a + w (t - t_a). The gap
// x(t) - line(t) increases with t for nonnegative speeds.
inline std::optional<double> crossing(const Trajectory& tr, double t_a, double x_a, double w) {
    auto gap = [&](std::size_t i) { return tr.points[i].x - (x_a + w * (tr.points[i].t - t_a)); };
    const std::size_t n = tr.size();
    if (n < 2 || gap(0) > 0.0 || gap(n - 1) < 0.0) return std::nullopt;
    std::size_t lo = 0, hi = n - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        (gap(mid) < 0.0 ? lo : hi) = mid;
    }
    const double g0 = gap(lo), g1 = gap(hi);
    const double f = g1 == g0 ? 0.0 : -g0 / (g1 - g0);
    return tr.points[lo].t + f * (tr.points[hi].t - tr.points[lo].t);
}

// Polyline vertices of a trajectory between two times, endpoints included.
inline std::vector<std::array<double, 2>> segment(const Trajectory& tr, double a, double b) {
    std::vector<std::array<double, 2>> out{{a, position_at(tr, a)}};
    for (const auto& p : tr.points)
        if (p.t > a && p.t < b) out.push_back({p.t, p.x});
    out.push_back({b, position_at(tr, b)});
    return out;
}

inline double shoelace(const std::vector<std::array<double, 2>>& poly) {
    double acc = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& p = poly[i];
        const auto& r = poly[(i + 1) % poly.size()];
        acc += p[0] * r[1] - r[0] * p[1];
    }
    return 0.5 * std::abs(acc);
}

}  // namespace hysteresis_detail

// Zones along the leader; the longest run of consecutive zones whose
// characteristics meet every trajectory is kept.
inline std::vector<EdieZone> build_zones(std::span<const Trajectory> trajs, double w, double zone_dt) {
    namespace hd = hysteresis_detail;
    if (trajs.size() < 2) throw InputError("build_zones: need at least two trajectories");
    if (!(w < 0.0)) throw InputError("build_zones: wave speed must be negative");
    if (!(zone_dt > 0.0)) throw InputError("build_zones: zone_dt must be positive");
    const auto& lead = trajs.front();
    const auto& last = trajs.back();
    const double I = static_cast<double>(trajs.size());

    std::vector<std::optional<EdieZone>> all;
    const auto n_anchor = static_cast<std::size_t>(std::floor(lead.span() / zone_dt + 1e-9));
    for (std::size_t g = 0; g < n_anchor; ++g) {
        const double ta = lead.t0() + static_cast<double>(g) * zone_dt;
        const double tb = ta + zone_dt;
        const double xa = position_at(lead, ta), xb = position_at(lead, tb);
        EdieZone z;
        z.t_start = ta;
        bool ok = true;
        std::optional<double> enter_last, exit_last;
        for (std::size_t i = 0; i < trajs.size() && ok; ++i) {
            auto enter = i == 0 ? std::optional<double>(ta) : hd::crossing(trajs[i], ta, xa, w);
            auto exit = i == 0 ? std::optional<double>(tb) : hd::crossing(trajs[i], tb, xb, w);
            if (!enter || !exit || !(*exit > *enter)) {
                ok = false;
                break;
            }
            z.dt_i.push_back(*exit - *enter);
            z.dx_i.push_back(position_at(trajs[i], *exit) - position_at(trajs[i], *enter));
            enter_last = enter;
            exit_last = exit;
        }
        if (!ok) {
            all.emplace_back();
            continue;
        }
        z.polygon = hd::segment(lead, ta, tb);
        auto bottom = hd::segment(last, *enter_last, *exit_last);
        z.polygon.insert(z.polygon.end(), bottom.rbegin(), bottom.rend());
        z.raw_area = hd::shoelace(z.polygon);
        z.area = z.raw_area * I / (I - 1.0);
        if (!(z.raw_area > 0.0)) {
            all.emplace_back();
            continue;
        }
        const auto kq = edie_measure(z);
        z.k = kq.k;
        z.q = kq.q;
        all.push_back(std::move(z));
    }

    std::size_t best_start = 0, best_len = 0;
    for (std::size_t i = 0; i < all.size();) {
        if (!all[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < all.size() && all[j]) ++j;
        if (j - i > best_len) {
            best_start = i;
            best_len = j - i;
        }
        i = j;
    }
    if (best_len == 0) throw InputError("build_zones: characteristics do not intersect the boundary trajectories");
    std::vector<EdieZone> out;
    for (std::size_t i = best_start; i < best_start + best_len; ++i) {
        out.push_back(std::move(*all[i]));
        out.back().index = out.size() - 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loops in (veh/km, veh/h).

struct LoopPoint {
    double k = 0.0;
    double q = 0.0;
};

enum class HysteresisPattern { NSL, CWPlus, CWMinus, CW, CCWPlus, CCWMinus, CCW };

inline const char* to_string(HysteresisPattern p) {
    switch (p) {
        case HysteresisPattern::NSL: return "NSL";
        case HysteresisPattern::CWPlus: return "CW+";
        case HysteresisPattern::CWMinus: return "CW-";
        case HysteresisPattern::CW: return "CW";
        case HysteresisPattern::CCWPlus: return "CCW+";
        case HysteresisPattern::CCWMinus: return "CCW-";
        case HysteresisPattern::CCW: return "CCW";
    }
    return "?";
}

inline constexpr std::array<HysteresisPattern, 7> all_hysteresis_patterns{
    HysteresisPattern::NSL,     HysteresisPattern::CWPlus,   HysteresisPattern::CWMinus, HysteresisPattern::CW,
    HysteresisPattern::CCWPlus, HysteresisPattern::CCWMinus, HysteresisPattern::CCW};

struct CrossSeries {
    std::vector<double> cross;    // H_g x H_{g+1}, G - 1 values
    std::vector<double> eq_init;  // H_IE x H_Ig, G values
    std::vector<double> eq_new;   // H_GE x H_Gg, G values
};

struct HysteresisLoop {
    std::vector<LoopPoint> points;
    LoopPoint center;
    LoopPoint sd;
    CrossSeries series;
    HysteresisPattern pattern = HysteresisPattern::NSL;

    std::size_t size() const { return points.size(); }
};

struct HysteresisThresholds {
    double h_t = 15.0;
    double h_t0 = 4770.0;
    double h_t1 = 8460.0;

    static HysteresisThresholds for_regime(SpeedRegime r) {
        return r == SpeedRegime::Low ? HysteresisThresholds{400.0, 21700.0, 36700.0}
                                     : HysteresisThresholds{15.0, 4770.0, 8460.0};
    }
};

inline constexpr double kPerKm = 1000.0;
inline constexpr double kPerHour = 3600.0;

inline std::vector<LoopPoint> smooth_loop(std::span<const LoopPoint> raw) {
    if (raw.size() < 3) throw InputError("smooth_loop: need at least three zones");
    std::vector<double> k, q;
    for (const auto& p : raw) {
        k.push_back(p.k);
        q.push_back(p.q);
    }
    const auto ks = stats::moving_average(k, 1);
    const auto qs = stats::moving_average(q, 1);
    std::vector<LoopPoint> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = {ks[i], qs[i]};
    return out;
}

inline double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

// Cross products about the loop center and relative to the initial and new
// equilibrium lines. w is in m/s; the loop is in veh/km and veh/h.
inline CrossSeries cross_products(std::span<const LoopPoint> pts, double w) {
    if (pts.size() < 3) throw InputError("cross_products: need at least three points");
    if (!(w < 0.0)) throw InputError("cross_products: wave speed must be negative");
    const double w_kmh = w * kPerHour / kPerKm;
    LoopPoint c;
    for (const auto& p : pts) {
        c.k += p.k;
        c.q += p.q;
    }
    c.k /= static_cast<double>(pts.size());
    c.q /= static_cast<double>(pts.size());
    CrossSeries s;
    for (std::size_t g = 0; g + 1 < pts.size(); ++g)
        s.cross.push_back(cross2(pts[g].k - c.k, pts[g].q - c.q, pts[g + 1].k - c.k, pts[g + 1].q - c.q));
    auto relative = [&](const LoopPoint& a) {
        const double ex = -a.q / w_kmh;  // to (k - q/w, 0)
        const double ey = -a.q;
        std::vector<double> out;
        for (const auto& p : pts) out.push_back(cross2(ex, ey, p.k - a.k, p.q - a.q));
        return out;
    };
    s.eq_init = relative(pts.front());
    s.eq_new = relative(pts.back());
    return s;
}

inline HysteresisPattern classify_hysteresis(const CrossSeries& s, const HysteresisThresholds& th) {
    if (s.cross.empty() || s.eq_init.empty() || s.eq_new.empty())
        throw InputError("classify_hysteresis: empty cross-product series");
    const double h_max0 = *std::max_element(s.cross.begin(), s.cross.end(),
                                            [](double a, double b) { return std::abs(a) < std::abs(b); });
    if (std::abs(h_max0) <= th.h_t) return HysteresisPattern::NSL;
    const bool ccw = h_max0 > 0.0;
    const double h_min1 = *std::min_element(s.eq_init.begin(), s.eq_init.end());
    const double h_max2 = *std::max_element(s.eq_new.begin(), s.eq_new.end());
    if (h_min1 < -th.h_t0 && h_max2 > th.h_t1) return ccw ? HysteresisPattern::CCW : HysteresisPattern::CW;
    const double level = *std::max_element(s.eq_init.begin(), s.eq_init.end(),
                                            [](double a, double b) { return std::abs(a) < std::abs(b); });
    if (ccw) return level < 0.0 ? HysteresisPattern::CCWMinus : HysteresisPattern::CCWPlus;
    return level < 0.0 ? HysteresisPattern::CWMinus : HysteresisPattern::CWPlus;
}

inline HysteresisLoop make_loop(std::span<const LoopPoint> raw, double w, const HysteresisThresholds& th) {
    HysteresisLoop loop;
    loop.points = smooth_loop(raw);
    if (loop.points.size() < 4) throw InputError("hysteresis loop needs at least four zones");
    std::vector<double> k, q;
    for (const auto& p : loop.points) {
        k.push_back(p.k);
        q.push_back(p.q);
    }
    loop.center = {stats::mean(k), stats::mean(q)};
    loop.sd = {stats::stddev(k), stats::stddev(q)};
    loop.series = cross_products(loop.points, w);
    loop.pattern = classify_hysteresis(loop.series, th);
    return loop;
}

inline std::vector<LoopPoint> loop_points(std::span<const EdieZone> zones) {
    std::vector<LoopPoint> out;
    for (const auto& z : zones) out.push_back({z.k * kPerKm, z.q * kPerHour});
    return out;
}

// Zones, loop and pattern for a set of trajectories ordered leader first.
inline HysteresisLoop analyze_hysteresis(std::span<const Trajectory> trajs, double w, double zone_dt,
                                         const HysteresisThresholds& th) {
    const auto zones = build_zones(trajs, w, zone_dt);
    const auto raw = loop_points(zones);
    return make_loop(raw, w, th);
}

// Largest |H_g x H_{g+1}|.
inline double max_magnitude(const HysteresisLoop& loop) {
    double m = 0.0;
    for (double c : loop.series.cross) m = std::max(m, std::abs(c));
    return m;
}

struct HysteresisComparison {
    double d_center = 0.0;
    double d_sd = 0.0;
    double nrmse_h = 0.0;
};

inline HysteresisComparison compare_hysteresis(std::span<const HysteresisLoop> obs, std::span<const HysteresisLoop> sim) {
    if (obs.size() != sim.size()) throw InputError("compare_hysteresis: loop lists differ in length");
    if (obs.empty()) throw InputError("compare_hysteresis: no loops");
    HysteresisComparison c;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto& o = obs[i];
        const auto& s = sim[i];
        if (o.size() != s.size()) throw InputError("compare_hysteresis: loops differ in zone count");
        c.d_center += std::hypot(o.center.k - s.center.k, o.center.q - s.center.q);
        c.d_sd += std::hypot(o.sd.k - s.sd.k, o.sd.q - s.sd.q);
        double num = 0.0, den = 0.0;
        for (std::size_t g = 0; g < o.series.cross.size(); ++g) {
            const double d = o.series.cross[g] - s.series.cross[g];
            num += d * d;
            den += o.series.cross[g] * o.series.cross[g];
        }
        if (num > 0.0) c.nrmse_h += den > 0.0 ? std::sqrt(num / den) : std::numeric_limits<double>::infinity();
    }
    const auto n = static_cast<double>(obs.size());
    c.d_center /= n;
    c.d_sd /= n;
    c.nrmse_h /= n;
    return c;
}

inline void write_loop(std::ostream& os, const HysteresisLoop& loop) {
    char buf[160];
    os << "g,k,q,cross,eq_init,eq_new\n";
    for (std::size_t g = 0; g < loop.size(); ++g) {
        const double cr = g < loop.series.cross.size() ? loop.series.cross[g] : 0.0;
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", g + 1, loop.points[g].k, loop.points[g].q, cr,
                      loop.series.eq_init[g], loop.series.eq_new[g]);
        os << buf;
    }
}

}  // namespace eabcal
