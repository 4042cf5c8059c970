#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eabcal/error.hpp"
#include "eabcal/newell_params.hpp"
#include "eabcal/stats.hpp"
#include "eabcal/trajectory.hpp"

namespace eabcal {

// Piecewise-linear reaction curve: eta0 until t1, then three slope segments
// reaching eta1, eta2, eta3; constant eta3 afterwards. Times are seconds from
// the start of the car-following window. Breakpoints t2..t4 are derived.
struct EABParams {
    double eta0 = 1.0;
    double eta1 = 1.0;
    double eta2 = 1.0;
    double eta3 = 1.0;
    double eps0 = 0.0;
    double eps1 = 0.0;
    double eps2 = 0.0;
    double t1 = 0.0;

    static constexpr std::size_t dim = 8;
    static constexpr std::array<const char*, dim> names{"eta0", "eta1", "eta2", "eta3", "eps0", "eps1", "eps2", "t1"};

    std::array<double, dim> to_array() const { return {eta0, eta1, eta2, eta3, eps0, eps1, eps2, t1}; }
    static EABParams from_array(const std::array<double, dim>& a) { return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]}; }

    std::array<double, 4> levels() const { return {eta0, eta1, eta2, eta3}; }
    std::array<double, 3> slopes() const { return {eps0, eps1, eps2}; }

    friend bool operator==(const EABParams&, const EABParams&) = default;
};

// Reason a parameter vector is unusable, or nullopt when it is valid.
inline std::optional<std::string> invalid_reason(const EABParams& th) {
    for (double v : th.to_array())
        if (!std::isfinite(v)) return "non-finite parameter";
    for (double e : th.levels())
        if (!(e > 0.0)) return "eta levels must be positive";
    const auto lv = th.levels();
    const auto sl = th.slopes();
    for (std::size_t j = 0; j < 3; ++j) {
        const double d = lv[j + 1] - lv[j];
        if (d == 0.0) continue;
        if (sl[j] == 0.0 || (d > 0.0) != (sl[j] > 0.0))
            return "segment " + std::to_string(j) + " is sign-inconsistent (delta eta and slope differ in sign)";
    }
    return std::nullopt;
}

inline bool is_valid(const EABParams& th) { return !invalid_reason(th).has_value(); }

// Evaluator with precomputed breakpoints.
class EtaCurve {
public:
    explicit EtaCurve(const EABParams& th) : lv_(th.levels()) {
        if (auto why = invalid_reason(th)) throw InputError("invalid EAB parameters: " + *why);
        const auto sl = th.slopes();
        bp_[0] = th.t1;
        for (std::size_t j = 0; j < 3; ++j) {
            const double d = lv_[j + 1] - lv_[j];
            bp_[j + 1] = bp_[j] + (d == 0.0 ? 0.0 : d / sl[j]);
        }
    }

    // Breakpoints t1..t4 (relative seconds).
    const std::array<double, 4>& breakpoints() const { return bp_; }
    const std::array<double, 4>& levels() const { return lv_; }

    double operator()(double t) const {
        if (t <= bp_[0]) return lv_[0];
        for (std::size_t j = 0; j < 3; ++j) {
            if (t <= bp_[j + 1]) {
                const double len = bp_[j + 1] - bp_[j];
                if (len <= 0.0) continue;
                const double f = (t - bp_[j]) / len;
                const double d = lv_[j + 1] - lv_[j];
                // Evaluated from the nearer end so both breakpoints are exact.
                return f < 0.5 ? lv_[j] + f * d : lv_[j + 1] - (1.0 - f) * d;
            }
        }
        return lv_[3];
    }

    double max_level() const { return *std::max_element(lv_.begin(), lv_.end()); }

private:
    std::array<double, 4> lv_;
    std::array<double, 4> bp_{};
};

inline double eta_eval(const EABParams& th, double t) { return EtaCurve(th)(t); }

struct SimulationOptions {
    // Fraction of mapping samples allowed to violate monotonicity before the
    // parameter set is rejected.
    double max_nonmonotone_fraction = 0.01;
};

// Follower obeying x_f(t + eta(t) tau) = x_leader(t) - eta(t) delta, sampled on
// the leader grid, for an arbitrary reaction function of absolute time.
// `vertices` are extra absolute times where eta has kinks; `eta_max` bounds eta.
template <class EtaFn>
Trajectory simulate_follower_with(const Trajectory& leader, const NewellParams& p, EtaFn&& eta, double eta_max,
                                  std::span<const double> vertices, std::string id,
                                  const SimulationOptions& opt = {}) {
    p.validate();
    if (leader.size() < 2) throw InputError("simulate_follower: leader too short");
    const double dt = leader.dt;

    // Leader times that can map onto the output window, plus the kinks so the
    // (s, y) polyline is exact between vertices.
    const auto back = static_cast<std::size_t>(std::ceil(eta_max * p.tau / dt)) + 2;
    std::vector<double> times;
    times.reserve(leader.size() + back + vertices.size());
    for (std::size_t k = back; k > 0; --k) times.push_back(leader.t0() - static_cast<double>(k) * dt);
    for (const auto& pt : leader.points) times.push_back(pt.t);
    const double t_lo = times.front();
    const double t_hi = times.back();
    for (double tb : vertices)
        if (tb > t_lo && tb < t_hi) times.push_back(tb);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                times.end());

    std::vector<std::pair<double, double>> map(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double e = eta(times[i]);
        map[i] = {times[i] + e * p.tau, position_at(leader, times[i]) - e * p.delta};
    }

    std::size_t violations = 0;
    std::optional<std::size_t> first_bad, last_bad;
    for (std::size_t i = 1; i < map.size(); ++i)
        if (!(map[i].first > map[i - 1].first)) {
            ++violations;
            if (!first_bad) first_bad = i;
            last_bad = i;
        }
    if (violations > 0) {
        if (static_cast<double>(violations) >= opt.max_nonmonotone_fraction * static_cast<double>(map.size()))
            throw SimulationError("non-monotone mapping t + eta(t) tau on [" + std::to_string(times[*first_bad - 1]) +
                                  ", " + std::to_string(times[*last_bad]) + "]");
        std::stable_sort(map.begin(), map.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        map.erase(std::unique(map.begin(), map.end(), [](const auto& a, const auto& b) { return !(b.first > a.first); }),
                  map.end());
    }

    std::vector<double> xs(leader.size());
    std::size_t j = 0;
    for (std::size_t k = 0; k < leader.size(); ++k) {
        const double u = leader.points[k].t;
        while (j + 2 < map.size() && map[j + 1].first <= u) ++j;
        const auto& a = map[j];
        const auto& b = map[j + 1];
        const double f = (u - a.first) / (b.first - a.first);
        xs[k] = a.second + f * (b.second - a.second);
        if (!(xs[k] < leader.points[k].x))
            throw SimulationError("spacing becomes negative at t=" + std::to_string(u));
    }
    return make_trajectory(id.empty() ? leader.vehicle_id + "_eab" : std::move(id), leader.t0(), dt, xs);
}

// EAB follower. `origin` is the absolute time of the curve's t = 0 (defaults
// to the leader's first sample). Before t1 the follower sits on its eta0
// equilibrium, which fixes its initial position.
inline Trajectory simulate_follower(const Trajectory& leader, const NewellParams& p, const EABParams& th,
                                    std::optional<double> origin = std::nullopt, std::string id = {},
                                    const SimulationOptions& opt = {}) {
    const EtaCurve eta(th);
    const double t_origin = origin.value_or(leader.size() > 0 ? leader.t0() : 0.0);
    std::array<double, 4> kinks{};
    for (std::size_t i = 0; i < 4; ++i) kinks[i] = t_origin + eta.breakpoints()[i];
    return simulate_follower_with(
        leader, p, [&](double t) { return eta(t - t_origin); }, eta.max_level(), kinks, std::move(id), opt);
}

// Measured reaction series on the leader grid. `raw` holds the bisection roots,
// `eta` the smoothed values; invalid samples are excluded from both.
struct EtaSeries {
    std::vector<double> t;
    std::vector<double> raw;
    std::vector<double> eta;
    std::vector<bool> valid;

    std::size_t valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true)); }
};

struct EtaMeasureOptions {
    double lo = 0.05;
    double hi = 5.0;
    double smooth_window = 0.4;  // s, centered moving average; 0 disables
    double tol = 1e-10;
};

// Centered moving average over valid samples only.
inline std::vector<double> smooth_valid(std::span<const double> xs, const std::vector<bool>& valid, std::size_t half) {
    std::vector<double> out(xs.begin(), xs.end());
    if (half == 0) return out;
    const std::size_t n = xs.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!valid[i]) continue;
        double acc = 0.0;
        std::size_t cnt = 0;
        for (std::size_t k = (i >= half ? i - half : 0); k <= std::min(n - 1, i + half); ++k)
            if (valid[k]) {
                acc += xs[k];
                ++cnt;
            }
        out[i] = acc / static_cast<double>(cnt);
    }
    return out;
}

// Solves x_f(t + eta tau) - x_l(t) + eta delta = 0 for every leader sample by
// bisection. Samples whose root lies outside the bracket or needs follower
// positions beyond its record are flagged invalid.
inline EtaSeries measure_eta(const CFPair& pair, const NewellParams& p, const EtaMeasureOptions& opt = {}) {
    p.validate();
    const auto& L = pair.leader;
    const auto& F = pair.follower;
    EtaSeries out;
    const std::size_t n = L.size();
    out.t.resize(n);
    out.raw.assign(n, std::numeric_limits<double>::quiet_NaN());
    out.valid.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = L.points[i].t;
        const double xl = L.points[i].x;
        out.t[i] = t;
        auto f = [&](double e) { return position_at(F, t + e * p.tau) - xl + e * p.delta; };
        double a = opt.lo, b = opt.hi;
        double fa = f(a), fb = f(b);
        if (fa > 0.0 || fb < 0.0) continue;
        while (b - a > opt.tol) {
            const double m = 0.5 * (a + b);
            const double fm = f(m);
            if (fm < 0.0) {
                a = m;
                fa = fm;
            } else {
                b = m;
                fb = fm;
            }
        }
        const double root = 0.5 * (a + b);
        const double tf = t + root * p.tau;
        if (tf < F.t0() || tf > F.t_end()) continue;
        out.raw[i] = root;
        out.valid[i] = true;
    }
    const auto half = static_cast<std::size_t>(std::llround(0.5 * opt.smooth_window / L.dt));
    out.eta = smooth_valid(out.raw, out.valid, half);
    return out;
}

// ---------------------------------------------------------------------------
// Reaction-pattern taxonomy.

enum class PatternCategory { NE, Concave, Convex, ConcaveConvex, ConvexConcave, NonDecreasing, NonIncreasing };
enum class Response { Early, Late, Other, NotApplicable };

inline const char* to_string(PatternCategory c) {
    switch (c) {
        case PatternCategory::NE: return "NE";
        case PatternCategory::Concave: return "concave";
        case PatternCategory::Convex: return "convex";
        case PatternCategory::ConcaveConvex: return "concave_convex";
        case PatternCategory::ConvexConcave: return "convex_concave";
        case PatternCategory::NonDecreasing: return "non_decreasing";
        case PatternCategory::NonIncreasing: return "non_increasing";
    }
    return "?";
}

inline const char* to_string(Response r) {
    switch (r) {
        case Response::Early: return "early";
        case Response::Late: return "late";
        case Response::Other: return "other";
        case Response::NotApplicable: return "";
    }
    return "?";
}

struct ReactionPattern {
    PatternCategory category = PatternCategory::NE;
    Response response = Response::NotApplicable;

    std::string label() const {
        std::string s = to_string(category);
        if (response != Response::NotApplicable) s += std::string("/") + to_string(response);
        return s;
    }
    friend bool operator==(const ReactionPattern&, const ReactionPattern&) = default;
};

inline constexpr std::array<PatternCategory, 7> all_categories{
    PatternCategory::NE,           PatternCategory::Concave,       PatternCategory::Convex,       PatternCategory::ConcaveConvex,
    PatternCategory::ConvexConcave, PatternCategory::NonDecreasing, PatternCategory::NonIncreasing};

inline bool takes_response(PatternCategory c) {
    return c == PatternCategory::Concave || c == PatternCategory::Convex || c == PatternCategory::NonDecreasing ||
           c == PatternCategory::NonIncreasing;
}

// Default significance threshold on eta deltas by vehicle class.
inline double default_eta_threshold(VehicleClass c) { return c == VehicleClass::ACC ? 0.09 : 0.18; }

// Alternative threshold: interquartile range of the eta0 values of a group.
inline double iqr_eta_threshold(std::span<const double> eta0_values) { return stats::iqr(eta0_values); }

// What the taxonomy needs: three signed level changes, the net change and the
// absolute time at which the final move toward eta3 starts (NaN if none).
struct PatternFeatures {
    std::array<double, 3> deltas{};
    double net = 0.0;
    double restoration_onset = std::numeric_limits<double>::quiet_NaN();
};

namespace pattern_detail {

inline int sig(double d, double thr) { return d > thr ? 1 : (d < -thr ? -1 : 0); }

}  // namespace pattern_detail

inline PatternCategory categorize(const std::array<double, 3>& deltas, double net, double thr) {
    using pattern_detail::sig;
    const std::array<int, 3> s{sig(deltas[0], thr), sig(deltas[1], thr), sig(deltas[2], thr)};
    const bool any_pos = s[0] > 0 || s[1] > 0 || s[2] > 0;
    const bool any_neg = s[0] < 0 || s[1] < 0 || s[2] < 0;
    if (!any_pos && !any_neg) return PatternCategory::NE;
    if (s == std::array<int, 3>{1, -1, 1}) return PatternCategory::ConcaveConvex;
    if (s == std::array<int, 3>{-1, 1, -1}) return PatternCategory::ConvexConcave;
    const int first = s[0] != 0 ? s[0] : (s[1] != 0 ? s[1] : s[2]);
    if (any_pos && any_neg && std::abs(net) <= thr) return first > 0 ? PatternCategory::Concave : PatternCategory::Convex;
    if (!any_neg && net > thr) return PatternCategory::NonDecreasing;
    if (!any_pos && net < -thr) return PatternCategory::NonIncreasing;
    // Remaining triples follow their dominant (largest |delta|) move.
    std::size_t dom = 0;
    for (std::size_t j = 1; j < 3; ++j)
        if (std::abs(deltas[j]) > std::abs(deltas[dom])) dom = j;
    if (deltas[dom] > 0.0) return net > thr ? PatternCategory::NonDecreasing : PatternCategory::Concave;
    return net < -thr ? PatternCategory::NonIncreasing : PatternCategory::Convex;
}

inline ReactionPattern classify_features(const PatternFeatures& f, double thr, const LeaderPhases& phases) {
    if (!(thr > 0.0)) throw InputError("classify_pattern: threshold must be positive");
    ReactionPattern r;
    r.category = categorize(f.deltas, f.net, thr);
    if (!takes_response(r.category)) return r;
    const double on = f.restoration_onset;
    if (std::isnan(on))
        r.response = Response::Other;
    else if (on >= phases.decel_start && on <= phases.decel_end)
        r.response = Response::Early;
    else if (on > phases.accel_end)
        r.response = Response::Late;
    else
        r.response = Response::Other;
    return r;
}

inline PatternFeatures features_from_params(const EABParams& th, double thr, double origin = 0.0) {
    const EtaCurve curve(th);
    const auto lv = curve.levels();
    const auto& bp = curve.breakpoints();
    PatternFeatures f;
    for (std::size_t j = 0; j < 3; ++j) f.deltas[j] = lv[j + 1] - lv[j];
    f.net = lv[3] - lv[0];
    // Start of the last run of same-signed significant segments.
    int last_sign = 0;
    std::optional<std::size_t> start;
    for (std::size_t j = 3; j-- > 0;) {
        const int s = pattern_detail::sig(f.deltas[j], thr);
        if (s == 0) continue;
        if (last_sign == 0) last_sign = s;
        if (s != last_sign) break;
        start = j;
    }
    if (start) f.restoration_onset = origin + bp[*start];
    return f;
}

// Zig-zag extraction of significant moves from a measured series. Plateau
// levels are the means of the first and last second of valid samples.
inline PatternFeatures features_from_series(const EtaSeries& s, double thr, double plateau_seconds = 1.0) {
    std::vector<double> t, v;
    for (std::size_t i = 0; i < s.t.size(); ++i)
        if (s.valid[i]) {
            t.push_back(s.t[i]);
            v.push_back(s.eta[i]);
        }
    PatternFeatures f;
    if (v.size() < 2) return f;
    const double span_dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
    const auto np = std::min<std::size_t>(v.size(), std::max<std::size_t>(1, static_cast<std::size_t>(plateau_seconds / span_dt)));
    double start_level = 0.0, end_level = 0.0;
    for (std::size_t k = 0; k < np; ++k) {
        start_level += v[k];
        end_level += v[v.size() - 1 - k];
    }
    start_level /= static_cast<double>(np);
    end_level /= static_cast<double>(np);

    struct Pivot {
        std::size_t i;
        double value;
    };
    std::vector<Pivot> pivots{{0, start_level}};
    int dir = 0;
    Pivot cand{0, start_level};
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (dir == 0) {
            if (v[i] - pivots.back().value > thr) { dir = 1; cand = {i, v[i]}; }
            else if (pivots.back().value - v[i] > thr) { dir = -1; cand = {i, v[i]}; }
        } else if (dir > 0) {
            if (v[i] > cand.value) cand = {i, v[i]};
            else if (cand.value - v[i] > thr) { pivots.push_back(cand); dir = -1; cand = {i, v[i]}; }
        } else {
            if (v[i] < cand.value) cand = {i, v[i]};
            else if (v[i] - cand.value > thr) { pivots.push_back(cand); dir = 1; cand = {i, v[i]}; }
        }
    }
    if (dir != 0) pivots.push_back(cand);

    for (std::size_t j = 0; j + 1 < pivots.size() && j < 3; ++j) f.deltas[j] = pivots[j + 1].value - pivots[j].value;
    f.net = end_level - start_level;
    if (pivots.size() >= 2) {
        // Onset: last time the series is still within 10% of the move of its
        // starting pivot.
        const auto& from = pivots[pivots.size() - 2];
        const auto& to = pivots.back();
        const double band = 0.1 * std::abs(to.value - from.value);
        std::size_t onset = from.i;
        for (std::size_t i = from.i; i <= to.i; ++i)
            if (std::abs(v[i] - from.value) <= band) onset = i;
        f.restoration_onset = t[onset];
    }
    return f;
}

inline ReactionPattern classify_pattern(const EABParams& th, double thr, const LeaderPhases& phases, double origin = 0.0) {
    return classify_features(features_from_params(th, thr, origin), thr, phases);
}

inline ReactionPattern classify_pattern(const EtaSeries& s, double thr, const LeaderPhases& phases) {
    return classify_features(features_from_series(s, thr), thr, phases);
}

}  // namespace eabcal
