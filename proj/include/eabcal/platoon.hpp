#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "eabcal/abc_smc.hpp"
#include "eabcal/eab.hpp"
#include "eabcal/error.hpp"
#include "eabcal/hysteresis.hpp"
#include "eabcal/parallel.hpp"
#include "eabcal/rng.hpp"
#include "eabcal/stats.hpp"
#include "eabcal/trajectory.hpp"

namespace eabcal {

struct PlatoonSpec {
    std::size_t n_vehicles = 20;
    double penetration = 0.0;
    Trajectory leader;
    ParticlePopulation hdv_posterior;
    ParticlePopulation acc_posterior;
    NewellParams hdv_params{1.2, 5.0};
    NewellParams acc_params{0.9, 6.0};
    std::size_t runs = 50;
    std::uint64_t seed = 1;
    double zone_dt = 3.0;
    std::optional<double> wave_speed;  // defaults to the HDV group's w
    HysteresisThresholds thresholds{};
    double min_spacing = 0.5;  // m
    std::size_t max_redraws = 10;

    double w() const { return wave_speed.value_or(hdv_params.w()); }

    void validate() const {
        if (n_vehicles < 2) throw ConfigError("platoon: n_vehicles must be at least 2");
        if (runs < 1) throw ConfigError("platoon: runs must be at least 1");
        if (!(penetration >= 0.0 && penetration <= 1.0)) throw ConfigError("platoon: penetration must lie in [0, 1]");
        if (leader.size() < 2) throw InputError("platoon: leader trajectory too short");
        if (hdv_posterior.particles.empty() || acc_posterior.particles.empty())
            throw InputError("platoon: posteriors must be non-empty");
        hdv_params.validate();
        acc_params.validate();
        if (!(zone_dt > 0.0)) throw ConfigError("platoon: zone_dt must be positive");
        if (!(w() < 0.0)) throw ConfigError("platoon: wave speed must be negative");
    }
};

// Follower types for an n-vehicle platoon; index 0 is the leader and is
// always reported as HDV. Exactly round(penetration (n - 1)) followers are ACC.
inline std::vector<VehicleClass> assign_types(std::size_t n, double penetration, std::uint64_t seed) {
    if (n < 1) throw InputError("assign_types: n must be positive");
    if (!(penetration >= 0.0 && penetration <= 1.0)) throw InputError("assign_types: penetration must lie in [0, 1]");
    const std::size_t followers = n - 1;
    const auto n_acc = static_cast<std::size_t>(std::llround(penetration * static_cast<double>(followers)));
    std::vector<std::size_t> idx(followers);
    std::iota(idx.begin(), idx.end(), 1);
    auto rng = substream(seed, {0x7e9e5});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<VehicleClass> out(n, VehicleClass::HDV);
    for (std::size_t i = 0; i < n_acc; ++i) out[idx[i]] = VehicleClass::ACC;
    return out;
}

// Largest drop below the initial speed.
inline double speed_drop(const Trajectory& tr) {
    if (tr.points.empty()) return 0.0;
    double lo = tr.points.front().v;
    for (const auto& p : tr.points) lo = std::min(lo, p.v);
    return tr.points.front().v - lo;
}

inline double min_spacing(const Trajectory& leader, const Trajectory& follower) {
    double m = std::numeric_limits<double>::infinity();
    const std::size_t n = std::min(leader.size(), follower.size());
    for (std::size_t i = 0; i < n; ++i) m = std::min(m, leader.points[i].x - follower.points[i].x);
    return m;
}

struct PlatoonRun {
    std::size_t run = 0;
    std::vector<VehicleClass> types;
    std::vector<EABParams> thetas;  // one per follower
    std::vector<Trajectory> trajectories;
    std::vector<double> amplitudes;  // per vehicle, m/s
    double min_spacing = 0.0;
    std::optional<HysteresisLoop> loop;
    std::string failure;

    bool ok() const { return failure.empty(); }
};

// One run: followers simulated in order, each with a fresh posterior draw. The
// draw for (run, vehicle) comes from its own substream, so runs can execute in
// any order.
inline PlatoonRun simulate_platoon(const PlatoonSpec& spec, std::size_t run_index) {
    spec.validate();
    PlatoonRun r;
    r.run = run_index;
    r.types = assign_types(spec.n_vehicles, spec.penetration, mix_seed(spec.seed, {run_index}));
    r.trajectories.push_back(spec.leader);
    r.trajectories.front().vehicle_id = "V0";
    r.amplitudes.push_back(speed_drop(spec.leader));
    r.min_spacing = std::numeric_limits<double>::infinity();

    auto weights = [](const ParticlePopulation& pop) {
        std::vector<double> w;
        for (const auto& p : pop.particles) w.push_back(p.weight);
        return w;
    };
    const auto w_hdv = weights(spec.hdv_posterior);
    const auto w_acc = weights(spec.acc_posterior);

    double origin = spec.leader.t0();
    for (std::size_t j = 1; j < spec.n_vehicles; ++j) {
        const bool acc = r.types[j] == VehicleClass::ACC;
        const auto& pop = acc ? spec.acc_posterior : spec.hdv_posterior;
        const auto& w = acc ? w_acc : w_hdv;
        const auto& params = acc ? spec.acc_params : spec.hdv_params;
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        auto rng = substream(spec.seed, {run_index, j, acc ? 1u : 0u});

        std::optional<Trajectory> follower;
        EABParams theta;
        std::string last_error = "no valid parameters drawn";
        for (std::size_t attempt = 0; attempt < spec.max_redraws && !follower; ++attempt) {
            theta = pop.particles[pick(rng)].theta;
            if (!is_valid(theta)) continue;
            try {
                follower = simulate_follower(r.trajectories.back(), params, theta, origin, "V" + std::to_string(j));
            } catch (const SimulationError& e) {
                last_error = e.what();
            }
        }
        if (!follower) {
            r.failure = "vehicle " + std::to_string(j) + ": " + last_error;
            return r;
        }
        const double gap = min_spacing(r.trajectories.back(), *follower);
        r.min_spacing = std::min(r.min_spacing, gap);
        if (gap < spec.min_spacing) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "vehicle %zu: spacing collapse (min %.3f m)", j, gap);
            r.failure = buf;
            return r;
        }
        origin += theta.eta0 * params.tau;
        r.thetas.push_back(theta);
        r.amplitudes.push_back(speed_drop(*follower));
        r.trajectories.push_back(std::move(*follower));
    }
    return r;
}

// simulate_platoon plus the whole-platoon hysteresis loop.
inline PlatoonRun run_platoon(const PlatoonSpec& spec, std::size_t run_index) {
    auto r = simulate_platoon(spec, run_index);
    if (!r.ok()) return r;
    try {
        r.loop = analyze_hysteresis(r.trajectories, spec.w(), spec.zone_dt, spec.thresholds);
    } catch (const InputError& e) {
        r.failure = std::string("hysteresis: ") + e.what();
    }
    return r;
}

struct PenetrationPoint {
    double penetration = 0.0;
    std::size_t runs_ok = 0;
    std::size_t runs_failed = 0;
    std::vector<std::string> failures;
    LoopPoint center;
    LoopPoint sd;
    double magnitude = 0.0;     // mean over runs of max |cross|
    double magnitude_se = 0.0;  // standard error of that mean
    std::vector<double> magnitudes;
    std::vector<double> last_amplitudes;  // speed drop of the last vehicle per run
    std::vector<LoopPoint> mean_loop;     // pointwise mean over runs, shortest length
};

inline PenetrationPoint aggregate_runs(double penetration, const std::vector<PlatoonRun>& runs) {
    PenetrationPoint pt;
    pt.penetration = penetration;
    std::vector<double> ck, cq, sk, sq;
    std::size_t g_min = std::numeric_limits<std::size_t>::max();
    for (const auto& r : runs) {
        if (!r.ok() || !r.loop) {
            ++pt.runs_failed;
            pt.failures.push_back("run " + std::to_string(r.run) + ": " + r.failure);
            continue;
        }
        ++pt.runs_ok;
        ck.push_back(r.loop->center.k);
        cq.push_back(r.loop->center.q);
        sk.push_back(r.loop->sd.k);
        sq.push_back(r.loop->sd.q);
        pt.magnitudes.push_back(max_magnitude(*r.loop));
        pt.last_amplitudes.push_back(r.amplitudes.back());
        g_min = std::min(g_min, r.loop->size());
    }
    if (pt.runs_ok == 0) return pt;
    pt.center = {stats::mean(ck), stats::mean(cq)};
    pt.sd = {stats::mean(sk), stats::mean(sq)};
    pt.magnitude = stats::mean(pt.magnitudes);
    if (pt.runs_ok > 1) {
        const double n = static_cast<double>(pt.runs_ok);
        pt.magnitude_se = std::sqrt(stats::variance(pt.magnitudes) * n / (n - 1.0) / n);
    }
    pt.mean_loop.assign(g_min, LoopPoint{});
    for (const auto& r : runs) {
        if (!r.ok() || !r.loop) continue;
        for (std::size_t g = 0; g < g_min; ++g) {
            pt.mean_loop[g].k += r.loop->points[g].k / static_cast<double>(pt.runs_ok);
            pt.mean_loop[g].q += r.loop->points[g].q / static_cast<double>(pt.runs_ok);
        }
    }
    return pt;
}

// Runs every penetration with the template's seed; run r at any penetration
// uses the same substream keys, so curves share common random numbers for
// placements and draws of the same vehicle type.
inline std::vector<PenetrationPoint> sweep_penetration(const PlatoonSpec& tmpl, std::span<const double> penetrations,
                                                       std::size_t runs) {
    if (penetrations.empty()) throw ConfigError("sweep_penetration: no penetration rates");
    if (runs < 1) throw ConfigError("sweep_penetration: runs must be at least 1");
    std::vector<PenetrationPoint> out;
    for (double pen : penetrations) {
        PlatoonSpec spec = tmpl;
        spec.penetration = pen;
        spec.runs = runs;
        spec.validate();
        std::vector<PlatoonRun> results(runs);
        parallel_for(runs, [&](std::size_t r) { results[r] = run_platoon(spec, r); });
        out.push_back(aggregate_runs(pen, results));
    }
    return out;
}

inline void write_penetration_curves(std::ostream& os, std::span<const PenetrationPoint> pts) {
    char buf[256];
    os << "penetration,runs_ok,runs_failed,center_k,center_q,sd_k,sd_q,magnitude,magnitude_se\n";
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof buf, "%.4f,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", p.penetration, p.runs_ok,
                      p.runs_failed, p.center.k, p.center.q, p.sd.k, p.sd.q, p.magnitude, p.magnitude_se);
        os << buf;
    }
}

// Population holding a single parameter set.
inline ParticlePopulation point_mass(const EABParams& th) {
    ParticlePopulation pop;
    pop.particles.push_back({th, 0.0, 1.0});
    return pop;
}

}  // namespace eabcal
