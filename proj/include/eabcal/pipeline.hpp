#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eabcal/abc_smc.hpp"
#include "eabcal/config.hpp"
#include "eabcal/eab.hpp"
#include "eabcal/hysteresis.hpp"
#include "eabcal/newell.hpp"
#include "eabcal/platoon.hpp"
#include "eabcal/svg.hpp"
#include "eabcal/synthetic.hpp"
#include "eabcal/trajectory_io.hpp"
#include "eabcal/validation.hpp"

namespace eabcal {

using Json = nlohmann::ordered_json;

// Error raised inside a named pipeline stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(stage, e.what());
    }
}

// ---------------------------------------------------------------------------
// Data

struct Dataset {
    std::vector<CFPair> pairs;
    std::vector<std::string> warnings;
    std::vector<PlantedPair> planted;  // synthetic runs only
};

inline SyntheticOptions synthetic_options(const RunConfig& cfg) {
    SyntheticOptions o;
    o.n_pairs = cfg.synthetic_pairs;
    o.noise_sd = cfg.synthetic_noise;
    o.eta_jitter_sd = cfg.synthetic_jitter;
    return o;
}

inline Dataset load_dataset(const RunConfig& cfg) {
    Dataset d;
    if (cfg.trajectories.empty()) {
        d.planted = generate_synthetic(cfg.synthetic_profile, cfg.seed, synthetic_options(cfg));
        for (auto& pp : d.planted) {
            if (std::abs(pp.pair.leader.dt - cfg.dt) > 1e-12)
                pp.pair = make_pair(resample(pp.pair.leader, cfg.dt), resample(pp.pair.follower, cfg.dt), pp.pair.label);
            d.pairs.push_back(pp.pair);
        }
        return d;
    }
    auto res = load_trajectories(cfg.trajectories, cfg.manifest);
    d.warnings = std::move(res.warnings);
    for (auto& p : res.pairs) {
        if (std::abs(p.leader.dt - cfg.dt) > 1e-9) p = make_pair(resample(p.leader, cfg.dt), resample(p.follower, cfg.dt), p.label);
        d.pairs.push_back(std::move(p));
    }
    if (d.pairs.empty()) throw InputError("dataset holds no usable pairs");
    return d;
}

inline Json theta_json(const EABParams& th) {
    Json j = Json::object();
    const auto a = th.to_array();
    for (std::size_t i = 0; i < EABParams::dim; ++i) j[EABParams::names[i]] = a[i];
    return j;
}

inline Json truth_json(const std::vector<PlantedPair>& planted, const std::string& profile, std::uint64_t seed) {
    Json pairs = Json::array();
    for (const auto& pp : planted) {
        pairs.push_back({{"pair", pp.pair.id()},
                         {"pattern", pp.pattern},
                         {"vehicle_class", to_string(pp.pair.label.vehicle_class)},
                         {"tau", pp.params.tau},
                         {"delta", pp.params.delta},
                         {"theta", theta_json(pp.theta)},
                         {"phases",
                          {pp.phases.decel_start, pp.phases.decel_end, pp.phases.accel_start, pp.phases.accel_end}}});
    }
    return {{"profile", profile}, {"seed", seed}, {"pairs", pairs}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d, const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    save_pairs(dir / "trajectories.csv", dir / "manifest.csv", d.pairs);
    if (!d.planted.empty())
        write_text(dir / "truth.json", truth_json(d.planted, cfg.synthetic_profile, cfg.seed).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Groups and split

struct GroupSplit {
    std::string name;
    VehicleClass cls = VehicleClass::ACC;
    std::vector<CFPair> train;
    std::vector<CFPair> test;
};

inline std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    return h;
}

inline std::string group_name(const PairLabel& l, const std::string& by) {
    return by == "class" ? std::string(to_string(l.vehicle_class)) : l.group_key();
}

// Seeded train/test split per group, independent of input order; every group
// with two or more pairs keeps at least one pair on each side.
inline std::vector<GroupSplit> split_groups(const std::vector<CFPair>& pairs, const RunConfig& cfg) {
    std::map<std::string, std::vector<const CFPair*>> by;
    for (const auto& p : pairs) by[group_name(p.label, cfg.group_by)].push_back(&p);
    std::vector<GroupSplit> out;
    for (auto& [name, members] : by) {
        std::sort(members.begin(), members.end(), [](const CFPair* a, const CFPair* b) { return a->id() < b->id(); });
        GroupSplit g;
        g.name = name;
        g.cls = members.front()->label.vehicle_class;
        std::vector<std::size_t> idx(members.size());
        std::iota(idx.begin(), idx.end(), 0);
        auto rng = substream(cfg.seed, {0x5b117, name_hash(name)});
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = members.size();
        auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(n)));
        n_train = std::clamp<std::size_t>(n_train, 1, n > 1 ? n - 1 : 1);
        std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
        for (std::size_t i = 0; i < n; ++i) (i < n_train ? g.train : g.test).push_back(*members[idx[i]]);
        out.push_back(std::move(g));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-group stages

struct PatternRow {
    std::string pair_id;
    std::string split;
    ReactionPattern pattern;
};

struct HysteresisRow {
    std::string pair_id;
    std::string split;
    HysteresisLoop loop;
};

struct RepresentativeSummary {
    std::string name;
    std::size_t pairs = 0;
    HysteresisComparison metrics;
};

struct GroupResult {
    GroupSplit split;
    NewellFit newell;
    double eta_threshold = 0.0;
    std::vector<PatternRow> patterns;
    std::vector<HysteresisRow> hysteresis;
    std::vector<std::string> excluded;  // pair-level failures with reasons
    std::optional<CalibrationResult> calibration;
    bool posterior_loaded = false;
    std::optional<AssignmentResult> ws_train;
    std::optional<AssignmentResult> ws_test;
    std::vector<RepresentativeSummary> representatives;
    std::optional<std::pair<HysteresisLoop, HysteresisLoop>> example_loops;  // observed, best-fit
};

inline HysteresisThresholds thresholds_for(const RunConfig& cfg, SpeedRegime r) {
    return cfg.thresholds.value_or(HysteresisThresholds::for_regime(r));
}

inline NewellFit stage_newell(const GroupSplit& g, const RunConfig& cfg) {
    return in_stage("stage-1 " + g.name, [&] {
        auto fit = calibrate_newell(g.train, NewellGrid{cfg.tau_grid, cfg.delta_grid});
        fit.group = g.name;
        return fit;
    });
}

// Interquartile range over the group's pairs of the pre-disturbance reaction
// level (median measured eta before the leader starts braking).
inline std::optional<double> group_eta_threshold(const GroupSplit& g, const NewellParams& p) {
    std::vector<double> levels;
    for (const auto* side : {&g.train, &g.test})
        for (const auto& pair : *side) {
            try {
                const auto s = measure_eta(pair, p);
                const double onset = detect_phases(pair.leader).decel_start;
                std::vector<double> pre;
                for (std::size_t i = 0; i < s.t.size(); ++i)
                    if (s.valid[i] && s.t[i] < onset) pre.push_back(s.eta[i]);
                if (!pre.empty()) levels.push_back(stats::quantile(pre, 0.5));
            } catch (const InputError&) {
            }
        }
    if (levels.size() < 2) return std::nullopt;
    const double t = iqr_eta_threshold(levels);
    return t > 0.0 ? std::optional<double>(t) : std::nullopt;
}

inline void stage_patterns(GroupResult& r) {
    auto run = [&](const std::vector<CFPair>& pairs, const char* split) {
        for (const auto& p : pairs) {
            try {
                const auto series = measure_eta(p, r.newell.params);
                r.patterns.push_back({p.id(), split, classify_pattern(series, r.eta_threshold, detect_phases(p.leader))});
            } catch (const InputError& e) {
                r.excluded.push_back("pattern " + p.id() + ": " + e.what());
            }
        }
    };
    run(r.split.train, "train");
    run(r.split.test, "test");
}

inline void stage_hysteresis(GroupResult& r, const RunConfig& cfg) {
    auto run = [&](const std::vector<CFPair>& pairs, const char* split) {
        for (const auto& p : pairs) {
            try {
                std::vector<Trajectory> tr{p.leader, p.follower};
                r.hysteresis.push_back({p.id(), split,
                                        analyze_hysteresis(tr, r.newell.params.w(), cfg.zone_dt,
                                                           thresholds_for(cfg, p.label.speed_regime))});
            } catch (const InputError& e) {
                r.excluded.push_back("hysteresis " + p.id() + ": " + e.what());
            }
        }
    };
    run(r.split.train, "train");
    run(r.split.test, "test");
}

inline CalibrationSettings calibration_settings(const RunConfig& cfg, const std::string& group) {
    CalibrationSettings s;
    s.K = cfg.k;
    s.lambda = cfg.lambda;
    s.rho_stop = cfg.rho_stop;
    s.max_iter = cfg.max_iter;
    s.gamma0 = cfg.gamma0;
    s.seed = mix_seed(cfg.seed, {0xab0c, name_hash(group)});
    s.asmc.cw = cfg.weights;
    return s;
}

inline void stage_calibrate(GroupResult& r, const RunConfig& cfg) {
    r.calibration = in_stage("abc-asmc " + r.split.name, [&] {
        const auto obs = observe_pairs(r.split.train, r.newell.params);
        return run_calibration(std::span<const PairObservation>(obs), cfg.prior_for(r.split.cls), r.newell.params,
                               calibration_settings(cfg, r.split.name));
    });
}

// Zones of the observed and simulated pair restricted to the anchors both
// share, so the two loops have the same number of points.
inline std::pair<HysteresisLoop, HysteresisLoop> paired_loops(const CFPair& obs, const Trajectory& sim, double w,
                                                              double zone_dt, const HysteresisThresholds& th) {
    std::vector<Trajectory> to{obs.leader, obs.follower}, ts{obs.leader, sim};
    const auto zo = build_zones(to, w, zone_dt);
    const auto zs = build_zones(ts, w, zone_dt);
    std::vector<EdieZone> a, b;
    for (const auto& z : zo)
        for (const auto& y : zs)
            if (std::abs(z.t_start - y.t_start) < 1e-9) {
                a.push_back(z);
                b.push_back(y);
            }
    const auto pa = loop_points(a), pb = loop_points(b);
    return {make_loop(pa, w, th), make_loop(pb, w, th)};
}

inline void stage_validate(GroupResult& r, const RunConfig& cfg) {
    in_stage("validation " + r.split.name, [&] {
        const auto& pop = r.calibration->population;
        const auto& p = r.newell.params;
        const auto train = observe_pairs(r.split.train, p);
        r.ws_train = ws_metric(pop, std::span<const PairObservation>(train), p, cfg.weights);
        if (r.split.test.empty()) return 0;
        const auto test = observe_pairs(r.split.test, p);
        r.ws_test = ws_metric(pop, std::span<const PairObservation>(test), p, cfg.weights);

        const char* names[] = {"deterministic_optimal", "best_fit", "p5"};
        std::array<std::vector<HysteresisLoop>, 3> obs_loops, sim_loops;
        for (const auto& o : test) {
            const auto reps = select_representative(pop, o, p, cfg.weights);
            const std::array<std::size_t, 3> idx{reps.deterministic_optimal, reps.best_fit, reps.p5};
            for (std::size_t k = 0; k < 3; ++k) {
                try {
                    const auto sim = simulate_follower(o.pair.leader, p, pop.particles[idx[k]].theta, o.origin);
                    auto loops = paired_loops(o.pair, sim, p.w(), cfg.zone_dt, thresholds_for(cfg, o.pair.label.speed_regime));
                    if (k == 1 && !r.example_loops) r.example_loops = loops;
                    obs_loops[k].push_back(std::move(loops.first));
                    sim_loops[k].push_back(std::move(loops.second));
                } catch (const Error& e) {
                    r.excluded.push_back(std::string("representative ") + names[k] + " " + o.pair.id() + ": " + e.what());
                }
            }
        }
        for (std::size_t k = 0; k < 3; ++k) {
            RepresentativeSummary s;
            s.name = names[k];
            s.pairs = obs_loops[k].size();
            if (s.pairs > 0) s.metrics = compare_hysteresis(obs_loops[k], sim_loops[k]);
            r.representatives.push_back(s);
        }
        return 0;
    });
}

// ---------------------------------------------------------------------------
// Platoon

struct PlatoonStage {
    std::string hdv_group;
    std::string acc_group;
    double w = 0.0;
    std::vector<PenetrationPoint> curves;
    std::vector<std::string> notes;
};

inline Trajectory default_platoon_leader() {
    SpeedProfile pr;
    pr.duration = 120.0;
    pr.x0 = 500.0;
    return pr.build("leader");
}

inline PlatoonStage stage_platoon(const std::vector<GroupResult>& groups, const RunConfig& cfg) {
    return in_stage("platoon", [&] {
        const GroupResult* hdv = nullptr;
        const GroupResult* acc = nullptr;
        for (const auto& g : groups) {
            if (!g.calibration) continue;
            if (g.split.cls == VehicleClass::HDV && !hdv) hdv = &g;
            if (g.split.cls == VehicleClass::ACC && !acc) acc = &g;
        }
        PlatoonStage st;
        if (!hdv && !acc) throw InputError("no calibrated group available");
        if (!hdv) {
            hdv = acc;
            st.notes.push_back("no HDV group: HDV followers use the ACC posterior");
        }
        if (!acc) {
            acc = hdv;
            st.notes.push_back("no ACC group: ACC followers use the HDV posterior");
        }
        PlatoonSpec spec;
        spec.n_vehicles = cfg.platoon_vehicles;
        spec.leader = default_platoon_leader();
        spec.hdv_posterior = hdv->calibration->population;
        spec.acc_posterior = acc->calibration->population;
        spec.hdv_params = hdv->newell.params;
        spec.acc_params = acc->newell.params;
        spec.runs = cfg.platoon_runs;
        spec.seed = mix_seed(cfg.seed, {0x91a7});
        spec.zone_dt = cfg.zone_dt;
        spec.thresholds = thresholds_for(cfg, SpeedRegime::MedianHigh);
        st.hdv_group = hdv->split.name;
        st.acc_group = acc->split.name;
        st.w = spec.w();
        st.curves = sweep_penetration(spec, cfg.penetrations, cfg.platoon_runs);
        return st;
    });
}

// ---------------------------------------------------------------------------
// Report

inline std::string safe_name(std::string s) {
    for (auto& c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
    return s;
}

inline Json zeta_json(const Zeta& z) { return {{"x", z.x}, {"eta", z.eta}, {"critical", z.critical}}; }

inline Json ws_json(const AssignmentResult& a) {
    return {{"pairs", a.pairs.size()}, {"excluded", a.excluded}, {"ws", zeta_json(a.ws)}, {"ws_per_particle", zeta_json(a.ws_per_particle)}};
}

inline Json pattern_table(const std::vector<PatternRow>& rows) {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : rows) ++counts[r.pattern.label()];
    Json t = Json::object();
    for (const auto& [k, v] : counts)
        t[k] = {{"count", v}, {"proportion", static_cast<double>(v) / static_cast<double>(rows.size())}};
    return t;
}

inline Json hysteresis_table(const std::vector<HysteresisRow>& rows) {
    Json t = Json::object();
    for (auto p : all_hysteresis_patterns) {
        const auto n = static_cast<std::size_t>(
            std::count_if(rows.begin(), rows.end(), [&](const HysteresisRow& r) { return r.loop.pattern == p; }));
        t[to_string(p)] = {{"count", n},
                           {"proportion", rows.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(rows.size())}};
    }
    return t;
}

inline Json group_json(const GroupResult& g) {
    Json j = {{"group", g.split.name},
              {"vehicle_class", to_string(g.split.cls)},
              {"train_pairs", g.split.train.size()},
              {"test_pairs", g.split.test.size()},
              {"newell",
               {{"tau", g.newell.params.tau},
                {"delta", g.newell.params.delta},
                {"w", g.newell.params.w()},
                {"objective", g.newell.objective}}}};
    if (!g.patterns.empty()) j["patterns"] = {{"eta_threshold", g.eta_threshold}, {"table", pattern_table(g.patterns)}};
    if (!g.hysteresis.empty()) j["hysteresis"] = hysteresis_table(g.hysteresis);
    if (g.calibration) {
        const auto& c = *g.calibration;
        Json trace = Json::array();
        for (const auto& r : c.trace) trace.push_back({r.iteration, r.gamma, r.rho});
        Json post = Json::object();
        for (std::size_t i = 0; i < EABParams::dim; ++i) {
            const auto v = c.population.component(i);
            const auto ci = credible_interval(c.population, i);
            post[EABParams::names[i]] = {{"median", stats::quantile(v, 0.5)}, {"ci90", {ci.lo, ci.hi}}};
        }
        if (g.posterior_loaded)
            j["abc"] = {{"particles", c.population.size()}, {"source", "loaded"}, {"posterior", post}};
        else
            j["abc"] = {{"particles", c.population.size()},
                        {"iterations", c.population.iteration},
                        {"stop", to_string(c.stop)},
                        {"gamma", c.population.gamma},
                        {"rho", c.population.rho},
                        {"trace", trace},
                        {"posterior", post}};
    }
    if (g.ws_train) j["ws_train"] = ws_json(*g.ws_train);
    if (g.ws_test) j["ws_test"] = ws_json(*g.ws_test);
    if (!g.representatives.empty()) {
        Json reps = Json::object();
        for (const auto& r : g.representatives)
            reps[r.name] = {{"pairs", r.pairs},
                            {"d_center", r.metrics.d_center},
                            {"d_sd", r.metrics.d_sd},
                            {"nrmse_h", r.metrics.nrmse_h}};
        j["hysteresis_reproduction"] = reps;
    }
    j["excluded"] = g.excluded;
    return j;
}

inline void write_group_files(const std::filesystem::path& dir, const GroupResult& g) {
    std::filesystem::create_directories(dir);
    if (g.calibration) {
        std::ostringstream post, diag;
        write_posterior(post, g.calibration->population);
        write_text(dir / "posterior.csv", post.str());
        if (!g.calibration->trace.empty()) {
            write_diagnostics(diag, g.calibration->trace);
            write_text(dir / "diagnostics.csv", diag.str());
        }
    }
    if (!g.patterns.empty()) {
        std::ostringstream os;
        os << "pair,split,category,response,label\n";
        for (const auto& r : g.patterns)
            os << r.pair_id << ',' << r.split << ',' << to_string(r.pattern.category) << ',' << to_string(r.pattern.response)
               << ',' << r.pattern.label() << '\n';
        write_text(dir / "patterns.csv", os.str());
    }
    if (!g.hysteresis.empty()) {
        std::ostringstream os;
        os << "pair,split,pattern,magnitude,center_k,center_q,sd_k,sd_q\n";
        for (const auto& r : g.hysteresis) {
            os << r.pair_id << ',' << r.split << ',' << to_string(r.loop.pattern) << ',' << format_g17(max_magnitude(r.loop))
               << ',' << format_g17(r.loop.center.k) << ',' << format_g17(r.loop.center.q) << ','
               << format_g17(r.loop.sd.k) << ',' << format_g17(r.loop.sd.q) << '\n';
            std::ostringstream loop;
            write_loop(loop, r.loop);
            write_text(dir / "loops" / (safe_name(r.pair_id) + ".csv"), loop.str());
        }
        write_text(dir / "hysteresis.csv", os.str());
    }
    std::ostringstream val;
    val << "pair,split,particle,gof,zeta_x,zeta_eta,zeta_critical\n";
    for (const auto* a : {&g.ws_train, &g.ws_test}) {
        if (!*a) continue;
        const char* split = a == &g.ws_train ? "train" : "test";
        for (const auto& p : (*a)->pairs)
            val << p.pair_id << ',' << split << ',' << p.particle << ',' << format_g17(p.gof) << ','
                << format_g17(p.best.x) << ',' << format_g17(p.best.eta) << ',' << format_g17(p.best.critical) << '\n';
    }
    if (g.ws_train) write_text(dir / "validation.csv", val.str());
}

// Plot files are best effort; failures are returned as notes.
inline std::vector<std::string> write_plots(const std::filesystem::path& dir, const std::vector<GroupResult>& groups,
                                            const std::optional<PlatoonStage>& platoon) {
    std::vector<std::string> failed;
    try {
        std::filesystem::create_directories(dir);
    } catch (const std::exception&) {
        return {"plot directory could not be created"};
    }
    auto put = [&](const std::string& name, const svg::Plot& p) {
        if (!svg::write((dir / name).string(), p)) failed.push_back(name);
    };
    for (const auto& g : groups) {
        const auto base = safe_name(g.split.name);
        if (g.calibration) {
            svg::Series gamma{"gamma", {}, {}, true}, rho{"rho", {}, {}, true};
            for (const auto& r : g.calibration->trace) {
                if (!std::isfinite(r.gamma)) continue;
                gamma.x.push_back(static_cast<double>(r.iteration));
                gamma.y.push_back(r.gamma);
                rho.x.push_back(static_cast<double>(r.iteration));
                rho.y.push_back(r.rho);
            }
            put(base + "_gamma.svg", {g.split.name + ": tolerance", "iteration", "gamma", {gamma}});
            put(base + "_rho.svg", {g.split.name + ": acceptance ratio", "iteration", "rho", {rho}});
        }
        if (g.example_loops) {
            auto series = [](const HysteresisLoop& l, const char* label) {
                svg::Series s{label, {}, {}, true};
                for (const auto& p : l.points) {
                    s.x.push_back(p.k);
                    s.y.push_back(p.q);
                }
                return s;
            };
            put(base + "_loop.svg", {g.split.name + ": hysteresis loop", "density (veh/km)", "flow (veh/h)",
                                     {series(g.example_loops->first, "observed"), series(g.example_loops->second, "best fit")}});
        }
    }
    if (platoon && !platoon->curves.empty()) {
        svg::Series mag{"magnitude", {}, {}, true}, ck{"center k", {}, {}, true}, sdq{"SD q", {}, {}, true};
        for (const auto& c : platoon->curves) {
            if (c.runs_ok == 0) continue;
            mag.x.push_back(c.penetration);
            mag.y.push_back(c.magnitude);
            ck.x.push_back(c.penetration);
            ck.y.push_back(c.center.k);
            sdq.x.push_back(c.penetration);
            sdq.y.push_back(c.sd.q);
        }
        put("platoon_magnitude.svg", {"Hysteresis magnitude", "ACC penetration", "mean max |cross|", {mag}});
        put("platoon_center.svg", {"Loop center density", "ACC penetration", "veh/km", {ck}});
        put("platoon_sd.svg", {"Loop flow SD", "ACC penetration", "veh/h", {sdq}});
    }
    return failed;
}

struct Stages {
    bool patterns = true;
    bool hysteresis = true;
    bool calibrate = true;
    bool validate = true;
    bool platoon = true;
    bool load_posteriors = false;  // read <out>/<group>/posterior.csv instead of calibrating
    std::string report = "report.json";
};

struct PipelineResult {
    Dataset data;
    std::vector<GroupResult> groups;
    std::optional<PlatoonStage> platoon;
    Json report;
};

inline Json jsd_matrix(const std::vector<GroupResult>& groups) {
    std::vector<const GroupResult*> cal;
    for (const auto& g : groups)
        if (g.calibration) cal.push_back(&g);
    Json names = Json::array(), rows = Json::array();
    for (const auto* g : cal) names.push_back(g->split.name);
    for (const auto* a : cal) {
        Json row = Json::array();
        for (const auto* b : cal) row.push_back(jsd(a->calibration->population, b->calibration->population));
        rows.push_back(row);
    }
    return {{"groups", names}, {"values", rows}};
}

inline Json platoon_json(const PlatoonStage& st) {
    Json curves = Json::array();
    for (const auto& c : st.curves)
        curves.push_back({{"penetration", c.penetration},
                          {"runs_ok", c.runs_ok},
                          {"runs_failed", c.runs_failed},
                          {"center_k", c.center.k},
                          {"center_q", c.center.q},
                          {"sd_k", c.sd.k},
                          {"sd_q", c.sd.q},
                          {"magnitude", c.magnitude},
                          {"magnitude_se", c.magnitude_se},
                          {"failures", c.failures}});
    return {{"hdv_group", st.hdv_group}, {"acc_group", st.acc_group}, {"w", st.w}, {"notes", st.notes}, {"curves", curves}};
}

// Runs the configured stages and writes every artifact under cfg.output.
inline PipelineResult run_pipeline(const RunConfig& cfg, const Stages& stages = {}) {
    in_stage("config", [&] {
        cfg.validate();
        return 0;
    });
    if (cfg.threads > 0) worker_count() = cfg.threads;
    const std::filesystem::path out = cfg.output;
    PipelineResult res;
    res.data = in_stage("data", [&] { return load_dataset(cfg); });
    in_stage("data", [&] {
        write_text(out / "config.cfg", serialize_config(cfg));
        write_dataset(out / "data", res.data, cfg);
        return 0;
    });

    for (auto& split : in_stage("split", [&] { return split_groups(res.data.pairs, cfg); })) {
        GroupResult g;
        g.split = std::move(split);
        g.newell = stage_newell(g.split, cfg);
        g.eta_threshold = cfg.eta_threshold.value_or(default_eta_threshold(g.split.cls));
        if (cfg.eta_threshold_iqr) {
            if (auto t = group_eta_threshold(g.split, g.newell.params))
                g.eta_threshold = *t;
            else
                g.excluded.push_back("pattern threshold: too few pre-disturbance levels for an IQR, class default used");
        }
        if (stages.patterns) in_stage("patterns " + g.split.name, [&] { return stage_patterns(g), 0; });
        if (stages.hysteresis) in_stage("hysteresis " + g.split.name, [&] { return stage_hysteresis(g, cfg), 0; });
        if (stages.load_posteriors) {
            const auto path = out / safe_name(g.split.name) / "posterior.csv";
            in_stage("posterior " + g.split.name, [&] {
                std::ifstream in(path);
                if (!in) throw InputError("missing " + path.string() + " (run calibrate-eab first)");
                CalibrationResult c;
                c.population = read_posterior(in);
                g.calibration = std::move(c);
                g.posterior_loaded = true;
                return 0;
            });
        } else if (stages.calibrate) {
            stage_calibrate(g, cfg);
        }
        if (stages.validate && g.calibration) stage_validate(g, cfg);
        res.groups.push_back(std::move(g));
    }
    if (stages.platoon) res.platoon = stage_platoon(res.groups, cfg);

    Json groups = Json::array();
    for (const auto& g : res.groups) {
        groups.push_back(group_json(g));
        in_stage("output", [&] { return write_group_files(out / safe_name(g.split.name), g), 0; });
    }
    Json report = {{"seed", cfg.seed},
                   {"dataset", {{"source", cfg.trajectories.empty() ? "synthetic:" + cfg.synthetic_profile : cfg.trajectories},
                                {"pairs", res.data.pairs.size()},
                                {"warnings", res.data.warnings}}},
                   {"groups", groups}};
    if (stages.calibrate || stages.load_posteriors) report["jsd"] = jsd_matrix(res.groups);
    if (res.platoon) {
        report["platoon"] = platoon_json(*res.platoon);
        std::ostringstream os;
        write_penetration_curves(os, res.platoon->curves);
        in_stage("output", [&] { return write_text(out / "platoon" / "penetration.csv", os.str()), 0; });
    }
    report["plot_failures"] = write_plots(out / "plots", res.groups, res.platoon);
    in_stage("output", [&] { return write_text(out / stages.report, report.dump(2) + "\n"), 0; });
    res.report = std::move(report);
    return res;
}

}  // namespace eabcal
