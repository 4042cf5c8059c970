#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eabcal/abc_smc.hpp"
#include "eabcal/error.hpp"
#include "eabcal/hysteresis.hpp"
#include "eabcal/newell.hpp"
#include "eabcal/synthetic.hpp"

namespace eabcal {

// Everything a pipeline run needs. Text form is `key = value` lines; `#`
// starts a comment. Optional numeric fields accept `auto`.
struct RunConfig {
    // Data: a trajectory table plus manifest, or a synthetic scenario when
    // `trajectories` is empty.
    std::string trajectories;
    std::string manifest;
    double dt = 0.1;
    std::string group_by = "class";  // class | label
    std::string synthetic_profile = "mixed_fleet";
    std::size_t synthetic_pairs = 16;
    double synthetic_noise = 0.0;
    double synthetic_jitter = 0.0;

    std::vector<double> tau_grid = NewellGrid{}.tau;
    std::vector<double> delta_grid = NewellGrid{}.delta;
    double train_fraction = 0.75;

    std::array<Bounds, EABParams::dim> acc_prior = PriorSpec::for_class(VehicleClass::ACC).bounds;
    std::array<Bounds, EABParams::dim> hdv_prior = PriorSpec::for_class(VehicleClass::HDV).bounds;
    std::size_t k = 500;
    double lambda = 0.95;
    std::optional<double> gamma0;  // default: 95th percentile of prior GOFs
    double rho_stop = 0.01;
    std::size_t max_iter = 150;
    GofWeights weights{};

    std::optional<double> eta_threshold;  // default: per vehicle class
    bool eta_threshold_iqr = false;       // derive from the spread of pre-disturbance eta
    std::optional<HysteresisThresholds> thresholds;  // default: per speed regime
    double zone_dt = 3.0;

    std::size_t platoon_vehicles = 20;
    std::size_t platoon_runs = 50;
    std::vector<double> penetrations{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

    std::uint64_t seed = 1;
    std::string output = "out";
    std::size_t threads = 0;  // 0: hardware concurrency

    PriorSpec prior_for(VehicleClass c) const { return PriorSpec(c == VehicleClass::ACC ? acc_prior : hdv_prior); }

    void validate() const;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // Prefer the shortest representation that round-trips.
    for (int p = 1; p <= 17; ++p) {
        char s[40];
        std::snprintf(s, sizeof s, "%.*g", p, v);
        if (std::strtod(s, nullptr) == v) return s;
    }
    return buf;
}

inline double num(const std::string& key, const std::string& s) {
    const auto t = trim(s);
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v))
        throw ConfigError(key + ": expected a number, got '" + s + "'");
    return v;
}

inline std::size_t count(const std::string& key, const std::string& s) {
    const double v = num(key, s);
    if (v < 0.0 || v != std::floor(v) || v > 1e12) throw ConfigError(key + ": expected a nonnegative integer, got '" + s + "'");
    return static_cast<std::size_t>(v);
}

inline std::vector<double> list(const std::string& key, const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(num(key, item));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

inline std::string join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
    return out;
}

inline Bounds bounds(const std::string& key, const std::string& s) {
    const auto v = list(key, s);
    if (v.size() != 2) throw ConfigError(key + ": expected 'lo,hi'");
    return {v[0], v[1]};
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<Field>& fields() {
    static const std::vector<Field> f = [] {
        std::vector<Field> v;
        auto str = [&](std::string key, std::string RunConfig::*m) {
            v.push_back({key, [m](const RunConfig& c) { return c.*m; },
                         [m](RunConfig& c, const std::string& s) { c.*m = s; }});
        };
        auto dbl = [&](std::string key, double RunConfig::*m) {
            v.push_back({key, [m](const RunConfig& c) { return fmt(c.*m); },
                         [m, key](RunConfig& c, const std::string& s) { c.*m = num(key, s); }});
        };
        auto cnt = [&](std::string key, std::size_t RunConfig::*m) {
            v.push_back({key, [m](const RunConfig& c) { return std::to_string(c.*m); },
                         [m, key](RunConfig& c, const std::string& s) { c.*m = count(key, s); }});
        };
        auto lst = [&](std::string key, std::vector<double> RunConfig::*m) {
            v.push_back({key, [m](const RunConfig& c) { return join(c.*m); },
                         [m, key](RunConfig& c, const std::string& s) { c.*m = list(key, s); }});
        };
        auto opt = [&](std::string key, std::optional<double> RunConfig::*m) {
            v.push_back({key, [m](const RunConfig& c) { return (c.*m) ? fmt(*(c.*m)) : std::string("auto"); },
                         [m, key](RunConfig& c, const std::string& s) {
                             if (trim(s) == "auto")
                                 (c.*m).reset();
                             else
                                 c.*m = num(key, s);
                         }});
        };
        str("data.trajectories", &RunConfig::trajectories);
        str("data.manifest", &RunConfig::manifest);
        dbl("data.dt", &RunConfig::dt);
        str("data.group_by", &RunConfig::group_by);
        str("synthetic.profile", &RunConfig::synthetic_profile);
        cnt("synthetic.pairs", &RunConfig::synthetic_pairs);
        dbl("synthetic.noise", &RunConfig::synthetic_noise);
        dbl("synthetic.jitter", &RunConfig::synthetic_jitter);
        lst("newell.tau", &RunConfig::tau_grid);
        lst("newell.delta", &RunConfig::delta_grid);
        dbl("split.train_fraction", &RunConfig::train_fraction);
        for (auto [cls, m] : {std::pair{"acc", &RunConfig::acc_prior}, std::pair{"hdv", &RunConfig::hdv_prior}})
            for (std::size_t i = 0; i < EABParams::dim; ++i) {
                const std::string key = std::string("prior.") + cls + "." + EABParams::names[i];
                v.push_back({key, [m, i](const RunConfig& c) { return fmt((c.*m)[i].lo) + "," + fmt((c.*m)[i].hi); },
                             [m, i, key](RunConfig& c, const std::string& s) { (c.*m)[i] = bounds(key, s); }});
            }
        cnt("abc.k", &RunConfig::k);
        dbl("abc.lambda", &RunConfig::lambda);
        opt("abc.gamma0", &RunConfig::gamma0);
        dbl("abc.rho_stop", &RunConfig::rho_stop);
        cnt("abc.max_iter", &RunConfig::max_iter);
        v.push_back({"gof.weights",
                     [](const RunConfig& c) { return join({c.weights.c1, c.weights.c2, c.weights.c3}); },
                     [](RunConfig& c, const std::string& s) {
                         const auto w = list("gof.weights", s);
                         if (w.size() != 3) throw ConfigError("gof.weights: expected 'c1,c2,c3'");
                         c.weights = {w[0], w[1], w[2]};
                     }});
        v.push_back({"pattern.eta_threshold",
                     [](const RunConfig& c) {
                         return c.eta_threshold_iqr ? std::string("iqr")
                                                    : c.eta_threshold ? fmt(*c.eta_threshold) : std::string("auto");
                     },
                     [](RunConfig& c, const std::string& s) {
                         const auto t = trim(s);
                         c.eta_threshold_iqr = t == "iqr";
                         if (t == "auto" || t == "iqr")
                             c.eta_threshold.reset();
                         else
                             c.eta_threshold = num("pattern.eta_threshold", s);
                     }});
        v.push_back({"hysteresis.thresholds",
                     [](const RunConfig& c) {
                         return c.thresholds ? join({c.thresholds->h_t, c.thresholds->h_t0, c.thresholds->h_t1})
                                             : std::string("auto");
                     },
                     [](RunConfig& c, const std::string& s) {
                         if (trim(s) == "auto") {
                             c.thresholds.reset();
                             return;
                         }
                         const auto w = list("hysteresis.thresholds", s);
                         if (w.size() != 3) throw ConfigError("hysteresis.thresholds: expected 'H_T,H_T0,H_T1' or auto");
                         c.thresholds = HysteresisThresholds{w[0], w[1], w[2]};
                     }});
        dbl("hysteresis.zone_dt", &RunConfig::zone_dt);
        cnt("platoon.vehicles", &RunConfig::platoon_vehicles);
        cnt("platoon.runs", &RunConfig::platoon_runs);
        lst("platoon.penetrations", &RunConfig::penetrations);
        v.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                     [](RunConfig& c, const std::string& s) {
                         const auto t = trim(s);
                         std::size_t pos = 0;
                         try {
                             c.seed = std::stoull(t, &pos);
                         } catch (const std::exception&) {
                             pos = 0;
                         }
                         if (t.empty() || pos != t.size() || t.front() == '-')
                             throw ConfigError("seed: expected a nonnegative integer, got '" + s + "'");
                     }});
        str("output", &RunConfig::output);
        cnt("threads", &RunConfig::threads);
        return v;
    }();
    return f;
}

}  // namespace config_detail

// Applies one `key = value` assignment.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : config_detail::fields())
        if (f.key == key) {
            f.set(cfg, config_detail::trim(value));
            return;
        }
    throw ConfigError("unknown configuration key '" + key + "'");
}

inline RunConfig parse_config(std::istream& in) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        const auto key = config_detail::trim(line.substr(0, eq));
        if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        try {
            set_config_value(cfg, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration file " + path);
    return parse_config(in);
}

inline void write_config(std::ostream& os, const RunConfig& cfg) {
    for (const auto& f : config_detail::fields()) os << f.key << " = " << f.get(cfg) << '\n';
}

inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    write_config(os, cfg);
    return os.str();
}

inline void RunConfig::validate() const {
    if (!(dt > 0.0)) throw ConfigError("data.dt must be positive");
    if (trajectories.empty() != manifest.empty())
        throw ConfigError("data.trajectories and data.manifest must be given together");
    if (group_by != "class" && group_by != "label") throw ConfigError("data.group_by must be 'class' or 'label'");
    if (trajectories.empty()) {
        const auto& known = synthetic_profiles();
        if (std::find(known.begin(), known.end(), synthetic_profile) == known.end())
            throw ConfigError("unknown synthetic profile '" + synthetic_profile + "'");
        if (synthetic_pairs < 2) throw ConfigError("synthetic.pairs must be at least 2");
        if (synthetic_noise < 0.0 || synthetic_jitter < 0.0) throw ConfigError("synthetic noise levels must be nonnegative");
    }
    for (const auto* g : {&tau_grid, &delta_grid})
        for (double v : *g)
            if (!(v > 0.0)) throw ConfigError("newell grids must hold positive values");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split.train_fraction must lie in (0, 1)");
    try {
        PriorSpec(acc_prior).validate();
        PriorSpec(hdv_prior).validate();
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    if (k < 20) throw ConfigError("abc.k must be at least 20");
    if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("abc.lambda must lie in (0, 1)");
    if (static_cast<std::size_t>(std::floor(lambda * static_cast<double>(k))) >= k ||
        static_cast<std::size_t>(std::floor(lambda * static_cast<double>(k))) < 1)
        throw ConfigError("abc.lambda and abc.k leave no particles to perturb");
    if (gamma0 && !(*gamma0 > 0.0)) throw ConfigError("abc.gamma0 must be positive");
    if (!(rho_stop > 0.0 && rho_stop < 1.0)) throw ConfigError("abc.rho_stop must lie in (0, 1)");
    weights.validate();
    if (eta_threshold && !(*eta_threshold > 0.0)) throw ConfigError("pattern.eta_threshold must be positive");
    if (thresholds && !(thresholds->h_t >= 0.0 && thresholds->h_t0 >= 0.0 && thresholds->h_t1 >= 0.0))
        throw ConfigError("hysteresis.thresholds must be nonnegative");
    if (!(zone_dt > 0.0)) throw ConfigError("hysteresis.zone_dt must be positive");
    if (platoon_vehicles < 2) throw ConfigError("platoon.vehicles must be at least 2");
    if (platoon_runs < 1) throw ConfigError("platoon.runs must be at least 1");
    for (double p : penetrations)
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("platoon.penetrations must lie in [0, 1]");
    if (output.empty()) throw ConfigError("output must not be empty");
}

}  // namespace eabcal
