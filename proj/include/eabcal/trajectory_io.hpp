#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "eabcal/trajectory.hpp"

namespace eabcal {

// Column names of the tabular trajectory file. An empty `v` means the file
// carries positions only and speeds are reconstructed.
struct ColumnSchema {
    std::string vehicle_id = "vehicle_id";
    std::string t = "t";
    std::string x = "x";
    std::string v = "v";
    char delimiter = ',';
};

struct ManifestEntry {
    std::string leader_id;
    std::string follower_id;
    PairLabel label;
};

struct LoadOptions {
    double min_overlap = 30.0;    // s
    double kinematic_tol = 0.5;   // m/s
};

struct LoadResult {
    std::vector<CFPair> pairs;
    std::vector<std::string> warnings;
};

namespace io_detail {

inline std::vector<std::string> split(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, delim)) {
        while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
        std::size_t b = 0;
        while (b < field.size() && field[b] == ' ') ++b;
        out.push_back(field.substr(b));
    }
    if (!line.empty() && line.back() == delim) out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw InputError("schema mismatch: cannot parse " + what + " value '" + s + "'");
    return v;
}

inline std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("schema mismatch: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

inline std::string format_fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s(buf);
    if (s == "-0.000000") s = "0.000000";
    return s;
}

struct RawSeries {
    std::vector<double> t, x, v;
};

// Turns raw rows into a uniform trajectory. Gaps up to 2*dt are bridged by
// interpolation; longer gaps split the series and the longest run is kept.
inline Trajectory regularize(const std::string& id, const RawSeries& raw, bool has_v, std::vector<std::string>& warnings) {
    const std::size_t n = raw.t.size();
    if (n < 2) throw InputError("trajectory " + id + " has fewer than 2 rows");
    std::vector<double> diffs;
    for (std::size_t i = 1; i < n; ++i) {
        const double d = raw.t[i] - raw.t[i - 1];
        if (!(d > 0.0)) throw InputError("non-monotone time in trajectory " + id);
        diffs.push_back(d);
    }
    std::vector<double> sorted = diffs;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
    const double dt = sorted[sorted.size() / 2];

    std::size_t best_lo = 0, best_hi = 0, lo = 0;
    for (std::size_t i = 1; i <= n; ++i) {
        if (i == n || diffs[i - 1] > 2.0 * dt + 1e-9) {
            if (i - 1 - lo > best_hi - best_lo) { best_lo = lo; best_hi = i - 1; }
            lo = i;
        }
    }
    if (best_hi - best_lo + 1 < n)
        warnings.push_back("trajectory " + id + ": rows beyond a gap > 2*dt rejected (" +
                           std::to_string(n - (best_hi - best_lo + 1)) + " rows)");

    bool uniform = true;
    for (std::size_t i = best_lo + 1; i <= best_hi; ++i)
        if (std::abs(raw.t[i] - raw.t[i - 1] - dt) > 1e-6) uniform = false;

    Trajectory tr;
    tr.vehicle_id = id;
    tr.dt = dt;
    if (uniform) {
        for (std::size_t i = best_lo; i <= best_hi; ++i) tr.points.push_back({raw.t[i], raw.x[i], has_v ? raw.v[i] : 0.0});
    } else {
        const double t0 = raw.t[best_lo];
        const auto m = static_cast<std::size_t>(std::floor((raw.t[best_hi] - t0) / dt + 1e-6)) + 1;
        std::size_t j = best_lo;
        for (std::size_t k = 0; k < m; ++k) {
            const double t = t0 + static_cast<double>(k) * dt;
            while (j + 1 < best_hi && raw.t[j + 1] <= t) ++j;
            const std::size_t j1 = std::min(j + 1, best_hi);
            const double span = raw.t[j1] - raw.t[j];
            const double f = span > 0.0 ? std::clamp((t - raw.t[j]) / span, 0.0, 1.0) : 0.0;
            const double x = raw.x[j] + f * (raw.x[j1] - raw.x[j]);
            const double v = has_v ? raw.v[j] + f * (raw.v[j1] - raw.v[j]) : 0.0;
            tr.points.push_back({t, x, v});
        }
    }
    if (!has_v) {
        const auto vs = finite_difference_speeds(tr.positions(), dt);
        for (std::size_t i = 0; i < vs.size(); ++i) tr.points[i].v = std::max(0.0, vs[i]);
    }
    return tr;
}

}  // namespace io_detail

// Reads every vehicle of a delimiter-separated trajectory table, keyed by id.
inline std::map<std::string, Trajectory> read_trajectory_table(std::istream& in, const ColumnSchema& schema,
                                                               std::vector<std::string>& warnings) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("schema mismatch: empty trajectory file");
    const auto header = io_detail::split(line, schema.delimiter);
    const auto c_id = io_detail::column_index(header, schema.vehicle_id);
    const auto c_t = io_detail::column_index(header, schema.t);
    const auto c_x = io_detail::column_index(header, schema.x);
    const bool has_v = !schema.v.empty() && std::find(header.begin(), header.end(), schema.v) != header.end();
    const std::size_t c_v = has_v ? io_detail::column_index(header, schema.v) : 0;

    std::map<std::string, io_detail::RawSeries> raw;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto f = io_detail::split(line, schema.delimiter);
        if (f.size() != header.size())
            throw InputError("schema mismatch: row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                             " fields, expected " + std::to_string(header.size()));
        auto& series = raw[f[c_id]];
        series.t.push_back(io_detail::parse_double(f[c_t], "t"));
        series.x.push_back(io_detail::parse_double(f[c_x], "x"));
        series.v.push_back(has_v ? io_detail::parse_double(f[c_v], "v") : 0.0);
    }
    std::map<std::string, Trajectory> out;
    for (const auto& [id, series] : raw) {
        auto tr = io_detail::regularize(id, series, has_v, warnings);
        for (auto& w : validate_trajectory(tr)) warnings.push_back(std::move(w));
        out.emplace(id, std::move(tr));
    }
    return out;
}

inline std::vector<ManifestEntry> read_manifest(std::istream& in, char delimiter = ',') {
    std::string line;
    if (!std::getline(in, line)) throw InputError("schema mismatch: empty manifest");
    const auto header = io_detail::split(line, delimiter);
    const auto c_l = io_detail::column_index(header, "leader_id");
    const auto c_f = io_detail::column_index(header, "follower_id");
    const auto c_c = io_detail::column_index(header, "vehicle_class");
    const auto c_m = io_detail::column_index(header, "car_model");
    const auto c_e = io_detail::column_index(header, "engine_mode");
    const auto c_s = io_detail::column_index(header, "speed_regime");
    std::vector<ManifestEntry> out;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto f = io_detail::split(line, delimiter);
        if (f.size() != header.size()) throw InputError("schema mismatch: manifest row has wrong field count");
        ManifestEntry e;
        e.leader_id = f[c_l];
        e.follower_id = f[c_f];
        e.label.vehicle_class = parse_vehicle_class(f[c_c]);
        e.label.car_model = f[c_m];
        e.label.engine_mode = f[c_e];
        e.label.speed_regime = parse_speed_regime(f[c_s]);
        out.push_back(std::move(e));
    }
    return out;
}

// Pairs the manifest entries with the table. Pairs whose common window is too
// short are skipped with a warning; overtakes are errors.
inline LoadResult assemble_pairs(const std::map<std::string, Trajectory>& table, const std::vector<ManifestEntry>& manifest,
                                 const LoadOptions& opt = {}) {
    LoadResult res;
    for (const auto& e : manifest) {
        auto l = table.find(e.leader_id);
        auto f = table.find(e.follower_id);
        if (l == table.end() || f == table.end())
            throw InputError("manifest references unknown vehicle " + (l == table.end() ? e.leader_id : e.follower_id));
        if (std::abs(l->second.dt - f->second.dt) > 1e-9)
            throw InputError("pair " + e.leader_id + ">" + e.follower_id + ": dt mismatch");
        const double overlap = std::min(l->second.t_end(), f->second.t_end()) - std::max(l->second.t0(), f->second.t0());
        if (overlap < opt.min_overlap - 1e-9) {
            res.warnings.push_back("pair " + e.leader_id + ">" + e.follower_id + " rejected: common window " +
                                   io_detail::format_fixed(overlap, 1) + " s");
            continue;
        }
        res.pairs.push_back(make_pair(l->second, f->second, e.label, opt.min_overlap));
    }
    return res;
}

inline LoadResult load_trajectories(const std::filesystem::path& data, const std::filesystem::path& manifest,
                                    const ColumnSchema& schema = {}, const LoadOptions& opt = {}) {
    std::ifstream din(data);
    if (!din) throw InputError("cannot open trajectory file " + data.string());
    std::ifstream min(manifest);
    if (!min) throw InputError("cannot open manifest " + manifest.string());
    std::vector<std::string> warnings;
    auto table = read_trajectory_table(din, schema, warnings);
    auto entries = read_manifest(min, schema.delimiter);
    auto res = assemble_pairs(table, entries, opt);
    res.warnings.insert(res.warnings.begin(), warnings.begin(), warnings.end());
    return res;
}

// Canonical output: header row and six decimals for every numeric field.
inline void write_trajectories(std::ostream& out, const std::vector<const Trajectory*>& trajs) {
    out << "vehicle_id,t,x,v\n";
    for (const auto* tr : trajs)
        for (const auto& p : tr->points)
            out << tr->vehicle_id << ',' << io_detail::format_fixed(p.t) << ',' << io_detail::format_fixed(p.x) << ','
                << io_detail::format_fixed(p.v) << '\n';
}

inline void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
    out << "leader_id,follower_id,vehicle_class,car_model,engine_mode,speed_regime\n";
    for (const auto& e : entries)
        out << e.leader_id << ',' << e.follower_id << ',' << to_string(e.label.vehicle_class) << ',' << e.label.car_model
            << ',' << e.label.engine_mode << ',' << to_string(e.label.speed_regime) << '\n';
}

// Writes the pairs' distinct trajectories plus a manifest describing them.
inline void save_pairs(const std::filesystem::path& data, const std::filesystem::path& manifest, const std::vector<CFPair>& pairs) {
    std::vector<const Trajectory*> trajs;
    std::vector<ManifestEntry> entries;
    std::map<std::string, bool> seen;
    for (const auto& p : pairs) {
        for (const auto* tr : {&p.leader, &p.follower})
            if (!seen[tr->vehicle_id]) {
                seen[tr->vehicle_id] = true;
                trajs.push_back(tr);
            }
        entries.push_back({p.leader.vehicle_id, p.follower.vehicle_id, p.label});
    }
    std::ofstream dout(data);
    if (!dout) throw InputError("cannot write " + data.string());
    write_trajectories(dout, trajs);
    std::ofstream mout(manifest);
    if (!mout) throw InputError("cannot write " + manifest.string());
    write_manifest(mout, entries);
}

}  // namespace eabcal
