#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "eabcal/pipeline.hpp"

using namespace eabcal;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> data;
    std::optional<std::string> manifest;
    std::optional<std::size_t> k;
    std::optional<double> lambda;
    std::optional<std::size_t> max_iter;
    std::optional<std::size_t> runs;
    std::optional<std::string> penetrations;
    std::optional<std::size_t> threads;
    std::optional<std::string> profile;
    std::optional<std::size_t> pairs;
    std::optional<double> noise;
    std::optional<double> jitter;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "configuration file (key = value)");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("-o,--out", o.out, "output directory");
    cmd->add_option("--data", o.data, "trajectory CSV (omit for synthetic data)");
    cmd->add_option("--manifest", o.manifest, "pair manifest CSV");
    cmd->add_option("--k", o.k, "particles per population");
    cmd->add_option("--lambda", o.lambda, "tolerance quantile");
    cmd->add_option("--max-iter", o.max_iter, "ABC iteration cap");
    cmd->add_option("--runs", o.runs, "platoon runs per penetration rate");
    cmd->add_option("--penetrations", o.penetrations, "comma-separated ACC penetration rates");
    cmd->add_option("--threads", o.threads, "worker threads (0 = hardware)");
    cmd->add_option("--profile", o.profile, "synthetic profile");
    cmd->add_option("--pairs", o.pairs, "synthetic pairs");
    cmd->add_option("--noise", o.noise, "synthetic position noise SD (m)");
    cmd->add_option("--jitter", o.jitter, "synthetic reaction jitter SD");
}

RunConfig resolve(const Overrides& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    auto set = [&](const char* key, const auto& v) {
        if (!v) return;
        std::ostringstream os;
        os << *v;
        set_config_value(c, key, os.str());
    };
    set("seed", o.seed);
    set("output", o.out);
    set("data.trajectories", o.data);
    set("data.manifest", o.manifest);
    set("abc.k", o.k);
    if (o.lambda) c.lambda = *o.lambda;
    set("abc.max_iter", o.max_iter);
    set("platoon.runs", o.runs);
    set("platoon.penetrations", o.penetrations);
    set("threads", o.threads);
    set("synthetic.profile", o.profile);
    set("synthetic.pairs", o.pairs);
    if (o.noise) c.synthetic_noise = *o.noise;
    if (o.jitter) c.synthetic_jitter = *o.jitter;
    c.validate();
    return c;
}

void print_summary(const Json& r, std::ostream& os) {
    os << "seed " << r.value("seed", 0ull) << ", " << r["dataset"].value("pairs", 0) << " pairs from "
       << r["dataset"].value("source", std::string("?")) << '\n';
    for (const auto& g : r["groups"]) {
        const auto& n = g["newell"];
        os << g["group"].get<std::string>() << ": train " << g["train_pairs"] << ", test " << g["test_pairs"]
           << ", tau " << n["tau"] << " s, delta " << n["delta"] << " m\n";
        if (g.contains("abc") && g["abc"].contains("source"))
            os << "  posterior: " << g["abc"]["particles"] << " particles loaded from disk\n";
        else if (g.contains("abc"))
            os << "  ABC: " << g["abc"]["iterations"] << " iterations, stop " << g["abc"]["stop"].get<std::string>()
               << ", rho " << g["abc"]["rho"] << '\n';
        if (g.contains("patterns")) {
            os << "  patterns:";
            for (const auto& [k, v] : g["patterns"]["table"].items()) os << ' ' << k << '=' << v["count"];
            os << '\n';
        }
        if (g.contains("hysteresis")) {
            os << "  hysteresis:";
            for (const auto& [k, v] : g["hysteresis"].items())
                if (v["count"].get<std::size_t>() > 0) os << ' ' << k << '=' << v["count"];
            os << '\n';
        }
        for (const char* key : {"ws_train", "ws_test"})
            if (g.contains(key)) {
                const auto& w = g[key]["ws"];
                os << "  " << key << ": x " << w["x"] << " m, eta " << w["eta"] << ", critical " << w["critical"] << '\n';
            }
        if (g.contains("hysteresis_reproduction"))
            for (const auto& [k, v] : g["hysteresis_reproduction"].items())
                os << "  " << k << ": d_center " << v["d_center"] << ", d_sd " << v["d_sd"] << ", NRMSE_H " << v["nrmse_h"]
                   << '\n';
        if (!g["excluded"].empty()) os << "  excluded: " << g["excluded"].size() << '\n';
    }
    if (r.contains("platoon")) {
        os << "platoon (HDV " << r["platoon"]["hdv_group"].get<std::string>() << ", ACC "
           << r["platoon"]["acc_group"].get<std::string>() << ")\n";
        for (const auto& c : r["platoon"]["curves"]) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "  p=%.2f  ok=%zu  magnitude=%.1f (se %.1f)  center=(%.2f, %.1f)\n",
                          c["penetration"].get<double>(), c["runs_ok"].get<std::size_t>(), c["magnitude"].get<double>(),
                          c["magnitude_se"].get<double>(), c["center_k"].get<double>(), c["center_q"].get<double>());
            os << buf;
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Calibration and analysis of car-following reaction (EAB) models"};
    app.require_subcommand(1);
    Overrides o;
    std::string report_path;

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset with its planted truth");
    auto* newell = app.add_subcommand("calibrate-newell", "fit Newell tau and delta per group");
    auto* eab = app.add_subcommand("calibrate-eab", "run ABC-ASMC per group and write posteriors");
    auto* cls = app.add_subcommand("classify", "classify reaction patterns");
    auto* val = app.add_subcommand("validate", "WS metric and hysteresis reproduction from saved posteriors");
    auto* hys = app.add_subcommand("hysteresis", "measure and classify hysteresis loops");
    auto* plat = app.add_subcommand("platoon", "ACC penetration sweep from saved posteriors");
    auto* pipe = app.add_subcommand("pipeline", "run every stage");
    auto* rep = app.add_subcommand("report", "summarize a report file");
    for (auto* c : {gen, newell, eab, cls, val, hys, plat, pipe}) add_common(c, o);
    rep->add_option("file", report_path, "report JSON")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (rep->parsed()) {
            std::ifstream in(report_path);
            print_summary(Json::parse(in), std::cout);
            return 0;
        }
        const RunConfig cfg = resolve(o);
        if (gen->parsed()) {
            if (!cfg.trajectories.empty()) throw ConfigError("generate: --data does not apply");
            const auto d = load_dataset(cfg);
            write_dataset(std::filesystem::path(cfg.output) / "data", d, cfg);
            std::cout << "wrote " << d.pairs.size() << " pairs to " << (std::filesystem::path(cfg.output) / "data").string()
                      << '\n';
            return 0;
        }
        Stages st;
        st.patterns = st.hysteresis = st.calibrate = st.validate = st.platoon = false;
        if (newell->parsed()) st.report = "newell.json";
        if (eab->parsed()) st.calibrate = true, st.report = "calibration.json";
        if (cls->parsed()) st.patterns = true, st.report = "patterns.json";
        if (hys->parsed()) st.hysteresis = true, st.report = "hysteresis.json";
        if (val->parsed()) st.load_posteriors = st.validate = true, st.report = "validation.json";
        if (plat->parsed()) st.load_posteriors = st.platoon = true, st.report = "platoon.json";
        if (pipe->parsed()) st = Stages{};
        const auto res = run_pipeline(cfg, st);
        print_summary(res.report, std::cout);
        std::cout << "wrote " << (std::filesystem::path(cfg.output) / st.report).string() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "eabcal: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
