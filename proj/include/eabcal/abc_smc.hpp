#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eabcal/eab.hpp"
#include "eabcal/error.hpp"
#include "eabcal/newell.hpp"
#include "eabcal/parallel.hpp"
#include "eabcal/rng.hpp"
#include "eabcal/stats.hpp"
#include "eabcal/trajectory_io.hpp"

namespace eabcal {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Bounds {
    double lo = 0.0;
    double hi = 1.0;

    bool contains(double v) const { return v >= lo && v <= hi; }
    double width() const { return hi - lo; }
};

// Independent uniform prior per component, restricted to valid parameter
// vectors (sign-consistent segments).
struct PriorSpec {
    std::array<Bounds, EABParams::dim> bounds{};

    PriorSpec() : PriorSpec({0.5, 1.5}, {-0.15, 0.15}, {0.0, 25.0}) {}
    PriorSpec(Bounds eta, Bounds eps, Bounds t1) : bounds{eta, eta, eta, eta, eps, eps, eps, t1} {}
    explicit PriorSpec(const std::array<Bounds, EABParams::dim>& b) : bounds(b) {}

    static PriorSpec for_class(VehicleClass c) {
        return c == VehicleClass::ACC ? PriorSpec({0.5, 1.5}, {-0.15, 0.15}, {0.0, 25.0})
                                      : PriorSpec({0.3, 3.0}, {-0.15, 0.15}, {0.0, 25.0});
    }

    void validate() const {
        for (std::size_t i = 0; i < EABParams::dim; ++i)
            if (!(bounds[i].lo < bounds[i].hi))
                throw InputError(std::string("prior bounds for ") + EABParams::names[i] + " must satisfy lo < hi");
        for (std::size_t i = 0; i < 4; ++i)
            if (!(bounds[i].lo > 0.0)) throw InputError("prior eta levels must be positive");
    }

    bool contains(const EABParams& th) const {
        const auto a = th.to_array();
        for (std::size_t i = 0; i < EABParams::dim; ++i)
            if (!bounds[i].contains(a[i])) return false;
        return true;
    }

    double iqr(std::size_t component) const { return 0.5 * bounds[component].width(); }

    EABParams draw(Rng& rng) const {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            std::array<double, EABParams::dim> a{};
            for (std::size_t i = 0; i < EABParams::dim; ++i)
                a[i] = std::uniform_real_distribution<double>(bounds[i].lo, bounds[i].hi)(rng);
            const auto th = EABParams::from_array(a);
            if (is_valid(th)) return th;
        }
        throw InputError("prior support contains no valid parameter vectors");
    }
};

struct Particle {
    EABParams theta;
    double gof = kInf;
    double weight = 0.0;
};

struct ParticlePopulation {
    std::vector<Particle> particles;
    std::size_t iteration = 0;
    double gamma = kInf;
    double rho = 1.0;
    std::uint64_t seed = 0;

    std::size_t size() const { return particles.size(); }

    std::vector<double> component(std::size_t i) const {
        std::vector<double> out;
        out.reserve(particles.size());
        for (const auto& p : particles) out.push_back(p.theta.to_array()[i]);
        return out;
    }

    std::vector<double> gofs() const {
        std::vector<double> out;
        out.reserve(particles.size());
        for (const auto& p : particles) out.push_back(p.gof);
        return out;
    }
};

struct GofWeights {
    double c1 = 0.4;
    double c2 = 0.4;
    double c3 = 0.2;

    void validate() const {
        if (c1 < 0.0 || c2 < 0.0 || c3 < 0.0) throw ConfigError("GOF weights must be nonnegative");
        if (std::abs(c1 + c2 + c3 - 1.0) > 1e-9) throw ConfigError("GOF weights must sum to 1");
    }
};

// Position and reaction series on a common set of samples.
struct GofSeries {
    std::vector<double> x;
    std::vector<double> eta;
};

// c1 NRMSE(x) + c2 NRMSE(eta) + c3 NRMSE(eta_c), where eta_c are the samples at
// the observed maximum, the observed minimum and the largest deviation.
inline double gof_eab(const GofSeries& sim, const GofSeries& obs, const GofWeights& cw) {
    if (sim.eta.size() != obs.eta.size() || obs.eta.empty()) throw InputError("gof_eab: eta series not aligned");
    const auto& o = obs.eta;
    const auto& s = sim.eta;
    const auto imax = static_cast<std::size_t>(std::max_element(o.begin(), o.end()) - o.begin());
    const auto imin = static_cast<std::size_t>(std::min_element(o.begin(), o.end()) - o.begin());
    std::size_t idev = 0;
    for (std::size_t i = 1; i < o.size(); ++i)
        if (std::abs(s[i] - o[i]) > std::abs(s[idev] - o[idev])) idev = i;
    const std::array<double, 3> oc{o[imax], o[imin], o[idev]};
    const std::array<double, 3> sc{s[imax], s[imin], s[idev]};
    return cw.c1 * nrmse(obs.x, sim.x) + cw.c2 * nrmse(o, s) + cw.c3 * nrmse(oc, sc);
}

// A training pair with its measured reaction series, computed once.
struct PairObservation {
    CFPair pair;
    EtaSeries eta;
    std::vector<std::size_t> eta_index;  // valid samples
    GofSeries obs;
    double origin = 0.0;
};

inline PairObservation observe_pair(const CFPair& pair, const NewellParams& p, const EtaMeasureOptions& opt = {}) {
    PairObservation o;
    o.pair = pair;
    o.origin = pair.leader.t0();
    o.eta = measure_eta(pair, p, opt);
    for (std::size_t i = 0; i < o.eta.t.size(); ++i)
        if (o.eta.valid[i]) {
            o.eta_index.push_back(i);
            o.obs.eta.push_back(o.eta.eta[i]);
        }
    if (o.eta_index.size() < 3) throw InputError("pair " + pair.id() + ": too few valid reaction samples");
    o.obs.x = pair.follower.positions();
    return o;
}

inline std::vector<PairObservation> observe_pairs(std::span<const CFPair> pairs, const NewellParams& p,
                                                  const EtaMeasureOptions& opt = {}) {
    std::vector<PairObservation> out(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) { out[i] = observe_pair(pairs[i], p, opt); });
    return out;
}

// GOF of theta on one pair; +inf for parameters the model cannot simulate.
inline double pair_gof(const EABParams& th, const PairObservation& o, const NewellParams& p, const GofWeights& cw) {
    if (!is_valid(th)) return kInf;
    Trajectory sim;
    try {
        sim = simulate_follower(o.pair.leader, p, th, o.origin);
    } catch (const SimulationError&) {
        return kInf;
    }
    const EtaCurve curve(th);
    GofSeries s;
    s.x = sim.positions();
    s.eta.reserve(o.eta_index.size());
    for (std::size_t i : o.eta_index) s.eta.push_back(curve(o.eta.t[i] - o.origin));
    return gof_eab(s, o.obs, cw);
}

// Mean GOF over pairs.
inline double particle_gof(const EABParams& th, std::span<const PairObservation> data, const NewellParams& p,
                           const GofWeights& cw) {
    if (data.empty()) throw InputError("particle_gof: no training pairs");
    double total = 0.0;
    for (const auto& o : data) {
        const double g = pair_gof(th, o, p, cw);
        if (!std::isfinite(g)) return kInf;
        total += g;
    }
    return total / static_cast<double>(data.size());
}

inline ParticlePopulation init_population(const PriorSpec& prior, std::size_t K, double gamma0, std::uint64_t seed) {
    if (K < 2) throw InputError("init_population: K must be at least 2");
    prior.validate();
    ParticlePopulation pop;
    pop.seed = seed;
    pop.gamma = gamma0;
    pop.particles.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        auto rng = substream(seed, {0, k});
        pop.particles[k] = {prior.draw(rng), kInf, 1.0 / static_cast<double>(K)};
    }
    return pop;
}

inline void evaluate_population(ParticlePopulation& pop, std::span<const PairObservation> data, const NewellParams& p,
                                const GofWeights& cw) {
    parallel_for(pop.size(), [&](std::size_t k) {
        pop.particles[k].gof = particle_gof(pop.particles[k].theta, data, p, cw);
    });
}

struct AsmcOptions {
    double proposal_cap_factor = 100.0;  // proposals per perturbed slot
    double kernel_var_floor = 1e-8;
    std::size_t max_kernel_redraws = 1000;
    GofWeights cw;
};

// One resample-and-perturb step. Proposal j of iteration l uses its own random
// substream, proposals are evaluated in parallel batches and scanned in index
// order, so the result does not depend on the thread count.
inline ParticlePopulation asmc_iterate(const ParticlePopulation& pop, std::span<const PairObservation> data,
                                       const NewellParams& p, const PriorSpec& prior, double lambda,
                                       const AsmcOptions& opt = {}) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw InputError("asmc_iterate: lambda must lie in (0, 1)");
    const std::size_t K = pop.size();
    if (K < 2) throw InputError("asmc_iterate: population too small");

    const double gamma = std::min(stats::quantile(pop.gofs(), lambda), pop.gamma);
    const std::size_t n_alive = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::floor(lambda * static_cast<double>(K) + 1e-9)), 1, K - 1);
    const std::size_t n_pert = K - n_alive;

    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pop.particles[a].gof < pop.particles[b].gof; });

    ParticlePopulation next;
    next.seed = pop.seed;
    next.iteration = pop.iteration + 1;
    next.gamma = gamma;
    next.particles.reserve(K);
    for (std::size_t r = 0; r < n_alive; ++r) next.particles.push_back(pop.particles[order[r]]);

    std::array<double, EABParams::dim> sd{};
    for (std::size_t i = 0; i < EABParams::dim; ++i) {
        std::vector<double> v;
        v.reserve(n_alive);
        for (std::size_t r = 0; r < n_alive; ++r) v.push_back(next.particles[r].theta.to_array()[i]);
        sd[i] = std::sqrt(std::max(2.0 * stats::variance(v), opt.kernel_var_floor));
    }

    const auto cap = static_cast<std::size_t>(std::ceil(opt.proposal_cap_factor * static_cast<double>(n_pert)));
    std::size_t proposed = 0;
    std::size_t accepted = 0;
    double rho_guess = std::max(pop.rho, 0.01);
    while (accepted < n_pert && proposed < cap) {
        const double want = static_cast<double>(n_pert - accepted) / rho_guess * 1.2;
        const std::size_t batch = std::min(cap - proposed, std::max<std::size_t>(n_pert, static_cast<std::size_t>(want)));
        std::vector<Particle> cand(batch);
        parallel_for(batch, [&](std::size_t b) {
            auto rng = substream(pop.seed, {next.iteration, proposed + b});
            const std::size_t src = std::uniform_int_distribution<std::size_t>(0, n_alive - 1)(rng);
            const auto base = next.particles[src].theta.to_array();
            // Kernel truncated to the valid prior support: noise is redrawn
            // until the proposal has nonzero prior density.
            for (std::size_t attempt = 0; attempt < opt.max_kernel_redraws; ++attempt) {
                auto a = base;
                for (std::size_t i = 0; i < EABParams::dim; ++i)
                    a[i] += sd[i] * std::normal_distribution<double>()(rng);
                const auto th = EABParams::from_array(a);
                if (prior.contains(th) && is_valid(th)) {
                    cand[b].theta = th;
                    cand[b].gof = particle_gof(th, data, p, opt.cw);
                    return;
                }
            }
            cand[b].gof = kInf;
        });
        std::size_t b = 0;
        for (; b < batch && accepted < n_pert; ++b)
            if (std::isfinite(cand[b].gof) && cand[b].gof <= gamma) {
                next.particles.push_back(cand[b]);
                ++accepted;
            }
        proposed += b;
        rho_guess = std::max(static_cast<double>(accepted) / static_cast<double>(proposed), 0.005);
    }
    next.rho = static_cast<double>(accepted) / static_cast<double>(proposed);
    if (accepted < n_pert)
        throw ProposalCapError("proposal cap of " + std::to_string(cap) + " reached at iteration " +
                                   std::to_string(next.iteration) + " with " + std::to_string(accepted) + "/" +
                                   std::to_string(n_pert) + " perturbed particles accepted",
                               accepted, n_pert, next.rho);
    for (auto& pt : next.particles) pt.weight = 1.0 / static_cast<double>(K);
    return next;
}

struct DiagnosticsRow {
    std::size_t iteration = 0;
    double gamma = 0.0;
    double rho = 0.0;
};

enum class StopReason { RhoBelowThreshold, MaxIterations, ProposalCap };

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::RhoBelowThreshold: return "rho_below_threshold";
        case StopReason::MaxIterations: return "max_iterations";
        case StopReason::ProposalCap: return "proposal_cap";
    }
    return "?";
}

struct CalibrationSettings {
    std::size_t K = 500;
    double lambda = 0.95;
    double rho_stop = 0.01;
    std::size_t max_iter = 150;
    std::optional<double> gamma0;  // default: 95th percentile of the prior GOFs
    std::uint64_t seed = 1;
    AsmcOptions asmc;
};

struct CalibrationResult {
    ParticlePopulation population;
    std::vector<DiagnosticsRow> trace;
    StopReason stop = StopReason::MaxIterations;
};

inline CalibrationResult run_calibration(std::span<const PairObservation> training, const PriorSpec& prior,
                                         const NewellParams& p, const CalibrationSettings& s) {
    if (training.empty()) throw InputError("run_calibration: empty training set");
    if (!(s.rho_stop > 0.0 && s.rho_stop < 1.0)) throw InputError("run_calibration: rho_stop must lie in (0, 1)");
    s.asmc.cw.validate();
    CalibrationResult res;
    res.population = init_population(prior, s.K, kInf, s.seed);
    evaluate_population(res.population, training, p, s.asmc.cw);
    res.population.gamma = s.gamma0.value_or(stats::quantile(res.population.gofs(), 0.95));
    res.trace.push_back({0, res.population.gamma, 1.0});
    while (res.population.iteration < s.max_iter) {
        try {
            res.population = asmc_iterate(res.population, training, p, prior, s.lambda, s.asmc);
        } catch (const ProposalCapError& e) {
            res.trace.push_back({res.population.iteration + 1, std::min(stats::quantile(res.population.gofs(), s.lambda),
                                                                        res.population.gamma),
                                 e.rho()});
            res.stop = StopReason::ProposalCap;
            return res;
        }
        res.trace.push_back({res.population.iteration, res.population.gamma, res.population.rho});
        if (res.population.rho < s.rho_stop) {
            res.stop = StopReason::RhoBelowThreshold;
            return res;
        }
    }
    res.stop = StopReason::MaxIterations;
    return res;
}

inline CalibrationResult run_calibration(std::span<const CFPair> training, const PriorSpec& prior,
                                         const NewellParams& p, const CalibrationSettings& s) {
    const auto obs = observe_pairs(training, p);
    return run_calibration(std::span<const PairObservation>(obs), prior, p, s);
}

// n weighted draws with replacement.
inline std::vector<EABParams> sample_posterior(const ParticlePopulation& pop, std::size_t n, std::uint64_t seed) {
    if (pop.particles.empty()) throw InputError("sample_posterior: empty population");
    if (n == 0) throw InputError("sample_posterior: n must be at least 1");
    std::vector<double> w;
    w.reserve(pop.size());
    for (const auto& p : pop.particles) w.push_back(p.weight);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    auto rng = substream(seed, {0x5a3b1e});
    std::vector<EABParams> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(pop.particles[pick(rng)].theta);
    return out;
}

// Central credible interval of one component.
inline Bounds credible_interval(const ParticlePopulation& pop, std::size_t component, double mass = 0.9) {
    const auto v = pop.component(component);
    return {stats::quantile(v, 0.5 - 0.5 * mass), stats::quantile(v, 0.5 + 0.5 * mass)};
}

// ---------------------------------------------------------------------------
// Posterior and diagnostics files.

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_posterior(std::ostream& os, const ParticlePopulation& pop) {
    for (const char* n : EABParams::names) os << n << ',';
    os << "gof,weight\n";
    for (const auto& pt : pop.particles) {
        for (double v : pt.theta.to_array()) os << format_g17(v) << ',';
        os << format_g17(pt.gof) << ',' << format_g17(pt.weight) << '\n';
    }
}

inline ParticlePopulation read_posterior(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw InputError("posterior file is empty");
    const auto header = io_detail::split(line, ',');
    if (header.size() != EABParams::dim + 2) throw InputError("posterior file: unexpected header");
    ParticlePopulation pop;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = io_detail::split(line, ',');
        if (f.size() != EABParams::dim + 2) throw InputError("posterior file: malformed record");
        std::array<double, EABParams::dim> a{};
        for (std::size_t i = 0; i < EABParams::dim; ++i) a[i] = io_detail::parse_double(f[i], EABParams::names[i]);
        pop.particles.push_back({EABParams::from_array(a), io_detail::parse_double(f[EABParams::dim], "gof"),
                                 io_detail::parse_double(f[EABParams::dim + 1], "weight")});
    }
    if (pop.particles.empty()) throw InputError("posterior file has no particles");
    double total = 0.0;
    for (const auto& p : pop.particles) total += p.weight;
    if (!(total > 0.0)) throw InputError("posterior weights sum to zero");
    for (auto& p : pop.particles) p.weight /= total;
    return pop;
}

inline void write_diagnostics(std::ostream& os, std::span<const DiagnosticsRow> trace) {
    os << "l,gamma,rho\n";
    for (const auto& r : trace) os << r.iteration << ',' << format_g17(r.gamma) << ',' << format_g17(r.rho) << '\n';
}

}  // namespace eabcal
