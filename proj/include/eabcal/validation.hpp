#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eabcal/abc_smc.hpp"
#include "eabcal/eab.hpp"
#include "eabcal/error.hpp"
#include "eabcal/parallel.hpp"
#include "eabcal/rng.hpp"

namespace eabcal {

// Root-mean-square reproduction errors of one particle on one pair.
struct Zeta {
    double x = kInf;         // m
    double eta = kInf;       // dimensionless
    double critical = kInf;  // dimensionless

    bool finite() const { return std::isfinite(x) && std::isfinite(eta) && std::isfinite(critical); }
};

inline Zeta zeta_features(const GofSeries& sim, const GofSeries& obs) {
    if (sim.x.size() != obs.x.size() || sim.eta.size() != obs.eta.size() || obs.eta.empty())
        throw InputError("zeta_features: series not aligned");
    auto rms_diff = [](std::span<const double> a, std::span<const double> b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(acc / static_cast<double>(a.size()));
    };
    const auto& o = obs.eta;
    const auto& s = sim.eta;
    const auto imax = static_cast<std::size_t>(std::max_element(o.begin(), o.end()) - o.begin());
    const auto imin = static_cast<std::size_t>(std::min_element(o.begin(), o.end()) - o.begin());
    std::size_t idev = 0;
    for (std::size_t i = 1; i < o.size(); ++i)
        if (std::abs(s[i] - o[i]) > std::abs(s[idev] - o[idev])) idev = i;
    const std::array<double, 3> oc{o[imax], o[imin], o[idev]};
    const std::array<double, 3> sc{s[imax], s[imin], s[idev]};
    return {rms_diff(obs.x, sim.x), rms_diff(o, s), rms_diff(oc, sc)};
}

// Simulated series of theta on an observed pair, or nullopt when the model
// cannot simulate it.
inline std::optional<GofSeries> simulate_series(const EABParams& th, const PairObservation& o, const NewellParams& p) {
    if (!is_valid(th)) return std::nullopt;
    GofSeries s;
    try {
        s.x = simulate_follower(o.pair.leader, p, th, o.origin).positions();
    } catch (const SimulationError&) {
        return std::nullopt;
    }
    const EtaCurve curve(th);
    s.eta.reserve(o.eta_index.size());
    for (std::size_t i : o.eta_index) s.eta.push_back(curve(o.eta.t[i] - o.origin));
    return s;
}

struct PairAssignment {
    std::string pair_id;
    std::size_t particle = 0;  // argmin of the pair GOF
    double gof = kInf;
    Zeta best;                 // per-feature minima over particles
};

struct AssignmentResult {
    std::vector<PairAssignment> pairs;
    std::vector<std::string> excluded;  // pairs no particle could simulate
    Zeta ws;                            // mean over pairs of the per-feature minima
    Zeta ws_per_particle;               // same sums divided by the population size
};

inline AssignmentResult ws_metric(const ParticlePopulation& pop, std::span<const PairObservation> pairs,
                                  const NewellParams& p, const GofWeights& cw = {}) {
    if (pop.particles.empty()) throw InputError("ws_metric: empty population");
    if (pairs.empty()) throw InputError("ws_metric: no pairs");
    const std::size_t K = pop.size();
    const std::size_t M = pairs.size();
    std::vector<Zeta> z(M * K);
    std::vector<double> g(M * K, kInf);
    parallel_for(M * K, [&](std::size_t idx) {
        const auto& o = pairs[idx / K];
        if (auto s = simulate_series(pop.particles[idx % K].theta, o, p)) {
            z[idx] = zeta_features(*s, o.obs);
            g[idx] = gof_eab(*s, o.obs, cw);
        }
    });

    AssignmentResult res;
    Zeta sum{0.0, 0.0, 0.0};
    for (std::size_t m = 0; m < M; ++m) {
        PairAssignment a;
        a.pair_id = pairs[m].pair.id();
        bool any = false;
        for (std::size_t k = 0; k < K; ++k) {
            const auto& zk = z[m * K + k];
            if (!zk.finite()) continue;
            any = true;
            a.best.x = std::min(a.best.x, zk.x);
            a.best.eta = std::min(a.best.eta, zk.eta);
            a.best.critical = std::min(a.best.critical, zk.critical);
            if (g[m * K + k] < a.gof) {
                a.gof = g[m * K + k];
                a.particle = k;
            }
        }
        if (!any) {
            res.excluded.push_back(a.pair_id);
            continue;
        }
        sum.x += a.best.x;
        sum.eta += a.best.eta;
        sum.critical += a.best.critical;
        res.pairs.push_back(std::move(a));
    }
    if (res.pairs.empty()) throw SimulationError("ws_metric: no pair could be simulated by any particle");
    const auto n = static_cast<double>(res.pairs.size());
    res.ws = {sum.x / n, sum.eta / n, sum.critical / n};
    const auto k = static_cast<double>(K);
    res.ws_per_particle = {sum.x / k, sum.eta / k, sum.critical / k};
    return res;
}

inline AssignmentResult ws_metric(const ParticlePopulation& pop, std::span<const CFPair> pairs, const NewellParams& p,
                                  const GofWeights& cw = {}) {
    const auto obs = observe_pairs(pairs, p);
    return ws_metric(pop, std::span<const PairObservation>(obs), p, cw);
}

struct Representatives {
    std::size_t best_fit = 0;
    std::size_t p5 = 0;
    std::size_t deterministic_optimal = 0;
    double best_fit_gof = kInf;
    double p5_gof = kInf;
    double max_gof = kInf;

    EABParams theta(const ParticlePopulation& pop, std::size_t index) const { return pop.particles.at(index).theta; }
};

// Ranks particles by their GOF on one pair (ties by index). The deterministic
// optimum is the particle with the lowest stored training GOF.
inline Representatives select_representative(const ParticlePopulation& pop, const PairObservation& pair,
                                             const NewellParams& p, const GofWeights& cw = {}) {
    const std::size_t K = pop.size();
    if (K < 20) throw InputError("select_representative: population needs at least 20 particles");
    std::vector<double> g(K);
    parallel_for(K, [&](std::size_t k) { g[k] = pair_gof(pop.particles[k].theta, pair, p, cw); });
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g[a] < g[b]; });
    Representatives r;
    r.best_fit = order.front();
    r.p5 = order[static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(K)))];
    r.best_fit_gof = g[r.best_fit];
    r.p5_gof = g[r.p5];
    r.max_gof = g[order.back()];
    std::size_t opt = 0;
    for (std::size_t k = 1; k < K; ++k)
        if (pop.particles[k].gof < pop.particles[opt].gof) opt = k;
    r.deterministic_optimal = opt;
    return r;
}

// ---------------------------------------------------------------------------
// Jensen-Shannon distance between two populations, estimated on the product
// of per-component histograms (20 bins over the union support).

struct JsdOptions {
    std::size_t bins = 20;
    std::size_t max_exact_cells = 1'000'000;
    std::size_t mc_samples = 400'000;
    std::uint64_t mc_seed = 0x1d5;
};

namespace jsd_detail {

using Hist = std::vector<double>;

inline std::array<Hist, EABParams::dim> histograms(const ParticlePopulation& pop,
                                                   const std::array<Bounds, EABParams::dim>& support,
                                                   std::size_t bins) {
    std::array<Hist, EABParams::dim> h;
    double total = 0.0;
    for (const auto& pt : pop.particles) total += pt.weight;
    for (std::size_t i = 0; i < EABParams::dim; ++i) h[i].assign(bins, 0.0);
    for (const auto& pt : pop.particles) {
        const auto a = pt.theta.to_array();
        const double w = total > 0.0 ? pt.weight / total : 1.0 / static_cast<double>(pop.size());
        for (std::size_t i = 0; i < EABParams::dim; ++i) {
            std::size_t b = 0;
            if (support[i].width() > 0.0) {
                const double f = (a[i] - support[i].lo) / support[i].width();
                b = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, f * static_cast<double>(bins))));
            }
            h[i][b] += w;
        }
    }
    return h;
}

// Expectation under P of log2(2P / (P + Q)) restricted to the components in
// `diff`; the remaining factors are identical in P and Q and cancel.
inline double half_term_exact(const std::vector<const Hist*>& p, const std::vector<const Hist*>& q) {
    const std::size_t d = p.size();
    std::vector<std::size_t> idx(d, 0);
    double acc = 0.0;
    while (true) {
        double pp = 1.0, qq = 1.0;
        for (std::size_t j = 0; j < d; ++j) {
            pp *= (*p[j])[idx[j]];
            qq *= (*q[j])[idx[j]];
        }
        if (pp > 0.0) acc += pp * std::log2(2.0 * pp / (pp + qq));
        std::size_t j = 0;
        while (j < d && ++idx[j] == p[j]->size()) idx[j++] = 0;
        if (j == d) break;
    }
    return acc;
}

inline double half_term_mc(const std::vector<const Hist*>& p, const std::vector<const Hist*>& q, std::size_t n,
                           Rng rng) {
    const std::size_t d = p.size();
    std::vector<std::discrete_distribution<std::size_t>> draw;
    for (const auto* h : p) draw.emplace_back(h->begin(), h->end());
    double acc = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        double lp = 0.0, lq = 0.0;
        bool q_zero = false;
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t b = draw[j](rng);
            lp += std::log((*p[j])[b]);
            if ((*q[j])[b] > 0.0)
                lq += std::log((*q[j])[b]);
            else
                q_zero = true;
        }
        // log2(2P/(P+Q)) = 1 - log2(1 + Q/P)
        acc += q_zero ? 1.0 : 1.0 - std::log1p(std::exp(lq - lp)) / std::numbers::ln2;
    }
    return acc / static_cast<double>(n);
}

}  // namespace jsd_detail

inline double jsd(const ParticlePopulation& a, const ParticlePopulation& b, const JsdOptions& opt = {}) {
    if (a.particles.empty() || b.particles.empty()) throw InputError("jsd: empty population");
    if (opt.bins < 1) throw InputError("jsd: need at least one bin");
    std::array<Bounds, EABParams::dim> support;
    for (std::size_t i = 0; i < EABParams::dim; ++i) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto* pop : {&a, &b})
            for (const auto& pt : pop->particles) {
                lo = std::min(lo, pt.theta.to_array()[i]);
                hi = std::max(hi, pt.theta.to_array()[i]);
            }
        support[i] = {lo, hi};
    }
    auto ha = jsd_detail::histograms(a, support, opt.bins);
    auto hb = jsd_detail::histograms(b, support, opt.bins);
    // Canonical order makes the estimate exactly symmetric.
    if (std::lexicographical_compare(hb.begin(), hb.end(), ha.begin(), ha.end())) std::swap(ha, hb);

    std::vector<const jsd_detail::Hist*> pa, pb;
    double cells = 1.0;
    for (std::size_t i = 0; i < EABParams::dim; ++i) {
        if (ha[i] == hb[i]) continue;
        bool overlap = false;
        for (std::size_t k = 0; k < opt.bins; ++k) overlap |= ha[i][k] > 0.0 && hb[i][k] > 0.0;
        if (!overlap) return 1.0;
        pa.push_back(&ha[i]);
        pb.push_back(&hb[i]);
        cells *= static_cast<double>(opt.bins);
    }
    if (pa.empty()) return 0.0;

    double div = 0.0;
    if (cells <= static_cast<double>(opt.max_exact_cells)) {
        div = 0.5 * jsd_detail::half_term_exact(pa, pb) + 0.5 * jsd_detail::half_term_exact(pb, pa);
    } else {
        div = 0.5 * jsd_detail::half_term_mc(pa, pb, opt.mc_samples, substream(opt.mc_seed, {0})) +
              0.5 * jsd_detail::half_term_mc(pb, pa, opt.mc_samples, substream(opt.mc_seed, {1}));
    }
    return std::sqrt(std::clamp(div, 0.0, 1.0));
}

}  // namespace eabcal
