#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "eabcal/synthetic.hpp"
#include "eabcal/validation.hpp"

using namespace eabcal;

namespace {

struct Fixture {
    std::vector<PlantedPair> planted;
    std::vector<PairObservation> obs;
    NewellParams p{0.9, 6.0};

    explicit Fixture(std::size_t n = 3, std::uint64_t seed = 21) {
        SyntheticOptions so;
        so.n_pairs = n;
        planted = generate_synthetic("concave_acc", seed, so);
        std::vector<CFPair> pairs;
        for (const auto& pp : planted) pairs.push_back(pp.pair);
        obs = observe_pairs(pairs, p);
    }
};

ParticlePopulation population_around(const EABParams& center, std::size_t K, std::uint64_t seed, double spread) {
    ParticlePopulation pop;
    auto rng = substream(seed, {});
    std::normal_distribution<double> n(0.0, 1.0);
    while (pop.size() < K) {
        auto a = center.to_array();
        for (std::size_t i = 0; i < 2; ++i) a[i] += spread * n(rng);
        a[7] += 10.0 * spread * n(rng);
        auto th = EABParams::from_array(a);
        if (is_valid(th)) pop.particles.push_back({th, 0.1 + 0.01 * static_cast<double>(pop.size()), 0.0});
    }
    for (auto& pt : pop.particles) pt.weight = 1.0 / static_cast<double>(K);
    return pop;
}

// Deterministic sample of N(mu, sd) at evenly spaced quantiles.
std::vector<double> normal_quantiles(double mu, double sd, std::size_t n) {
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        // Inverse normal CDF by bisection on erfc.
        double lo = -10.0, hi = 10.0;
        for (int it = 0; it < 100; ++it) {
            const double m = 0.5 * (lo + hi);
            (0.5 * std::erfc(-m / std::numbers::sqrt2) < u ? lo : hi) = m;
        }
        out.push_back(mu + sd * 0.5 * (lo + hi));
    }
    return out;
}

ParticlePopulation gaussian_population(double mu_t1, double mu_eta0) {
    const auto t1 = normal_quantiles(mu_t1, 2.0, 1500);
    const auto e0 = normal_quantiles(mu_eta0, 0.1, 1500);
    ParticlePopulation pop;
    for (std::size_t i = 0; i < t1.size(); ++i) {
        EABParams th;
        th.t1 = t1[i];
        th.eta0 = e0[(i * 7919) % e0.size()];  // decorrelated pairing
        pop.particles.push_back({th, 0.0, 1.0 / 1500.0});
    }
    return pop;
}

double gauss(double x, double mu, double sd) {
    return std::exp(-0.5 * (x - mu) * (x - mu) / (sd * sd)) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

// Jensen-Shannon distance of two product densities by a dense 2-D midpoint rule.
double jsd_oracle(double mt_a, double me_a, double mt_b, double me_b) {
    const double t_lo = std::min(mt_a, mt_b) - 12.0, t_hi = std::max(mt_a, mt_b) + 12.0;
    const double e_lo = std::min(me_a, me_b) - 0.6, e_hi = std::max(me_a, me_b) + 0.6;
    const int n = 800;
    const double ht = (t_hi - t_lo) / n, he = (e_hi - e_lo) / n;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = t_lo + (i + 0.5) * ht;
        for (int j = 0; j < n; ++j) {
            const double e = e_lo + (j + 0.5) * he;
            const double p = gauss(t, mt_a, 2.0) * gauss(e, me_a, 0.1);
            const double q = gauss(t, mt_b, 2.0) * gauss(e, me_b, 0.1);
            const double m = 0.5 * (p + q);
            if (p > 0) acc += 0.5 * p * std::log2(p / m);
            if (q > 0) acc += 0.5 * q * std::log2(q / m);
        }
    }
    return std::sqrt(acc * ht * he);
}

}  // namespace

TEST(WsMetric, GeneratingParticleReproducesPair) {
    Fixture f;
    auto pop = population_around(f.planted[0].theta, 30, 2, 0.05);
    pop.particles[17].theta = f.planted[0].theta;
    auto res = ws_metric(pop, f.obs, f.p);
    ASSERT_EQ(res.pairs.size(), 3u);
    EXPECT_LT(res.pairs[0].best.x, 1e-3);
    EXPECT_EQ(res.pairs[0].particle, 17u);
}

TEST(WsMetric, SingleParticleIsForced) {
    Fixture f;
    ParticlePopulation pop;
    pop.particles.push_back({f.planted[1].theta, 0.0, 1.0});
    auto res = ws_metric(pop, f.obs, f.p);
    double mean_x = 0.0;
    for (const auto& o : f.obs) mean_x += zeta_features(*simulate_series(f.planted[1].theta, o, f.p), o.obs).x;
    mean_x /= 3.0;
    EXPECT_NEAR(res.ws.x, mean_x, 1e-12);
    for (const auto& a : res.pairs) EXPECT_EQ(a.particle, 0u);
    EXPECT_NEAR(res.ws_per_particle.x, 3.0 * mean_x, 1e-12);
}

TEST(WsMetric, NeverWorseThanAnyFixedParticle) {
    Fixture f;
    auto pop = population_around(f.planted[2].theta, 25, 5, 0.08);
    auto res = ws_metric(pop, f.obs, f.p);
    for (const auto& pt : pop.particles) {
        double sx = 0.0, se = 0.0, sc = 0.0;
        bool ok = true;
        for (const auto& o : f.obs) {
            auto s = simulate_series(pt.theta, o, f.p);
            if (!s) {
                ok = false;
                break;
            }
            auto z = zeta_features(*s, o.obs);
            sx += z.x;
            se += z.eta;
            sc += z.critical;
        }
        if (!ok) continue;
        EXPECT_LE(res.ws.x, sx / 3.0 + 1e-12);
        EXPECT_LE(res.ws.eta, se / 3.0 + 1e-12);
        EXPECT_LE(res.ws.critical, sc / 3.0 + 1e-12);
    }
}

TEST(WsMetric, DuplicatingBestParticleChangesNothing) {
    Fixture f;
    auto pop = population_around(f.planted[0].theta, 25, 6, 0.08);
    auto a = ws_metric(pop, f.obs, f.p);
    pop.particles.push_back(pop.particles[a.pairs[0].particle]);
    auto b = ws_metric(pop, f.obs, f.p);
    EXPECT_EQ(a.ws.x, b.ws.x);
    EXPECT_EQ(a.ws.eta, b.ws.eta);
    EXPECT_EQ(a.ws.critical, b.ws.critical);
}

TEST(WsMetric, Errors) {
    Fixture f(1);
    EXPECT_THROW(ws_metric(ParticlePopulation{}, f.obs, f.p), InputError);
    auto pop = population_around(f.planted[0].theta, 5, 1, 0.01);
    EXPECT_THROW(ws_metric(pop, std::span<const PairObservation>{}, f.p), InputError);
}

TEST(SelectRepresentative, RankArithmetic) {
    Fixture f(1);
    auto pop = population_around(f.planted[0].theta, 20, 8, 0.1);
    auto r = select_representative(pop, f.obs[0], f.p);
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t k = 0; k < 20; ++k) ranked.push_back({pair_gof(pop.particles[k].theta, f.obs[0], f.p, {}), k});
    std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.first < b.first; });
    EXPECT_EQ(r.best_fit, ranked[0].second);
    EXPECT_EQ(r.p5, ranked[1].second);
    EXPECT_EQ(r.deterministic_optimal, 0u);  // stored gof increases with index
    EXPECT_LE(r.best_fit_gof, r.p5_gof);
    EXPECT_LE(r.p5_gof, r.max_gof);
}

TEST(SelectRepresentative, IdenticalParticles) {
    Fixture f(1);
    ParticlePopulation pop;
    pop.particles.assign(20, Particle{f.planted[0].theta, 0.2, 0.05});
    auto r = select_representative(pop, f.obs[0], f.p);
    EXPECT_EQ(r.theta(pop, r.best_fit), r.theta(pop, r.p5));
    EXPECT_EQ(r.theta(pop, r.p5), r.theta(pop, r.deterministic_optimal));
    pop.particles.resize(19);
    EXPECT_THROW(select_representative(pop, f.obs[0], f.p), InputError);
}

TEST(Jsd, IdentityAndDisjoint) {
    auto a = gaussian_population(10.0, 1.0);
    EXPECT_EQ(jsd(a, a), 0.0);
    auto b = a;
    for (auto& pt : b.particles) pt.theta.eta2 = 2.0;  // a has eta2 = 1 everywhere
    EXPECT_EQ(jsd(a, b), 1.0);
    ParticlePopulation c = a, d = a;
    for (auto& pt : c.particles) pt.theta.t1 = 1.0 + 1e-3 * pt.theta.eta0;
    for (auto& pt : d.particles) pt.theta.t1 = 50.0 + 1e-3 * pt.theta.eta0;
    EXPECT_EQ(jsd(c, d), 1.0);
}

TEST(Jsd, SymmetricExactly) {
    auto a = gaussian_population(10.0, 1.0);
    auto b = gaussian_population(11.0, 1.05);
    EXPECT_EQ(jsd(a, b), jsd(b, a));
}

TEST(Jsd, MatchesNumericalIntegration) {
    const std::vector<std::array<double, 4>> cases{
        {10.0, 1.0, 12.0, 1.0}, {10.0, 1.0, 10.0, 1.15}, {10.0, 1.0, 11.0, 1.08}, {10.0, 1.0, 16.0, 1.0}};
    for (const auto& c : cases) {
        const double est = jsd(gaussian_population(c[0], c[1]), gaussian_population(c[2], c[3]));
        EXPECT_NEAR(est, jsd_oracle(c[0], c[1], c[2], c[3]), 0.02) << c[2] << " " << c[3];
    }
}

TEST(Jsd, MonteCarloPathAgreesWithExact) {
    auto a = gaussian_population(10.0, 1.0);
    auto b = gaussian_population(11.0, 1.08);
    JsdOptions mc;
    mc.max_exact_cells = 0;
    EXPECT_NEAR(jsd(a, b, mc), jsd(a, b), 0.005);
}

TEST(Jsd, RangeOnPopulations) {
    auto a = init_population(PriorSpec{}, 200, 1.0, 1);
    auto b = init_population(PriorSpec::for_class(VehicleClass::HDV), 200, 1.0, 2);
    const double d = jsd(a, b);
    EXPECT_GT(d, 0.0);
    EXPECT_LE(d, 1.0);
}
