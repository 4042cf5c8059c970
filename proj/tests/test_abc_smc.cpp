#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "eabcal/abc_smc.hpp"
#include "eabcal/synthetic.hpp"

using namespace eabcal;

namespace {

struct WorkerGuard {
    std::size_t saved = worker_count();
    explicit WorkerGuard(std::size_t n) { worker_count() = n; }
    ~WorkerGuard() { worker_count() = saved; }
};

std::vector<PairObservation> planted_observations(std::size_t n_pairs, std::uint64_t seed, double noise = 0.2) {
    SyntheticOptions so;
    so.n_pairs = n_pairs;
    so.noise_sd = noise;
    so.shared_theta = true;
    auto planted = generate_synthetic("concave_convex_acc", seed, so);
    std::vector<CFPair> pairs;
    for (const auto& pp : planted) pairs.push_back(pp.pair);
    return observe_pairs(pairs, so.acc_params);
}

}  // namespace

TEST(PriorSpec, Defaults) {
    const auto acc = PriorSpec::for_class(VehicleClass::ACC);
    const auto hdv = PriorSpec::for_class(VehicleClass::HDV);
    EXPECT_EQ(acc.bounds[0].lo, 0.5);
    EXPECT_EQ(acc.bounds[3].hi, 1.5);
    EXPECT_EQ(hdv.bounds[1].lo, 0.3);
    EXPECT_EQ(hdv.bounds[2].hi, 3.0);
    EXPECT_EQ(acc.bounds[4].lo, -0.15);
    EXPECT_EQ(acc.bounds[6].hi, 0.15);
    EXPECT_EQ(acc.bounds[7].lo, 0.0);
    EXPECT_EQ(acc.bounds[7].hi, 25.0);
}

TEST(PriorSpec, RejectsEmptyBounds) {
    PriorSpec p;
    p.bounds[7] = {5.0, 5.0};
    EXPECT_THROW(p.validate(), InputError);
    PriorSpec q;
    q.bounds[0] = {-1.0, 1.0};
    EXPECT_THROW(q.validate(), InputError);
}

TEST(PriorSpec, DrawsAreValidAndInside) {
    PriorSpec p;
    auto rng = substream(4, {});
    for (int i = 0; i < 500; ++i) {
        auto th = p.draw(rng);
        EXPECT_TRUE(p.contains(th));
        EXPECT_TRUE(is_valid(th));
    }
}

TEST(GofEab, IdentityIsZero) {
    GofSeries a{{10, 20, 30}, {1.0, 2.0, 1.5}};
    EXPECT_EQ(gof_eab(a, a, {}), 0.0);
}

TEST(GofEab, PositionsMatchLeavesReactionTerms) {
    GofSeries obs{{10, 20, 30}, {1.0, 2.0, 1.5}};
    GofSeries sim{{10, 20, 30}, {1.0, 2.5, 1.5}};
    const GofWeights cw;
    const double expected =
        cw.c2 * nrmse(obs.eta, sim.eta) + cw.c3 * nrmse(std::vector<double>{2, 1, 2}, std::vector<double>{2.5, 1, 2.5});
    EXPECT_NEAR(gof_eab(sim, obs, cw), expected, 1e-15);
    EXPECT_NEAR(gof_eab(sim, obs, cw), 0.12141858734992392, 1e-15);
}

TEST(GofEab, ThreePointHandArithmetic) {
    // obs eta max at 1, min at 0, largest deviation at 1: eta_c obs {2,1,2}, sim {2.5,1,2.5}.
    GofSeries obs{{10, 20, 30}, {1.0, 2.0, 1.5}};
    GofSeries sim{{11, 20, 30}, {1.0, 2.5, 1.5}};
    EXPECT_NEAR(gof_eab(sim, obs, {}), 0.1321090370264209, 1e-15);
}

TEST(GofEab, Errors) {
    GofSeries obs{{0, 0, 0}, {1.0, 2.0, 1.5}};
    GofSeries sim{{1, 1, 1}, {1.0, 2.0, 1.5}};
    EXPECT_THROW(gof_eab(sim, obs, {}), InputError);
    GofSeries shorter{{1, 1, 1}, {1.0, 2.0}};
    EXPECT_THROW(gof_eab(shorter, obs, {}), InputError);
    GofWeights bad{0.5, 0.5, 0.5};
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(InitPopulation, UniformWeightsAndDeterminism) {
    auto a = init_population(PriorSpec{}, 50, 1.0, 9);
    auto b = init_population(PriorSpec{}, 50, 1.0, 9);
    ASSERT_EQ(a.size(), 50u);
    EXPECT_EQ(a.iteration, 0u);
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a.particles[k].theta, b.particles[k].theta);
        sum += a.particles[k].weight;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_THROW(init_population(PriorSpec{}, 1, 1.0, 9), InputError);
}

TEST(AsmcIterate, ZeroVarianceKernelKeepsParticles) {
    auto data = planted_observations(1, 3);
    const NewellParams p{0.9, 6.0};
    const EABParams th{1.0, 1.2, 1.2, 1.2, 0.05, 0.0, 0.0, 12.0};
    ParticlePopulation pop;
    pop.seed = 5;
    const double g = particle_gof(th, data, p, {});
    pop.particles.assign(20, Particle{th, g, 1.0 / 20});
    pop.gamma = g;
    AsmcOptions opt;
    opt.kernel_var_floor = 0.0;
    auto next = asmc_iterate(pop, data, p, PriorSpec{}, 0.9, opt);
    EXPECT_EQ(next.rho, 1.0);
    for (const auto& pt : next.particles) EXPECT_EQ(pt.theta, th);
}

TEST(AsmcIterate, RejectsBadLambda) {
    auto pop = init_population(PriorSpec{}, 10, 1.0, 1);
    std::vector<PairObservation> none;
    EXPECT_THROW(asmc_iterate(pop, none, {}, PriorSpec{}, 1.0), InputError);
    EXPECT_THROW(asmc_iterate(pop, none, {}, PriorSpec{}, 0.0), InputError);
}

TEST(RunCalibration, MaxIterZeroReturnsPrior) {
    auto data = planted_observations(1, 4);
    CalibrationSettings s;
    s.K = 40;
    s.max_iter = 0;
    s.seed = 77;
    auto res = run_calibration(std::span<const PairObservation>(data), PriorSpec{}, {0.9, 6.0}, s);
    auto prior = init_population(PriorSpec{}, 40, 0.0, 77);
    ASSERT_EQ(res.population.size(), 40u);
    for (std::size_t k = 0; k < 40; ++k) EXPECT_EQ(res.population.particles[k].theta, prior.particles[k].theta);
    EXPECT_EQ(res.trace.size(), 1u);
}

TEST(RunCalibration, ToleranceShrinksAndInvariantsHold) {
    auto data = planted_observations(1, 6);
    CalibrationSettings s;
    s.K = 200;
    s.max_iter = 30;
    s.seed = 11;
    auto res = run_calibration(std::span<const PairObservation>(data), PriorSpec{}, {0.9, 6.0}, s);
    ASSERT_GE(res.trace.size(), 2u);
    for (std::size_t i = 1; i < res.trace.size(); ++i) EXPECT_LE(res.trace[i].gamma, res.trace[i - 1].gamma);
    EXPECT_LT(res.trace.back().gamma, 0.6 * res.trace.front().gamma);
    double sum = 0.0;
    for (const auto& pt : res.population.particles) {
        EXPECT_LE(pt.gof, res.population.gamma);
        EXPECT_GE(pt.gof, 0.0);
        sum += pt.weight;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(RunCalibration, IndependentOfThreadCount) {
    auto data = planted_observations(2, 8);
    CalibrationSettings s;
    s.K = 60;
    s.max_iter = 8;
    s.seed = 3;
    CalibrationResult a, b;
    {
        WorkerGuard g(1);
        a = run_calibration(std::span<const PairObservation>(data), PriorSpec{}, {0.9, 6.0}, s);
    }
    {
        WorkerGuard g(4);
        b = run_calibration(std::span<const PairObservation>(data), PriorSpec{}, {0.9, 6.0}, s);
    }
    ASSERT_EQ(a.population.size(), b.population.size());
    for (std::size_t k = 0; k < a.population.size(); ++k) {
        EXPECT_EQ(a.population.particles[k].theta, b.population.particles[k].theta);
        EXPECT_EQ(a.population.particles[k].gof, b.population.particles[k].gof);
    }
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].rho, b.trace[i].rho);
}

TEST(SamplePosterior, SingleParticle) {
    ParticlePopulation pop;
    const EABParams th{1.1, 1.1, 1.1, 1.1, 0, 0, 0, 3.0};
    pop.particles.push_back({th, 0.1, 1.0});
    for (const auto& d : sample_posterior(pop, 7, 1)) EXPECT_EQ(d, th);
}

TEST(SamplePosterior, FrequenciesWithinMultinomialBounds) {
    ParticlePopulation pop;
    for (int k = 0; k < 4; ++k) pop.particles.push_back({EABParams{1.0 + k, 1.0 + k, 1.0 + k, 1.0 + k, 0, 0, 0, 0}, 0.0, 0.25});
    const std::size_t n = 40000;
    std::map<double, std::size_t> counts;
    for (const auto& d : sample_posterior(pop, n, 2)) ++counts[d.eta0];
    const double sigma = std::sqrt(n * 0.25 * 0.75);
    for (const auto& [k, c] : counts) EXPECT_NEAR(static_cast<double>(c), n * 0.25, 3.0 * sigma);
    EXPECT_EQ(counts.size(), 4u);
}

TEST(SamplePosterior, DeterministicAndErrors) {
    auto pop = init_population(PriorSpec{}, 30, 1.0, 4);
    EXPECT_EQ(sample_posterior(pop, 10, 5), sample_posterior(pop, 10, 5));
    EXPECT_THROW(sample_posterior(ParticlePopulation{}, 3, 1), InputError);
    EXPECT_THROW(sample_posterior(pop, 0, 1), InputError);
}

TEST(PosteriorFile, RoundTrip) {
    auto pop = init_population(PriorSpec{}, 12, 1.0, 4);
    for (std::size_t k = 0; k < pop.size(); ++k) pop.particles[k].gof = 0.01 * static_cast<double>(k) + 1e-3 / 3.0;
    std::stringstream ss;
    write_posterior(ss, pop);
    auto back = read_posterior(ss);
    ASSERT_EQ(back.size(), pop.size());
    for (std::size_t k = 0; k < pop.size(); ++k) {
        EXPECT_EQ(back.particles[k].theta, pop.particles[k].theta);
        EXPECT_EQ(back.particles[k].gof, pop.particles[k].gof);
        EXPECT_NEAR(back.particles[k].weight, pop.particles[k].weight, 1e-15);
    }
}
