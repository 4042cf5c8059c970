#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "eabcal/newell.hpp"
#include "test_support.hpp"

using namespace eabcal;
using testing_support::Trapezoid;

TEST(Nrmse, IdenticalSeriesIsZero) {
    std::vector<double> a{100, 200, 300};
    EXPECT_EQ(nrmse(a, a), 0.0);
}

TEST(Nrmse, ZeroSimulationGivesOne) {
    std::vector<double> obs{3, 4}, sim{0, 0};
    EXPECT_DOUBLE_EQ(nrmse(obs, sim), 1.0);
}

TEST(Nrmse, HandArithmetic) {
    // errors (-1, 1, -2): mean sq = 6/3 = 2; mean obs sq = (1e4 + 4e4 + 9e4)/3 = 140000/3.
    // nrmse = sqrt(2 / (140000/3)) = sqrt(6/140000) = 0.00654653670707977...
    std::vector<double> obs{100, 200, 300}, sim{101, 199, 302};
    EXPECT_NEAR(nrmse(obs, sim), 0.006546536707079772, 1e-15);
}

TEST(Nrmse, Errors) {
    std::vector<double> a{1, 2}, b{1};
    std::vector<double> z{0, 0};
    EXPECT_THROW(nrmse(a, b), InputError);
    EXPECT_THROW(nrmse(z, a), InputError);
}

TEST(Nrmse, NonNegativeAndZeroOnlyForEqualSeries) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-50, 50);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(10), b(10);
        for (auto& v : a) v = u(rng);
        b = a;
        EXPECT_EQ(nrmse(a, b), 0.0);
        b[trial % 10] += 1e-3;
        EXPECT_GT(nrmse(a, b), 0.0);
    }
}

TEST(ValueGrid, DefaultGridContainsLiterals) {
    NewellGrid g;
    EXPECT_EQ(g.tau.size(), 16u);
    EXPECT_EQ(g.delta.size(), 14u);
    EXPECT_NE(std::find(g.tau.begin(), g.tau.end(), 1.2), g.tau.end());
    EXPECT_NE(std::find(g.tau.begin(), g.tau.end(), 1.1), g.tau.end());
}

namespace {

std::vector<CFPair> planted(double tau, double delta, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<CFPair> pairs;
    for (int i = 0; i < n; ++i) {
        Trapezoid tz{20.0 + 10.0 * u(rng), 5.0 + 5.0 * u(rng), 10.0 + 5.0 * u(rng), 5.0 + 5.0 * u(rng), 3.0 + 5.0 * u(rng),
                     6.0 + 6.0 * u(rng)};
        CFPair p;
        p.leader = tz.build(50.0, 0.1, 100.0 * i, "L" + std::to_string(i));
        p.follower = newell_shift(p.leader, {tau, delta});
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace

TEST(CalibrateNewell, RecoversOnGridPlant) {
    auto pairs = planted(1.2, 8.0, 4, 1);
    auto fit = calibrate_newell(pairs);
    EXPECT_EQ(fit.params.tau, 1.2);
    EXPECT_EQ(fit.params.delta, 8.0);
    EXPECT_EQ(fit.params.w(), -8.0 / 1.2);
    EXPECT_LT(fit.objective, 1e-9);
}

TEST(CalibrateNewell, SinglePointGridReturnsThatPoint) {
    auto pairs = planted(1.2, 8.0, 2, 2);
    NewellGrid g{{0.7}, {13.0}};
    auto fit = calibrate_newell(pairs, g);
    EXPECT_EQ(fit.params.tau, 0.7);
    EXPECT_EQ(fit.params.delta, 13.0);
}

TEST(CalibrateNewell, EmptyTrainingSetThrows) {
    std::vector<CFPair> none;
    EXPECT_THROW(calibrate_newell(none), InputError);
}

TEST(CalibrateNewell, ObjectiveIsPermutationInvariant) {
    auto pairs = planted(1.0, 6.0, 5, 3);
    const NewellParams p{1.3, 9.0};
    const double a = newell_objective(pairs, p);
    std::reverse(pairs.begin(), pairs.end());
    std::rotate(pairs.begin(), pairs.begin() + 2, pairs.end());
    EXPECT_NEAR(newell_objective(pairs, p), a, 1e-12 * std::max(1.0, a));
}

TEST(CalibrateNewell, TiesPreferSmallerTauThenDelta) {
    // A constant-speed leader makes tau and delta trade off along v*tau + delta.
    CFPair p;
    p.leader = testing_support::constant_speed(10.0, 40.0, 0.5, 500.0);  // exactly representable samples
    p.follower = newell_shift(p.leader, {1.0, 5.0});  // spacing 15 m
    std::vector<CFPair> pairs{p};
    NewellGrid g{{0.5, 1.0}, {5.0, 10.0}};
    auto fit = calibrate_newell(pairs, g);
    EXPECT_EQ(fit.params.tau, 0.5);
    EXPECT_EQ(fit.params.delta, 10.0);
}
