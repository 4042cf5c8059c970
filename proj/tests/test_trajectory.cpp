#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "eabcal/trajectory.hpp"
#include "eabcal/trajectory_io.hpp"
#include "test_support.hpp"

using namespace eabcal;
using testing_support::constant_speed;
using testing_support::Trapezoid;

namespace {

std::string two_vehicle_csv(double follower_offset = -30.0) {
    std::ostringstream os;
    os << "vehicle_id,t,x,v\n";
    for (int i = 0; i <= 400; ++i) {
        const double t = i * 0.1;
        os << "L," << t << ',' << 100.0 + 20.0 * t << ",20\n";
        os << "F," << t << ',' << 100.0 + follower_offset + 20.0 * t << ",20\n";
    }
    return os.str();
}

const char* kManifest = "leader_id,follower_id,vehicle_class,car_model,engine_mode,speed_regime\nL,F,ACC,X,normal,median_high\n";

LoadResult load_strings(const std::string& data, const std::string& manifest) {
    std::istringstream din(data), min(manifest);
    std::vector<std::string> warnings;
    auto table = read_trajectory_table(din, {}, warnings);
    return assemble_pairs(table, read_manifest(min));
}

}  // namespace

TEST(Load, WellFormedTwoVehicleFileGivesOnePair) {
    auto res = load_strings(two_vehicle_csv(), kManifest);
    ASSERT_EQ(res.pairs.size(), 1u);
    EXPECT_EQ(res.pairs[0].leader.size(), 401u);
    EXPECT_EQ(res.pairs[0].label.car_model, "X");
    EXPECT_EQ(res.pairs[0].label.vehicle_class, VehicleClass::ACC);
}

TEST(Load, DuplicatedTimestampIsNonMonotone) {
    auto csv = two_vehicle_csv();
    csv += "L,40,900,20\n";
    try {
        load_strings(csv, kManifest);
        FAIL() << "expected error";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("non-monotone time"), std::string::npos);
    }
}

TEST(Load, FollowerAheadOfLeaderIsOvertake) {
    std::ostringstream os;
    os << "vehicle_id,t,x,v\n";
    for (int i = 0; i <= 400; ++i) {
        const double t = i * 0.1;
        os << "L," << t << ',' << 100.0 + 20.0 * t << ",20\n";
        os << "F," << t << ',' << (i == 200 ? 100.0 + 20.0 * t + 1.0 : 70.0 + 20.0 * t) << ",20\n";
    }
    try {
        load_strings(os.str(), kManifest);
        FAIL() << "expected error";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("overtake"), std::string::npos);
    }
}

TEST(Load, MissingColumnIsSchemaMismatch) {
    std::istringstream din("vehicle_id,time,x\nL,0,1\n");
    std::vector<std::string> w;
    EXPECT_THROW(read_trajectory_table(din, {}, w), InputError);
}

TEST(Load, MissingSpeedColumnIsReconstructed) {
    std::ostringstream os;
    os << "vehicle_id,t,x\n";
    for (int i = 0; i <= 50; ++i) os << "A," << i * 0.1 << ',' << 12.5 * i * 0.1 << '\n';
    std::istringstream din(os.str());
    std::vector<std::string> w;
    auto table = read_trajectory_table(din, {}, w);
    for (const auto& p : table.at("A").points) EXPECT_NEAR(p.v, 12.5, 1e-9);
}

TEST(Load, ShortOverlapPairIsRejectedWithWarning) {
    std::ostringstream os;
    os << "vehicle_id,t,x,v\n";
    for (int i = 0; i <= 100; ++i) {
        os << "L," << i * 0.1 << ',' << 100.0 + 20.0 * i * 0.1 << ",20\n";
        os << "F," << i * 0.1 << ',' << 70.0 + 20.0 * i * 0.1 << ",20\n";
    }
    auto res = load_strings(os.str(), kManifest);
    EXPECT_TRUE(res.pairs.empty());
    EXPECT_FALSE(res.warnings.empty());
}

TEST(Load, LargeGapKeepsLongestRun) {
    std::ostringstream os;
    os << "vehicle_id,t,x,v\n";
    for (int i = 0; i <= 500; ++i) {
        if (i > 10 && i < 15) continue;  // 0.5 s hole
        os << "A," << i * 0.1 << ',' << 10.0 * i * 0.1 << ",10\n";
    }
    std::istringstream din(os.str());
    std::vector<std::string> w;
    auto table = read_trajectory_table(din, {}, w);
    EXPECT_NEAR(table.at("A").t0(), 1.5, 1e-9);
    EXPECT_FALSE(w.empty());
}

TEST(Load, SingleMissingSampleIsBridged) {
    std::ostringstream os;
    os << "vehicle_id,t,x,v\n";
    for (int i = 0; i <= 50; ++i) {
        if (i == 20) continue;
        os << "A," << i * 0.1 << ',' << 10.0 * i * 0.1 << ",10\n";
    }
    std::istringstream din(os.str());
    std::vector<std::string> w;
    auto table = read_trajectory_table(din, {}, w);
    ASSERT_EQ(table.at("A").size(), 51u);
    EXPECT_NEAR(table.at("A").points[20].x, 20.0, 1e-9);
}

TEST(Load, SerializeThenLoadIsFixedPoint) {
    auto first = load_strings(two_vehicle_csv(), kManifest);
    std::ostringstream out;
    write_trajectories(out, {&first.pairs[0].leader, &first.pairs[0].follower});
    auto second = load_strings(out.str(), kManifest);
    std::ostringstream out2;
    write_trajectories(out2, {&second.pairs[0].leader, &second.pairs[0].follower});
    EXPECT_EQ(out.str(), out2.str());
    for (std::size_t i = 0; i < first.pairs[0].leader.size(); ++i) {
        EXPECT_EQ(first.pairs[0].leader.points[i].x, second.pairs[0].leader.points[i].x);
        EXPECT_EQ(first.pairs[0].follower.points[i].t, second.pairs[0].follower.points[i].t);
    }
}

TEST(Resample, ConstantSpeedStaysOnTheLine) {
    auto tr = constant_speed(17.0, 20.0, 0.1, 5.0);
    for (double dt : {0.05, 0.2, 0.3, 1.0}) {
        auto r = resample(tr, dt);
        for (const auto& p : r.points) {
            EXPECT_NEAR(p.x, 5.0 + 17.0 * p.t, 1e-9);
            EXPECT_NEAR(p.v, 17.0, 1e-9);
        }
    }
}

TEST(Resample, PiecewiseLinearExactAtSharedGridPoints) {
    std::vector<double> xs;
    for (int i = 0; i <= 100; ++i) xs.push_back(i < 50 ? 10.0 * i * 0.1 : 50.0 + 4.0 * (i - 50) * 0.1);
    auto tr = make_trajectory("A", 0.0, 0.1, xs);
    auto r = resample(tr, 0.2);
    for (std::size_t k = 0; k < r.size(); ++k) EXPECT_NEAR(r.points[k].x, xs[2 * k], 1e-12);
}

TEST(Resample, SinusoidRefinementMatchesAnalyticPositions) {
    // x(t) = 20 t + 5 sin(0.3 t): interpolation error bound 5*0.09*0.01/8 < 1e-3 m.
    auto f = [](double t) { return 20.0 * t + 5.0 * std::sin(0.3 * t); };
    std::vector<double> xs;
    for (int i = 0; i <= 600; ++i) xs.push_back(f(i * 0.1));
    auto r = resample(make_trajectory("S", 0.0, 0.1, xs), 0.05);
    double worst = 0.0;
    for (const auto& p : r.points) worst = std::max(worst, std::abs(p.x - f(p.t)));
    EXPECT_LT(worst, 1e-3);
}

TEST(Resample, IdempotentAtSameDt) {
    auto tr = Trapezoid{}.build(60.0);
    auto once = resample(tr, 0.1);
    auto twice = resample(once, 0.1);
    ASSERT_EQ(once.size(), twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        EXPECT_DOUBLE_EQ(once.points[i].x, twice.points[i].x);
        EXPECT_DOUBLE_EQ(once.points[i].v, twice.points[i].v);
    }
}

TEST(Resample, RejectsTooCoarseStep) {
    auto tr = constant_speed(10.0, 10.0);
    EXPECT_THROW(resample(tr, 6.0), InputError);
    EXPECT_THROW(resample(tr, 0.0), InputError);
}

TEST(NewellShift, ConstantSpeedSpacing) {
    auto leader = constant_speed(20.0, 60.0);
    auto f = newell_shift(leader, {1.0, 6.0});
    for (std::size_t i = 0; i < leader.size(); ++i) EXPECT_NEAR(leader.points[i].x - f.points[i].x, 26.0, 1e-9);
}

TEST(NewellShift, StoppedLeaderSpacingIsDelta) {
    auto leader = constant_speed(0.0, 30.0, 0.1, 500.0);
    auto f = newell_shift(leader, {1.1, 10.0});
    for (std::size_t i = 0; i < leader.size(); ++i) EXPECT_NEAR(leader.points[i].x - f.points[i].x, 10.0, 1e-12);
}

TEST(NewellShift, InverseShiftRecoversLeader) {
    auto leader = Trapezoid{}.build(60.0);
    const double tau = 1.2, delta = 7.5;
    auto f = newell_shift(leader, {tau, delta});
    auto back = shift(f, -tau, -delta);
    for (std::size_t i = 0; i < leader.size(); ++i) {
        const double t = leader.points[i].t;
        if (t + tau > leader.t_end() - 1e-9) break;
        EXPECT_NEAR(back.points[i].x, leader.points[i].x, 1e-9) << "t=" << t;
    }
}

TEST(NewellShift, PreservesSpeedProfile) {
    auto leader = Trapezoid{}.build(60.0);
    auto f = newell_shift(leader, {1.0, 8.0});
    // Finite-difference speeds of both series at the shifted interior samples.
    auto lv = finite_difference_speeds(leader.positions(), leader.dt);
    for (std::size_t i = 11; i + 1 < leader.size(); ++i) EXPECT_NEAR(f.points[i].v, lv[i - 10], 1e-6);
}

TEST(NewellShift, RejectsNonPositiveParameters) {
    auto leader = constant_speed(20.0, 10.0);
    EXPECT_THROW(newell_shift(leader, {0.0, 5.0}), InputError);
    EXPECT_THROW(newell_shift(leader, {1.0, -1.0}), InputError);
}

TEST(DetectPhases, TrapezoidIntervalsBracketRamps) {
    // 30 -> 15 -> 30 m/s: ramp down [10, 20], hold [20, 30], ramp up [30, 40].
    Trapezoid tz{30.0, 15.0, 10.0, 10.0, 10.0, 10.0};
    auto leader = tz.build(70.0);
    auto ph = detect_phases(leader, 0.1);
    // Oracle from the construction: v < 27 after t = 12; v >= 27 from t = 38.
    EXPECT_NEAR(ph.decel_start, 12.05, 0.06);
    EXPECT_NEAR(ph.decel_end, 20.0, 1e-9);
    EXPECT_NEAR(ph.accel_start, 30.0, 0.15);
    EXPECT_NEAR(ph.accel_end, 38.05, 0.06);
    EXPECT_LT(ph.decel_end, ph.accel_end);
}

TEST(DetectPhases, ConstantSpeedHasNoDisturbance) {
    try {
        detect_phases(constant_speed(20.0, 60.0));
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("no disturbance"), std::string::npos);
    }
}

TEST(DetectPhases, TwoDipsAreMultipleDisturbances) {
    Trapezoid a{30.0, 15.0, 10.0, 5.0, 2.0, 5.0};
    Trapezoid b{30.0, 15.0, 40.0, 5.0, 2.0, 5.0};
    eabcal::Trajectory tr;
    tr.dt = 0.1;
    tr.vehicle_id = "L";
    for (int i = 0; i <= 800; ++i) {
        const double t = i * 0.1;
        const double v = std::min(a.speed(t), b.speed(t));
        tr.points.push_back({t, 0.0, v});
    }
    try {
        detect_phases(tr);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("multiple disturbances"), std::string::npos);
    }
}
