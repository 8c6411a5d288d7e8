#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mapctl/error.hpp"
#include "mapctl/lut.hpp"

using namespace mapctl;

namespace {

const SteeringLut& default_lut() {
    static const SteeringLut lut = build_lut(LutGrid::defaults(), default_vehicle(), default_tires());
    return lut;
}

std::size_t row_of(const SteeringLut& lut, double v) {
    const auto& vs = lut.grid().velocities;
    for (std::size_t i = 0; i < vs.size(); ++i)
        if (std::abs(vs[i] - v) < 1e-9) return i;
    FAIL("velocity not on grid");
    return 0;
}

}  // namespace

TEST_SUITE("lut") {

TEST_CASE("straight steering has zero acceleration") {
    for (double v : {0.5, 3.0, 9.0}) {
        const auto a = steady_state_accel(v, 0.0, default_vehicle(), default_tires());
        REQUIRE(a.has_value());
        CHECK(*a == 0.0);
    }
}

TEST_CASE("low-speed steady state matches the kinematic value") {
    const auto a = steady_state_accel(1.0, 0.1, default_vehicle(), default_tires());
    REQUIRE(a.has_value());
    const double kin = 1.0 * std::tan(0.1) / 0.32;
    CHECK(kin == doctest::Approx(0.3135).epsilon(1e-3));
    CHECK(std::abs(*a - kin) <= 0.1 * kin);
}

TEST_CASE("no steady state for large steering at speed") {
    bool found = false;
    for (double d : LutGrid::defaults().steering)
        if (!steady_state_accel(8.0, d, default_vehicle(), default_tires())) found = true;
    CHECK(found);
}

TEST_CASE("steady state rejects speeds below the dynamic limit") {
    CHECK_THROWS_AS(steady_state_accel(0.3, 0.1, default_vehicle(), default_tires()), InvalidArgument);
}

TEST_CASE("toy grid has a zero straight-steering column") {
    LutGrid g{{1.0, 1.5, 2.0}, {0.0, 0.1, 0.2}};
    const auto lut = build_lut(g, default_vehicle(), default_tires());
    for (std::size_t vi = 0; vi < 3; ++vi) CHECK(lut.at(vi, 0) == 0.0);
}

TEST_CASE("table structure") {
    const auto& lut = default_lut();
    const auto& g = lut.grid();
    for (std::size_t vi = 0; vi < g.velocities.size(); ++vi) {
        CHECK(lut.at(vi, 0) == 0.0);
        const std::size_t n = lut.stable_count(vi);
        for (std::size_t di = 1; di < n; ++di) CHECK(lut.at(vi, di) > lut.at(vi, di - 1));
        for (std::size_t di = n; di < g.steering.size(); ++di) CHECK(std::isnan(lut.at(vi, di)));
        if (vi > 0) CHECK(lut.boundary_steer(vi) <= lut.boundary_steer(vi - 1));
    }
    for (double v = 6.0; v <= 12.0; v += 0.25) CHECK(lut.stable_count(row_of(lut, v)) < g.steering.size());
}

TEST_CASE("row maxima approach the friction limit") {
    const auto& lut = default_lut();
    const auto tires = default_tires();
    const double limit = 9.81 * std::min(tires.front.D, tires.rear.D);
    double best = 0.0;
    for (std::size_t vi = 0; vi < lut.grid().velocities.size(); ++vi) {
        const double m = lut.max_accel(vi);
        CHECK(m <= limit);
        if (vi > 0) CHECK(m >= lut.max_accel(vi - 1) - 0.1 * limit);
        best = std::max(best, m);
    }
    CHECK(best >= 0.8 * limit);
}

TEST_CASE("low-speed Ackermann agreement") {
    const auto& lut = default_lut();
    const auto& g = lut.grid();
    for (std::size_t vi = 0; vi < g.velocities.size() && g.velocities[vi] <= 2.0; ++vi) {
        const double v = g.velocities[vi];
        for (std::size_t di = 1; di < g.steering.size() && g.steering[di] <= 0.2 + 1e-9; ++di) {
            REQUIRE(lut.stable(vi, di));
            const double kin = v * v * std::tan(g.steering[di]) / 0.32;
            CHECK(std::abs(lut.at(vi, di) - kin) <= 0.1 * kin);
        }
    }
}

TEST_CASE("lookup inverts every stable node") {
    const auto& lut = default_lut();
    const auto& g = lut.grid();
    const double step = g.steering[1] - g.steering[0];
    for (std::size_t vi = 0; vi < g.velocities.size(); ++vi) {
        for (std::size_t di = 0; di < lut.stable_count(vi); ++di) {
            const auto r = lookup_steering(lut, g.velocities[vi], lut.at(vi, di));
            CHECK(std::abs(r.steer - g.steering[di]) <= step);
            CHECK_FALSE(r.speed_clamped);
        }
    }
}

TEST_CASE("lookup symmetry and zero demand") {
    const auto& lut = default_lut();
    const auto z = lookup_steering(lut, 4.0, 0.0);
    CHECK(z.steer == 0.0);
    CHECK_FALSE(z.saturated);
    for (double v : {0.7, 3.1, 6.6, 11.9})
        for (double a : {0.3, 2.0, 7.5, 30.0})
            CHECK(lookup_steering(lut, v, -a).steer == -lookup_steering(lut, v, a).steer);
}

TEST_CASE("lookup in the kinematic regime") {
    const auto r = lookup_steering(default_lut(), 1.0, 0.3135);
    CHECK(std::abs(r.steer - 0.1) <= 0.015);
}

TEST_CASE("lookup saturates at the stability boundary") {
    const auto& lut = default_lut();
    const std::size_t vi = row_of(lut, 8.0);
    const auto r = lookup_steering(lut, 8.0, lut.max_accel(vi) + 5.0);
    CHECK(r.saturated);
    CHECK(r.steer == lut.boundary_steer(vi));
}

TEST_CASE("lookup clamps speed outside the grid") {
    const auto r = lookup_steering(default_lut(), 15.0, 2.0);
    CHECK(r.speed_clamped);
    CHECK(r.steer > 0.0);
}

TEST_CASE("no-slip table follows Ackermann geometry") {
    const auto lut = build_lut(LutGrid::uniform(0.5, 12.0, 0.5, 0.45, 0.01), default_vehicle(), NoSlipTires{});
    const auto& g = lut.grid();
    for (std::size_t vi = 0; vi < g.velocities.size(); ++vi) {
        CHECK(lut.stable_count(vi) == g.steering.size());
        for (std::size_t di = 0; di < g.steering.size(); ++di)
            CHECK(lut.at(vi, di) == doctest::Approx(g.velocities[vi] * g.velocities[vi] * std::tan(g.steering[di]) / 0.32));
    }
}

TEST_CASE("rebuild is bit-identical and parallel build matches") {
    const auto grid = LutGrid::uniform(2.0, 9.0, 1.0, 0.45, 0.03);
    const auto a = build_lut(grid, default_vehicle(), default_tires());
    const auto b = build_lut(grid, default_vehicle(), default_tires());
    const auto c = build_lut(grid, default_vehicle(), default_tires(), {}, 3);
    CHECK(lut_csv(a) == lut_csv(b));
    CHECK(lut_csv(a) == lut_csv(c));
    CHECK(lut_meta(a).dump() == lut_meta(c).dump());
}

TEST_CASE("save and load") {
    const auto grid = LutGrid::uniform(2.0, 6.0, 1.0, 0.3, 0.05);
    const auto lut = build_lut(grid, default_vehicle(), default_tires());
    const auto dir = std::filesystem::temp_directory_path();
    const auto csv = (dir / "mapctl_test_lut.csv").string();
    const auto meta = (dir / "mapctl_test_lut.meta.json").string();
    save_lut(lut, csv, meta);
    const auto back = load_lut(csv, meta);
    std::filesystem::remove(csv);
    std::filesystem::remove(meta);
    CHECK(lut_csv(back) == lut_csv(lut));
    CHECK(back.params_hash() == lut.params_hash());
    CHECK(back.tire_kind() == "pacejka");
}

TEST_CASE("inconsistent tables are rejected") {
    LutGrid g{{1.0}, {0.0, 0.1, 0.2}};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(SteeringLut(g, {0.0, 0.5, 0.4}, "", "", "pacejka", {}), InvalidArgument);
    CHECK_THROWS_AS(SteeringLut(g, {0.0, nan, 0.4}, "", "", "pacejka", {}), InvalidArgument);
    CHECK_THROWS_AS(SteeringLut(g, {0.1, 0.2, 0.4}, "", "", "pacejka", {}), InvalidArgument);
    CHECK_NOTHROW(SteeringLut(g, {0.0, 0.5, nan}, "", "", "pacejka", {}));
    CHECK_THROWS_AS((LutGrid{{1.0, 0.9}, {0.0}}.validate()), InvalidArgument);
}

}
