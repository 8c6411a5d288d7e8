#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include "mapctl/error.hpp"
#include "mapctl/raceline.hpp"

using namespace mapctl;

namespace {

constexpr double kPi = std::numbers::pi;

Raceline circle(double radius, int n, double v_ref) {
    std::vector<Waypoint> wps;
    for (int i = 0; i <= n; ++i) {
        const double th = 2.0 * kPi * i / n;
        Waypoint w;
        w.s = 2.0 * radius * std::sin(kPi / n) * i;
        w.x = radius * std::sin(th);
        w.y = radius * (1.0 - std::cos(th));
        w.psi = std::remainder(th, 2.0 * kPi);
        w.kappa = 1.0 / radius;
        w.v_ref = v_ref;
        w.w_left = 0.5;
        w.w_right = 0.5;
        wps.push_back(w);
    }
    return Raceline(std::move(wps));
}

Raceline unit_square() {
    const double xs[] = {0, 1, 1, 0, 0};
    const double ys[] = {0, 0, 1, 1, 0};
    std::vector<Waypoint> wps;
    for (int i = 0; i < 5; ++i) {
        Waypoint w;
        w.s = i;
        w.x = xs[i];
        w.y = ys[i];
        w.psi = std::remainder(kPi / 2.0 * i, 2.0 * kPi);
        w.v_ref = 1.0;
        w.w_left = 0.3;
        w.w_right = 0.3;
        wps.push_back(w);
    }
    return Raceline(std::move(wps));
}

// Samples driving the loop at constant lateral offset.
std::vector<TraceSample> lap_trace(const Raceline& rl, double d, double dt, double speed) {
    std::vector<TraceSample> trace;
    const double total = rl.length() * 1.2;
    for (double p = 0.0; p <= total; p += speed * dt) {
        TraceSample s;
        s.t = p / speed;
        s.progress = p;
        s.s = rl.wrap_s(p);
        s.d = d;
        trace.push_back(s);
    }
    return trace;
}

}  // namespace

TEST_SUITE("raceline") {

TEST_CASE("projection") {
    const auto sq = unit_square();
    const auto on = project({0.4, 0.0}, sq);
    CHECK(on.d == doctest::Approx(0.0));
    CHECK(on.s == doctest::Approx(0.4));

    const auto p = project({0.5, 0.1}, sq);
    CHECK(p.d == doctest::Approx(0.1));
    CHECK(p.s == doctest::Approx(0.5));
    CHECK(project({0.5, -0.1}, sq).d == doctest::Approx(-0.1));

    const auto again = project(p.foot, sq);
    CHECK(again.s == doctest::Approx(p.s));
    CHECK(again.d == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("windowed projection agrees with the global one") {
    const auto rl = builtin_track("reference");
    for (double s = 0.3; s < rl.length(); s += 1.7) {
        const auto pos = rl.position_at(s);
        const Vec2 q{pos.x + 0.05, pos.y - 0.08};
        const auto a = project(q, rl);
        const auto b = project_near(q, rl, s, 3.0);
        CHECK(b.d == doctest::Approx(a.d).epsilon(1e-12));
        CHECK(b.s == doctest::Approx(a.s).epsilon(1e-12));
    }
}

TEST_CASE("lookahead point on a straight") {
    const auto rl = straight_track(20.0, 3.0, 1.0);
    const auto ahead = lookahead_point({0.0, 0.0}, 0.0, 2.0, rl);
    CHECK(ahead.point.x == doctest::Approx(2.0));
    CHECK(ahead.point.y == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ahead.eta == doctest::Approx(0.0).epsilon(1e-12));

    const auto off = lookahead_point({0.0, 0.5}, 0.0, 2.0, rl);
    CHECK(off.point.x == doctest::Approx(1.9365).epsilon(1e-4));
    CHECK(off.point.y == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(off.eta == doctest::Approx(-0.25268).epsilon(1e-4));
    CHECK_FALSE(off.fallback);

    const auto lost = lookahead_point({0.0, 0.5}, 0.0, 0.3, rl);
    CHECK(lost.fallback);
}

TEST_CASE("lookahead point lies on the circle") {
    const auto rl = builtin_track("reference");
    for (double s = 0.0; s < rl.length(); s += 0.9) {
        const auto pos = rl.position_at(s);
        const Vec2 car{pos.x - 0.1, pos.y + 0.12};
        for (double ld : {0.6, 1.3, 2.2}) {
            const auto r = lookahead_point(car, 0.0, ld, rl);
            if (r.fallback) continue;
            CHECK(std::hypot(r.point.x - car.x, r.point.y - car.y) == doctest::Approx(ld).epsilon(1e-6));
        }
    }
}

TEST_CASE("speed scaling") {
    const auto c = circle(5.0, 200, 8.5);
    const auto same = scale_profile(c, 1.0);
    for (std::size_t i = 0; i < c.waypoints().size(); ++i) CHECK(same.waypoints()[i].v_ref == c.waypoints()[i].v_ref);
    const auto slow = scale_profile(c, 0.6);
    CHECK(slow.v_ref_at(3.0) == doctest::Approx(5.1));
    const auto rl = builtin_track("reference");
    const auto scaled = scale_profile(rl, 0.825);
    for (std::size_t i = 0; i < rl.waypoints().size(); ++i) {
        CHECK(scaled.waypoints()[i].v_ref == doctest::Approx(0.825 * rl.waypoints()[i].v_ref).epsilon(1e-15));
        CHECK(scaled.waypoints()[i].x == rl.waypoints()[i].x);
    }
    CHECK_THROWS_AS(scale_profile(rl, 0.0), InvalidArgument);
    CHECK_THROWS_AS(scale_profile(rl, 1.3), InvalidArgument);
}

TEST_CASE("forward-backward profile") {
    const auto c = forward_backward_profile(circle(5.0, 200, 0.0), 3.0, 5.0, 20.0);
    for (const auto& w : c.waypoints()) CHECK(w.v_ref == doctest::Approx(5.0));

    const auto st = straight_track(40.0, 0.0, 1.0);
    auto wps = st.waypoints();
    for (auto& w : wps) w.kappa = 0.0;
    const auto flat = forward_backward_profile(Raceline(wps), 3.0, 5.0, 7.0);
    for (const auto& w : flat.waypoints()) CHECK(w.v_ref == 7.0);

    const auto rl = builtin_track("reference");
    const auto once = forward_backward_profile(rl, 1.5, 6.0, 8.5);
    const auto twice = forward_backward_profile(once, 1.5, 6.0, 8.5);
    for (std::size_t i = 0; i < once.waypoints().size(); ++i)
        CHECK(twice.waypoints()[i].v_ref == doctest::Approx(once.waypoints()[i].v_ref).epsilon(1e-12));
    const auto& w = once.waypoints();
    for (std::size_t i = 1; i < w.size(); ++i) {
        const double ds = w[i].s - w[i - 1].s;
        CHECK(w[i].v_ref * w[i].v_ref <= w[i - 1].v_ref * w[i - 1].v_ref + 2.0 * 1.5 * ds + 1e-9);
        CHECK(w[i - 1].v_ref * w[i - 1].v_ref <= w[i].v_ref * w[i].v_ref + 2.0 * 1.5 * ds + 1e-9);
    }
}

TEST_CASE("lap metrics") {
    const auto rl = builtin_track("oval");
    const auto exact = lap_trace(rl, 0.0, 0.02, 3.0);
    const auto m0 = lap_metrics(exact, rl);
    CHECK(m0.rms_d == 0.0);
    CHECK(m0.max_abs_d == 0.0);
    CHECK(m0.lap_time == doctest::Approx(rl.length() / 3.0).epsilon(1e-9));
    CHECK_FALSE(m0.crashed);

    const auto off = lap_trace(rl, 0.1, 0.02, 3.0);
    const auto m1 = lap_metrics(off, rl);
    CHECK(m1.rms_d == doctest::Approx(0.1));
    CHECK(m1.max_abs_d == doctest::Approx(0.1));
    CHECK(m1.mean_abs_d == doctest::Approx(0.1));

    auto mirror = off;
    for (auto& s : mirror) s.d = -s.d;
    const auto m2 = lap_metrics(mirror, rl);
    CHECK(m2.rms_d == m1.rms_d);
    CHECK(m2.max_abs_d == m1.max_abs_d);
}

TEST_CASE("lap metrics detect a crash and incomplete laps") {
    const auto rl = builtin_track("oval");
    auto trace = lap_trace(rl, 0.0, 0.02, 3.0);
    trace[100].d = rl.w_left_at(trace[100].s) + 0.01;
    const auto m = lap_metrics(trace, rl);
    CHECK(m.crashed);
    CHECK(std::isnan(m.lap_time));
    CHECK(m.samples == 101);

    trace.resize(50);
    trace[10].d = 0.0;
    CHECK_THROWS_AS(lap_metrics(trace, rl), IncompleteLap);
    CHECK_THROWS_AS(lap_metrics({}, rl), IncompleteLap);
}

TEST_CASE("builtin tracks are valid closed loops") {
    for (const auto& name : builtin_track_names()) {
        const auto rl = builtin_track(name);
        const auto& w = rl.waypoints();
        CHECK(std::hypot(w.front().x - w.back().x, w.front().y - w.back().y) <= 0.01);
        for (const auto& p : w) CHECK(p.v_ref <= 8.5 + 1e-12);
        CHECK(rl.length() > 10.0);
    }
    CHECK_THROWS_AS(builtin_track("nowhere"), InvalidArgument);
}

TEST_CASE("raceline validation") {
    auto wps = unit_square().waypoints();
    wps[2].s = wps[1].s;
    CHECK_THROWS_AS(Raceline{wps}, InvalidArgument);
    wps = unit_square().waypoints();
    wps[1].w_left = 0.0;
    CHECK_THROWS_AS(Raceline{wps}, InvalidArgument);
    wps = unit_square().waypoints();
    wps.back().x = 0.05;
    CHECK_THROWS_AS(Raceline{wps}, InvalidArgument);
    wps = unit_square().waypoints();
    wps[2].s = 2.5;
    CHECK_THROWS_AS(Raceline{wps}, InvalidArgument);
}

TEST_CASE("csv round trip") {
    const auto rl = builtin_track("reference");
    const auto back = raceline_from_csv_text(raceline_csv(rl), "memory");
    REQUIRE(back.waypoints().size() == rl.waypoints().size());
    CHECK(back.length() == doctest::Approx(rl.length()).epsilon(1e-12));
    CHECK(raceline_csv(back) == raceline_csv(rl));
    const auto path = (std::filesystem::temp_directory_path() / "mapctl_test_rl.csv").string();
    save_raceline(path, rl);
    CHECK(raceline_csv(load_raceline(path)) == raceline_csv(rl));
    std::filesystem::remove(path);
}

}
