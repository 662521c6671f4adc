#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "apex/track.hpp"

using apex::CartesianPose;
using apex::FrenetPose;
using apex::TrackModel;
using apex::TrackSegment;
using apex::TrackSpec;

namespace {

TrackSpec oval_spec(double bank_arc_deg = 0.0) {
    TrackSpec spec;
    spec.name = "oval";
    const double wl = 6.0, wr = 6.0;
    auto straight = [&] {
        TrackSegment s;
        s.type = TrackSegment::Type::Straight;
        s.length = 300.0;
        s.w_left = wl;
        s.w_right = wr;
        return s;
    };
    auto arc = [&] {
        TrackSegment s;
        s.type = TrackSegment::Type::Arc;
        s.radius = 95.49;
        s.angle = M_PI;
        s.bank = bank_arc_deg * M_PI / 180.0;
        s.w_left = wl;
        s.w_right = wr;
        return s;
    };
    spec.segments = {straight(), arc(), straight(), arc()};
    return spec;
}

TrackSpec circle_spec(double radius) {
    TrackSpec spec;
    spec.name = "circle";
    TrackSegment s;
    s.type = TrackSegment::Type::Arc;
    s.radius = radius;
    s.angle = 2.0 * M_PI;
    s.w_left = 5.0;
    s.w_right = 5.0;
    spec.segments = {s};
    return spec;
}

}  // namespace

TEST_CASE("oval track length matches independent geometry arithmetic") {
    const TrackModel track = TrackModel::build(oval_spec());
    const double expected = 2.0 * 300.0 + 2.0 * M_PI * 95.49;  // independent oracle
    CHECK(track.length() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(track.length() == doctest::Approx(1200.0).epsilon(1e-3));
}

TEST_CASE("circle track has kappa = 1/R at every sampled s") {
    const double R = 100.0;
    const TrackModel track = TrackModel::build(circle_spec(R));
    for (double s = 0.0; s < track.length(); s += 1.0)
        CHECK(track.kappa(s) == doctest::Approx(1.0 / R).epsilon(1e-12));
}

TEST_CASE("bank table applies to arcs only") {
    const TrackModel track = TrackModel::build(oval_spec(10.0));
    CHECK(track.bank(150.0) == doctest::Approx(0.0).epsilon(1e-9));          // mid straight
    CHECK(track.bank(450.0) == doctest::Approx(10.0 * M_PI / 180.0).epsilon(1e-6));  // mid arc
}

TEST_CASE("curvature integrates to 2*pi over one lap") {
    for (const auto& spec : {oval_spec(), circle_spec(50.0)}) {
        const TrackModel track = TrackModel::build(spec);
        double acc = 0.0;
        const int steps = 200000;
        const double ds = track.length() / steps;
        for (int i = 0; i < steps; ++i) acc += track.kappa((i + 0.5) * ds) * ds;
        CHECK(acc == doctest::Approx(2.0 * M_PI).epsilon(1e-6));
    }
}

TEST_CASE("profiles are periodic") {
    const TrackModel track = TrackModel::build(oval_spec(10.0));
    const double L = track.length();
    for (double s : {0.0, 17.3, 299.9, 650.0, 1100.2}) {
        CHECK(track.kappa(s) == doctest::Approx(track.kappa(s + L)).epsilon(1e-12));
        CHECK(track.kappa(s) == doctest::Approx(track.kappa(s - 2.0 * L)).epsilon(1e-12));
        CHECK(track.bank(s) == doctest::Approx(track.bank(s + L)).epsilon(1e-12));
        CHECK(track.width_left(s) == doctest::Approx(track.width_left(s + L)).epsilon(1e-12));
    }
}

TEST_CASE("from_frenet basics") {
    const TrackModel track = TrackModel::build(oval_spec());
    // centerline point at s on the first straight
    const CartesianPose p0 = track.from_frenet({120.0, 0.0, 0.0});
    CHECK(p0.x == doctest::Approx(120.0).epsilon(1e-9));
    CHECK(p0.y == doctest::Approx(0.0).epsilon(1e-6));
    // displaced along the left normal on a straight
    const CartesianPose p1 = track.from_frenet({120.0, 2.0, 0.0});
    CHECK(p1.y == doctest::Approx(p0.y + 2.0).epsilon(1e-9));
    CHECK(p1.x == doctest::Approx(p0.x).epsilon(1e-9));
}

TEST_CASE("to_frenet basics") {
    const TrackModel track = TrackModel::build(oval_spec());
    const CartesianPose on_line = track.from_frenet({42.0, 0.0, 0.0});
    const FrenetPose f = track.to_frenet(on_line);
    CHECK(f.s == doctest::Approx(42.0).epsilon(1e-9));
    CHECK(f.n == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(f.mu == doctest::Approx(0.0).epsilon(1e-9));

    CartesianPose two_left = on_line;
    two_left.y += 2.0;  // first straight runs along +x
    const FrenetPose f2 = track.to_frenet(two_left);
    CHECK(f2.n == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("round trip to_frenet(from_frenet(f)) == f for random in-band poses") {
    const TrackModel track = TrackModel::build(oval_spec(8.0));
    std::mt19937_64 rng(12345);
    std::uniform_real_distribution<double> us(0.0, track.length());
    std::uniform_real_distribution<double> un(-5.0, 5.0);
    std::uniform_real_distribution<double> umu(-1.2, 1.2);
    int checked = 0;
    for (int i = 0; i < 10000; ++i) {
        FrenetPose f{us(rng), un(rng), umu(rng)};
        if (std::abs(f.n * track.kappa(f.s)) >= 0.5) continue;
        const CartesianPose p = track.from_frenet(f);
        const FrenetPose g = track.to_frenet(p, f.s);
        CHECK(std::abs(apex::wrap_signed(g.s - f.s, track.length())) < 1e-9);
        CHECK(std::abs(g.n - f.n) < 1e-9);
        CHECK(std::abs(apex::wrap_angle(g.mu - f.mu)) < 1e-9);
        ++checked;
    }
    CHECK(checked > 9000);
}

TEST_CASE("round trip without hint on a subset") {
    const TrackModel track = TrackModel::build(oval_spec());
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> us(0.0, track.length());
    std::uniform_real_distribution<double> un(-4.0, 4.0);
    for (int i = 0; i < 300; ++i) {
        FrenetPose f{us(rng), un(rng), 0.3};
        const CartesianPose p = track.from_frenet(f);
        const FrenetPose g = track.to_frenet(p);
        CHECK(std::abs(apex::wrap_signed(g.s - f.s, track.length())) < 1e-9);
        CHECK(std::abs(g.n - f.n) < 1e-9);
    }
}

TEST_CASE("projection ambiguity at the circle center is reported") {
    const TrackModel track = TrackModel::build(circle_spec(100.0));
    // circle centered at (0, R) with start at origin heading +x
    CartesianPose center{0.0, 100.0, 0.0};
    CHECK_THROWS_AS((void)track.to_frenet(center), apex::TrackError);
}

TEST_CASE("from_frenet rejects the singular band") {
    const TrackModel track = TrackModel::build(circle_spec(10.0));
    CHECK_THROWS_AS((void)track.from_frenet({5.0, 10.5, 0.0}), apex::TrackError);
}

TEST_CASE("non-closed specs are rejected") {
    TrackSpec bad;
    bad.name = "open";
    TrackSegment s;
    s.type = TrackSegment::Type::Straight;
    s.length = 100.0;
    s.w_left = 4.0;
    s.w_right = 4.0;
    TrackSegment a;
    a.type = TrackSegment::Type::Arc;
    a.radius = 30.0;
    a.angle = M_PI;  // net turn pi != 2*pi
    a.w_left = 4.0;
    a.w_right = 4.0;
    bad.segments = {s, a};
    CHECK_THROWS_AS((void)TrackModel::build(bad), apex::TrackError);
}

TEST_CASE("negative widths are rejected") {
    auto spec = oval_spec();
    spec.segments[1].w_left = -1.0;
    CHECK_THROWS_AS((void)TrackModel::build(spec), apex::TrackError);
}

TEST_CASE("sampled centerline input reproduces a circle") {
    TrackSpec spec;
    spec.name = "sampled-circle";
    const double R = 80.0;
    const int np = 600;
    for (int i = 0; i < np; ++i) {
        const double a = 2.0 * M_PI * i / np;
        spec.centerline.push_back({R * std::sin(a), R * (1.0 - std::cos(a))});
    }
    spec.sample_w_left = 5.0;
    spec.sample_w_right = 5.0;
    const TrackModel track = TrackModel::build(spec);
    CHECK(track.length() == doctest::Approx(2.0 * M_PI * R).epsilon(1e-3));
    for (double s = 0.0; s < track.length(); s += 25.0)
        CHECK(track.kappa(s) == doctest::Approx(1.0 / R).epsilon(1e-3));
}

TEST_CASE("clothoid blended oval builds and closes") {
    TrackSpec spec;
    spec.name = "oval-clothoid";
    const double R = 95.49, blend = 20.0;
    const double kc = 1.0 / R;
    // each arc shortened so total turn stays 2*pi: each blend turns kc*blend/2
    const double arc_angle = M_PI - 2.0 * (0.5 * kc * blend);
    auto seg = [&](TrackSegment::Type t) {
        TrackSegment s;
        s.type = t;
        s.w_left = 6.0;
        s.w_right = 6.0;
        return s;
    };
    auto straight = seg(TrackSegment::Type::Straight);
    straight.length = 300.0 - blend;
    auto in_blend = seg(TrackSegment::Type::Clothoid);
    in_blend.length = blend;
    in_blend.kappa_begin = 0.0;
    in_blend.kappa_end = kc;
    auto arc = seg(TrackSegment::Type::Arc);
    arc.radius = R;
    arc.angle = arc_angle;
    auto out_blend = seg(TrackSegment::Type::Clothoid);
    out_blend.length = blend;
    out_blend.kappa_begin = kc;
    out_blend.kappa_end = 0.0;
    spec.segments = {straight, in_blend, arc, out_blend,
                     straight, in_blend, arc, out_blend};
    const TrackModel track = TrackModel::build(spec);
    CHECK(track.length() > 1000.0);
    // round trip sanity on the blended track
    const FrenetPose f{500.0, 2.0, 0.1};
    const FrenetPose g = track.to_frenet(track.from_frenet(f), f.s);
    CHECK(std::abs(g.n - f.n) < 1e-9);
}
