#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "apex/raceline.hpp"

using namespace apex;

namespace {

TrackSpec oval_spec() {
    TrackSpec spec;
    spec.name = "oval1200";
    TrackSegment straight;
    straight.type = TrackSegment::Type::Straight;
    straight.length = 300.0;
    straight.w_left = straight.w_right = 6.0;
    TrackSegment arc;
    arc.type = TrackSegment::Type::Arc;
    arc.radius = 95.49;
    arc.angle = M_PI;
    arc.w_left = arc.w_right = 6.0;
    spec.segments = {straight, arc, straight, arc};
    return spec;
}

TrackSpec mirrored(const TrackSpec& spec) {
    TrackSpec m = spec;
    for (auto& seg : m.segments) {
        seg.angle = -seg.angle;
        seg.bank = -seg.bank;
        std::swap(seg.w_left, seg.w_right);
    }
    return m;
}

TrackSpec circle_spec(double radius) {
    TrackSpec spec;
    spec.name = "circle";
    TrackSegment arc;
    arc.type = TrackSegment::Type::Arc;
    arc.radius = radius;
    arc.angle = 2.0 * M_PI;
    arc.w_left = arc.w_right = 5.0;
    spec.segments = {arc};
    return spec;
}

GlobalProblemSpec make_spec(const TrackModel& track) {
    GlobalProblemSpec spec;
    spec.track = &track;
    spec.params = VehicleParams{};
    spec.config = GlobalConfig{};
    return spec;
}

}  // namespace

TEST_CASE("stage cost values") {
    const TrackModel track = TrackModel::build(oval_spec());
    GlobalProblemSpec spec = make_spec(track);

    // straight aligned state at 50 m/s, no inputs: only the progress term
    VehicleState x;
    x.s = 150.0;
    x.vx = 50.0;
    CHECK(global_stage_cost(x, {}, spec) == doctest::Approx(-50.0).epsilon(1e-9));

    // weights off leaves exactly -sdot
    spec.config.q_rear_slip = 0.0;
    spec.config.r_ddelta = spec.config.r_dthrottle = spec.config.r_dbrake = 0.0;
    x.vy = 1.2;
    x.r = 0.2;
    x.mu = 0.1;
    x.n = 1.0;
    const double sdot = progress_rate(x, track.kappa(x.s));
    CHECK(global_stage_cost(x, {0.2, 0.1, 0.05}, spec) == doctest::Approx(-sdot).epsilon(1e-12));

    // independent scalar transcription at a random state
    spec.config = GlobalConfig{};
    const ControlRates u{0.15, -0.1, 0.2};
    const double alpha_r = std::atan((x.vy - spec.params.chassis.lr * x.r) / x.vx);
    const double expected = -sdot +
                            (spec.config.r_ddelta * u.ddelta * u.ddelta +
                             spec.config.r_dthrottle * u.dthrottle * u.dthrottle +
                             spec.config.r_dbrake * u.dbrake * u.dbrake) +
                            spec.config.q_rear_slip * alpha_r * alpha_r;
    CHECK(global_stage_cost(x, u, spec) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("track constraint residuals") {
    const TrackModel track = TrackModel::build(oval_spec());
    GlobalProblemSpec spec = make_spec(track);
    spec.config.margin_left = 0.5;
    spec.config.margin_right = -0.5;
    const double wc = spec.params.chassis.Wc;
    const double lc = spec.params.chassis.Lc;

    VehicleState x;
    x.s = 150.0;
    x.n = 0.0;
    x.mu = 0.0;
    auto [left, right] = track_constraint_residuals(x, spec);
    CHECK(left == doctest::Approx(track.width_left(x.s) - 0.5 - wc).epsilon(1e-9));
    CHECK(right == doctest::Approx(track.width_right(x.s) - 0.5 - wc).epsilon(1e-9));

    // sideways car: body term collapses to the half length
    x.mu = M_PI / 2.0;
    std::tie(left, right) = track_constraint_residuals(x, spec);
    CHECK(left == doctest::Approx(track.width_left(x.s) - 0.5 - lc).epsilon(1e-9));

    // active boundary
    x.mu = 0.0;
    x.n = track.width_left(x.s) - 0.5 - wc;
    std::tie(left, right) = track_constraint_residuals(x, spec);
    CHECK(left == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("infeasible margins detected before solving") {
    const TrackModel track = TrackModel::build(oval_spec());
    GlobalProblemSpec spec = make_spec(track);
    spec.config.margin_left = 7.0;   // exceeds the 6 m width
    spec.config.margin_right = -7.0;
    CHECK_THROWS_AS((void)solve_global(spec), SolveError);
}

TEST_CASE("circular track: constant solution riding the lateral limit") {
    const TrackModel track = TrackModel::build(circle_spec(100.0));
    GlobalProblemSpec spec = make_spec(track);
    spec.config.vx_cap = 70.0;
    const RacingLine line = solve_global(spec);
    REQUIRE(line.report.converged);

    // constant n and vx across all samples
    double n_min = 1e9, n_max = -1e9, v_min = 1e9, v_max = -1e9;
    for (const auto& p : line.samples) {
        n_min = std::min(n_min, p.n);
        n_max = std::max(n_max, p.n);
        v_min = std::min(v_min, p.vx);
        v_max = std::max(v_max, p.vx);
    }
    CHECK(n_max - n_min < 1e-4);
    CHECK(v_max - v_min < 1e-4);

    // lateral acceleration matches the ellipse bound within 1%
    const auto& p = line.samples[0];
    const double radius_eff = 1.0 / track.kappa(p.s) - p.n;  // inside line shrinks radius
    const double a_lat = p.vx * p.vx / radius_eff;
    const double bound = spec.params.ellipse.lat_at(p.vx);
    CHECK(a_lat == doctest::Approx(bound).epsilon(0.01));
}

TEST_CASE("oval: solver beats the constant-speed baseline and closes the loop") {
    const TrackModel track = TrackModel::build(oval_spec());
    GlobalProblemSpec spec = make_spec(track);
    const RacingLine line = solve_global(spec);
    REQUIRE(line.report.converged);
    CHECK(line.report.periodicity_defect < 1e-6);
    CHECK(line.report.constraint_violation < 1e-6);

    const double v_base = constant_speed_bound(track, spec.params);
    const double t_base = track.length() / v_base;
    CHECK(line.lap_time < 0.95 * t_base);

    // throttle saturates at k_s(vx) somewhere on the straights
    bool throttle_saturated = false;
    for (const auto& p : line.samples) {
        if (p.throttle > spec.params.powertrain.ks(p.vx) - 1e-4) throttle_saturated = true;
    }
    CHECK(throttle_saturated);

    // warm start from the solution converges immediately
    const RacingLine warm = solve_global(spec, &line);
    CHECK(warm.report.iterations <= 3);
    CHECK(warm.report.converged);
}

TEST_CASE("mirrored oval gives the mirrored racing line") {
    const TrackModel track = TrackModel::build(oval_spec());
    const TrackModel track_m = TrackModel::build(mirrored(oval_spec()));
    GlobalProblemSpec spec = make_spec(track);
    GlobalProblemSpec spec_m = make_spec(track_m);
    spec_m.config.margin_left = spec.config.margin_right >= 0.0 ? spec.config.margin_right
                                                                : -spec.config.margin_right;
    spec_m.config.margin_left = -spec.config.margin_right;
    spec_m.config.margin_right = -spec.config.margin_left;

    const RacingLine a = solve_global(spec);
    const RacingLine b = solve_global(spec_m);
    REQUIRE(a.report.converged);
    REQUIRE(b.report.converged);
    REQUIRE(a.samples.size() == b.samples.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < a.samples.size(); ++k)
        worst = std::max(worst, std::abs(a.samples[k].n + b.samples[k].n));
    CHECK(worst < 1e-3);
    CHECK(a.lap_time == doctest::Approx(b.lap_time).epsilon(1e-6));
}

TEST_CASE("solution is invariant under rotation of the starting index") {
    // rotate the oval segment list so the lap starts mid-back-straight;
    // the physical problem is identical, so n(s) profiles must agree
    const TrackModel track = TrackModel::build(oval_spec());
    GlobalProblemSpec spec = make_spec(track);
    spec.config.kkt_tolerance = 1e-8;
    const RacingLine a = solve_global(spec);

    TrackSpec rot = oval_spec();
    std::rotate(rot.segments.begin(), rot.segments.begin() + 2, rot.segments.end());
    const TrackModel track_r = TrackModel::build(rot);
    GlobalProblemSpec spec_r = make_spec(track_r);
    spec_r.config.kkt_tolerance = 1e-8;
    const RacingLine b = solve_global(spec_r);

    REQUIRE(a.report.converged);
    REQUIRE(b.report.converged);
    // stage k of the rotated problem sits at s + 600 m of the original
    const double shift = 600.0 + M_PI * 95.49;  // straight + arc
    RacingLineRef ref_a(a, track);
    double worst = 0.0;
    for (const auto& p : b.samples)
        worst = std::max(worst, std::abs(p.n - ref_a.n(p.s + shift)));
    CHECK(worst < 1e-4);
}

TEST_CASE("racing line csv round trip") {
    const TrackModel track = TrackModel::build(circle_spec(80.0));
    GlobalProblemSpec spec = make_spec(track);
    const RacingLine line = solve_global(spec);
    const std::string path = "/tmp/apex_line_test.csv";
    line.save_csv(path);
    const RacingLine loaded = RacingLine::load_csv(path);
    REQUIRE(loaded.samples.size() == line.samples.size());
    for (std::size_t k = 0; k < line.samples.size(); k += 37) {
        CHECK(loaded.samples[k].n == doctest::Approx(line.samples[k].n).epsilon(1e-8));
        CHECK(loaded.samples[k].vx == doctest::Approx(line.samples[k].vx).epsilon(1e-8));
    }
}
