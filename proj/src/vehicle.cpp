#include "apex/vehicle.hpp"

#include <algorithm>
#include <cmath>

namespace apex {
namespace {

double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}
double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

constexpr double kSmoothClipWidth = 0.01;

// Clip y into [-c, c]; the smooth variant blends with softplus of the given
// width and never leaves the interval.
double clip_fraction(double y, ClipMode mode, double* dy = nullptr) {
    const double c = kForceFractionClip;
    if (mode == ClipMode::Hard) {
        if (dy) *dy = (y > -c && y < c) ? 1.0 : 0.0;
        return std::clamp(y, -c, c);
    }
    const double w = kSmoothClipWidth;
    const double a = y - w * softplus((y - c) / w);
    const double da = 1.0 - sigmoid((y - c) / w);
    const double b = a + w * softplus((-c - a) / w);
    const double db = 1.0 - sigmoid((-c - a) / w);
    if (dy) *dy = da * db;
    return b;
}

double piecewise_linear(const std::vector<double>& xs, const std::vector<double>& ys, double x,
                        double* slope = nullptr) {
    if (x <= xs.front()) {
        if (slope) *slope = 0.0;
        return ys.front();
    }
    if (x >= xs.back()) {
        if (slope) *slope = 0.0;
        return ys.back();
    }
    std::size_t j = 0;
    while (j + 2 < xs.size() && xs[j + 1] <= x) ++j;
    const double t = (x - xs[j]) / (xs[j + 1] - xs[j]);
    if (slope) *slope = (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j]);
    return ys[j] + t * (ys[j + 1] - ys[j]);
}

}  // namespace

double PowertrainParams::ks(double vx) const {
    std::vector<double> xs, ys;
    xs.reserve(ks_table.size());
    ys.reserve(ks_table.size());
    for (const auto& p : ks_table) {
        xs.push_back(p[0]);
        ys.push_back(p[1]);
    }
    return piecewise_linear(xs, ys, vx);
}

double PowertrainParams::ks_prime(double vx) const {
    std::vector<double> xs, ys;
    for (const auto& p : ks_table) {
        xs.push_back(p[0]);
        ys.push_back(p[1]);
    }
    double slope = 0.0;
    piecewise_linear(xs, ys, vx, &slope);
    return slope;
}

double EllipseSpec::lon_at(double vx) const { return piecewise_linear(vx_knots, a_lon_max, vx); }
double EllipseSpec::lat_at(double vx) const { return piecewise_linear(vx_knots, a_lat_max, vx); }
double EllipseSpec::lon_slope(double vx) const {
    double s = 0.0;
    piecewise_linear(vx_knots, a_lon_max, vx, &s);
    return s;
}
double EllipseSpec::lat_slope(double vx) const {
    double s = 0.0;
    piecewise_linear(vx_knots, a_lat_max, vx, &s);
    return s;
}

SlipAngles slip_angles(const VehicleState& x, const ChassisParams& chassis) {
    SlipAngles out;
    const double vx = std::max(x.vx, kMinSpeedGuard);
    out.guarded = x.vx < kMinSpeedGuard;
    out.front = std::atan((x.vy + chassis.lf * x.r) / vx) - x.delta;
    out.rear = std::atan((x.vy - chassis.lr * x.r) / vx);
    return out;
}

double lateral_force_pure(double alpha, const TireAxleParams& tp) {
    const double z = tp.B * (alpha + tp.Sh);
    const double az = std::atan(z);
    return tp.Sv + tp.D * std::sin(tp.C * az - tp.E * (z - az));
}

double lateral_force_pure_dalpha(double alpha, const TireAxleParams& tp) {
    const double z = tp.B * (alpha + tp.Sh);
    const double az = std::atan(z);
    const double psi = tp.C * az - tp.E * (z - az);
    const double dpsi_dz = (tp.C - tp.E * z * z) / (1.0 + z * z);
    return tp.D * std::cos(psi) * dpsi_dz * tp.B;
}

double combined_slip_weight(double fx, const TireAxleParams& tp, ClipMode mode) {
    const double y = clip_fraction(fx / (tp.D * tp.eps), mode);
    return std::sqrt(1.0 - y * y);
}

double combined_slip_weight_dfx(double fx, const TireAxleParams& tp, ClipMode mode) {
    double dclip = 0.0;
    const double y = clip_fraction(fx / (tp.D * tp.eps), mode, &dclip);
    const double g = std::sqrt(1.0 - y * y);
    return -y / g * dclip / (tp.D * tp.eps);
}

AxleLongForces longitudinal_forces(const VehicleState& x, const PowertrainParams& pt) {
    const double tol = 1e-6;
    if (x.throttle < -tol || x.throttle > pt.ks(x.vx) + tol)
        throw ModelError("throttle outside [0, k_s(vx)]");
    if (x.brake < -tol || x.brake > 1.0 + tol) throw ModelError("brake outside [0, 1]");
    AxleLongForces f;
    f.front = -pt.Cbf * x.brake - pt.Cro;
    f.rear = pt.Cm * x.throttle - pt.Cbr * x.brake - pt.Cro;
    return f;
}

ForceBreakdown compute_forces(const VehicleState& x, const TrackSample& ts,
                              const VehicleParams& p, ClipMode mode) {
    ForceBreakdown f;
    const auto& ch = p.chassis;
    const auto sa = slip_angles(x, ch);
    f.alpha_f = sa.front;
    f.alpha_r = sa.rear;
    f.speed_guarded = sa.guarded;

    f.fx_f = -p.powertrain.Cbf * x.brake - p.powertrain.Cro;
    f.fx_r = p.powertrain.Cm * x.throttle - p.powertrain.Cbr * x.brake - p.powertrain.Cro;

    f.fy_f_lat = lateral_force_pure(f.alpha_f, p.tire_front);
    f.fy_r_lat = lateral_force_pure(f.alpha_r, p.tire_rear);
    f.g_f = combined_slip_weight(f.fx_f, p.tire_front, mode);
    f.g_r = combined_slip_weight(f.fx_r, p.tire_rear, mode);
    f.fy_f = f.g_f * f.fy_f_lat;
    f.fy_r = f.g_r * f.fy_r_lat;

    f.f_drag = 0.5 * ch.rho * ch.S * ch.Cd * x.vx * x.vx;
    f.f_bank_x = ch.m * ch.g * std::sin(ts.bank) * std::sin(x.mu);
    f.f_bank_y = ch.m * ch.g * std::sin(ts.bank) * std::cos(x.mu);

    const double cd = std::cos(x.delta), sd = std::sin(x.delta);
    f.a_lon = (f.fx_r - f.f_drag - f.fy_f * sd + f.fx_f * cd) / ch.m;
    f.a_lat = (f.fy_r + f.fy_f * cd + f.fx_f * sd) / ch.m;
    return f;
}

double progress_rate(const VehicleState& x, double kappa) {
    return (x.vx * std::cos(x.mu) - x.vy * std::sin(x.mu)) / (1.0 - x.n * kappa);
}

StateVec dynamics_time(const VehicleState& x, const ControlRates& u, const TrackSample& ts,
                       const VehicleParams& p, ClipMode mode, ForceBreakdown* forces_out) {
    if (std::abs(x.n * ts.kappa) >= kSingularMargin)
        throw ModelError("dynamics: |n*kappa| >= 0.9 at s=" + std::to_string(x.s) +
                         ", n=" + std::to_string(x.n));
    const ForceBreakdown f = compute_forces(x, ts, p, mode);
    if (forces_out) *forces_out = f;
    const auto& ch = p.chassis;

    const double den = 1.0 - x.n * ts.kappa;
    const double cmu = std::cos(x.mu), smu = std::sin(x.mu);
    const double sdot = (x.vx * cmu - x.vy * smu) / den;
    const double cd = std::cos(x.delta), sd = std::sin(x.delta);

    StateVec dx;
    dx[kS] = sdot;
    dx[kN] = x.vx * smu + x.vy * cmu;
    dx[kMu] = x.r - ts.kappa * sdot;
    dx[kVx] = (f.fx_r - f.f_drag - f.fy_f * sd + f.fx_f * cd - f.f_bank_x) / ch.m + x.vy * x.r;
    dx[kVy] = (f.fy_r + f.fy_f * cd + f.fx_f * sd - f.f_bank_y) / ch.m - x.vx * x.r;
    dx[kR] = (ch.lf * (f.fy_f * cd + f.fx_f * sd) - ch.lr * f.fy_r) / ch.Iz;
    dx[kDelta] = u.ddelta;
    dx[kThrottle] = u.dthrottle;
    dx[kBrake] = u.dbrake;
    return dx;
}

StateVec dynamics_time(const VehicleState& x, const ControlRates& u, const TrackModel& track,
                       const VehicleParams& p, ClipMode mode, ForceBreakdown* forces_out) {
    return dynamics_time(x, u, track.sample(x.s), p, mode, forces_out);
}

namespace {

// Partial derivatives of the final axle lateral forces w.r.t. states.
struct ForceDerivs {
    double fyf_vx = 0.0, fyf_vy = 0.0, fyf_r = 0.0, fyf_delta = 0.0, fyf_brake = 0.0;
    double fyr_vx = 0.0, fyr_vy = 0.0, fyr_r = 0.0, fyr_throttle = 0.0, fyr_brake = 0.0;
};

ForceDerivs force_derivs(const VehicleState& x, const ForceBreakdown& f,
                         const VehicleParams& p, ClipMode mode) {
    ForceDerivs d;
    const auto& ch = p.chassis;
    const double vx = std::max(x.vx, kMinSpeedGuard);
    const bool active = x.vx >= kMinSpeedGuard;

    const double wf = (x.vy + ch.lf * x.r) / vx;
    const double wr = (x.vy - ch.lr * x.r) / vx;
    const double df = 1.0 / (1.0 + wf * wf);
    const double dr = 1.0 / (1.0 + wr * wr);

    const double daf_dvx = active ? -wf / vx * df : 0.0;
    const double daf_dvy = df / vx;
    const double daf_dr = ch.lf * df / vx;
    const double dar_dvx = active ? -wr / vx * dr : 0.0;
    const double dar_dvy = dr / vx;
    const double dar_dr = -ch.lr * dr / vx;

    const double pf = lateral_force_pure_dalpha(f.alpha_f, p.tire_front);
    const double pr = lateral_force_pure_dalpha(f.alpha_r, p.tire_rear);

    d.fyf_vx = f.g_f * pf * daf_dvx;
    d.fyf_vy = f.g_f * pf * daf_dvy;
    d.fyf_r = f.g_f * pf * daf_dr;
    d.fyf_delta = -f.g_f * pf;
    d.fyr_vx = f.g_r * pr * dar_dvx;
    d.fyr_vy = f.g_r * pr * dar_dvy;
    d.fyr_r = f.g_r * pr * dar_dr;

    const double dgf = combined_slip_weight_dfx(f.fx_f, p.tire_front, mode);
    const double dgr = combined_slip_weight_dfx(f.fx_r, p.tire_rear, mode);
    d.fyf_brake = dgf * (-p.powertrain.Cbf) * f.fy_f_lat;
    d.fyr_throttle = dgr * p.powertrain.Cm * f.fy_r_lat;
    d.fyr_brake = dgr * (-p.powertrain.Cbr) * f.fy_r_lat;
    return d;
}

}  // namespace

void dynamics_time_jacobians(const VehicleState& x, const ControlRates& u,
                             const TrackSample& ts, const VehicleParams& p, ClipMode mode,
                             StateMat& A, InputMat& B) {
    (void)u;  // dynamics are affine in u with constant sensitivity
    const ForceBreakdown f = compute_forces(x, ts, p, mode);
    const ForceDerivs d = force_derivs(x, f, p, mode);
    const auto& ch = p.chassis;
    const auto& pt = p.powertrain;

    const double den = 1.0 - x.n * ts.kappa;
    const double cmu = std::cos(x.mu), smu = std::sin(x.mu);
    const double num = x.vx * cmu - x.vy * smu;
    const double ndot = x.vx * smu + x.vy * cmu;
    const double sdot = num / den;
    const double cd = std::cos(x.delta), sd = std::sin(x.delta);

    A.setZero();
    B.setZero();

    // progress-rate row
    const double ds_ds = num * (x.n * ts.dkappa_ds) / (den * den);
    const double ds_dn = num * ts.kappa / (den * den);
    const double ds_dmu = -ndot / den;
    const double ds_dvx = cmu / den;
    const double ds_dvy = -smu / den;
    A(kS, kS) = ds_ds;
    A(kS, kN) = ds_dn;
    A(kS, kMu) = ds_dmu;
    A(kS, kVx) = ds_dvx;
    A(kS, kVy) = ds_dvy;

    A(kN, kMu) = num;
    A(kN, kVx) = smu;
    A(kN, kVy) = cmu;

    A(kMu, kS) = -ts.dkappa_ds * sdot - ts.kappa * ds_ds;
    A(kMu, kN) = -ts.kappa * ds_dn;
    A(kMu, kMu) = -ts.kappa * ds_dmu;
    A(kMu, kVx) = -ts.kappa * ds_dvx;
    A(kMu, kVy) = -ts.kappa * ds_dvy;
    A(kMu, kR) = 1.0;

    const double m = ch.m;
    const double ct = std::cos(ts.bank), st = std::sin(ts.bank);

    A(kVx, kS) = -ch.g * ct * ts.dbank_ds * smu;
    A(kVx, kMu) = -ch.g * st * cmu;
    A(kVx, kVx) = (-ch.rho * ch.S * ch.Cd * x.vx - sd * d.fyf_vx) / m;
    A(kVx, kVy) = (-sd * d.fyf_vy) / m + x.r;
    A(kVx, kR) = (-sd * d.fyf_r) / m + x.vy;
    A(kVx, kDelta) = (-sd * d.fyf_delta - f.fy_f * cd - f.fx_f * sd) / m;
    A(kVx, kThrottle) = pt.Cm / m;
    A(kVx, kBrake) = (-pt.Cbr - sd * d.fyf_brake + cd * (-pt.Cbf)) / m;

    A(kVy, kS) = -ch.g * ct * ts.dbank_ds * cmu;
    A(kVy, kMu) = ch.g * st * smu;
    A(kVy, kVx) = (d.fyr_vx + cd * d.fyf_vx) / m - x.r;
    A(kVy, kVy) = (d.fyr_vy + cd * d.fyf_vy) / m;
    A(kVy, kR) = (d.fyr_r + cd * d.fyf_r) / m - x.vx;
    A(kVy, kDelta) = (cd * d.fyf_delta - f.fy_f * sd + f.fx_f * cd) / m;
    A(kVy, kThrottle) = d.fyr_throttle / m;
    A(kVy, kBrake) = (d.fyr_brake + cd * d.fyf_brake + sd * (-pt.Cbf)) / m;

    const double iz = ch.Iz;
    A(kR, kVx) = (ch.lf * cd * d.fyf_vx - ch.lr * d.fyr_vx) / iz;
    A(kR, kVy) = (ch.lf * cd * d.fyf_vy - ch.lr * d.fyr_vy) / iz;
    A(kR, kR) = (ch.lf * cd * d.fyf_r - ch.lr * d.fyr_r) / iz;
    A(kR, kDelta) = ch.lf * (cd * d.fyf_delta - f.fy_f * sd + f.fx_f * cd) / iz;
    A(kR, kThrottle) = -ch.lr * d.fyr_throttle / iz;
    A(kR, kBrake) = (ch.lf * (cd * d.fyf_brake + sd * (-pt.Cbf)) - ch.lr * d.fyr_brake) / iz;

    B(kDelta, 0) = 1.0;
    B(kThrottle, 1) = 1.0;
    B(kBrake, 2) = 1.0;
}

VehicleState space_to_state(const SpaceVec& z, double s) {
    VehicleState x;
    x.s = s;
    x.n = z[0];
    x.mu = z[1];
    x.vx = z[2];
    x.vy = z[3];
    x.r = z[4];
    x.delta = z[5];
    x.throttle = z[6];
    x.brake = z[7];
    return x;
}

SpaceVec state_to_space(const VehicleState& x) {
    SpaceVec z;
    z << x.n, x.mu, x.vx, x.vy, x.r, x.delta, x.throttle, x.brake;
    return z;
}

SpaceVec dynamics_space(const SpaceVec& z, const ControlRates& u, double s,
                        const TrackSample& ts, const VehicleParams& p, ClipMode mode,
                        double* sdot_out) {
    const VehicleState x = space_to_state(z, s);
    const StateVec ft = dynamics_time(x, u, ts, p, mode);
    const double sdot = ft[kS];
    if (sdot_out) *sdot_out = sdot;
    if (sdot <= kMinProgressRate)
        throw ModelError("dynamics_space: progress rate " + std::to_string(sdot) +
                         " below minimum");
    SpaceVec fs;
    for (int i = 0; i < kSpaceSize; ++i) fs[i] = ft[i + 1] / sdot;
    return fs;
}

void dynamics_space_jacobians(const SpaceVec& z, const ControlRates& u, double s,
                              const TrackSample& ts, const VehicleParams& p, ClipMode mode,
                              SpaceMat& A, SpaceInputMat& B) {
    const VehicleState x = space_to_state(z, s);
    const StateVec ft = dynamics_time(x, u, ts, p, mode);
    const double sdot = ft[kS];
    if (sdot <= kMinProgressRate) throw ModelError("dynamics_space_jacobians: sdot too small");
    StateMat At;
    InputMat Bt;
    dynamics_time_jacobians(x, u, ts, p, mode, At, Bt);
    // f_s[i] = f_t[i+1] / sdot; quotient rule. s is the running variable, not
    // a state, so column 0 of the time Jacobian does not appear.
    for (int i = 0; i < kSpaceSize; ++i) {
        for (int j = 0; j < kSpaceSize; ++j) {
            A(i, j) = At(i + 1, j + 1) / sdot - ft[i + 1] * At(kS, j + 1) / (sdot * sdot);
        }
        for (int j = 0; j < ControlRates::kSize; ++j) {
            B(i, j) = Bt(i + 1, j) / sdot;  // sdot has no direct u dependence
        }
    }
}

VehicleState rk4_step(const VehicleState& x, const ControlRates& u, double dt,
                      const TrackModel& track, const VehicleParams& p, ClipMode mode) {
    if (!(dt > 0.0)) throw ModelError("rk4_step: dt must be positive");
    const StateVec x0 = x.to_vec();
    const StateVec k1 = dynamics_time(x, u, track.sample(x.s), p, mode);
    const VehicleState x2 = VehicleState::from_vec(x0 + 0.5 * dt * k1);
    const StateVec k2 = dynamics_time(x2, u, track.sample(x2.s), p, mode);
    const VehicleState x3 = VehicleState::from_vec(x0 + 0.5 * dt * k2);
    const StateVec k3 = dynamics_time(x3, u, track.sample(x3.s), p, mode);
    const VehicleState x4 = VehicleState::from_vec(x0 + dt * k3);
    const StateVec k4 = dynamics_time(x4, u, track.sample(x4.s), p, mode);
    VehicleState out = VehicleState::from_vec(x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    out.s = wrap_to_period(out.s, track.length());
    return out;
}

VehicleState rk4_step_with_jacobians(const VehicleState& x, const ControlRates& u, double dt,
                                     const TrackModel& track, const VehicleParams& p,
                                     ClipMode mode, StateMat& Ad, InputMat& Bd) {
    const StateVec x0 = x.to_vec();
    StateMat A1, A2, A3, A4;
    InputMat B1, B2, B3, B4;

    const TrackSample t1 = track.sample(x.s);
    const StateVec k1 = dynamics_time(x, u, t1, p, mode);
    dynamics_time_jacobians(x, u, t1, p, mode, A1, B1);

    const VehicleState s2 = VehicleState::from_vec(x0 + 0.5 * dt * k1);
    const TrackSample t2 = track.sample(s2.s);
    const StateVec k2 = dynamics_time(s2, u, t2, p, mode);
    dynamics_time_jacobians(s2, u, t2, p, mode, A2, B2);

    const VehicleState s3 = VehicleState::from_vec(x0 + 0.5 * dt * k2);
    const TrackSample t3 = track.sample(s3.s);
    const StateVec k3 = dynamics_time(s3, u, t3, p, mode);
    dynamics_time_jacobians(s3, u, t3, p, mode, A3, B3);

    const VehicleState s4 = VehicleState::from_vec(x0 + dt * k3);
    const TrackSample t4 = track.sample(s4.s);
    const StateVec k4 = dynamics_time(s4, u, t4, p, mode);
    dynamics_time_jacobians(s4, u, t4, p, mode, A4, B4);

    const StateMat I = StateMat::Identity();
    const StateMat dk1 = A1;
    const InputMat du1 = B1;
    const StateMat dk2 = A2 * (I + 0.5 * dt * dk1);
    const InputMat du2 = A2 * (0.5 * dt * du1) + B2;
    const StateMat dk3 = A3 * (I + 0.5 * dt * dk2);
    const InputMat du3 = A3 * (0.5 * dt * du2) + B3;
    const StateMat dk4 = A4 * (I + dt * dk3);
    const InputMat du4 = A4 * (dt * du3) + B4;

    Ad = I + dt / 6.0 * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4);
    Bd = dt / 6.0 * (du1 + 2.0 * du2 + 2.0 * du3 + du4);
    return VehicleState::from_vec(x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

double ellipse_residual(const VehicleState& x, const TrackSample& ts, const VehicleParams& p,
                        ClipMode mode, StateVec* grad) {
    const ForceBreakdown f = compute_forces(x, ts, p, mode);
    const auto& el = p.ellipse;
    const double A = el.lon_at(x.vx), Bv = el.lat_at(x.vx);
    const double e = (f.a_lon / A) * (f.a_lon / A) + (f.a_lat / Bv) * (f.a_lat / Bv) - 1.0;
    if (!grad) return e;

    const ForceDerivs d = force_derivs(x, f, p, mode);
    const auto& ch = p.chassis;
    const auto& pt = p.powertrain;
    const double m = ch.m;
    const double cd = std::cos(x.delta), sd = std::sin(x.delta);

    StateVec dlon = StateVec::Zero(), dlat = StateVec::Zero();
    dlon[kVx] = (-ch.rho * ch.S * ch.Cd * x.vx - sd * d.fyf_vx) / m;
    dlon[kVy] = (-sd * d.fyf_vy) / m;
    dlon[kR] = (-sd * d.fyf_r) / m;
    dlon[kDelta] = (-sd * d.fyf_delta - f.fy_f * cd - f.fx_f * sd) / m;
    dlon[kThrottle] = pt.Cm / m;
    dlon[kBrake] = (-pt.Cbr - sd * d.fyf_brake - cd * pt.Cbf) / m;

    dlat[kVx] = (d.fyr_vx + cd * d.fyf_vx) / m;
    dlat[kVy] = (d.fyr_vy + cd * d.fyf_vy) / m;
    dlat[kR] = (d.fyr_r + cd * d.fyf_r) / m;
    dlat[kDelta] = (cd * d.fyf_delta - f.fy_f * sd + f.fx_f * cd) / m;
    dlat[kThrottle] = d.fyr_throttle / m;
    dlat[kBrake] = (d.fyr_brake + cd * d.fyf_brake - sd * pt.Cbf) / m;

    *grad = 2.0 * (f.a_lon / (A * A)) * dlon + 2.0 * (f.a_lat / (Bv * Bv)) * dlat;
    (*grad)[kVx] += -2.0 * f.a_lon * f.a_lon / (A * A * A) * el.lon_slope(x.vx) -
                    2.0 * f.a_lat * f.a_lat / (Bv * Bv * Bv) * el.lat_slope(x.vx);
    return e;
}

}  // namespace apex
