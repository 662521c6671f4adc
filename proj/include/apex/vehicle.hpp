#pragma once

#include <Eigen/Dense>
#include <array>
#include <stdexcept>
#include <vector>

#include "apex/track.hpp"

namespace apex {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChassisParams {
    double m = 780.0;    // [kg]
    double Iz = 1000.0;  // [kg m^2]
    double lf = 1.60;    // [m] CoG to front axle
    double lr = 1.40;    // [m] CoG to rear axle
    double rho = 1.2;    // [kg/m^3]
    double S = 1.0;      // [m^2] frontal area
    double Cd = 0.9;     // drag coefficient
    double g = 9.81;     // [m/s^2]
    double Lc = 2.5;     // [m] half car length
    double Wc = 0.95;    // [m] half car width
};

// Magic-formula macro parameters for one axle. The slip-angle convention
// (alpha grows with sideslip, positive steer gives negative front alpha)
// puts the restoring sign into the stiffness factor B, which is negative
// for a stable car; D stays positive as the force peak.
struct TireAxleParams {
    double B = -9.5;   // stiffness factor
    double C = 1.7;    // shape factor
    double D = 7200.0; // [N] peak force
    double E = 0.9;    // curvature factor
    double Sv = 0.0;   // [N] vertical offset
    double Sh = 0.0;   // [rad] horizontal shift
    double eps = 0.95; // ellipse shape parameter, in (0, 1.2]
};

struct PowertrainParams {
    double Cm = 6000.0;   // [N] linear engine coefficient
    double Cbf = 6000.0;  // [N] max front brake force
    double Cbr = 4000.0;  // [N] max rear brake force
    double Cro = 50.0;    // [N] rolling resistance
    // piecewise-linear upper throttle bound k_s(vx), monotone in vx
    std::vector<std::array<double, 2>> ks_table = {
        {0.0, 0.55}, {30.0, 0.75}, {50.0, 0.9}, {80.0, 1.0}};

    double ks(double vx) const;
    double ks_prime(double vx) const;
};

// Velocity-dependent friction-ellipse axes, piecewise linear in vx.
struct EllipseSpec {
    std::vector<double> vx_knots = {0.0, 30.0, 60.0, 90.0};
    std::vector<double> a_lon_max = {11.0, 11.0, 10.0, 9.5};
    std::vector<double> a_lat_max = {16.5, 16.0, 15.5, 15.0};

    double lon_at(double vx) const;
    double lat_at(double vx) const;
    double lon_slope(double vx) const;
    double lat_slope(double vx) const;
};

struct InputLimits {
    double delta_max = 0.30;     // [rad]
    double ddelta_max = 0.70;    // [rad/s]
    double dthrottle_max = 2.5;  // [1/s]
    double dbrake_max = 4.0;     // [1/s]
    double vx_max = 75.0;        // [m/s]
};

struct VehicleParams {
    ChassisParams chassis;
    TireAxleParams tire_front;
    TireAxleParams tire_rear;
    PowertrainParams powertrain;
    EllipseSpec ellipse;
    InputLimits limits;
};

/// Curvilinear state x = [s; n; mu; vx; vy; r; delta; throttle; brake].
struct VehicleState {
    double s = 0.0;
    double n = 0.0;
    double mu = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    double r = 0.0;
    double delta = 0.0;
    double throttle = 0.0;
    double brake = 0.0;

    static constexpr int kSize = 9;
    using Vec = Eigen::Matrix<double, kSize, 1>;

    Vec to_vec() const {
        Vec v;
        v << s, n, mu, vx, vy, r, delta, throttle, brake;
        return v;
    }
    static VehicleState from_vec(const Vec& v) {
        return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
    }
};

enum StateIndex { kS = 0, kN, kMu, kVx, kVy, kR, kDelta, kThrottle, kBrake };

/// Input rates u = [d(delta)/dt; d(throttle)/dt; d(brake)/dt].
struct ControlRates {
    double ddelta = 0.0;
    double dthrottle = 0.0;
    double dbrake = 0.0;

    static constexpr int kSize = 3;
    using Vec = Eigen::Matrix<double, kSize, 1>;
    Vec to_vec() const { return Vec(ddelta, dthrottle, dbrake); }
    static ControlRates from_vec(const Vec& v) { return {v[0], v[1], v[2]}; }
};

// Hard clipping reproduces the printed force-fraction clip for simulation;
// the optimizers use a softplus blend (width 0.01) so derivatives exist.
enum class ClipMode { Hard, Smooth };

constexpr double kMinSpeedGuard = 5.0;   // [m/s] slip-angle denominator guard
constexpr double kSingularMargin = 0.9;  // reject |n*kappa| beyond this
constexpr double kForceFractionClip = 0.98;

struct SlipAngles {
    double front = 0.0;
    double rear = 0.0;
    bool guarded = false;  // vx clamped to the low-speed guard
};

SlipAngles slip_angles(const VehicleState& x, const ChassisParams& chassis);

double lateral_force_pure(double alpha, const TireAxleParams& tp);
double lateral_force_pure_dalpha(double alpha, const TireAxleParams& tp);

double combined_slip_weight(double fx, const TireAxleParams& tp,
                            ClipMode mode = ClipMode::Hard);
double combined_slip_weight_dfx(double fx, const TireAxleParams& tp, ClipMode mode);

struct AxleLongForces {
    double front = 0.0;
    double rear = 0.0;
};
// Throws if throttle/brake are outside their boxes (tolerance 1e-6).
AxleLongForces longitudinal_forces(const VehicleState& x, const PowertrainParams& pt);

struct ForceBreakdown {
    double alpha_f = 0.0, alpha_r = 0.0;
    double fy_f_lat = 0.0, fy_r_lat = 0.0;
    double g_f = 1.0, g_r = 1.0;
    double fx_f = 0.0, fx_r = 0.0;
    double fy_f = 0.0, fy_r = 0.0;
    double f_drag = 0.0;
    double f_bank_x = 0.0, f_bank_y = 0.0;
    double a_lon = 0.0, a_lat = 0.0;  // tire+aero specific force [m/s^2]
    bool speed_guarded = false;
};

ForceBreakdown compute_forces(const VehicleState& x, const TrackSample& ts,
                              const VehicleParams& p, ClipMode mode);

using StateVec = VehicleState::Vec;
using StateMat = Eigen::Matrix<double, VehicleState::kSize, VehicleState::kSize>;
using InputMat = Eigen::Matrix<double, VehicleState::kSize, ControlRates::kSize>;

/// Time-domain dynamics; throws on |n*kappa| >= 0.9.
StateVec dynamics_time(const VehicleState& x, const ControlRates& u, const TrackSample& ts,
                       const VehicleParams& p, ClipMode mode = ClipMode::Hard,
                       ForceBreakdown* forces_out = nullptr);
StateVec dynamics_time(const VehicleState& x, const ControlRates& u, const TrackModel& track,
                       const VehicleParams& p, ClipMode mode = ClipMode::Hard,
                       ForceBreakdown* forces_out = nullptr);

void dynamics_time_jacobians(const VehicleState& x, const ControlRates& u,
                             const TrackSample& ts, const VehicleParams& p, ClipMode mode,
                             StateMat& A, InputMat& B);

/// Spatial-domain state [n; mu; vx; vy; r; delta; throttle; brake] with s as
/// the running variable; f_s = f_t / sdot. Throws when sdot <= eps.
constexpr int kSpaceSize = 8;
using SpaceVec = Eigen::Matrix<double, kSpaceSize, 1>;
using SpaceMat = Eigen::Matrix<double, kSpaceSize, kSpaceSize>;
using SpaceInputMat = Eigen::Matrix<double, kSpaceSize, ControlRates::kSize>;
constexpr double kMinProgressRate = 1.0;  // [m/s]

VehicleState space_to_state(const SpaceVec& z, double s);
SpaceVec state_to_space(const VehicleState& x);

SpaceVec dynamics_space(const SpaceVec& z, const ControlRates& u, double s,
                        const TrackSample& ts, const VehicleParams& p,
                        ClipMode mode = ClipMode::Smooth, double* sdot_out = nullptr);
void dynamics_space_jacobians(const SpaceVec& z, const ControlRates& u, double s,
                              const TrackSample& ts, const VehicleParams& p, ClipMode mode,
                              SpaceMat& A, SpaceInputMat& B);

/// Classical RK4 step with zero-order hold on u; s wrapped modulo track length.
VehicleState rk4_step(const VehicleState& x, const ControlRates& u, double dt,
                      const TrackModel& track, const VehicleParams& p,
                      ClipMode mode = ClipMode::Hard);

/// RK4 step plus exact discrete Jacobians of the step map (chain rule over
/// the four stages). s is left unwrapped so horizon states stay monotone.
VehicleState rk4_step_with_jacobians(const VehicleState& x, const ControlRates& u, double dt,
                                     const TrackModel& track, const VehicleParams& p,
                                     ClipMode mode, StateMat& Ad, InputMat& Bd);

/// Friction-ellipse residual e(x) = (a_lon/A(vx))^2 + (a_lat/B(vx))^2 - 1
/// (feasible iff <= 0) and its state gradient.
double ellipse_residual(const VehicleState& x, const TrackSample& ts, const VehicleParams& p,
                        ClipMode mode, StateVec* grad = nullptr);

double progress_rate(const VehicleState& x, double kappa);

}  // namespace apex
