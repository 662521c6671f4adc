#pragma once

#include <optional>
#include <string>
#include <vector>

#include "apex/track.hpp"
#include "apex/vehicle.hpp"

namespace apex {

struct SolveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GlobalConfig {
    double ds = 2.0;                    // discretization distance [m]
    double r_ddelta = 50.0;             // input-rate weights (diagonal R)
    double r_dthrottle = 1.0;
    double r_dbrake = 1.0;
    double q_rear_slip = 200.0;         // rear slip-angle regularizer
    double margin_left = 0.5;           // subtracted from the left width
    double margin_right = -0.5;         // added to the right width
    double vx_cap = 60.0;               // [m/s]
    double vx_floor = 10.0;             // [m/s]
    int max_iterations = 150;
    double kkt_tolerance = 1e-6;
    double qp_tolerance = 1e-10;
};

struct GlobalProblemSpec {
    const TrackModel* track = nullptr;
    VehicleParams params;
    GlobalConfig config;
};

struct RacingLineSample {
    double s = 0.0;
    double n = 0.0;
    double mu = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    double r = 0.0;
    double delta = 0.0;
    double throttle = 0.0;
    double brake = 0.0;

    VehicleState state() const { return {s, n, mu, vx, vy, r, delta, throttle, brake}; }
};

struct GlobalSolverReport {
    int iterations = 0;
    int qp_iterations = 0;
    double kkt_residual = 0.0;
    double constraint_violation = 0.0;
    double periodicity_defect = 0.0;
    bool converged = false;
    double lap_time_s = 0.0;
    double solve_seconds = 0.0;
};

struct RacingLine {
    std::vector<RacingLineSample> samples;  // uniform in s, one lap
    double ds = 0.0;
    double lap_time = 0.0;
    GlobalSolverReport report;

    void save_csv(const std::string& path) const;
    static RacingLine load_csv(const std::string& path);
    void save_report_json(const std::string& path) const;
};

/// Stage cost of the spatial-domain lap-time problem:
/// J = -sdot + u'Ru + q_B * alpha_r^2.
double global_stage_cost(const VehicleState& x, const ControlRates& u,
                         const GlobalProblemSpec& spec);

/// Signed clearances of the body-expanded track constraint; feasible iff
/// both are >= 0.
std::pair<double, double> track_constraint_residuals(const VehicleState& x,
                                                     const GlobalProblemSpec& spec);

/// Largest constant speed whose steady lateral acceleration at the track's
/// curvature peak stays inside the friction ellipse.
double constant_speed_bound(const TrackModel& track, const VehicleParams& params);

RacingLine solve_global(const GlobalProblemSpec& spec,
                        const RacingLine* warm_start = nullptr);

/// Periodic-spline view of a racing line for fast interpolation queries.
class RacingLineRef {
public:
    RacingLineRef(const RacingLine& line, const TrackModel& track);

    double n(double s) const { return n_(s); }
    double dn_ds(double s) const { return n_.derivative(s); }
    double d2n_ds2(double s) const { return n_.second_derivative(s); }
    double mu(double s) const { return mu_(s); }
    double vx(double s) const { return vx_(s); }
    double sdot(double s) const { return sdot_(s); }
    double lap_time() const { return lap_time_; }
    double track_length() const { return length_; }

    // smallest progress rate of the line over the window [s0, s0 + ahead]
    double min_sdot_ahead(double s0, double ahead) const;

private:
    PeriodicSpline n_, mu_, vx_, sdot_;
    double lap_time_ = 0.0;
    double length_ = 0.0;
};

}  // namespace apex
