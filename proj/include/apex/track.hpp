#pragma once

#include <array>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "apex/spline.hpp"

namespace apex {

struct TrackError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CartesianPose {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
};

/// Pose relative to the track centerline: progress s in [0, L), signed
/// lateral offset n (positive to the left of travel), heading error mu.
struct FrenetPose {
    double s = 0.0;
    double n = 0.0;
    double mu = 0.0;
};

struct TrackSegment {
    enum class Type { Straight, Arc, Clothoid };
    Type type = Type::Straight;
    double length = 0.0;       // straights and clothoids [m]
    double radius = 0.0;       // arcs [m], > 0
    double angle = 0.0;        // arcs: signed sweep [rad], + turns left
    double kappa_begin = 0.0;  // clothoids: start/end curvature [1/m]
    double kappa_end = 0.0;
    double bank = 0.0;         // [rad]
    double w_left = 0.0;       // [m]
    double w_right = 0.0;      // [m]
};

struct TrackSpec {
    std::string name;
    std::vector<TrackSegment> segments;  // analytic form ...
    // ... or a closed sampled centerline (first point not repeated).
    std::vector<std::array<double, 2>> centerline;
    double sample_bank = 0.0;
    double sample_w_left = 0.0;
    double sample_w_right = 0.0;
    double start_x = 0.0;
    double start_y = 0.0;
    double start_heading = 0.0;
};

/// Profile values at one location, as consumed by the vehicle model.
struct TrackSample {
    double kappa = 0.0;
    double dkappa_ds = 0.0;
    double bank = 0.0;
    double dbank_ds = 0.0;
    double w_left = 0.0;
    double w_right = 0.0;
    double dw_left_ds = 0.0;
    double dw_right_ds = 0.0;
};

/// Closed race track in arc-length parameterization.
///
/// The curvature, bank and width profiles are periodic cubic splines on a
/// ~1 m grid. Heading and centerline position are derived from the stored
/// curvature profile (heading by exact spline integration, position by
/// per-segment Gauss-Legendre quadrature), so the Cartesian<->Frenet maps
/// are mutually consistent to machine precision. Immutable once built.
class TrackModel {
public:
    static TrackModel build(const TrackSpec& spec);

    TrackModel(const TrackModel&);
    TrackModel& operator=(const TrackModel&) = delete;
    TrackModel(TrackModel&&) noexcept;
    TrackModel& operator=(TrackModel&&) noexcept;
    ~TrackModel();

    double length() const { return length_; }
    const std::string& name() const { return name_; }

    double kappa(double s) const;
    double kappa_prime(double s) const;
    double bank(double s) const;
    double bank_prime(double s) const;
    double width_left(double s) const { return wl_(s); }
    double width_right(double s) const { return wr_(s); }
    double width_left_prime(double s) const { return wl_.derivative(s); }
    double width_right_prime(double s) const { return wr_.derivative(s); }
    TrackSample sample(double s) const;

    double heading(double s) const;
    std::array<double, 2> position(double s) const;

    CartesianPose from_frenet(const FrenetPose& f) const;
    FrenetPose to_frenet(const CartesianPose& p,
                         std::optional<double> hint_s = std::nullopt) const;

    // CSV columns: s,x,y,heading,kappa,bank,w_left,w_right (one row per knot).
    void export_csv(const std::string& path) const;

    struct AnalyticGeometry;

private:
    TrackModel();

    void build_geometry();
    double geometric_kappa(double s) const;
    std::array<double, 2> integrate_tangent(double s0, double s1) const;
    double closest_s(double x, double y, std::optional<double> hint) const;
    double refine_projection(double x, double y, double s0) const;

    std::string name_;
    double length_ = 0.0;
    double knot_step_ = 0.0;
    PeriodicSpline kappa_spline_;
    PeriodicSpline bank_;
    PeriodicSpline wl_;
    PeriodicSpline wr_;
    double corr_sin_ = 0.0;  // closure correction coefficients on top of
    double corr_cos_ = 0.0;  // the curvature spline (zero-mean basis)
    double psi0_ = 0.0;
    std::vector<double> psi_knots_;
    std::vector<double> x_knots_;
    std::vector<double> y_knots_;
    std::unique_ptr<AnalyticGeometry> geom_;  // exact geometry when available
};

}  // namespace apex
