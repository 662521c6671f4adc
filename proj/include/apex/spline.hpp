#pragma once

#include <cstddef>
#include <vector>

namespace apex {

// Wrap s into [0, period).
double wrap_to_period(double s, double period);

// Shortest signed difference on a cycle, in (-period/2, period/2].
double wrap_signed(double ds, double period);

// Wrap angle into (-pi, pi].
double wrap_angle(double a);

/// Cubic spline interpolant on a uniform periodic grid.
///
/// values[i] is the sample at s = i * period / values.size(); the
/// interpolant and its first two derivatives are continuous across the
/// seam, and f(s + k * period) == f(s) for any integer k.
class PeriodicSpline {
public:
    PeriodicSpline() = default;
    PeriodicSpline(std::vector<double> values, double period);

    double operator()(double s) const;
    double derivative(double s) const;
    double second_derivative(double s) const;

    // Integral of the spline over [0, s]; s may span multiple periods.
    double integral(double s) const;
    double full_period_integral() const { return total_integral_; }

    // Multiply the interpolant by a constant factor.
    void scale(double factor);

    double period() const { return period_; }
    double step() const { return h_; }
    std::size_t size() const { return y_.size(); }
    const std::vector<double>& values() const { return y_; }
    bool empty() const { return y_.empty(); }

private:
    void build();
    void locate(double s, std::size_t& j, double& tau) const;

    std::vector<double> y_;    // knot values
    std::vector<double> m_;    // knot second derivatives
    std::vector<double> cum_;  // cumulative integral up to knot i
    double period_ = 0.0;
    double h_ = 0.0;
    double total_integral_ = 0.0;
};

}  // namespace apex
