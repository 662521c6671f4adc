#include "apex/spline.hpp"

#include <cmath>
#include <stdexcept>

namespace apex {

double wrap_to_period(double s, double period) {
    double w = std::fmod(s, period);
    if (w < 0.0) w += period;
    // fmod can return exactly `period` after the negative fixup when s is a
    // tiny negative number; fold that back to zero.
    if (w >= period) w -= period;
    return w;
}

double wrap_signed(double ds, double period) {
    double w = std::fmod(ds, period);
    if (w > 0.5 * period) w -= period;
    if (w <= -0.5 * period) w += period;
    return w;
}

double wrap_angle(double a) {
    const double two_pi = 2.0 * M_PI;
    double w = std::fmod(a, two_pi);
    if (w > M_PI) w -= two_pi;
    if (w <= -M_PI) w += two_pi;
    return w;
}

PeriodicSpline::PeriodicSpline(std::vector<double> values, double period)
    : y_(std::move(values)), period_(period) {
    if (y_.size() < 4) throw std::invalid_argument("PeriodicSpline: need at least 4 knots");
    if (!(period_ > 0.0)) throw std::invalid_argument("PeriodicSpline: period must be positive");
    h_ = period_ / static_cast<double>(y_.size());
    build();
}

// Periodic tridiagonal system for the knot second derivatives:
//   m[i-1] + 4 m[i] + m[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]) / h^2   (cyclic)
// solved with the Sherman-Morrison rank-one correction.
void PeriodicSpline::build() {
    const std::size_t n = y_.size();
    std::vector<double> rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ym = y_[(i + n - 1) % n];
        const double yp = y_[(i + 1) % n];
        rhs[i] = 6.0 * (yp - 2.0 * y_[i] + ym) / (h_ * h_);
    }

    // Cyclic system A m = rhs with A = tri(1, 4, 1) + corners.
    // Decompose A = B + u v^T with B tridiagonal, u = (gamma, 0...0, 1)^T,
    // v = (1, 0...0, gamma')^T chosen as in Numerical Recipes.
    const double alpha = 1.0, beta = 1.0, b = 4.0;
    const double gamma = -b;
    std::vector<double> diag(n, b);
    diag[0] = b - gamma;
    diag[n - 1] = b - alpha * beta / gamma;

    auto solve_tridiag = [&](const std::vector<double>& d, std::vector<double> r) {
        // Thomas algorithm, off-diagonals all 1.
        std::vector<double> c(n, 0.0);
        c[0] = 1.0 / d[0];
        r[0] = r[0] / d[0];
        for (std::size_t i = 1; i < n; ++i) {
            const double mlt = 1.0 / (d[i] - c[i - 1]);
            c[i] = 1.0 * mlt;
            r[i] = (r[i] - r[i - 1]) * mlt;
        }
        for (std::size_t i = n - 1; i-- > 0;) r[i] -= c[i] * r[i + 1];
        return r;
    };

    std::vector<double> u(n, 0.0);
    u[0] = gamma;
    u[n - 1] = alpha;
    std::vector<double> x = solve_tridiag(diag, rhs);
    std::vector<double> z = solve_tridiag(diag, u);
    const double fact = (x[0] + beta * x[n - 1] / gamma) /
                        (1.0 + z[0] + beta * z[n - 1] / gamma);
    m_.resize(n);
    for (std::size_t i = 0; i < n; ++i) m_[i] = x[i] - fact * z[i];

    // Cumulative integral at each knot; segment integral in closed form.
    cum_.assign(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double mj = m_[i], mj1 = m_[(i + 1) % n];
        const double seg = h_ * (y_[i] + y_[(i + 1) % n]) / 2.0 - h_ * h_ * h_ * (mj + mj1) / 24.0;
        cum_[i + 1] = cum_[i] + seg;
    }
    total_integral_ = cum_[n];
}

void PeriodicSpline::locate(double s, std::size_t& j, double& tau) const {
    const double sw = wrap_to_period(s, period_);
    j = static_cast<std::size_t>(sw / h_);
    if (j >= y_.size()) j = y_.size() - 1;
    tau = sw - static_cast<double>(j) * h_;
}

double PeriodicSpline::operator()(double s) const {
    std::size_t j;
    double tau;
    locate(s, j, tau);
    const std::size_t j1 = (j + 1) % y_.size();
    const double bc = tau / h_, a = 1.0 - bc;
    return a * y_[j] + bc * y_[j1] +
           (h_ * h_ / 6.0) * ((a * a * a - a) * m_[j] + (bc * bc * bc - bc) * m_[j1]);
}

double PeriodicSpline::derivative(double s) const {
    std::size_t j;
    double tau;
    locate(s, j, tau);
    const std::size_t j1 = (j + 1) % y_.size();
    const double bc = tau / h_, a = 1.0 - bc;
    return (y_[j1] - y_[j]) / h_ +
           (h_ / 6.0) * (-(3.0 * a * a - 1.0) * m_[j] + (3.0 * bc * bc - 1.0) * m_[j1]);
}

double PeriodicSpline::second_derivative(double s) const {
    std::size_t j;
    double tau;
    locate(s, j, tau);
    const std::size_t j1 = (j + 1) % y_.size();
    const double bc = tau / h_, a = 1.0 - bc;
    return a * m_[j] + bc * m_[j1];
}

double PeriodicSpline::integral(double s) const {
    const double periods = std::floor(s / period_);
    const double sw = s - periods * period_;
    std::size_t j;
    double tau;
    locate(sw, j, tau);
    const std::size_t j1 = (j + 1) % y_.size();
    const double bc = tau / h_, a = 1.0 - bc;
    const double part =
        h_ * (y_[j] * bc * (1.0 - bc / 2.0) + y_[j1] * bc * bc / 2.0 +
              (h_ * h_ / 6.0) * (m_[j] * (-a * a * a * a / 4.0 + a * a / 2.0 - 0.25) +
                                 m_[j1] * (bc * bc * bc * bc / 4.0 - bc * bc / 2.0)));
    return periods * total_integral_ + cum_[j] + part;
}

void PeriodicSpline::scale(double factor) {
    for (auto& v : y_) v *= factor;
    for (auto& v : m_) v *= factor;
    for (auto& v : cum_) v *= factor;
    total_integral_ *= factor;
}

}  // namespace apex
