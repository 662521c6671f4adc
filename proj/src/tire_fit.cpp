#include "apex/tire_fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace apex {
namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

TireAxleParams apply(const Vec6& p, const TireAxleParams& base) {
    TireAxleParams tp = base;
    tp.B = p[0];
    tp.C = p[1];
    tp.D = p[2];
    tp.E = p[3];
    tp.Sv = p[4];
    tp.Sh = p[5];
    return tp;
}

// residual r_i = w_i (F(alpha_i; p) - y_i) and its parameter Jacobian
void residuals(const std::vector<TireFitSample>& samples, const Vec6& p,
               const TireAxleParams& base, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    const TireAxleParams tp = apply(p, base);
    r.resize(static_cast<Eigen::Index>(samples.size()));
    if (J) J->resize(static_cast<Eigen::Index>(samples.size()), 6);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const double w = std::sqrt(std::max(s.weight, 0.0));
        r[static_cast<Eigen::Index>(i)] = w * (lateral_force_pure(s.alpha, tp) - s.fy);
        if (!J) continue;
        const double z = tp.B * (s.alpha + tp.Sh);
        const double az = std::atan(z);
        const double psi = tp.C * az - tp.E * (z - az);
        const double cpsi = std::cos(psi);
        const double dpsi_dz = (tp.C - tp.E * z * z) / (1.0 + z * z);
        (*J)(i, 0) = w * tp.D * cpsi * dpsi_dz * (s.alpha + tp.Sh);  // dB
        (*J)(i, 1) = w * tp.D * cpsi * az;                           // dC
        (*J)(i, 2) = w * std::sin(psi);                              // dD
        (*J)(i, 3) = w * tp.D * cpsi * (az - z);                     // dE
        (*J)(i, 4) = w;                                              // dSv
        (*J)(i, 5) = w * tp.D * cpsi * dpsi_dz * tp.B;               // dSh
    }
}

}  // namespace

TireFitResult fit_tire_params(const std::vector<TireFitSample>& samples,
                              const TireAxleParams& init) {
    if (samples.size() < 50)
        throw ModelError("fit_tire_params: need at least 50 samples");
    bool has_pos = false, has_neg = false;
    double wsum = 0.0;
    for (const auto& s : samples) {
        has_pos |= s.alpha > 0.0;
        has_neg |= s.alpha < 0.0;
        wsum += std::max(s.weight, 0.0);
    }
    if (!has_pos || !has_neg)
        throw ModelError("fit_tire_params: samples must span both slip signs");

    Vec6 p;
    p << init.B, init.C, init.D, init.E, init.Sv, init.Sh;
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    residuals(samples, p, init, r, &J);
    double cost = 0.5 * r.squaredNorm();

    const int max_iter = 200;
    const double grad_tol = 1e-8;
    double lambda = 1e-3;
    int iter = 0;
    bool stagnated = false;

    for (; iter < max_iter; ++iter) {
        const Vec6 g = J.transpose() * r;
        // scale-invariant gradient tolerance
        if (g.lpNorm<Eigen::Infinity>() <= grad_tol * std::max(1.0, cost)) break;

        const Mat6 jtj = J.transpose() * J;
        Mat6 damped = jtj;
        damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
        const Vec6 step = damped.ldlt().solve(-g);

        Eigen::VectorXd r_try;
        residuals(samples, p + step, init, r_try, nullptr);
        const double cost_try = 0.5 * r_try.squaredNorm();
        if (cost_try < cost) {
            p += step;
            const double rel_drop = (cost - cost_try) / std::max(cost, 1e-300);
            cost = cost_try;
            residuals(samples, p, init, r, &J);
            lambda = std::max(lambda / 3.0, 1e-12);
            if (rel_drop < 1e-14 && step.lpNorm<Eigen::Infinity>() < 1e-12) {
                stagnated = true;
                break;
            }
        } else {
            lambda *= 2.5;
            if (lambda > 1e12) {
                stagnated = true;
                break;
            }
        }
    }

    TireFitResult out;
    out.params = apply(p, init);
    out.iterations = iter;
    out.rmse = std::sqrt(2.0 * cost / std::max(wsum, 1e-300));

    // Identifiability: a flat residual landscape (degenerate data) leaves
    // J'J nearly singular even when the gradient is small. Columns are
    // scaled by parameter magnitude first, otherwise the raw conditioning
    // only reflects the spread of units (D in kN vs Sh in mrad).
    residuals(samples, p, init, r, &J);
    Vec6 col_scale;
    const double floors[6] = {1.0, 0.1, 100.0, 0.1, 10.0, 0.01};
    for (int i = 0; i < 6; ++i) col_scale[i] = std::max(std::abs(p[i]), floors[i]);
    const Eigen::MatrixXd Js = J * col_scale.asDiagonal();
    const Mat6 jtj = Js.transpose() * Js;
    Eigen::JacobiSVD<Mat6> svd(jtj);
    const double cond = svd.singularValues()(0) /
                        std::max(svd.singularValues()(5), 1e-300);
    const Vec6 g = Js.transpose() * r;
    const bool grad_ok = g.lpNorm<Eigen::Infinity>() <=
                         1e-5 * std::max(1.0, cost) * std::max(1.0, Js.norm());
    (void)stagnated;
    out.converged = grad_ok && iter < max_iter && cond < 1e10 && out.params.D > 1e-6;

    Vec6 pinit;
    pinit << init.B, init.C, init.D, init.E, init.Sv, init.Sh;
    for (int i = 0; i < 6; ++i) out.delta_from_init[static_cast<std::size_t>(i)] = p[i] - pinit[i];
    return out;
}

std::vector<TireFitSample> load_tire_samples_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open tire sample file " + path);
    std::vector<TireFitSample> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first && line.find("alpha") != std::string::npos) {
            first = false;
            continue;
        }
        first = false;
        std::stringstream ss(line);
        TireFitSample s;
        char comma;
        if (!(ss >> s.alpha)) throw ModelError("bad tire sample row: " + line);
        if (ss >> comma >> s.fy) {
            if (!(ss >> comma >> s.weight)) s.weight = 1.0;
        } else {
            throw ModelError("bad tire sample row: " + line);
        }
        out.push_back(s);
    }
    return out;
}

void write_fit_report_json(const TireFitResult& result, const TireAxleParams& init,
                           const std::string& path) {
    nlohmann::json j;
    j["params"] = {{"B", result.params.B},   {"C", result.params.C},
                   {"D", result.params.D},   {"E", result.params.E},
                   {"Sv", result.params.Sv}, {"Sh", result.params.Sh},
                   {"eps", result.params.eps}};
    j["init"] = {{"B", init.B}, {"C", init.C}, {"D", init.D},
                 {"E", init.E}, {"Sv", init.Sv}, {"Sh", init.Sh}};
    j["rmse"] = result.rmse;
    j["converged"] = result.converged;
    j["iterations"] = result.iterations;
    j["delta_from_init"] = result.delta_from_init;
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write fit report " + path);
    out << j.dump(2) << "\n";
}

}  // namespace apex
