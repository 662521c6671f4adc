#include "apex/raceline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "apex/ocp_qp.hpp"

namespace apex {
namespace {

// one elastic relaxation variable per stage rides along with the three
// input rates so every trust-region QP stays feasible
constexpr int NZ = kSpaceSize;
constexpr int NU = ControlRates::kSize + 1;
using Qp = OcpQpSolver<NZ, NU>;

Eigen::Matrix3d rate_weight_matrix(const GlobalConfig& cfg) {
    Eigen::Matrix3d R = Eigen::Matrix3d::Zero();
    R.diagonal() << cfg.r_ddelta, cfg.r_dthrottle, cfg.r_dbrake;
    return R;
}

// gradient of sdot w.r.t. the spatial state at fixed s
Eigen::Matrix<double, NZ, 1> sdot_gradient(const VehicleState& x, double kappa) {
    const double den = 1.0 - x.n * kappa;
    const double cmu = std::cos(x.mu), smu = std::sin(x.mu);
    const double num = x.vx * cmu - x.vy * smu;
    Eigen::Matrix<double, NZ, 1> g = Eigen::Matrix<double, NZ, 1>::Zero();
    g[0] = num * kappa / (den * den);            // n
    g[1] = -(x.vx * smu + x.vy * cmu) / den;     // mu
    g[2] = cmu / den;                            // vx
    g[3] = -smu / den;                           // vy
    return g;
}

Eigen::Matrix<double, NZ, 1> rear_slip_gradient(const VehicleState& x,
                                                const ChassisParams& ch) {
    const double vx = std::max(x.vx, kMinSpeedGuard);
    const bool active = x.vx >= kMinSpeedGuard;
    const double wr = (x.vy - ch.lr * x.r) / vx;
    const double dr = 1.0 / (1.0 + wr * wr);
    Eigen::Matrix<double, NZ, 1> g = Eigen::Matrix<double, NZ, 1>::Zero();
    g[2] = active ? -wr / vx * dr : 0.0;  // vx
    g[3] = dr / vx;                       // vy
    g[4] = -ch.lr * dr / vx;              // r
    return g;
}

struct NonlinearEval {
    double cost = 0.0;
    double defect_l1 = 0.0;
    double viol_l1 = 0.0;
    double defect_inf = 0.0;
    double viol_inf = 0.0;
    bool valid = true;
};

// cost, defects and constraint violations of a full iterate
NonlinearEval evaluate(const GlobalProblemSpec& spec, const std::vector<SpaceVec>& Z,
                       const std::vector<ControlRates>& U,
                       const std::vector<TrackSample>& samples, double ds) {
    const auto& cfg = spec.config;
    const int M = static_cast<int>(Z.size());
    NonlinearEval ev;
    try {
        for (int k = 0; k < M; ++k) {
            const double s = k * ds;
            const VehicleState x = space_to_state(Z[k], s);
            ev.cost += global_stage_cost(x, U[k], spec);

            const SpaceVec f = dynamics_space(Z[k], U[k], s, samples[k], spec.params,
                                              ClipMode::Smooth);
            const SpaceVec next = Z[k] + ds * f;
            const SpaceVec defect = next - Z[(k + 1) % M];
            ev.defect_l1 += defect.lpNorm<1>();
            ev.defect_inf = std::max(ev.defect_inf, defect.lpNorm<Eigen::Infinity>());

            auto add_viol = [&](double v) {
                const double neg = std::max(0.0, -v);
                ev.viol_l1 += neg;
                ev.viol_inf = std::max(ev.viol_inf, neg);
            };
            const auto [left, right] = track_constraint_residuals(x, spec);
            add_viol(left);
            add_viol(right);
            add_viol(-ellipse_residual(x, samples[k], spec.params, ClipMode::Smooth));
            add_viol(spec.params.limits.delta_max - x.delta);
            add_viol(x.delta + spec.params.limits.delta_max);
            add_viol(x.throttle);
            add_viol(spec.params.powertrain.ks(x.vx) - x.throttle);
            add_viol(x.brake);
            add_viol(1.0 - x.brake);
            add_viol(cfg.vx_cap - x.vx);
            add_viol(x.vx - cfg.vx_floor);
            add_viol(spec.params.limits.ddelta_max - U[k].ddelta);
            add_viol(U[k].ddelta + spec.params.limits.ddelta_max);
            add_viol(spec.params.limits.dthrottle_max - U[k].dthrottle);
            add_viol(U[k].dthrottle + spec.params.limits.dthrottle_max);
            add_viol(spec.params.limits.dbrake_max - U[k].dbrake);
            add_viol(U[k].dbrake + spec.params.limits.dbrake_max);
        }
    } catch (const ModelError&) {
        ev.valid = false;
    }
    return ev;
}

}  // namespace

double global_stage_cost(const VehicleState& x, const ControlRates& u,
                         const GlobalProblemSpec& spec) {
    const double sdot = progress_rate(x, spec.track->kappa(x.s));
    const Eigen::Vector3d uv = u.to_vec();
    const Eigen::Matrix3d R = rate_weight_matrix(spec.config);
    const double alpha_r = slip_angles(x, spec.params.chassis).rear;
    return -sdot + uv.dot(R * uv) + spec.config.q_rear_slip * alpha_r * alpha_r;
}

std::pair<double, double> track_constraint_residuals(const VehicleState& x,
                                                     const GlobalProblemSpec& spec) {
    const auto& ch = spec.params.chassis;
    const double body = ch.Lc * std::sin(std::abs(x.mu)) + ch.Wc * std::cos(x.mu);
    const double left =
        spec.track->width_left(x.s) - spec.config.margin_left - (x.n + body);
    const double right =
        spec.track->width_right(x.s) + spec.config.margin_right - (-x.n + body);
    return {left, right};
}

double constant_speed_bound(const TrackModel& track, const VehicleParams& params) {
    double kmax = 0.0;
    for (double s = 0.0; s < track.length(); s += 1.0)
        kmax = std::max(kmax, std::abs(track.kappa(s)));
    if (kmax < 1e-12) return params.limits.vx_max;
    double lo = 1.0, hi = params.limits.vx_max;
    for (int it = 0; it < 80; ++it) {
        const double v = 0.5 * (lo + hi);
        if (v * v * kmax <= params.ellipse.lat_at(v))
            lo = v;
        else
            hi = v;
    }
    return lo;
}

RacingLine solve_global(const GlobalProblemSpec& spec, const RacingLine* warm_start) {
    const auto t_start = std::chrono::steady_clock::now();
    if (spec.track == nullptr) throw SolveError("solve_global: no track");
    const TrackModel& track = *spec.track;
    const auto& cfg = spec.config;
    const auto& params = spec.params;

    const int M = static_cast<int>(std::round(track.length() / cfg.ds));
    if (M < 8) throw SolveError("solve_global: track too short for ds");
    const double ds = track.length() / M;

    // margins must leave road for the car body
    {
        double worst = 1e9;
        for (double s = 0.0; s < track.length(); s += 5.0) {
            const double room = (track.width_left(s) - cfg.margin_left) +
                                (track.width_right(s) + cfg.margin_right) -
                                2.0 * params.chassis.Wc;
            worst = std::min(worst, room);
        }
        if (worst <= 0.0) throw SolveError("solve_global: infeasible margins");
    }

    std::vector<TrackSample> samples(M);
    for (int k = 0; k < M; ++k) samples[k] = track.sample(k * ds);

    // iterate
    std::vector<SpaceVec> Z(M, SpaceVec::Zero());
    std::vector<ControlRates> U(M);
    if (warm_start && !warm_start->samples.empty()) {
        RacingLineRef ref(*warm_start, track);
        for (int k = 0; k < M; ++k) {
            const double s = k * ds;
            Z[k] << ref.n(s), ref.mu(s), ref.vx(s), 0.0, 0.0, 0.0, 0.0, 0.0;
            Z[k][2] = std::clamp(Z[k][2], cfg.vx_floor, cfg.vx_cap);
        }
    } else {
        const double v0 = std::min(0.6 * constant_speed_bound(track, params), cfg.vx_cap);
        const double drag = 0.5 * params.chassis.rho * params.chassis.S *
                            params.chassis.Cd * v0 * v0;
        const double t0 = std::clamp((drag + 2.0 * params.powertrain.Cro) /
                                         params.powertrain.Cm,
                                     0.0, params.powertrain.ks(v0) - 1e-3);
        for (int k = 0; k < M; ++k) Z[k] << 0.0, 0.0, v0, 0.0, 0.0, 0.0, t0, 0.0;
    }

    const Eigen::Matrix3d R = rate_weight_matrix(cfg);
    Qp::Settings qps;
    qps.tolerance = cfg.qp_tolerance;
    Qp qp_solver(qps);

    std::vector<Qp::VecX> lam(M, Qp::VecX::Zero());
    std::vector<Eigen::VectorXd> zdual(M);

    double trust = 0.5;
    const double trust_max = 4.0, trust_min = 1e-5;
    // per-channel trust scaling: steering rate is an order of magnitude
    // stiffer than throttle/brake rates
    const Eigen::Vector3d tr_scale(0.2, 1.0, 1.0);
    double nu = 10.0;
    double nu_elastic = nu;

    GlobalSolverReport report;
    int total_qp_iters = 0;
    NonlinearEval cur = evaluate(spec, Z, U, samples, ds);
    if (!cur.valid) throw SolveError("solve_global: invalid initial iterate");

    int iter = 0;
    for (; iter < cfg.max_iterations; ++iter) {
        // ---- build the cyclic QP in deltas around the iterate ----
        Qp::Problem prob;
        prob.cyclic = true;
        prob.stages.resize(M);
        bool kkt_ok = true;
        double max_stat = 0.0;

        for (int k = 0; k < M; ++k) {
            auto& st = prob.stages[k];
            const double s = k * ds;
            const VehicleState x = space_to_state(Z[k], s);

            SpaceMat Az;
            SpaceInputMat Bz;
            dynamics_space_jacobians(Z[k], U[k], s, samples[k], params, ClipMode::Smooth,
                                     Az, Bz);
            const SpaceVec f =
                dynamics_space(Z[k], U[k], s, samples[k], params, ClipMode::Smooth);
            st.A = SpaceMat::Identity() + ds * Az;
            st.B.setZero();
            st.B.template leftCols<3>() = ds * Bz;
            st.c = Z[k] + ds * f - Z[(k + 1) % M];

            // cost: -sdot (linear) + u'Ru + q_B alpha_r^2 (Gauss-Newton);
            // the elastic column gets a large linear penalty
            const auto gs = sdot_gradient(x, samples[k].kappa);
            const auto ga = rear_slip_gradient(x, params.chassis);
            const double ar = slip_angles(x, params.chassis).rear;
            st.q = -gs + 2.0 * cfg.q_rear_slip * ar * ga;
            st.Q = 2.0 * cfg.q_rear_slip * ga * ga.transpose();
            st.R.setZero();
            st.R.template topLeftCorner<3, 3>() = 2.0 * R;
            st.R(3, 3) = 1e-4;
            st.r.setZero();
            st.r.template head<3>() = 2.0 * R * U[k].to_vec();
            st.r[3] = nu_elastic;

            // ---- inequality rows: Cx dz + Cu du + e >= 0; state rows are
            // elastic (sigma column), input rows are hard ----
            const int rows = 2 + 1 + 2 + 2 + 2 + 2 + 6 + 6 + 1;
            st.Cx.setZero(rows, NZ);
            st.Cu.setZero(rows, NU);
            st.e.setZero(rows);
            int rr = 0;
            auto elastic = [&](int row) { st.Cu(row, 3) = 1.0; };
            // track body constraint, left and right
            const auto [left, right] = track_constraint_residuals(x, spec);
            const double sign_mu = x.mu >= 0.0 ? 1.0 : -1.0;
            const double dbody_dmu = params.chassis.Lc * sign_mu * std::cos(x.mu) -
                                     params.chassis.Wc * std::sin(x.mu);
            elastic(rr);
            st.Cx(rr, 0) = -1.0;
            st.Cx(rr, 1) = -dbody_dmu;
            st.e[rr++] = left;
            elastic(rr);
            st.Cx(rr, 0) = 1.0;
            st.Cx(rr, 1) = -dbody_dmu;
            st.e[rr++] = right;
            // friction ellipse
            StateVec egrad;
            const double eres = ellipse_residual(x, samples[k], params, ClipMode::Smooth,
                                                 &egrad);
            elastic(rr);
            for (int j = 0; j < NZ; ++j) st.Cx(rr, j) = -egrad[j + 1];
            st.e[rr++] = -eres;
            // steering box
            elastic(rr);
            st.Cx(rr, 5) = -1.0;
            st.e[rr++] = params.limits.delta_max - x.delta;
            elastic(rr);
            st.Cx(rr, 5) = 1.0;
            st.e[rr++] = x.delta + params.limits.delta_max;
            // throttle box with speed-dependent upper bound
            elastic(rr);
            st.Cx(rr, 6) = 1.0;
            st.e[rr++] = x.throttle;
            elastic(rr);
            st.Cx(rr, 6) = -1.0;
            st.Cx(rr, 2) = params.powertrain.ks_prime(x.vx);
            st.e[rr++] = params.powertrain.ks(x.vx) - x.throttle;
            // brake box
            elastic(rr);
            st.Cx(rr, 7) = 1.0;
            st.e[rr++] = x.brake;
            elastic(rr);
            st.Cx(rr, 7) = -1.0;
            st.e[rr++] = 1.0 - x.brake;
            // speed window
            elastic(rr);
            st.Cx(rr, 2) = -1.0;
            st.e[rr++] = cfg.vx_cap - x.vx;
            elastic(rr);
            st.Cx(rr, 2) = 1.0;
            st.e[rr++] = x.vx - cfg.vx_floor;
            // input rate boxes
            const double ub[3] = {params.limits.ddelta_max, params.limits.dthrottle_max,
                                  params.limits.dbrake_max};
            const Eigen::Vector3d uv = U[k].to_vec();
            for (int j = 0; j < 3; ++j) {
                st.Cu(rr, j) = -1.0;
                st.e[rr++] = ub[j] - uv[j];
                st.Cu(rr, j) = 1.0;
                st.e[rr++] = uv[j] + ub[j];
            }
            // trust region on input steps
            for (int j = 0; j < 3; ++j) {
                st.Cu(rr, j) = -1.0;
                st.e[rr++] = trust * tr_scale[j];
                st.Cu(rr, j) = 1.0;
                st.e[rr++] = trust * tr_scale[j];
            }
            // sigma >= 0
            st.Cu(rr, 3) = 1.0;
            st.e[rr++] = 0.0;
        }

        // ---- NLP KKT residual at the current iterate with current duals
        // (real variables only; the elastic column is QP machinery) ----
        for (int k = 0; k < M; ++k) {
            const auto& st = prob.stages[k];
            Qp::VecX rx = st.q + lam[k] - st.A.transpose() * lam[(k + 1) % M];
            Eigen::Vector3d ru =
                st.r.template head<3>() -
                (st.B.transpose() * lam[(k + 1) % M]).template head<3>();
            if (zdual[k].size() == st.e.size()) {
                rx -= st.Cx.transpose() * zdual[k];
                ru -= (st.Cu.transpose() * zdual[k]).template head<3>();
            }
            max_stat = std::max({max_stat, rx.lpNorm<Eigen::Infinity>(),
                                 ru.lpNorm<Eigen::Infinity>()});
        }
        const double nlp_kkt = std::max({max_stat, cur.defect_inf, cur.viol_inf});
        report.kkt_residual = nlp_kkt;
        report.constraint_violation = cur.viol_inf;
        if (nlp_kkt <= cfg.kkt_tolerance) {
            kkt_ok = true;
            report.converged = true;
            break;
        }
        (void)kkt_ok;

        // ---- solve the QP ----
        const auto sol = qp_solver.solve(prob);
        total_qp_iters += sol.iterations;
        if (sol.status == Qp::Status::Infeasible)
            throw SolveError("solve_global: QP subproblem infeasible");

        // penalty weight must dominate the multipliers
        double lam_max = 0.0;
        for (const auto& l : sol.lambdas)
            lam_max = std::max(lam_max, l.lpNorm<Eigen::Infinity>());
        for (const auto& z : sol.ineq_duals)
            if (z.size() > 0) lam_max = std::max(lam_max, z.lpNorm<Eigen::Infinity>());
        nu = std::max(nu, 1.5 * lam_max);
        nu_elastic = nu;

        // predicted merit reduction from the QP model: real cost change plus
        // the modeled residual violation of the elastic rows
        double model_cost_delta = 0.0;
        double model_viol = 0.0;
        for (int k = 0; k < M; ++k) {
            const auto& st = prob.stages[k];
            model_cost_delta +=
                st.q.dot(sol.xs[k]) + 0.5 * sol.xs[k].dot(st.Q * sol.xs[k]) +
                st.r.template head<3>().dot(sol.us[k].template head<3>()) +
                0.5 * sol.us[k].template head<3>().dot(
                          (st.R * sol.us[k]).template head<3>());
            Eigen::VectorXd after = st.Cx * sol.xs[k] + st.Cu * sol.us[k] + st.e;
            after -= st.Cu.col(3) * sol.us[k][3];  // violation without the elastic lift
            for (Eigen::Index i = 0; i < after.size(); ++i)
                if (st.Cu(i, 3) > 0.5) model_viol += std::max(0.0, -after[i]);
        }
        const double pred_red =
            -model_cost_delta + nu * (cur.defect_l1 + cur.viol_l1 - model_viol);

        // trial step
        std::vector<SpaceVec> Zt(M);
        std::vector<ControlRates> Ut(M);
        for (int k = 0; k < M; ++k) {
            Zt[k] = Z[k] + sol.xs[k];
            Ut[k] = ControlRates::from_vec(U[k].to_vec() +
                                           sol.us[k].template head<3>());
        }
        const NonlinearEval trial = evaluate(spec, Zt, Ut, samples, ds);
        const double merit_cur = cur.cost + nu * (cur.defect_l1 + cur.viol_l1);
        const double merit_trial =
            trial.valid ? trial.cost + nu * (trial.defect_l1 + trial.viol_l1)
                        : std::numeric_limits<double>::infinity();
        const double actual_red = merit_cur - merit_trial;
        const double ratio = pred_red > 1e-14 ? actual_red / pred_red : -1.0;

        if (trial.valid && ratio > 0.05) {
            Z = std::move(Zt);
            U = std::move(Ut);
            cur = trial;
            lam = sol.lambdas;
            zdual = sol.ineq_duals;
            if (ratio > 0.7) trust = std::min(trust * 2.0, trust_max);
        } else {
            trust = std::max(trust * 0.25, trust_min);
            if (trust <= trust_min * 1.01 && cur.defect_inf < 1e-9 && cur.viol_inf < 1e-9)
                break;  // no further progress possible
        }
    }

    // ---- package the line ----
    RacingLine line;
    line.ds = ds;
    line.samples.resize(M);
    double lap_time = 0.0;
    double periodicity = 0.0;
    for (int k = 0; k < M; ++k) {
        const double s = k * ds;
        RacingLineSample smp;
        smp.s = s;
        smp.n = Z[k][0];
        smp.mu = Z[k][1];
        smp.vx = Z[k][2];
        smp.vy = Z[k][3];
        smp.r = Z[k][4];
        smp.delta = Z[k][5];
        smp.throttle = Z[k][6];
        smp.brake = Z[k][7];
        line.samples[k] = smp;
        lap_time += ds / progress_rate(smp.state(), samples[k].kappa);

        const SpaceVec f =
            dynamics_space(Z[k], U[k], s, samples[k], params, ClipMode::Smooth);
        const SpaceVec defect = Z[k] + ds * f - Z[(k + 1) % M];
        periodicity = std::max(periodicity, defect.lpNorm<Eigen::Infinity>());
    }
    line.lap_time = lap_time;
    report.iterations = iter;
    report.qp_iterations = total_qp_iters;
    report.lap_time_s = lap_time;
    report.periodicity_defect = periodicity;
    report.solve_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    line.report = report;
    return line;
}

void RacingLine::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw SolveError("cannot write racing line " + path);
    out << "s,n,mu,vx,vy,r,delta,T,B\n";
    char buf[256];
    for (const auto& p : samples) {
        std::snprintf(buf, sizeof(buf),
                      "%.6f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", p.s, p.n, p.mu,
                      p.vx, p.vy, p.r, p.delta, p.throttle, p.brake);
        out << buf;
    }
}

RacingLine RacingLine::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SolveError("cannot open racing line " + path);
    RacingLine line;
    std::string row;
    std::getline(in, row);  // header
    while (std::getline(in, row)) {
        if (row.empty()) continue;
        std::stringstream ss(row);
        RacingLineSample p;
        char comma;
        if (!(ss >> p.s >> comma >> p.n >> comma >> p.mu >> comma >> p.vx >> comma >>
              p.vy >> comma >> p.r >> comma >> p.delta >> comma >> p.throttle >> comma >>
              p.brake))
            throw SolveError("bad racing line row: " + row);
        line.samples.push_back(p);
    }
    if (line.samples.size() >= 2) line.ds = line.samples[1].s - line.samples[0].s;
    return line;
}

void RacingLine::save_report_json(const std::string& path) const {
    nlohmann::json j;
    j["iterations"] = report.iterations;
    j["qp_iterations"] = report.qp_iterations;
    j["kkt_residual"] = report.kkt_residual;
    j["constraint_violation"] = report.constraint_violation;
    j["periodicity_defect"] = report.periodicity_defect;
    j["converged"] = report.converged;
    j["lap_time_s"] = report.lap_time_s;
    std::ofstream out(path);
    if (!out) throw SolveError("cannot write solver report " + path);
    out << j.dump(2) << "\n";
}

RacingLineRef::RacingLineRef(const RacingLine& line, const TrackModel& track) {
    if (line.samples.size() < 4) throw SolveError("racing line too short");
    length_ = track.length();
    const std::size_t m = line.samples.size();
    std::vector<double> vn(m), vmu(m), vvx(m), vsd(m);
    for (std::size_t k = 0; k < m; ++k) {
        const auto& p = line.samples[k];
        vn[k] = p.n;
        vmu[k] = p.mu;
        vvx[k] = p.vx;
        vsd[k] = progress_rate(p.state(), track.kappa(p.s));
    }
    n_ = PeriodicSpline(vn, length_);
    mu_ = PeriodicSpline(vmu, length_);
    vx_ = PeriodicSpline(vvx, length_);
    sdot_ = PeriodicSpline(vsd, length_);
    lap_time_ = line.lap_time;
}

double RacingLineRef::min_sdot_ahead(double s0, double ahead) const {
    double out = 1e300;
    const double step = 2.0;
    for (double d = 0.0; d <= ahead; d += step) out = std::min(out, sdot_(s0 + d));
    return out;
}

}  // namespace apex
