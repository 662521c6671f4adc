#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace apex {

/// Block-banded OCP-structured convex QP:
///
///   min  sum_k  1/2 x_k'Q_k x_k + q_k'x_k + 1/2 u_k'R_k u_k + r_k'u_k + u_k'S_k x_k
///        (+ terminal 1/2 x_N'Q_N x_N + q_N'x_N in chain mode)
///   s.t. x_{k+1} = A_k x_k + B_k u_k + c_k          (chain: k = 0..N-1)
///        x_{(k+1) mod N} = A_k x_k + B_k u_k + c_k  (cyclic: all k)
///        x_0 = x0                                   (chain mode only)
///        Cx_k x_k + Cu_k u_k + e_k >= 0
///
/// Solved by a primal-dual interior point whose Newton systems are
/// factorized with a Riccati recursion, so the cost per iteration is linear
/// in the horizon length. The cyclic wrap constraint is handled by
/// parameterizing its multiplier and closing the loop with an NX-dimensional
/// Schur solve on top of the same factorization.
template <int NX, int NU>
class OcpQpSolver {
public:
    using MatXX = Eigen::Matrix<double, NX, NX>;
    using MatUU = Eigen::Matrix<double, NU, NU>;
    using MatUX = Eigen::Matrix<double, NU, NX>;
    using MatXU = Eigen::Matrix<double, NX, NU>;
    using VecX = Eigen::Matrix<double, NX, 1>;
    using VecU = Eigen::Matrix<double, NU, 1>;
    using RowsX = Eigen::Matrix<double, Eigen::Dynamic, NX>;
    using RowsU = Eigen::Matrix<double, Eigen::Dynamic, NU>;

    struct Stage {
        MatXX Q = MatXX::Zero();
        MatUU R = MatUU::Zero();
        MatUX S = MatUX::Zero();
        VecX q = VecX::Zero();
        VecU r = VecU::Zero();
        MatXX A = MatXX::Zero();
        MatXU B = MatXU::Zero();
        VecX c = VecX::Zero();
        RowsX Cx;
        RowsU Cu;
        Eigen::VectorXd e;

        int nc() const { return static_cast<int>(e.size()); }
    };

    struct Terminal {
        MatXX Q = MatXX::Zero();
        VecX q = VecX::Zero();
        RowsX Cx;
        Eigen::VectorXd e;
        int nc() const { return static_cast<int>(e.size()); }
    };

    struct Problem {
        std::vector<Stage> stages;
        Terminal terminal;   // chain mode only
        VecX x0 = VecX::Zero();  // chain mode only
        bool cyclic = false;
    };

    enum class Status { Solved, MaxIterations, Infeasible };

    struct Solution {
        std::vector<VecX> xs;
        std::vector<VecU> us;
        std::vector<VecX> lambdas;             // one per equality block
        std::vector<Eigen::VectorXd> ineq_duals;
        std::vector<Eigen::VectorXd> slacks;
        Status status = Status::MaxIterations;
        int iterations = 0;
        double kkt_residual = std::numeric_limits<double>::infinity();
        double complementarity = std::numeric_limits<double>::infinity();
    };

    struct Settings {
        double tolerance = 1e-9;
        int max_iterations = 100;
        double levelling = 1e-8;
    };

    OcpQpSolver() = default;
    explicit OcpQpSolver(Settings settings) : settings_(settings) {}
    Settings& settings() { return settings_; }

    Solution solve(const Problem& prob) const;

private:
    struct Iterate {
        std::vector<VecX> x;
        std::vector<VecU> u;
        std::vector<VecX> lam;   // chain: lam[k] multiplies the constraint
                                 // defining x_k (k=0 is the initial pin);
                                 // cyclic: lam[0] multiplies the wrap edge
        std::vector<Eigen::VectorXd> z, t;
    };

    struct Residuals {
        std::vector<VecX> rx;
        std::vector<VecU> ru;
        std::vector<VecX> rh;
        std::vector<Eigen::VectorXd> rg;
        double stat_norm = 0.0, eq_norm = 0.0, ineq_norm = 0.0;
    };

    // Riccati factorization of the IP Newton system (shared across the
    // predictor and corrector backsolves of one iteration).
    struct Factorization {
        std::vector<MatXX> P;
        std::vector<MatUX> K;
        std::vector<MatUX> F;
        std::vector<Eigen::LDLT<MatUU>> M;
        // cyclic tail stage data
        Eigen::LDLT<MatUU> tailR;
        MatUX tailS;
        Eigen::LDLT<MatXX> P0;
        Eigen::FullPivLU<MatXX> Wlu;  // wrap-edge sensitivity
        // IP-modified stage matrices
        std::vector<MatXX> Qb;
        std::vector<MatUU> Rb;
        std::vector<MatUX> Sb;
    };

    struct Direction {
        std::vector<VecX> dx;
        std::vector<VecU> du;
        std::vector<VecX> dlam;
        std::vector<Eigen::VectorXd> dz, dt;
    };

    Settings settings_;

    static int n_states(const Problem& p) {
        return p.cyclic ? static_cast<int>(p.stages.size())
                        : static_cast<int>(p.stages.size()) + 1;
    }

    void compute_residuals(const Problem& prob, const Iterate& it, Residuals& res) const;
    void factorize(const Problem& prob, const Iterate& it, Factorization& fac) const;
    // Solves the Newton system for given complementarity right-hand side
    // (sigma*mu - corrector); returns the full direction.
    void backsolve(const Problem& prob, const Iterate& it, const Factorization& fac,
                   const Residuals& res, const std::vector<Eigen::VectorXd>& rc,
                   Direction& dir) const;
    void vector_pass(const Problem& prob, const Factorization& fac,
                     const std::vector<VecX>& qhat, const std::vector<VecU>& rhat,
                     const std::vector<VecX>& rh, const VecX& zeta, Direction& dir) const;
};

// ---------------------------------------------------------------------------

template <int NX, int NU>
void OcpQpSolver<NX, NU>::compute_residuals(const Problem& prob, const Iterate& it,
                                            Residuals& res) const {
    const int N = static_cast<int>(prob.stages.size());
    const int ns = n_states(prob);
    res.rx.assign(ns, VecX::Zero());
    res.ru.assign(N, VecU::Zero());
    res.rh.assign(ns, VecX::Zero());
    res.rg.assign(ns, Eigen::VectorXd());
    res.stat_norm = res.eq_norm = res.ineq_norm = 0.0;

    auto lam_next = [&](int k) -> const VecX& {
        return prob.cyclic ? it.lam[(k + 1) % N] : it.lam[k + 1];
    };

    for (int k = 0; k < N; ++k) {
        const auto& st = prob.stages[k];
        VecX rx = st.Q * it.x[k] + st.q + st.S.transpose() * it.u[k] -
                  st.A.transpose() * lam_next(k) + it.lam[k];
        VecU ru = st.R * it.u[k] + st.r + st.S * it.x[k] - st.B.transpose() * lam_next(k);
        if (st.nc() > 0) {
            rx -= st.Cx.transpose() * it.z[k];
            ru -= st.Cu.transpose() * it.z[k];
            res.rg[k] = st.Cx * it.x[k] + st.Cu * it.u[k] + st.e - it.t[k];
        }
        res.rx[k] = rx;
        res.ru[k] = ru;
    }
    if (!prob.cyclic) {
        const auto& tm = prob.terminal;
        VecX rx = tm.Q * it.x[N] + tm.q + it.lam[N];
        if (tm.nc() > 0) {
            rx -= tm.Cx.transpose() * it.z[N];
            res.rg[N] = tm.Cx * it.x[N] + tm.e - it.t[N];
        }
        res.rx[N] = rx;
        res.rh[0] = it.x[0] - prob.x0;
        for (int k = 0; k < N; ++k) {
            const auto& st = prob.stages[k];
            res.rh[k + 1] = it.x[k + 1] - st.A * it.x[k] - st.B * it.u[k] - st.c;
        }
    } else {
        for (int k = 0; k < N; ++k) {
            const auto& st = prob.stages[k];
            res.rh[(k + 1) % N] = it.x[(k + 1) % N] - st.A * it.x[k] - st.B * it.u[k] - st.c;
        }
    }

    for (int k = 0; k < ns; ++k) {
        res.stat_norm = std::max(res.stat_norm, res.rx[k].template lpNorm<Eigen::Infinity>());
        res.eq_norm = std::max(res.eq_norm, res.rh[k].template lpNorm<Eigen::Infinity>());
        if (res.rg[k].size() > 0)
            res.eq_norm = std::max(res.eq_norm, res.rg[k].template lpNorm<Eigen::Infinity>());
        if (it.t[k].size() > 0 && it.t[k].minCoeff() < 0.0)
            res.ineq_norm = std::max(res.ineq_norm, -it.t[k].minCoeff());
    }
    for (int k = 0; k < N; ++k)
        res.stat_norm = std::max(res.stat_norm, res.ru[k].template lpNorm<Eigen::Infinity>());
}

template <int NX, int NU>
void OcpQpSolver<NX, NU>::factorize(const Problem& prob, const Iterate& it,
                                    Factorization& fac) const {
    const int N = static_cast<int>(prob.stages.size());
    const int ns = n_states(prob);
    fac.P.assign(ns, MatXX::Zero());
    fac.K.assign(N, MatUX::Zero());
    fac.F.assign(N, MatUX::Zero());
    fac.M.assign(N, Eigen::LDLT<MatUU>());
    fac.Qb.assign(ns, MatXX::Zero());
    fac.Rb.assign(N, MatUU::Zero());
    fac.Sb.assign(N, MatUX::Zero());

    // barrier-augmented stage matrices
    for (int k = 0; k < N; ++k) {
        const auto& st = prob.stages[k];
        MatXX Qb = st.Q;
        MatUU Rb = st.R;
        MatUX Sb = st.S;
        Qb.diagonal().array() += settings_.levelling;
        Rb.diagonal().array() += settings_.levelling;
        if (st.nc() > 0) {
            const Eigen::VectorXd w = it.z[k].cwiseQuotient(it.t[k]);
            Qb += st.Cx.transpose() * w.asDiagonal() * st.Cx;
            Rb += st.Cu.transpose() * w.asDiagonal() * st.Cu;
            Sb += st.Cu.transpose() * w.asDiagonal() * st.Cx;
        }
        fac.Qb[k] = Qb;
        fac.Rb[k] = Rb;
        fac.Sb[k] = Sb;
    }

    if (!prob.cyclic) {
        MatXX Qn = prob.terminal.Q;
        Qn.diagonal().array() += settings_.levelling;
        if (prob.terminal.nc() > 0) {
            const Eigen::VectorXd w = it.z[N].cwiseQuotient(it.t[N]);
            Qn += prob.terminal.Cx.transpose() * w.asDiagonal() * prob.terminal.Cx;
        }
        fac.Qb[N] = Qn;
        fac.P[N] = Qn;
        for (int k = N - 1; k >= 0; --k) {
            const auto& st = prob.stages[k];
            const MatXX& Pn = fac.P[k + 1];
            const Eigen::Matrix<double, NU, NX> BtP = st.B.transpose() * Pn;
            MatUU M = fac.Rb[k] + BtP * st.B;
            fac.M[k].compute(M);
            fac.F[k] = fac.Sb[k] + BtP * st.A;
            fac.K[k] = fac.M[k].solve(fac.F[k]);
            MatXX P = fac.Qb[k] + st.A.transpose() * Pn * st.A -
                      fac.F[k].transpose() * fac.K[k];
            fac.P[k] = 0.5 * (P + P.transpose());
        }
        return;
    }

    // cyclic: eliminate u_{N-1} into the stage-(N-1) state cost, then run
    // the chain backward over edges 0..N-2 and factor P_0 for the free x_0
    fac.tailR.compute(fac.Rb[N - 1]);
    fac.tailS = fac.Sb[N - 1];
    {
        MatXX P = fac.Qb[N - 1] - fac.tailS.transpose() * fac.tailR.solve(fac.tailS);
        fac.P[N - 1] = 0.5 * (P + P.transpose());
    }
    for (int k = N - 2; k >= 0; --k) {
        const auto& st = prob.stages[k];
        const MatXX& Pn = fac.P[k + 1];
        const Eigen::Matrix<double, NU, NX> BtP = st.B.transpose() * Pn;
        MatUU M = fac.Rb[k] + BtP * st.B;
        fac.M[k].compute(M);
        fac.F[k] = fac.Sb[k] + BtP * st.A;
        fac.K[k] = fac.M[k].solve(fac.F[k]);
        MatXX P = fac.Qb[k] + st.A.transpose() * Pn * st.A - fac.F[k].transpose() * fac.K[k];
        fac.P[k] = 0.5 * (P + P.transpose());
    }
    fac.P0.compute(fac.P[0]);

    // wrap-edge sensitivity, shared by every backsolve on this factorization
    const auto& tail = prob.stages[N - 1];
    MatXX W;
    std::vector<VecX> zero_rh(ns, VecX::Zero());
    std::vector<VecX> zero_q(ns, VecX::Zero());
    std::vector<VecU> zero_r(N, VecU::Zero());
    for (int j = 0; j < NX; ++j) {
        VecX ez = VecX::Zero();
        ez[j] = 1.0;
        Direction probe;
        vector_pass(prob, fac, zero_q, zero_r, zero_rh, ez, probe);
        W.col(j) = probe.dx[0] - tail.A * probe.dx[N - 1] - tail.B * probe.du[N - 1];
    }
    fac.Wlu.compute(W);
}

// One gradient backsolve on the fixed factorization. For cyclic problems
// `zeta` is the wrap-edge multiplier direction being probed.
template <int NX, int NU>
void OcpQpSolver<NX, NU>::vector_pass(const Problem& prob, const Factorization& fac,
                                      const std::vector<VecX>& qhat,
                                      const std::vector<VecU>& rhat,
                                      const std::vector<VecX>& rh, const VecX& zeta,
                                      Direction& dir) const {
    const int N = static_cast<int>(prob.stages.size());
    const int ns = n_states(prob);
    dir.dx.assign(ns, VecX::Zero());
    dir.du.assign(N, VecU::Zero());
    dir.dlam.assign(ns, VecX::Zero());

    std::vector<VecX> p(ns, VecX::Zero());
    std::vector<VecU> kff(N, VecU::Zero());

    if (!prob.cyclic) {
        p[N] = qhat[N];
        for (int k = N - 1; k >= 0; --k) {
            const auto& st = prob.stages[k];
            const VecX cbar = -rh[k + 1];
            const VecX pc = p[k + 1] + fac.P[k + 1] * cbar;
            const VecU m = rhat[k] + st.B.transpose() * pc;
            kff[k] = fac.M[k].solve(m);
            p[k] = qhat[k] + st.A.transpose() * pc - fac.F[k].transpose() * kff[k];
        }
        dir.dx[0] = -rh[0];
        for (int k = 0; k < N; ++k) {
            dir.du[k] = -fac.K[k] * dir.dx[k] - kff[k];
            const auto& st = prob.stages[k];
            dir.dx[k + 1] = st.A * dir.dx[k] + st.B * dir.du[k] - rh[k + 1];
        }
        for (int k = 0; k <= N; ++k) dir.dlam[k] = -(fac.P[k] * dir.dx[k] + p[k]);
        return;
    }

    // cyclic: gradients at the tail stage and stage 0 carry the wrap
    // multiplier; rh[0] is the wrap-edge residual handled by the caller
    std::vector<VecX> qz = qhat;
    std::vector<VecU> rz = rhat;
    const auto& tail = prob.stages[N - 1];
    qz[N - 1] -= tail.A.transpose() * zeta;
    rz[N - 1] -= tail.B.transpose() * zeta;
    qz[0] += zeta;

    std::vector<VecU> tail_kff(1);
    p[N - 1] = qz[N - 1] - fac.tailS.transpose() * fac.tailR.solve(rz[N - 1]);
    for (int k = N - 2; k >= 0; --k) {
        const auto& st = prob.stages[k];
        const VecX cbar = -rh[k + 1];
        const VecX pc = p[k + 1] + fac.P[k + 1] * cbar;
        const VecU m = rz[k] + st.B.transpose() * pc;
        kff[k] = fac.M[k].solve(m);
        p[k] = qz[k] + st.A.transpose() * pc - fac.F[k].transpose() * kff[k];
    }
    dir.dx[0] = -fac.P0.solve(p[0]);
    for (int k = 0; k + 1 < N; ++k) {
        dir.du[k] = -fac.K[k] * dir.dx[k] - kff[k];
        const auto& st = prob.stages[k];
        dir.dx[k + 1] = st.A * dir.dx[k] + st.B * dir.du[k] - rh[k + 1];
    }
    dir.du[N - 1] = -fac.tailR.solve(rz[N - 1] + fac.tailS * dir.dx[N - 1]);
    for (int k = 0; k < N; ++k) dir.dlam[k] = -(fac.P[k] * dir.dx[k] + p[k]);
    dir.dlam[0] = zeta;  // by construction
}

template <int NX, int NU>
void OcpQpSolver<NX, NU>::backsolve(const Problem& prob, const Iterate& it,
                                    const Factorization& fac, const Residuals& res,
                                    const std::vector<Eigen::VectorXd>& rc,
                                    Direction& dir) const {
    const int N = static_cast<int>(prob.stages.size());
    const int ns = n_states(prob);

    // fold the inequality blocks into effective gradients
    std::vector<VecX> qhat(ns, VecX::Zero());
    std::vector<VecU> rhat(N, VecU::Zero());
    for (int k = 0; k < ns; ++k) {
        VecX qh = res.rx[k];
        if (res.rg[k].size() > 0) {
            const Eigen::VectorXd w = it.z[k].cwiseQuotient(it.t[k]);
            const Eigen::VectorXd fold =
                rc[k].cwiseQuotient(it.t[k]) + w.cwiseProduct(res.rg[k]);
            if (!prob.cyclic && k == N)
                qh += prob.terminal.Cx.transpose() * fold;
            else
                qh += prob.stages[k].Cx.transpose() * fold;
        }
        qhat[k] = qh;
    }
    for (int k = 0; k < N; ++k) {
        VecU rh = res.ru[k];
        if (res.rg[k].size() > 0) {
            const Eigen::VectorXd w = it.z[k].cwiseQuotient(it.t[k]);
            const Eigen::VectorXd fold =
                rc[k].cwiseQuotient(it.t[k]) + w.cwiseProduct(res.rg[k]);
            rh += prob.stages[k].Cu.transpose() * fold;
        }
        rhat[k] = rh;
    }

    if (!prob.cyclic) {
        vector_pass(prob, fac, qhat, rhat, res.rh, VecX::Zero(), dir);
    } else {
        // Newton on the wrap residual: affine in zeta, closed with the
        // cached NX-dimensional sensitivity factorization.
        const auto& tail = prob.stages[N - 1];
        Direction base;
        vector_pass(prob, fac, qhat, rhat, res.rh, VecX::Zero(), base);
        const VecX rho0 =
            base.dx[0] - tail.A * base.dx[N - 1] - tail.B * base.du[N - 1] + res.rh[0];
        const VecX zeta = fac.Wlu.solve(-rho0);
        vector_pass(prob, fac, qhat, rhat, res.rh, zeta, dir);
    }

    // recover inequality directions
    dir.dz.assign(ns, Eigen::VectorXd());
    dir.dt.assign(ns, Eigen::VectorXd());
    for (int k = 0; k < ns; ++k) {
        if (res.rg[k].size() == 0) continue;
        Eigen::VectorXd ct;
        if (!prob.cyclic && k == N)
            ct = prob.terminal.Cx * dir.dx[k];
        else
            ct = prob.stages[k].Cx * dir.dx[k] + prob.stages[k].Cu * dir.du[k];
        dir.dt[k] = ct + res.rg[k];
        dir.dz[k] = -(rc[k] + it.z[k].cwiseProduct(dir.dt[k])).cwiseQuotient(it.t[k]);
    }
}

template <int NX, int NU>
typename OcpQpSolver<NX, NU>::Solution OcpQpSolver<NX, NU>::solve(const Problem& prob) const {
    const int N = static_cast<int>(prob.stages.size());
    const int ns = n_states(prob);

    Iterate it;
    it.x.assign(ns, VecX::Zero());
    it.u.assign(N, VecU::Zero());
    it.lam.assign(ns, VecX::Zero());
    it.z.assign(ns, Eigen::VectorXd());
    it.t.assign(ns, Eigen::VectorXd());
    if (!prob.cyclic) it.x[0] = prob.x0;

    int total_nc = 0;
    auto nc_at = [&](int k) {
        return (!prob.cyclic && k == N) ? prob.terminal.nc() : prob.stages[k].nc();
    };
    for (int k = 0; k < ns; ++k) {
        const int nc = nc_at(k);
        total_nc += nc;
        if (nc == 0) continue;
        Eigen::VectorXd g;
        if (!prob.cyclic && k == N)
            g = prob.terminal.Cx * it.x[k] + prob.terminal.e;
        else
            g = prob.stages[k].Cx * it.x[k] + prob.stages[k].Cu * it.u[k] + prob.stages[k].e;
        it.t[k] = g.cwiseMax(1.0);
        it.z[k] = Eigen::VectorXd::Ones(nc);
    }

    Solution sol;
    Residuals res;
    Factorization fac;
    Direction aff, dir;
    std::vector<Eigen::VectorXd> rc(ns);

    // equality-only problems still need a couple of Newton refinements to
    // wash out the levelling perturbation
    const int max_iter = total_nc == 0 ? 5 : settings_.max_iterations;
    double last_kkt = std::numeric_limits<double>::infinity();
    int stall = 0;

    for (int iter = 0; iter <= max_iter; ++iter) {
        bool finite = true;
        for (int k = 0; k < ns && finite; ++k) {
            finite = it.x[k].allFinite() && it.lam[k].allFinite() &&
                     (it.t[k].size() == 0 || (it.t[k].allFinite() && it.z[k].allFinite()));
        }
        for (int k = 0; k < N && finite; ++k) finite = it.u[k].allFinite();
        if (!finite) {
            sol.status = Status::Infeasible;
            break;
        }

        compute_residuals(prob, it, res);
        double mu = 0.0, comp_inf = 0.0;
        if (total_nc > 0) {
            double acc = 0.0;
            for (int k = 0; k < ns; ++k) {
                if (it.t[k].size() == 0) continue;
                acc += it.z[k].dot(it.t[k]);
                comp_inf = std::max(
                    comp_inf,
                    it.z[k].cwiseProduct(it.t[k]).template lpNorm<Eigen::Infinity>());
            }
            mu = acc / total_nc;
        }
        const double kkt = std::max({res.stat_norm, res.eq_norm, res.ineq_norm});
        sol.kkt_residual = kkt;
        sol.complementarity = comp_inf;
        sol.iterations = iter;
        if (kkt <= settings_.tolerance && comp_inf <= settings_.tolerance) {
            sol.status = Status::Solved;
            break;
        }
        if (iter == max_iter) {
            sol.status = (res.eq_norm > 1e-6 || res.ineq_norm > 1e-6)
                             ? Status::Infeasible
                             : Status::MaxIterations;
            break;
        }
        if (kkt > 0.9 * last_kkt && comp_inf <= settings_.tolerance) {
            if (++stall > 8) {
                sol.status = Status::Infeasible;
                break;
            }
        } else {
            stall = 0;
        }
        last_kkt = std::min(last_kkt, kkt);

        factorize(prob, it, fac);

        if (total_nc == 0) {
            for (int k = 0; k < ns; ++k) rc[k] = Eigen::VectorXd();
            backsolve(prob, it, fac, res, rc, dir);
            for (int k = 0; k < ns; ++k) {
                it.x[k] += dir.dx[k];
                it.lam[k] += dir.dlam[k];
            }
            for (int k = 0; k < N; ++k) it.u[k] += dir.du[k];
            continue;
        }

        // predictor (sigma = 0)
        for (int k = 0; k < ns; ++k)
            rc[k] = it.t[k].size() > 0
                        ? Eigen::VectorXd(it.z[k].cwiseProduct(it.t[k]))
                        : Eigen::VectorXd();
        backsolve(prob, it, fac, res, rc, aff);

        auto max_step = [&](const std::vector<Eigen::VectorXd>& v,
                            const std::vector<Eigen::VectorXd>& dv) {
            double a = 1.0;
            for (int k = 0; k < ns; ++k) {
                for (Eigen::Index i = 0; i < v[k].size(); ++i) {
                    if (dv[k][i] < 0.0) a = std::min(a, -v[k][i] / dv[k][i]);
                }
            }
            return a;
        };
        const double ap_aff = max_step(it.t, aff.dt);
        const double ad_aff = max_step(it.z, aff.dz);
        double mu_aff = 0.0;
        for (int k = 0; k < ns; ++k) {
            if (it.t[k].size() == 0) continue;
            mu_aff += (it.z[k] + ad_aff * aff.dz[k]).dot(it.t[k] + ap_aff * aff.dt[k]);
        }
        mu_aff /= total_nc;
        const double sigma = std::pow(std::max(mu_aff, 0.0) / std::max(mu, 1e-300), 3.0);

        // corrector
        for (int k = 0; k < ns; ++k) {
            if (it.t[k].size() == 0) continue;
            rc[k] = it.z[k].cwiseProduct(it.t[k]) + aff.dz[k].cwiseProduct(aff.dt[k]) -
                    Eigen::VectorXd::Constant(it.t[k].size(), sigma * mu);
        }
        backsolve(prob, it, fac, res, rc, dir);

        const double tau = 0.995;
        const double ap = std::min(1.0, tau * max_step(it.t, dir.dt));
        const double ad = std::min(1.0, tau * max_step(it.z, dir.dz));
        if (ap < 1e-11 && ad < 1e-11) {
            sol.status = Status::Infeasible;
            break;
        }
        for (int k = 0; k < ns; ++k) {
            it.x[k] += ap * dir.dx[k];
            it.lam[k] += ad * dir.dlam[k];
            if (it.t[k].size() > 0) {
                it.t[k] += ap * dir.dt[k];
                it.z[k] += ad * dir.dz[k];
            }
        }
        for (int k = 0; k < N; ++k) it.u[k] += ap * dir.du[k];
    }

    sol.xs = it.x;
    sol.us = it.u;
    sol.lambdas = it.lam;
    sol.ineq_duals = it.z;
    sol.slacks = it.t;
    return sol;
}

}  // namespace apex
