#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <chrono>
#include <random>

#include "apex/ocp_qp.hpp"

using namespace apex;

namespace {

constexpr int NX = 3;
constexpr int NU = 2;
using Solver = OcpQpSolver<NX, NU>;

Solver::Problem random_chain(int N, std::mt19937_64& rng, bool with_ineq) {
    std::normal_distribution<double> g(0.0, 1.0);
    Solver::Problem prob;
    prob.cyclic = false;
    prob.x0 = Solver::VecX::NullaryExpr([&] { return g(rng); });
    for (int k = 0; k < N; ++k) {
        Solver::Stage st;
        Eigen::Matrix<double, NX, NX> Lq =
            Eigen::Matrix<double, NX, NX>::NullaryExpr([&] { return 0.4 * g(rng); });
        st.Q = Lq * Lq.transpose() + 0.5 * Eigen::Matrix<double, NX, NX>::Identity();
        Eigen::Matrix<double, NU, NU> Lr =
            Eigen::Matrix<double, NU, NU>::NullaryExpr([&] { return 0.4 * g(rng); });
        st.R = Lr * Lr.transpose() + 0.5 * Eigen::Matrix<double, NU, NU>::Identity();
        st.q = Solver::VecX::NullaryExpr([&] { return g(rng); });
        st.r = Solver::VecU::NullaryExpr([&] { return g(rng); });
        st.A = Eigen::Matrix<double, NX, NX>::NullaryExpr([&] { return 0.3 * g(rng); });
        st.A.diagonal().array() += 0.7;
        st.B = Eigen::Matrix<double, NX, NU>::NullaryExpr([&] { return 0.5 * g(rng); });
        st.c = Solver::VecX::NullaryExpr([&] { return 0.2 * g(rng); });
        if (with_ineq) {
            // box constraints on u: u + u_max >= 0 and u_max - u >= 0
            const double umax = 0.6;
            st.Cu.resize(2 * NU, NU);
            st.Cx.setZero(2 * NU, NX);
            st.e.resize(2 * NU);
            st.Cu.template topRows<NU>() = Eigen::Matrix<double, NU, NU>::Identity();
            st.Cu.template bottomRows<NU>() = -Eigen::Matrix<double, NU, NU>::Identity();
            st.e = Eigen::VectorXd::Constant(2 * NU, umax);
        }
        prob.stages.push_back(st);
    }
    Eigen::Matrix<double, NX, NX> Lt =
        Eigen::Matrix<double, NX, NX>::NullaryExpr([&] { return 0.4 * g(rng); });
    prob.terminal.Q = Lt * Lt.transpose() + Eigen::Matrix<double, NX, NX>::Identity();
    prob.terminal.q = Solver::VecX::NullaryExpr([&] { return g(rng); });
    return prob;
}

Solver::Problem random_cyclic(int N, std::mt19937_64& rng, bool with_ineq) {
    Solver::Problem prob = random_chain(N, rng, with_ineq);
    prob.cyclic = true;
    prob.terminal = Solver::Terminal{};
    return prob;
}

// Dense textbook KKT solve of the equality-constrained problem.
struct DenseSolution {
    Eigen::VectorXd w;  // stacked [x_0..x_last, u_0..u_{N-1}]
};

DenseSolution dense_equality_solve(const Solver::Problem& prob) {
    const int N = static_cast<int>(prob.stages.size());
    const int ns = prob.cyclic ? N : N + 1;
    const int nw = ns * NX + N * NU;
    const int ne = prob.cyclic ? N * NX : (N + 1) * NX;
    auto xi = [&](int k) { return k * NX; };
    auto ui = [&](int k) { return ns * NX + k * NU; };

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nw, nw);
    Eigen::VectorXd gvec = Eigen::VectorXd::Zero(nw);
    for (int k = 0; k < N; ++k) {
        const auto& st = prob.stages[k];
        H.block(xi(k), xi(k), NX, NX) += st.Q;
        H.block(ui(k), ui(k), NU, NU) += st.R;
        H.block(ui(k), xi(k), NU, NX) += st.S;
        H.block(xi(k), ui(k), NX, NU) += st.S.transpose();
        gvec.segment(xi(k), NX) += st.q;
        gvec.segment(ui(k), NU) += st.r;
    }
    if (!prob.cyclic) {
        H.block(xi(N), xi(N), NX, NX) += prob.terminal.Q;
        gvec.segment(xi(N), NX) += prob.terminal.q;
    }

    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(ne, nw);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(ne);
    int row = 0;
    if (!prob.cyclic) {
        E.block(row, xi(0), NX, NX).setIdentity();
        b.segment(row, NX) = prob.x0;
        row += NX;
        for (int k = 0; k < N; ++k) {
            const auto& st = prob.stages[k];
            E.block(row, xi(k + 1), NX, NX).setIdentity();
            E.block(row, xi(k), NX, NX) = -st.A;
            E.block(row, ui(k), NX, NU) = -st.B;
            b.segment(row, NX) = st.c;
            row += NX;
        }
    } else {
        for (int k = 0; k < N; ++k) {
            const auto& st = prob.stages[k];
            E.block(row, xi((k + 1) % N), NX, NX).setIdentity();
            E.block(row, xi(k), NX, NX) = -st.A;
            E.block(row, ui(k), NX, NU) = -st.B;
            b.segment(row, NX) = st.c;
            row += NX;
        }
    }

    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nw + ne, nw + ne);
    kkt.topLeftCorner(nw, nw) = H;
    kkt.topRightCorner(nw, ne) = E.transpose();
    kkt.bottomLeftCorner(ne, nw) = E;
    Eigen::VectorXd rhs(nw + ne);
    rhs << -gvec, b;
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    return {sol.head(nw)};
}

// KKT verification for problems with inequalities (convex QP certificate).
void verify_kkt(const Solver::Problem& prob, const Solver::Solution& sol, double tol) {
    const int N = static_cast<int>(prob.stages.size());
    const int ns = prob.cyclic ? N : N + 1;
    for (int k = 0; k < ns; ++k) {
        const bool terminal = !prob.cyclic && k == N;
        const int nc = terminal ? prob.terminal.nc() : prob.stages[k].nc();
        if (nc == 0) continue;
        Eigen::VectorXd gv;
        if (terminal)
            gv = prob.terminal.Cx * sol.xs[k] + prob.terminal.e;
        else
            gv = prob.stages[k].Cx * sol.xs[k] + prob.stages[k].Cu * sol.us[k] +
                 prob.stages[k].e;
        CHECK(gv.minCoeff() > -tol);                       // primal feasibility
        CHECK(sol.ineq_duals[k].minCoeff() > -tol);        // dual feasibility
        CHECK(gv.cwiseProduct(sol.ineq_duals[k]).lpNorm<Eigen::Infinity>() < tol);
    }
    CHECK(sol.kkt_residual < tol);
}

}  // namespace

TEST_CASE("unconstrained LQR-form chain matches the dense textbook solve") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const int N = 3 + static_cast<int>(rng() % 8);
        const auto prob = random_chain(N, rng, false);
        Solver solver;
        const auto sol = solver.solve(prob);
        REQUIRE(sol.status == Solver::Status::Solved);
        const auto dense = dense_equality_solve(prob);
        for (int k = 0; k <= N; ++k)
            for (int i = 0; i < NX; ++i)
                CHECK(sol.xs[k][i] == doctest::Approx(dense.w[k * NX + i]).epsilon(1e-8));
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < NU; ++i)
                CHECK(sol.us[k][i] ==
                      doctest::Approx(dense.w[(N + 1) * NX + k * NU + i]).epsilon(1e-8));
    }
}

TEST_CASE("cyclic equality problem matches the dense textbook solve") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const int N = 4 + static_cast<int>(rng() % 8);
        const auto prob = random_cyclic(N, rng, false);
        Solver solver;
        const auto sol = solver.solve(prob);
        REQUIRE(sol.status == Solver::Status::Solved);
        const auto dense = dense_equality_solve(prob);
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < NX; ++i)
                CHECK(sol.xs[k][i] == doctest::Approx(dense.w[k * NX + i]).epsilon(1e-8));
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < NU; ++i)
                CHECK(sol.us[k][i] ==
                      doctest::Approx(dense.w[N * NX + k * NU + i]).epsilon(1e-8));
    }
}

TEST_CASE("box-constrained chain satisfies KKT with complementarity <= 1e-8") {
    std::mt19937_64 rng(3);
    int active_seen = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const int N = 5 + static_cast<int>(rng() % 6);
        const auto prob = random_chain(N, rng, true);
        Solver solver;
        const auto sol = solver.solve(prob);
        REQUIRE(sol.status == Solver::Status::Solved);
        verify_kkt(prob, sol, 1e-8);
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < NU; ++i)
                if (std::abs(std::abs(sol.us[k][i]) - 0.6) < 1e-7) ++active_seen;
    }
    CHECK(active_seen > 0);  // boxes actually bind somewhere
}

TEST_CASE("cyclic problem with inequalities satisfies KKT") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const int N = 6 + static_cast<int>(rng() % 6);
        const auto prob = random_cyclic(N, rng, true);
        Solver solver;
        const auto sol = solver.solve(prob);
        REQUIRE(sol.status == Solver::Status::Solved);
        verify_kkt(prob, sol, 1e-8);
        // wrap consistency: x_0 reproduced by the last stage dynamics
        const auto& tail = prob.stages[N - 1];
        const auto wrap = tail.A * sol.xs[N - 1] + tail.B * sol.us[N - 1] + tail.c;
        CHECK((wrap - sol.xs[0]).template lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("terminal inequality rows are honored") {
    std::mt19937_64 rng(5);
    auto prob = random_chain(8, rng, false);
    // force x_N[0] >= 2 via terminal constraint
    prob.terminal.Cx.setZero(1, NX);
    prob.terminal.Cx(0, 0) = 1.0;
    prob.terminal.e = Eigen::VectorXd::Constant(1, -2.0);
    Solver solver;
    const auto sol = solver.solve(prob);
    REQUIRE(sol.status == Solver::Status::Solved);
    CHECK(sol.xs[8][0] > 2.0 - 1e-8);
    verify_kkt(prob, sol, 1e-8);
}

TEST_CASE("structure exploitation: doubling the horizon grows time <= 2.5x") {
    std::mt19937_64 rng(6);
    const auto p1 = random_chain(200, rng, true);
    const auto p2 = random_chain(400, rng, true);
    Solver solver;
    // warm the caches
    (void)solver.solve(p1);
    (void)solver.solve(p2);

    auto time_solve = [&](const Solver::Problem& p) {
        const auto t0 = std::chrono::steady_clock::now();
        int iters = 0;
        for (int rep = 0; rep < 5; ++rep) {
            const auto sol = solver.solve(p);
            iters += sol.iterations;
        }
        const auto t1 = std::chrono::steady_clock::now();
        return std::chrono::duration<double>(t1 - t0).count() / std::max(iters, 1);
    };
    const double per_iter_1 = time_solve(p1);
    const double per_iter_2 = time_solve(p2);
    CHECK(per_iter_2 / per_iter_1 < 2.5);
}

TEST_CASE("infeasible problem is reported, not silently solved") {
    std::mt19937_64 rng(7);
    auto prob = random_chain(5, rng, false);
    // contradictory rows on u_2: u >= 1 and -u >= 1
    auto& st = prob.stages[2];
    st.Cu.resize(2, NU);
    st.Cx.setZero(2, NX);
    st.Cu.row(0) << 1.0, 0.0;
    st.Cu.row(1) << -1.0, 0.0;
    st.e = Eigen::VectorXd::Constant(2, -1.0);
    Solver solver;
    const auto sol = solver.solve(prob);
    CHECK(sol.status != Solver::Status::Solved);
}
