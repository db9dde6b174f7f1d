#include <gtest/gtest.h>

#include "support.hpp"

using namespace qtraj;
using qtraj::test::random_wave;

namespace {

Eigen::MatrixXcd to_dense(const LinearOperator& A, const GridSpec& g) {
    const auto n = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXcd M(n, n);
    WaveFunction e(g), y(g);
    for (Eigen::Index j = 0; j < n; ++j) {
        e.fill(0.0);
        e[static_cast<std::size_t>(j)] = 1.0;
        A(e, y);
        M.col(j) = test::to_eigen(y);
    }
    return M;
}

}  // namespace

TEST(ConjugateGradient, SolvesShiftedReferenceOperator) {
    GridSpec g(2, 3.0, 16);
    const auto C = build_C(g);
    LinearOperator A = [&](const WaveFunction& x, WaveFunction& out) {
        C.apply_into(0.0, x, out);
        out.axpy(2.0, x);
    };
    const auto b = random_wave(g, 1);
    WaveFunction x(g);
    const auto r = conjugate_gradient(A, b, x, 1e-12, 1000);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.relative_residual, 1e-12);
    const Eigen::VectorXcd ref = to_dense(A, g).ldlt().solve(test::to_eigen(b));
    EXPECT_LE((test::to_eigen(x) - ref).norm(), 1e-9 * ref.norm());
}

TEST(ConjugateGradient, ZeroRightHandSide) {
    GridSpec g(1, 3.0, 16);
    LinearOperator A = [](const WaveFunction& x, WaveFunction& out) { out = x; };
    WaveFunction x = random_wave(g, 3);
    const auto r = conjugate_gradient(A, WaveFunction(g), x, 1e-10, 10);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(norm(x), 0.0);
}

TEST(BiCGSTAB, SolvesNonHermitianSystem) {
    GridSpec g(1, 5.0, 64, Boundary::periodic);
    const auto p = make_preset("qbm-e1", {}, GridSpec(1, 5.0, 64, Boundary::periodic));
    const auto G = build_G(p.grid, p.coefficients);
    const double dt = 1e-2;
    LinearOperator A = [&](const WaveFunction& x, WaveFunction& out) {
        G.apply_into(0.0, x, out);
        out *= -dt;
        out += x;
    };
    const auto b = random_wave(g, 5);
    WaveFunction x = b;
    const auto r = bicgstab(A, b, x, 1e-11, 2000);
    EXPECT_TRUE(r.converged);
    const Eigen::VectorXcd ref = to_dense(A, g).partialPivLu().solve(test::to_eigen(b));
    EXPECT_LE((test::to_eigen(x) - ref).norm(), 1e-9 * ref.norm());
}

TEST(Solvers, ReportNonConvergence) {
    GridSpec g(1, 10.0, 256);
    const auto C = build_C(g);
    LinearOperator A = [&](const WaveFunction& x, WaveFunction& out) { C.apply_into(0.0, x, out); };
    const auto b = random_wave(g, 7);
    WaveFunction x(g);
    const auto r = conjugate_gradient(A, b, x, 1e-14, 3);
    EXPECT_FALSE(r.converged);
    EXPECT_EQ(r.iterations, 3);
    const SolverFailure failure("CG", r);
    EXPECT_NE(std::string(failure.what()).find("3 iterations"), std::string::npos);
}

TEST(BandedLU, ProbedBandMatchesDenseSolve) {
    GridSpec g(1, 5.0, 64);
    const auto p = make_preset("qbm-e1", {}, g);
    const auto G = build_G(g, p.coefficients);
    const double dt = 0.05;
    LinearOperator A = [&](const WaveFunction& x, WaveFunction& out) {
        G.apply_into(0.0, x, out);
        out *= -dt;
        out += x;
    };
    const auto lu = BandedLU::probe(A, g, 2, 2);
    const auto b = random_wave(g, 9);
    WaveFunction x = b;
    lu.solve(x.values());
    const Eigen::MatrixXcd M = to_dense(A, g);
    // the operator really is pentadiagonal
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        for (Eigen::Index j = 0; j < M.cols(); ++j) {
            if (std::abs(i - j) > 2) {
                EXPECT_EQ(M(i, j), cplx(0.0));
            }
        }
    }
    const Eigen::VectorXcd ref = M.partialPivLu().solve(test::to_eigen(b));
    EXPECT_LE((test::to_eigen(x) - ref).norm(), 1e-12 * ref.norm());
}

TEST(BandedLU, PivotsOnZeroDiagonal) {
    BandedLU lu(3, 1, 1);
    // [[0 1 0] [1 0 1] [0 1 1]]
    lu.at(0, 1) = 1.0;
    lu.at(1, 0) = 1.0;
    lu.at(1, 2) = 1.0;
    lu.at(2, 1) = 1.0;
    lu.at(2, 2) = 1.0;
    lu.factor();
    std::vector<cplx> b = {1.0, 2.0, 3.0};
    lu.solve(b);
    // x = (0, 1, 2)
    EXPECT_NEAR(std::abs(b[0] - 0.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(b[1] - 1.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(b[2] - 2.0), 0.0, 1e-15);
}
