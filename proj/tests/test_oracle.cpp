#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace qtraj;

namespace {

double harmonic(double x) { return 0.5 * x * x; }

CoefficientSet hamiltonian_only(double alpha, const std::string& V) {
    CoefficientSet co;
    co.alpha = alpha;
    co.V = ScalarField::parse(V);
    co.sigma = {{}};
    co.eta = {ScalarField::zero()};
    return co;
}

DensityMatrix projector(const Eigen::VectorXcd& v) {
    const Eigen::VectorXcd u = v / v.norm();
    return u * u.adjoint();
}

}  // namespace

TEST(DenseAssemble, IdentityAndHandBuiltHamiltonian) {
    const GridSpec g = oracle_grid();
    const auto I = dense_assemble(OperatorHandle::identity(g), 0.0);
    EXPECT_EQ((I - DenseMatrix::Identity(16, 16)).cwiseAbs().maxCoeff(), 0.0);
    const auto p = make_preset("position-measurement-e2", {}, g);
    const auto ops = build_operators(g, p.coefficients);
    const Eigen::MatrixXd ref = test::dirichlet_operator(g, 0.5, test::sampled(g, harmonic));
    EXPECT_LE((dense_assemble(ops.H, 0.0) - ref.cast<cplx>()).cwiseAbs().maxCoeff(), 1e-13);
    // L = eta x with eta = 1
    const auto L = dense_assemble(ops.L[0], 0.0);
    for (int i = 0; i < 16; ++i) EXPECT_NEAR(std::abs(L(i, i) - g.coordinate(i)), 0.0, 1e-15);
    EXPECT_THROW(dense_assemble(OperatorHandle::identity(GridSpec(1, 4.0, 128)), 0.0), std::invalid_argument);
}

TEST(DenseAssemble, PresetGeneratorsAreConsistent) {
    const GridSpec g = oracle_grid();
    for (const auto& name : preset_names()) {
        const auto ops = build_operators(g, make_preset(name, {}, g).coefficients);
        for (double t : {0.0, 2.5}) {
            const DenseMatrix H = dense_assemble(ops.H, t);
            const DenseMatrix G = dense_assemble(ops.G, t);
            EXPECT_LE(hermiticity_error(H), 1e-12) << name;
            DenseMatrix sum = G + G.adjoint();
            for (const auto& L : ops.L) {
                const DenseMatrix Ld = dense_assemble(L, t);
                EXPECT_LE((dense_assemble(L, t, true) - Ld.adjoint()).cwiseAbs().maxCoeff(), 1e-13) << name;
                sum += Ld.adjoint() * Ld;
            }
            EXPECT_LE(sum.cwiseAbs().maxCoeff(), 1e-12) << name << " t=" << t;
        }
    }
}

TEST(TraceDistance, ClosedFormExamples) {
    Eigen::VectorXcd a = Eigen::VectorXcd::Zero(4), b = Eigen::VectorXcd::Zero(4);
    a[0] = 1.0;
    b[1] = 1.0;
    EXPECT_NEAR(trace_distance(projector(a), projector(a)), 0.0, 1e-15);
    EXPECT_NEAR(trace_distance(projector(a), projector(b)), 1.0, 1e-15);
    DensityMatrix m = DensityMatrix::Zero(2, 2), u = DensityMatrix::Zero(2, 2);
    m(0, 0) = 0.6;
    m(1, 1) = 0.4;
    u(0, 0) = u(1, 1) = 0.5;
    EXPECT_NEAR(trace_distance(m, u), 0.1, 1e-15);
    // pure states at overlap c: sqrt(1 - |c|^2)
    Eigen::VectorXcd c = Eigen::VectorXcd::Zero(4);
    c[0] = 0.6;
    c[1] = cplx(0.0, 0.8);
    EXPECT_NEAR(trace_distance(projector(a), projector(c)), 0.8, 1e-14);
    EXPECT_THROW(trace_distance(m, projector(a)), std::invalid_argument);
}

TEST(PureDensity, MatchesNormalisedProjector) {
    const GridSpec g = oracle_grid();
    const auto f = test::random_wave(g, 3);
    const DensityMatrix rho = pure_density(f);
    EXPECT_LE((rho - projector(test::to_eigen(f))).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(min_eigenvalue(rho), 0.0, 1e-14);
}

TEST(MasterEquation, EigenstateIsStationaryWithoutDissipation) {
    const GridSpec g = oracle_grid();
    const auto ops = build_operators(g, hamiltonian_only(0.5, "0.5*x^2"));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(test::dirichlet_operator(g, 0.5, test::sampled(g, harmonic)));
    const DensityMatrix rho0 = projector(es.eigenvectors().col(1).cast<cplx>());
    const DensityMatrix rho = solve_master(rho0, 1.0, ops, 1e-3);
    EXPECT_LE((rho - rho0).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(MasterEquation, UnitaryEvolutionMatchesMatrixExponential) {
    const GridSpec g = oracle_grid();
    const auto ops = build_operators(g, hamiltonian_only(0.5, "0.5*x^2 + 0.3*x"));
    const Eigen::MatrixXd H =
        test::dirichlet_operator(g, 0.5, test::sampled(g, [](double x) { return 0.5 * x * x + 0.3 * x; }));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const double T = 0.7;
    const Eigen::VectorXcd phase = (es.eigenvalues() * cplx(0.0, -T)).array().exp();
    const DenseMatrix V = es.eigenvectors().cast<cplx>();
    const DenseMatrix U = V * phase.asDiagonal() * V.adjoint();
    const DensityMatrix rho0 = pure_density(make_gaussian(g, {0.5}, 0.6, {1.0}));
    const DensityMatrix rho = solve_master(rho0, T, ops, 1e-3);
    EXPECT_LE((rho - U * rho0 * U.adjoint()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MasterEquation, PositionDephasingHasClosedForm) {
    // H = 0, L = eta x: rho_ij(t) = rho_ij(0) exp(-eta^2 (x_i - x_j)^2 t / 2)
    const GridSpec g = oracle_grid();
    CoefficientSet co;
    co.sigma = {{}};
    co.eta = {ScalarField::parse("0.8*x")};
    const auto ops = build_operators(g, co);
    const DensityMatrix rho0 = pure_density(test::random_wave(g, 7));
    const double T = 0.5;
    const DensityMatrix rho = solve_master(rho0, T, ops, 1e-3);
    double worst = 0.0;
    for (int i = 0; i < 16; ++i) {
        for (int j = 0; j < 16; ++j) {
            const double dx = g.coordinate(i) - g.coordinate(j);
            const cplx expected = rho0(i, j) * std::exp(-0.5 * 0.64 * dx * dx * T);
            worst = std::max(worst, std::abs(rho(i, j) - expected));
        }
    }
    EXPECT_LE(worst, 1e-10);
}

TEST(MasterEquation, MeasurementModelKeepsStateProperties) {
    const GridSpec g = oracle_grid();
    const auto p = make_preset("position-measurement-e2", {}, g);
    const auto ops = build_operators(g, p.coefficients);
    const auto sol = solve_master_detailed(pure_density(p.initial_state()), 0.5, ops, 1e-4);
    EXPECT_NEAR(sol.rho.trace().real(), 1.0, 1e-8);
    EXPECT_LE(sol.trace_drift, 1e-8);
    EXPECT_LE(hermiticity_error(sol.rho), 1e-12);
    EXPECT_GE(min_eigenvalue(sol.rho), -1e-10);
    // dephasing makes the state mixed
    EXPECT_LT((sol.rho * sol.rho).trace().real(), 0.99);
}

TEST(MasterEquation, TimeDependentPresetAndFailures) {
    const GridSpec g = oracle_grid();
    const auto p = make_preset("laser-e3", {{"T_pulse", 2.0}}, g);
    const auto ops = build_operators(g, p.coefficients);
    const auto sol = solve_master_detailed(pure_density(p.initial_state()), 0.2, ops, 1e-3, 0.5);
    EXPECT_LE(sol.trace_drift, 1e-8);
    // RK4 far outside its stability region must not pass silently
    EXPECT_THROW(solve_master(pure_density(p.initial_state()), 20.0, ops, 0.5), std::runtime_error);
    EXPECT_THROW(solve_master(DensityMatrix::Identity(4, 4), 1.0, ops, 1e-3), std::invalid_argument);
}

TEST(StructuralChecks, PassOnEveryPreset) {
    for (const auto& name : preset_names()) {
        const GridSpec g = oracle_grid();
        const auto ops = build_operators(g, make_preset(name, {}, g).coefficients);
        const auto rep = structural_checks(ops, 1.0);
        EXPECT_TRUE(rep.passed()) << name << "\n" << rep.str();
        EXPECT_NE(rep.find("dense G + G* + sum L*L"), nullptr);
    }
}

TEST(StructuralChecks, LargeGridsOnlyCheckNormDefect) {
    const GridSpec g = default_grid();
    const auto ops = build_operators(g, make_preset("qbm-e1", {}, g).coefficients);
    const auto rep = structural_checks(ops);
    EXPECT_TRUE(rep.passed()) << rep.str();
    EXPECT_EQ(rep.lines.size(), 1u);
}

TEST(StructuralChecks, TwoDimensionalRichCoefficients) {
    for (Boundary b : {Boundary::dirichlet, Boundary::periodic}) {
        GridSpec g(2, 3.0, 8, b);
        CoefficientSet co;
        co.dimension = 2;
        co.alpha = 0.4;
        co.V = ScalarField::parse("x^2 + 0.5*y^2 + 0.1*x*y");
        co.A = {ScalarField::parse("0.3*y"), ScalarField::parse("-0.2*x")};
        co.sigma = {{ScalarField::parse("0.3*exp(i*x)"), ScalarField::parse("0.2")}, {}};
        co.eta = {ScalarField::parse("0.5*x + 0.1*i*y"), ScalarField::parse("cos(y)")};
        const auto rep = structural_checks(build_operators(g, co), 0.0, 20);
        EXPECT_TRUE(rep.passed()) << rep.str();
        EXPECT_NE(rep.find("dense adjoint L_1"), nullptr);
    }
}

TEST(VerificationReport, FormatsLines) {
    VerificationReport rep;
    rep.add("a", 0.5, 1.0, true);
    rep.add("b", 2.0, 1.0, false, "note");
    EXPECT_FALSE(rep.passed());
    EXPECT_EQ(rep.str(), "PASS a value=0.5 tol=1\nFAIL b value=2 tol=1 (note)\n");
    EXPECT_EQ(rep.find("c"), nullptr);
}
