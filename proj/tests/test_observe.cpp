#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"

using namespace qtraj;
using qtraj::test::random_wave;

namespace {

SchemeConfig config(double dt, Scheme s = Scheme::semi_implicit) {
    SchemeConfig c;
    c.dt = dt;
    c.scheme = s;
    return c;
}

TrajectoryRecord record(std::vector<double> times, std::vector<std::vector<double>> values) {
    TrajectoryRecord r;
    r.times = std::move(times);
    r.values = std::move(values);
    return r;
}

}  // namespace

TEST(Expectation, ClosedFormExamples) {
    GridSpec g(1, 10.0, 256);
    const double c = 0.7, w = 0.6;
    const WaveFunction psi = make_gaussian(g, {c}, w, {0.0});
    EXPECT_NEAR(expectation(ObservableSpec::identity(), psi).real(), 1.0, 1e-14);
    EXPECT_NEAR(expectation(ObservableSpec::position(0), psi).real(), c, 1e-10);
    // |psi|^2 is a normal density with variance w^2
    EXPECT_NEAR(expectation(ObservableSpec::position_squared(0), psi).real(), c * c + w * w, 1e-10);
}

TEST(Expectation, MomentumOfPeriodicPlaneWave) {
    GridSpec g(1, 4.0, 64, Boundary::periodic);
    const double k = 2.0 * std::numbers::pi * 5.0 / 8.0;
    const WaveFunction f(g, sample_on_grid(g, [&](const Point& p) { return std::exp(cplx(0.0, k * p[0])); }));
    const double h = g.spacing();
    const double expected = std::pow(std::sin(k * h) / h, 2) * norm_squared(f);
    EXPECT_NEAR(expectation(ObservableSpec::momentum_squared(0), f).real(), expected, 1e-12 * expected);
}

TEST(Summarize, UnweightedMatchesHandValues) {
    std::vector<TrajectoryRecord> rs = {record({0.0, 1.0}, {{0.0}, {1.0}}), record({0.0, 1.0}, {{0.0}, {2.0}}),
                                        record({0.0, 1.0}, {{0.0}, {4.0}})};
    const auto s = summarize(rs, {"a"});
    EXPECT_EQ(s.count, 3u);
    EXPECT_EQ(s.index_of("a"), 0u);
    EXPECT_NEAR(s.mean[0][1], 7.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.variance[0][1], 7.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.std_error[0][1], std::sqrt(7.0 / 9.0), 1e-15);
    EXPECT_EQ(s.variance[0][0], 0.0);
    EXPECT_THROW(s.index_of("b"), std::out_of_range);
}

TEST(Summarize, WeightedMatchesHandValues) {
    std::vector<TrajectoryRecord> rs = {record({0.0}, {{1.0}}), record({0.0}, {{2.0}}), record({0.0}, {{4.0}})};
    const std::vector<double> w = {1.0, 1.0, 2.0};
    const auto s = summarize(rs, {"a"}, &w);
    EXPECT_TRUE(s.weighted);
    EXPECT_EQ(s.weight_sum, 4.0);
    EXPECT_NEAR(s.mean[0][0], 11.0 / 4.0, 1e-15);
    EXPECT_NEAR(s.std_error[0][0], std::sqrt(158.0) / 16.0, 1e-15);
    EXPECT_NEAR(s.variance[0][0], 2.7, 1e-14);
    const std::vector<double> bad = {1.0, 0.0, 1.0};
    EXPECT_THROW(summarize(rs, {"a"}, &bad), std::invalid_argument);
    EXPECT_THROW(summarize(rs, {"a", "b"}), std::invalid_argument);
}

TEST(Summarize, GirsanovWeightsAreNormalised) {
    std::vector<TrajectoryRecord> rs(3);
    rs[0].girsanov_weight = 0.5;
    rs[1].girsanov_weight = 1.5;
    rs[2].girsanov_weight = 2.0;
    const auto w = girsanov_weights(rs);
    EXPECT_NEAR(w[0], 0.125, 1e-15);
    EXPECT_NEAR(w[2], 0.5, 1e-15);
}

TEST(Ehrenfest, ResidualStartsAtZero) {
    GridSpec g(1, 8.0, 128);
    const auto p = make_preset("qbm-e1", {}, g);
    const auto ops = build_operators(g, p.coefficients);
    Stepper st(ops, config(1e-3));
    RunOptions opt;
    opt.sample_every = 10;
    const auto rs = run_ensemble(p.initial_state(), 0.05, st, NoiseSource(1),
                                 Dynamics::linear(), ehrenfest_observer(ObservableSpec::position_squared(0), ops), 4, 1,
                                 opt);
    const auto e = ehrenfest_residual(rs);
    ASSERT_EQ(e.times.size(), 6u);
    EXPECT_EQ(e.residual[0], 0.0);
    EXPECT_EQ(e.std_error[0], 0.0);
}

TEST(Ehrenfest, ConservedMultiplierHasVanishingIntegrand) {
    // alpha = 0, H = V: the law for A = V has a zero integrand, and the scheme keeps <V> to O(dt^2) per step
    GridSpec g(1, 8.0, 128);
    CoefficientSet co;
    co.V = ScalarField::parse("0.5*x^2");
    co.sigma = {{}};
    co.eta = {ScalarField::zero()};
    const auto ops = build_operators(g, co);
    ObservableSpec A{ObservableFactor::multiplier(ScalarField::constant(1.0)),
                     ObservableFactor::multiplier(ScalarField::parse("0.5*x^2")), "V"};
    const double dt = 1e-3;
    Stepper st(ops, config(dt));
    RunOptions opt;
    opt.sample_every = 10;
    const auto rs = run_ensemble(make_gaussian(g, {0.5}, 0.7, {0.4}), 0.1, st, NoiseSource(2), Dynamics::linear(),
                                 ehrenfest_observer(A, ops), 2, 1, opt);
    for (const auto& v : rs[0].values) EXPECT_NEAR(v[1], 0.0, 1e-14);
    const auto e = ehrenfest_residual(rs);
    EXPECT_LT(std::abs(e.residual.back()), 1e-4);
}

TEST(Ehrenfest, BathModelResidualIsStatisticallyZero) {
    GridSpec g(1, 8.0, 128);
    const auto p = make_preset("qbm-e1", {}, g);
    const auto ops = build_operators(g, p.coefficients);
    Stepper st(ops, config(1e-3));
    RunOptions opt;
    opt.sample_every = 25;
    const auto rs = run_ensemble(p.initial_state(), 0.5, st, NoiseSource(3), Dynamics::linear(),
                                 ehrenfest_observer(ObservableSpec::position_squared(0), ops), 100, 1, opt);
    const auto e = ehrenfest_residual(rs);
    for (std::size_t k = 0; k < e.times.size(); ++k) {
        EXPECT_LE(std::abs(e.residual[k]), 4.0 * e.std_error[k] + 1e-3) << "t=" << e.times[k];
    }
}

TEST(FitLine, ExactDataAndRejections) {
    const auto f = fit_line({0.0, 1.0, 2.0, 3.0}, {1.0, 3.0, 5.0, 7.0});
    EXPECT_NEAR(f.slope, 2.0, 1e-15);
    EXPECT_NEAR(f.intercept, 1.0, 1e-15);
    EXPECT_NEAR(f.slope_stderr, 0.0, 1e-15);
    // residuals (+1, -1, -1, +1) around slope 0 give stderr sqrt(4 / 2 / 5)
    const auto n = fit_line({0.0, 1.0, 2.0, 3.0}, {1.0, -1.0, -1.0, 1.0});
    EXPECT_NEAR(n.slope, 0.0, 1e-15);
    EXPECT_NEAR(n.slope_stderr, std::sqrt(0.4), 1e-15);
    EXPECT_THROW(fit_line({0.0, 1.0}, {0.0, 1.0}), std::invalid_argument);
    EXPECT_THROW(fit_line({1.0, 1.0, 1.0}, {0.0, 1.0, 2.0}), std::invalid_argument);
}

TEST(Heating, NoNoiseGivesFlatEnergy) {
    HeatingParameters hp;
    hp.eta = 0.0;
    const auto r = heating_experiment(hp, default_grid(), config(1e-3), 1.0, 50, 3, NoiseSource(4), 1);
    EXPECT_EQ(r.reference_slope, 0.0);
    EXPECT_LT(std::abs(r.fit.slope), 1e-3);
    EXPECT_EQ(r.slope_mc_stderr, 0.0);
    EXPECT_LT(r.max_imag_H, 1e-12);
}

TEST(Heating, SlopeApproachesReferenceRate) {
    HeatingParameters hp;
    hp.eta = 0.5;
    const auto r = heating_experiment(hp, default_grid(), config(1e-3), 1.0, 50, 200, NoiseSource(5), 1);
    EXPECT_DOUBLE_EQ(r.reference_slope, 0.125);
    EXPECT_NEAR(r.fit.slope, r.reference_slope, 4.0 * r.slope_mc_stderr + 0.05 * r.reference_slope);
    // the compensator is the O(dt) norm drift of the semi-implicit scheme
    EXPECT_LT(std::abs(r.mean_compensator.back()), 0.01);
    EXPECT_NEAR(r.mean_norm2.back() - 1.0, r.mean_compensator.back(), 4.0 * r.stderr_norm2.back() + 1e-12);
}

TEST(Heating, RejectsBadParameters) {
    HeatingParameters hp;
    hp.potential = "box";
    EXPECT_THROW(heating_coefficients(hp), std::invalid_argument);
    hp = HeatingParameters{};
    hp.M = 0.0;
    EXPECT_THROW(heating_coefficients(hp), std::invalid_argument);
    EXPECT_THROW(heating_experiment(HeatingParameters{}, default_grid(), config(1e-3), 1e-3, 1, 1, NoiseSource(1), 1),
                 std::invalid_argument);
}

TEST(Regularity, BoundStartsAtInitialValue) {
    GridSpec g(1, 8.0, 128);
    const auto p = make_preset("position-measurement-e2", {}, g);
    const auto ops = build_operators(g, p.coefficients);
    Stepper st(ops, config(1e-3));
    RunOptions opt;
    opt.sample_every = 10;
    const auto rs =
        run_ensemble(p.initial_state(), 0.05, st, NoiseSource(6), Dynamics::linear(), regularity_observer(ops), 3, 1, opt);
    const auto rep = regularity_monitor(rs, 2.0);
    EXPECT_EQ(rep.bound[0], rep.mean_C[0]);
    EXPECT_NEAR(rep.mean_C[0], norm_squared(ops.C.apply(0.0, p.initial_state())), 1e-12);
}

TEST(Regularity, EigenstateWithoutNoiseIsNotAViolation) {
    GridSpec g(1, 8.0, 64);
    CoefficientSet co;
    co.alpha = 1.0;
    co.V = ScalarField::parse("x^2");
    co.sigma = {{}};
    co.eta = {ScalarField::zero()};
    const auto ops = build_operators(g, co);
    const Eigen::MatrixXd Cd = test::dirichlet_operator(g, 1.0, test::sampled(g, [](double x) { return x * x; }));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Cd);
    const WaveFunction X = test::from_eigen(g, es.eigenvectors().col(0).cast<cplx>());
    Stepper st(ops, config(1e-3));
    RunOptions opt;
    opt.sample_every = 100;
    const auto rs = run_ensemble(X, 1.0, st, NoiseSource(7), Dynamics::linear(), regularity_observer(ops), 1, 1, opt);
    const auto rep = regularity_monitor(rs, 0.0);
    EXPECT_TRUE(rep.violations.empty());
    // H = C here, so |CX|^2 only shrinks through the implicit norm loss
    const double lambda = es.eigenvalues()[0];
    EXPECT_NEAR(rep.mean_C.back(), g.spacing() * lambda * lambda * std::pow(1.0 + 1e-6 * lambda * lambda, -1000.0), 1e-9);
}

TEST(Regularity, MeasurementModelStaysUnderBound) {
    const GridSpec g(1, 10.0, 256);
    const auto p = make_preset("position-measurement-e2", {}, g);
    const auto ops = build_operators(g, p.coefficients);
    std::vector<WaveFunction> samples;
    for (const auto& s : default_test_functions(g)) samples.push_back(s.sample_on(g));
    samples.push_back(p.initial_state());
    const double alpha = estimate_alpha(ops, 0.0, samples);
    ASSERT_GT(alpha, 0.0);
    Stepper st(ops, config(1e-3));
    RunOptions opt;
    opt.sample_every = 50;
    const auto rs =
        run_ensemble(p.initial_state(), 1.0, st, NoiseSource(8), Dynamics::linear(), regularity_observer(ops), 20, 1, opt);
    const auto rep = regularity_monitor(rs, alpha);
    EXPECT_TRUE(rep.violations.empty());
}

TEST(DensityEstimate, PureStateIsRankOneProjector) {
    GridSpec g(1, 4.0, 16);
    const auto f = random_wave(g, 1);
    const DensityMatrix rho = density_estimate({f});
    EXPECT_NEAR(rho.trace().real(), 1.0, 1e-14);
    EXPECT_LE((rho * rho - rho).norm(), 1e-14);
    // scaling or duplicating a state changes nothing
    EXPECT_LE((density_estimate({3.0 * f, f}) - rho).norm(), 1e-14);
}

TEST(DensityEstimate, MixtureIsHermitianPositive) {
    GridSpec g(1, 4.0, 16);
    std::vector<WaveFunction> states;
    for (std::uint64_t s = 0; s < 5; ++s) states.push_back(random_wave(g, s));
    const std::vector<double> w = {0.1, 0.2, 0.3, 0.2, 0.2};
    const DensityMatrix rho = density_estimate(states, &w);
    EXPECT_LE((rho - rho.adjoint()).norm(), 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-14);
    EXPECT_NEAR(rho.trace().real(), 1.0, 1e-14);
}

TEST(DensityEstimate, Rejections) {
    EXPECT_THROW(density_estimate({WaveFunction(GridSpec(1, 4.0, 128))}), std::invalid_argument);
    EXPECT_THROW(density_estimate({}), std::invalid_argument);
    GridSpec g(1, 4.0, 16);
    const std::vector<double> w = {1.0, 2.0};
    EXPECT_THROW(density_estimate({random_wave(g, 1)}, &w), std::invalid_argument);
}
