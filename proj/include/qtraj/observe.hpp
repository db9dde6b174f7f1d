#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qtraj/grid.hpp"
#include "qtraj/integrate.hpp"
#include "qtraj/model.hpp"

namespace qtraj {

/// <B1 psi, B2 psi> for A = B1* B2.
inline cplx expectation(const ObservableSpec& A, const WaveFunction& psi) {
    return PreparedObservable(A, psi.grid()).pairing(psi, psi);
}

// ---------------------------------------------------------------------------
// Ensemble statistics

struct EnsembleSummary {
    std::vector<double> times;
    std::vector<std::string> names;
    std::vector<std::vector<double>> mean;      // [observable][time]
    std::vector<std::vector<double>> variance;  // [observable][time]
    std::vector<std::vector<double>> std_error;  // [observable][time]
    std::size_t count = 0;
    double weight_sum = 0.0;  // sum of raw weights (n for unweighted)
    bool weighted = false;

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) return i;
        }
        throw std::out_of_range("no observable named '" + name + "'");
    }
};

/**
 * Per-time means over records. values[k][j] of every record is observable j at
 * sample k. With weights, means are sum w v / sum w and the standard error is
 * the ratio-estimator one, sqrt(sum w^2 (v - mean)^2) / sum w.
 */
inline EnsembleSummary summarize(const std::vector<TrajectoryRecord>& records, std::vector<std::string> names,
                                 const std::vector<double>* weights = nullptr) {
    if (records.empty()) throw std::invalid_argument("summarize needs at least one record");
    EnsembleSummary s;
    s.times = records.front().times;
    s.names = std::move(names);
    s.count = records.size();
    s.weighted = weights != nullptr;
    const std::size_t nt = s.times.size();
    const std::size_t no = s.names.size();
    std::vector<double> w(records.size(), 1.0);
    if (weights) {
        if (weights->size() != records.size()) throw std::invalid_argument("one weight per record required");
        w = *weights;
        for (double x : w) {
            if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument("weights must be positive");
        }
    }
    double W = 0.0, W2 = 0.0;
    for (double x : w) {
        W += x;
        W2 += x * x;
    }
    s.weight_sum = W;
    for (const auto& r : records) {
        if (r.times.size() != nt) throw std::invalid_argument("records have different sample times");
        for (const auto& v : r.values) {
            if (v.size() != no) throw std::invalid_argument("record width differs from observable list");
        }
    }
    s.mean.assign(no, std::vector<double>(nt, 0.0));
    s.variance.assign(no, std::vector<double>(nt, 0.0));
    s.std_error.assign(no, std::vector<double>(nt, 0.0));
    const double n = static_cast<double>(records.size());
    for (std::size_t j = 0; j < no; ++j) {
        for (std::size_t k = 0; k < nt; ++k) {
            double m = 0.0;
            for (std::size_t r = 0; r < records.size(); ++r) m += w[r] * records[r].values[k][j];
            m /= W;
            double ss = 0.0, wss = 0.0;
            for (std::size_t r = 0; r < records.size(); ++r) {
                const double d = records[r].values[k][j] - m;
                ss += w[r] * d * d;
                wss += w[r] * w[r] * d * d;
            }
            s.mean[j][k] = m;
            if (weights) {
                // unbiased weighted variance (reliability weights)
                const double denom = W - W2 / W;
                s.variance[j][k] = denom > 0.0 ? ss / denom : 0.0;
                s.std_error[j][k] = std::sqrt(wss) / W;
            } else {
                s.variance[j][k] = n > 1 ? ss / (n - 1.0) : 0.0;
                s.std_error[j][k] = std::sqrt(s.variance[j][k] / n);
            }
        }
    }
    return s;
}

/// Normalised Girsanov weights |X_T|^2 / sum |X_T|^2 of linear records.
inline std::vector<double> girsanov_weights(const std::vector<TrajectoryRecord>& records) {
    std::vector<double> w;
    w.reserve(records.size());
    for (const auto& r : records) w.push_back(r.girsanov_weight);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= total;
    return w;
}

// ---------------------------------------------------------------------------
// Ehrenfest residual

/**
 * Observer recording, for A = B1* B2, the pair
 *   <X, A X>  and  <B1 X, B2 G X> + <B1 G X, B2 X> + sum_l <B1 L_l X, B2 L_l X>,
 * the second being the integrand of the mean-value evolution law.
 */
inline Observer ehrenfest_observer(const ObservableSpec& A, const OperatorSet& ops) {
    auto prepared = std::make_shared<const PreparedObservable>(A, ops.grid());
    return [prepared, ops](double t, const WaveFunction& X) {
        const WaveFunction gx = ops.G.apply(t, X);
        cplx integrand = prepared->pairing(X, gx) + prepared->pairing(gx, X);
        for (const auto& L : ops.L) {
            const WaveFunction lx = L.apply(t, X);
            integrand += prepared->pairing(lx, lx);
        }
        return std::vector<double>{prepared->pairing(X, X).real(), integrand.real()};
    };
}

struct EhrenfestSeries {
    std::vector<double> times;
    std::vector<double> mean_value;  // mean <X_t, A X_t>
    std::vector<double> residual;    // mean of per-trajectory residuals
    std::vector<double> std_error;   // its standard error
};

/**
 * residual(t) = [<X_t,AX_t> - <xi,A xi>] - int_0^t integrand ds per trajectory
 * (trapezoid on the sample grid), averaged over the ensemble. Records must
 * come from ehrenfest_observer; columns (value, integrand) start at `column`.
 */
inline EhrenfestSeries ehrenfest_residual(const std::vector<TrajectoryRecord>& records, std::size_t column = 0) {
    if (records.empty()) throw std::invalid_argument("ehrenfest_residual needs records");
    EhrenfestSeries out;
    out.times = records.front().times;
    const std::size_t nt = out.times.size();
    const double n = static_cast<double>(records.size());
    out.mean_value.assign(nt, 0.0);
    out.residual.assign(nt, 0.0);
    out.std_error.assign(nt, 0.0);
    std::vector<std::vector<double>> res(records.size(), std::vector<double>(nt, 0.0));
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& v = records[r].values;
        std::vector<double> integrand(nt);
        for (std::size_t k = 0; k < nt; ++k) integrand[k] = v[k].at(column + 1);
        double integral = 0.0;
        for (std::size_t k = 0; k < nt; ++k) {
            if (k > 0) integral += 0.5 * (out.times[k] - out.times[k - 1]) * (integrand[k] + integrand[k - 1]);
            res[r][k] = (v[k][column] - v[0][column]) - integral;
            out.mean_value[k] += v[k][column] / n;
        }
    }
    for (std::size_t k = 0; k < nt; ++k) {
        double m = 0.0;
        for (const auto& rr : res) m += rr[k];
        m /= n;
        double ss = 0.0;
        for (const auto& rr : res) ss += (rr[k] - m) * (rr[k] - m);
        out.residual[k] = m;
        out.std_error[k] = n > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear fits and the heating experiment

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;  // from the residual variance
};

inline LinearFit fit_line(const std::vector<double>& t, const std::vector<double>& y) {
    if (t.size() != y.size()) throw std::invalid_argument("fit_line: size mismatch");
    if (t.size() < 3) throw std::invalid_argument("line fit needs at least 3 sample times");
    const double n = static_cast<double>(t.size());
    const double tm = std::accumulate(t.begin(), t.end(), 0.0) / n;
    const double ym = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double stt = 0.0, sty = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        stt += (t[i] - tm) * (t[i] - tm);
        sty += (t[i] - tm) * (y[i] - ym);
    }
    if (stt == 0.0) throw std::invalid_argument("line fit needs distinct sample times");
    LinearFit f;
    f.slope = sty / stt;
    f.intercept = ym - f.slope * tm;
    double rss = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double e = y[i] - f.intercept - f.slope * t[i];
        rss += e * e;
    }
    f.slope_stderr = std::sqrt(rss / (n - 2.0) / stt);
    return f;
}

struct HeatingParameters {
    double M = 1.0;
    double omega = 1.0;
    double eta = 0.5;
    /// "harmonic" (V = M omega^2 x^2 / 2) or "gaussian-well" (V = -V0 exp(-kappa x^2))
    std::string potential = "harmonic";
    double V0 = 1.0;
    double kappa = 1.0;
};

struct HeatingResult {
    std::vector<double> times;
    std::vector<double> mean_H;
    std::vector<double> stderr_H;
    std::vector<double> mean_norm2;
    std::vector<double> stderr_norm2;
    std::vector<double> mean_compensator;    // systematic part of mean |X_t|^2 - 1
    std::vector<double> stderr_compensator;
    LinearFit fit;
    double slope_mc_stderr = 0.0;  // spread of per-trajectory slopes
    double reference_slope = 0.0;  // eta^2 / (2M)
    double max_imag_H = 0.0;
};

/// Coefficients of the fluctuating trap: sigma = 0, eta_1 = -i eta x, A = 0.
inline CoefficientSet heating_coefficients(const HeatingParameters& p) {
    if (!(p.M > 0.0)) throw std::invalid_argument("M must be positive");
    if (!(p.eta >= 0.0)) throw std::invalid_argument("eta must be non-negative");
    const Expr x = Expr::x(0);
    CoefficientSet co;
    co.dimension = 1;
    co.alpha = 1.0 / (2.0 * p.M);
    if (p.potential == "harmonic") {
        co.V = 0.5 * p.M * p.omega * p.omega * x * x;
    } else if (p.potential == "gaussian-well") {
        co.V = -p.V0 * exp(-p.kappa * x * x);
    } else {
        throw std::invalid_argument("unknown heating potential '" + p.potential + "'");
    }
    co.sigma = {{}};
    co.eta = {-I * p.eta * x};
    return co;
}

/**
 * Runs a linear ensemble and fits a line to mean <X_t, H X_t>. The slope is
 * compared with eta^2/(2M).
 */
inline HeatingResult heating_experiment(const HeatingParameters& p, const GridSpec& grid, const SchemeConfig& cfg,
                                        double T, int sample_every, std::size_t n_traj, const NoiseSource& noise,
                                        int threads, const WaveFunction* initial = nullptr) {
    if (grid.dimension() != 1) throw std::invalid_argument("heating experiment is one-dimensional");
    const std::size_t steps = step_count(T, cfg.dt, sample_every);
    if (steps / static_cast<std::size_t>(sample_every) + 1 < 3) {
        throw std::invalid_argument("heating fit needs at least 3 sample times");
    }
    const OperatorSet ops = build_operators(grid, heating_coefficients(p));
    const Stepper stepper(ops, cfg);
    double width = 1.0;
    if (p.potential == "harmonic" && p.omega != 0.0) width = 1.0 / std::sqrt(2.0 * p.M * std::abs(p.omega));
    if (p.potential == "gaussian-well") width = 1.0 / std::sqrt(2.0 * p.M * std::sqrt(2.0 * p.V0 * p.kappa / p.M));
    const WaveFunction xi = initial ? *initial : make_gaussian(grid, {0.0}, width, {0.0});

    Observer obs = [&ops](double t, const WaveFunction& X) {
        const cplx e = inner_product(X, ops.H.apply(t, X));
        return std::vector<double>{e.real(), norm_squared(X), e.imag()};
    };
    RunOptions opt;
    opt.sample_every = sample_every;
    opt.track_compensator = true;
    const auto records = run_ensemble(xi, T, stepper, noise, Dynamics::linear(), obs, n_traj, threads, opt);

    HeatingResult out;
    const auto summary = summarize(records, {"H", "norm2", "imag_H"});
    out.times = summary.times;
    out.mean_H = summary.mean[0];
    out.stderr_H = summary.std_error[0];
    out.mean_norm2 = summary.mean[1];
    out.stderr_norm2 = summary.std_error[1];
    for (const auto& r : records) {
        for (const auto& v : r.values) out.max_imag_H = std::max(out.max_imag_H, std::abs(v[2]));
    }
    const std::size_t nt = out.times.size();
    out.mean_compensator.assign(nt, 0.0);
    out.stderr_compensator.assign(nt, 0.0);
    const double n = static_cast<double>(records.size());
    for (std::size_t k = 0; k < nt; ++k) {
        double m = 0.0, ss = 0.0;
        for (const auto& r : records) m += r.compensator[k];
        m /= n;
        for (const auto& r : records) ss += (r.compensator[k] - m) * (r.compensator[k] - m);
        out.mean_compensator[k] = m;
        out.stderr_compensator[k] = n > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    }
    out.fit = fit_line(out.times, out.mean_H);
    // per-trajectory OLS slopes; their mean equals the slope of the mean
    std::vector<double> slopes;
    slopes.reserve(records.size());
    for (const auto& r : records) {
        std::vector<double> y;
        for (const auto& v : r.values) y.push_back(v[0]);
        slopes.push_back(fit_line(out.times, y).slope);
    }
    const double sm = std::accumulate(slopes.begin(), slopes.end(), 0.0) / n;
    double ss = 0.0;
    for (double s : slopes) ss += (s - sm) * (s - sm);
    out.slope_mc_stderr = n > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    out.reference_slope = p.eta * p.eta / (2.0 * p.M);
    return out;
}

// ---------------------------------------------------------------------------
// Regularity monitor

struct RegularityReport {
    std::vector<double> times;
    std::vector<double> mean_C;    // mean |C X_t|^2
    std::vector<double> stderr_C;
    std::vector<double> bound;     // exp(t a)(mean |C xi|^2 + t a mean |xi|^2)
    double alpha = 0.0;
    std::vector<std::size_t> violations;  // sample indices with mean_C > bound + 3 stderr
};

/// Observer recording |C X|^2 and |X|^2.
inline Observer regularity_observer(const OperatorSet& ops) {
    return [ops](double t, const WaveFunction& X) {
        return std::vector<double>{norm_squared(ops.C.apply(t, X)), norm_squared(X)};
    };
}

/// Records must come from regularity_observer (columns |CX|^2, |X|^2 from `column`).
inline RegularityReport regularity_monitor(const std::vector<TrajectoryRecord>& records, double alpha,
                                           std::size_t column = 0) {
    if (records.empty()) throw std::invalid_argument("regularity_monitor needs records");
    RegularityReport rep;
    rep.alpha = alpha;
    rep.times = records.front().times;
    const std::size_t nt = rep.times.size();
    const double n = static_cast<double>(records.size());
    // same summation order as the per-time means below, so the t = 0 bound equals mean_C[0] exactly
    double c0 = 0.0, n0 = 0.0;
    for (const auto& r : records) {
        c0 += r.values[0][column];
        n0 += r.values[0][column + 1];
    }
    c0 /= n;
    n0 /= n;
    for (std::size_t k = 0; k < nt; ++k) {
        double m = 0.0, ss = 0.0;
        for (const auto& r : records) m += r.values[k][column];
        m /= n;
        for (const auto& r : records) ss += (r.values[k][column] - m) * (r.values[k][column] - m);
        const double se = n > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
        const double t = rep.times[k];
        const double b = std::exp(t * alpha) * (c0 + t * alpha * n0);
        rep.mean_C.push_back(m);
        rep.stderr_C.push_back(se);
        rep.bound.push_back(b);
        if (m > b + 3.0 * se) rep.violations.push_back(k);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Density matrices

/// Dense matrix in grid-value coordinates: rho_ij = h^d sum_k w_k psi_i conj(psi_j) / sum_k w_k.
using DensityMatrix = Eigen::MatrixXcd;

inline constexpr std::size_t max_dense_size = 64;

/**
 * rho = sum_i w_i |X_i><X_i| / sum_i w_i |X_i|^2 normalised to unit trace.
 * Unit weights on normalised states give the non-linear estimate; unit weights
 * on linear states reproduce the Girsanov-weighted normalised-state density.
 */
inline DensityMatrix density_estimate(const std::vector<WaveFunction>& states,
                                      const std::vector<double>* weights = nullptr) {
    if (states.empty()) throw std::invalid_argument("density_estimate needs at least one state");
    const GridSpec& g = states.front().grid();
    const std::size_t n = g.size();
    if (n > max_dense_size) throw std::invalid_argument("density_estimate needs N^d <= 64");
    if (weights && weights->size() != states.size()) throw std::invalid_argument("one weight per state required");
    DensityMatrix rho = DensityMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::VectorXcd v(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < states.size(); ++k) {
        if (!(states[k].grid() == g)) throw std::invalid_argument("states live on different grids");
        const double w = weights ? (*weights)[k] : 1.0;
        if (!(w >= 0.0)) throw std::invalid_argument("weights must be non-negative");
        for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = states[k][i];
        rho.noalias() += (w * g.cell_volume()) * v * v.adjoint();
    }
    const cplx tr = rho.trace();
    if (!(std::abs(tr) > 0.0)) throw std::invalid_argument("density estimate has zero trace");
    rho /= tr.real();
    // enforce exact Hermiticity against round-off
    rho = 0.5 * (rho + rho.adjoint()).eval();
    return rho;
}

}  // namespace qtraj
