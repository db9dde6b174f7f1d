#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "qtraj/grid.hpp"

namespace qtraj {

struct SolveResult {
    int iterations = 0;
    double relative_residual = 0.0;
    bool converged = false;
};

class SolverFailure : public std::runtime_error {
public:
    SolverFailure(const std::string& method, const SolveResult& r)
        : std::runtime_error(describe(method, r)), result(r) {}
    SolveResult result;

private:
    static std::string describe(const std::string& method, const SolveResult& r) {
        std::ostringstream s;
        s << method << " did not converge: " << r.iterations << " iterations, relative residual "
          << r.relative_residual;
        return s.str();
    }
};

using LinearOperator = std::function<void(const WaveFunction&, WaveFunction&)>;

/// Conjugate gradients for Hermitian positive-definite A; x holds the initial guess.
inline SolveResult conjugate_gradient(const LinearOperator& A, const WaveFunction& b, WaveFunction& x, double tol,
                                      int max_iter) {
    const double bnorm = norm(b);
    SolveResult res;
    if (bnorm == 0.0) {
        x.fill(0.0);
        res.converged = true;
        return res;
    }
    WaveFunction r(b.grid()), ap(b.grid());
    A(x, ap);
    r = b - ap;
    WaveFunction p = r;
    double rr = norm_squared(r);
    for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
        res.relative_residual = std::sqrt(rr) / bnorm;
        if (res.relative_residual <= tol) {
            res.converged = true;
            return res;
        }
        A(p, ap);
        const cplx alpha = rr / inner_product(p, ap);
        x.axpy(alpha, p);
        r.axpy(-alpha, ap);
        const double rr_new = norm_squared(r);
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    }
    res.relative_residual = std::sqrt(rr) / bnorm;
    res.converged = res.relative_residual <= tol;
    return res;
}

/// BiCGSTAB for general non-singular A; x holds the initial guess.
inline SolveResult bicgstab(const LinearOperator& A, const WaveFunction& b, WaveFunction& x, double tol,
                            int max_iter) {
    const double bnorm = norm(b);
    SolveResult res;
    if (bnorm == 0.0) {
        x.fill(0.0);
        res.converged = true;
        return res;
    }
    const GridSpec& g = b.grid();
    WaveFunction r(g), v(g), p(g), s(g), t(g);
    A(x, v);
    r = b - v;
    const WaveFunction rhat = r;
    cplx rho = 1.0, alpha = 1.0, omega = 1.0;
    v.fill(0.0);
    for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
        res.relative_residual = norm(r) / bnorm;
        if (res.relative_residual <= tol) {
            res.converged = true;
            return res;
        }
        const cplx rho_new = inner_product(rhat, r);
        if (std::abs(rho_new) == 0.0) break;
        const cplx beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
        A(p, v);
        alpha = rho / inner_product(rhat, v);
        s = r;
        s.axpy(-alpha, v);
        if (norm(s) / bnorm <= tol) {
            x.axpy(alpha, p);
            res.relative_residual = norm(s) / bnorm;
            res.converged = true;
            ++res.iterations;
            return res;
        }
        A(s, t);
        const double tt = norm_squared(t);
        if (tt == 0.0) break;
        omega = inner_product(t, s) / tt;
        x.axpy(alpha, p);
        x.axpy(omega, s);
        r = s;
        r.axpy(-omega, t);
    }
    res.relative_residual = norm(r) / bnorm;
    res.converged = res.relative_residual <= tol;
    return res;
}

/**
 * LU factorisation with partial pivoting of a banded matrix with kl sub- and
 * ku super-diagonals. Row swaps widen the upper band to ku + kl.
 */
class BandedLU {
public:
    BandedLU(std::size_t n, int kl, int ku) : n_(n), kl_(kl), ku_(ku), width_(2 * kl + ku + 1), a_(n * width_) {}

    /// Recovers the band of a matrix-free operator from kl + ku + 1 products with comb vectors.
    static BandedLU probe(const LinearOperator& A, const GridSpec& g, int kl, int ku) {
        const std::size_t n = g.size();
        BandedLU lu(n, kl, ku);
        const std::size_t w = static_cast<std::size_t>(kl + ku + 1);
        const auto wi = static_cast<std::ptrdiff_t>(w);
        WaveFunction e(g), y(g);
        for (std::size_t s = 0; s < w; ++s) {
            e.fill(0.0);
            for (std::size_t j = s; j < n; j += w) e[j] = 1.0;
            A(e, y);
            for (std::size_t i = 0; i < n; ++i) {
                // the one column j = s (mod w) inside [i - kl, i + ku]
                const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(i) - kl;
                const std::ptrdiff_t j = lo + (((static_cast<std::ptrdiff_t>(s) - lo) % wi) + wi) % wi;
                if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
                lu.at(i, static_cast<std::size_t>(j)) = y[i];
            }
        }
        lu.factor();
        return lu;
    }

    std::size_t size() const { return n_; }

    cplx& at(std::size_t i, std::size_t j) { return a_[i * width_ + (j + kl_ - i)]; }
    cplx at(std::size_t i, std::size_t j) const { return a_[i * width_ + (j + kl_ - i)]; }

    void factor() {
        piv_.assign(n_, 0);
        const std::size_t kl = static_cast<std::size_t>(kl_), ku = static_cast<std::size_t>(ku_);
        for (std::size_t k = 0; k < n_; ++k) {
            const std::size_t last_row = std::min(n_ - 1, k + kl);
            const std::size_t last_col = std::min(n_ - 1, k + ku + kl);
            std::size_t p = k;
            double best = std::abs(at(k, k));
            for (std::size_t i = k + 1; i <= last_row; ++i) {
                if (std::abs(at(i, k)) > best) {
                    best = std::abs(at(i, k));
                    p = i;
                }
            }
            if (best == 0.0) throw std::runtime_error("banded matrix is singular");
            piv_[k] = p;
            if (p != k) {
                for (std::size_t j = k; j <= last_col; ++j) std::swap(at(k, j), at(p, j));
            }
            const cplx inv = 1.0 / at(k, k);
            for (std::size_t i = k + 1; i <= last_row; ++i) {
                const cplx l = at(i, k) * inv;
                at(i, k) = l;
                if (l == 0.0) continue;
                for (std::size_t j = k + 1; j <= last_col; ++j) at(i, j) -= l * at(k, j);
            }
        }
    }

    /// Overwrites b with the solution of A x = b.
    void solve(std::span<cplx> b) const {
        const std::size_t kl = static_cast<std::size_t>(kl_), ku = static_cast<std::size_t>(ku_);
        for (std::size_t k = 0; k < n_; ++k) {
            if (piv_[k] != k) std::swap(b[k], b[piv_[k]]);
            const std::size_t last_row = std::min(n_ - 1, k + kl);
            for (std::size_t i = k + 1; i <= last_row; ++i) b[i] -= at(i, k) * b[k];
        }
        for (std::size_t ii = n_; ii-- > 0;) {
            const std::size_t last_col = std::min(n_ - 1, ii + ku + kl);
            cplx s = b[ii];
            for (std::size_t j = ii + 1; j <= last_col; ++j) s -= at(ii, j) * b[j];
            b[ii] = s / at(ii, ii);
        }
    }

private:
    std::size_t n_;
    int kl_, ku_;
    std::size_t width_;
    std::vector<cplx> a_;
    std::vector<std::size_t> piv_;
};

}  // namespace qtraj
