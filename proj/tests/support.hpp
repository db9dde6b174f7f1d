#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qtraj/qtraj.hpp"

namespace qtraj::test {

inline WaveFunction random_wave(const GridSpec& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    WaveFunction f(g);
    for (std::size_t i = 0; i < g.size(); ++i) f[i] = {n(rng), n(rng)};
    return f;
}

/// Collects warnings for the lifetime of the object.
class WarningCapture {
public:
    WarningCapture() {
        old_ = log::set_sink([this](const std::string& m) { messages.push_back(m); });
    }
    ~WarningCapture() { log::set_sink(old_); }
    WarningCapture(const WarningCapture&) = delete;
    WarningCapture& operator=(const WarningCapture&) = delete;

    bool contains(const std::string& needle) const {
        for (const auto& m : messages) {
            if (m.find(needle) != std::string::npos) return true;
        }
        return false;
    }

    std::vector<std::string> messages;

private:
    log::Sink old_;
};

inline Eigen::VectorXcd to_eigen(const WaveFunction& f) {
    Eigen::VectorXcd v(static_cast<Eigen::Index>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) v[static_cast<Eigen::Index>(i)] = f[i];
    return v;
}

inline WaveFunction from_eigen(const GridSpec& g, const Eigen::VectorXcd& v) {
    WaveFunction f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = v[static_cast<Eigen::Index>(i)];
    return f;
}

/// Tridiagonal -a d^2/dx^2 + diag(w) on a 1D Dirichlet grid, built without the library stencils.
inline Eigen::MatrixXd dirichlet_operator(const GridSpec& g, double a, const std::vector<double>& w) {
    const int n = g.points_per_axis();
    const double h = g.spacing();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        M(i, i) = 2.0 * a / (h * h) + w[static_cast<std::size_t>(i)];
        if (i > 0) M(i, i - 1) = -a / (h * h);
        if (i + 1 < n) M(i, i + 1) = -a / (h * h);
    }
    return M;
}

inline std::vector<double> sampled(const GridSpec& g, double (*fn)(double)) {
    std::vector<double> out;
    for (int i = 0; i < g.points_per_axis(); ++i) out.push_back(fn(g.coordinate(i)));
    return out;
}

}  // namespace qtraj::test
