#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qtraj {

using cplx = std::complex<double>;
using Point = std::array<double, 2>;

inline constexpr cplx I{0.0, 1.0};

enum class Boundary { dirichlet, periodic };

inline const char* to_string(Boundary b) {
    return b == Boundary::dirichlet ? "dirichlet" : "periodic";
}

/**
 * Uniform tensor grid on [-L, L]^d.
 *
 * Node i along an axis sits at x_i = -L + i*h with h = 2L/N, so the right
 * endpoint +L is not a node. Values are stored row-major: for d = 2 the flat
 * index is i0*N + i1 and axis 0 is the slow one.
 */
class GridSpec {
public:
    static constexpr std::size_t max_points = std::size_t{1} << 26;

    GridSpec(int dimension, double half_width, int points_per_axis,
             Boundary boundary = Boundary::dirichlet)
        : dimension_(dimension), half_width_(half_width), points_(points_per_axis),
          boundary_(boundary) {
        if (dimension != 1 && dimension != 2) {
            throw std::invalid_argument("grid dimension must be 1 or 2");
        }
        if (!(half_width > 0.0) || !std::isfinite(half_width)) {
            throw std::invalid_argument("grid half_width must be positive and finite");
        }
        if (points_per_axis < 8 || points_per_axis % 2 != 0) {
            throw std::invalid_argument("points_per_axis must be even and >= 8");
        }
        std::size_t total = 1;
        for (int a = 0; a < dimension; ++a) {
            total *= static_cast<std::size_t>(points_per_axis);
            if (total > max_points) {
                throw std::invalid_argument("grid has more than 2^26 points");
            }
        }
        size_ = total;
        spacing_ = 2.0 * half_width / points_per_axis;
    }

    int dimension() const { return dimension_; }
    double half_width() const { return half_width_; }
    int points_per_axis() const { return points_; }
    Boundary boundary() const { return boundary_; }
    double spacing() const { return spacing_; }
    std::size_t size() const { return size_; }
    /// Quadrature weight h^d.
    double cell_volume() const { return dimension_ == 1 ? spacing_ : spacing_ * spacing_; }

    double coordinate(int i) const { return -half_width_ + i * spacing_; }

    /// Flat-index stride of an axis.
    std::size_t stride(int axis) const {
        return (dimension_ == 2 && axis == 0) ? static_cast<std::size_t>(points_) : 1;
    }

    std::array<int, 2> indices(std::size_t flat) const {
        if (dimension_ == 1) return {static_cast<int>(flat), 0};
        return {static_cast<int>(flat / points_), static_cast<int>(flat % points_)};
    }

    Point position(std::size_t flat) const {
        auto idx = indices(flat);
        if (dimension_ == 1) return {coordinate(idx[0]), 0.0};
        return {coordinate(idx[0]), coordinate(idx[1])};
    }

    double radius_squared(std::size_t flat) const {
        Point p = position(flat);
        return p[0] * p[0] + p[1] * p[1];
    }

    bool operator==(const GridSpec&) const = default;

private:
    int dimension_;
    double half_width_;
    int points_;
    Boundary boundary_;
    std::size_t size_ = 0;
    double spacing_ = 0.0;
};

/// Complex amplitudes on a grid; a plain value type.
class WaveFunction {
public:
    explicit WaveFunction(const GridSpec& grid) : grid_(grid), data_(grid.size()) {}

    WaveFunction(const GridSpec& grid, std::vector<cplx> amplitudes)
        : grid_(grid), data_(std::move(amplitudes)) {
        if (data_.size() != grid_.size()) {
            throw std::invalid_argument("amplitude vector length does not match grid");
        }
    }

    const GridSpec& grid() const { return grid_; }
    std::size_t size() const { return data_.size(); }

    cplx& operator[](std::size_t i) { return data_[i]; }
    const cplx& operator[](std::size_t i) const { return data_[i]; }

    std::span<cplx> values() { return data_; }
    std::span<const cplx> values() const { return data_; }
    const std::vector<cplx>& vector() const { return data_; }

    bool all_finite() const {
        for (const auto& v : data_) {
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
        }
        return true;
    }

    WaveFunction& operator+=(const WaveFunction& o) {
        check_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    WaveFunction& operator-=(const WaveFunction& o) {
        check_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    WaveFunction& operator*=(cplx s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    /// this += s * o
    void axpy(cplx s, const WaveFunction& o) {
        check_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    }

    void fill(cplx v) { std::fill(data_.begin(), data_.end(), v); }

    void check_same(const WaveFunction& o) const {
        if (!(grid_ == o.grid_)) throw std::invalid_argument("wavefunctions live on different grids");
    }

    bool operator==(const WaveFunction&) const = default;

private:
    GridSpec grid_;
    std::vector<cplx> data_;
};

inline WaveFunction operator+(WaveFunction a, const WaveFunction& b) { return a += b; }
inline WaveFunction operator-(WaveFunction a, const WaveFunction& b) { return a -= b; }
inline WaveFunction operator*(cplx s, WaveFunction a) { return a *= s; }

/// <f, g> = h^d sum conj(f_i) g_i, antilinear in the first slot.
inline cplx inner_product(const WaveFunction& f, const WaveFunction& g) {
    f.check_same(g);
    cplx acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) acc += std::conj(f[i]) * g[i];
    return acc * f.grid().cell_volume();
}

inline double norm_squared(const WaveFunction& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) acc += std::norm(f[i]);
    return acc * f.grid().cell_volume();
}

inline double norm(const WaveFunction& f) { return std::sqrt(norm_squared(f)); }

namespace detail {

inline void check_axis(const GridSpec& g, int axis) {
    if (axis < 0 || axis >= g.dimension()) {
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for d=" +
                                    std::to_string(g.dimension()));
    }
}

}  // namespace detail

/// Central difference (f[i+1] - f[i-1]) / 2h along `axis` (0-based), written into out.
inline void apply_derivative_into(const WaveFunction& f, int axis, WaveFunction& out) {
    const GridSpec& g = f.grid();
    detail::check_axis(g, axis);
    const double c = 0.5 / g.spacing();
    const int n = g.points_per_axis();
    const std::size_t s = g.stride(axis);
    const bool periodic = g.boundary() == Boundary::periodic;
    auto src = f.values();
    auto dst = out.values();
    const std::size_t lines = g.size() / static_cast<std::size_t>(n);
    for (std::size_t line = 0; line < lines; ++line) {
        // Start offset of the line along `axis`.
        std::size_t base = (s == 1) ? line * n : line;
        for (int i = 0; i < n; ++i) {
            const std::size_t k = base + static_cast<std::size_t>(i) * s;
            cplx right = (i + 1 < n) ? src[k + s] : (periodic ? src[base] : cplx{});
            cplx left = (i > 0) ? src[k - s] : (periodic ? src[base + (n - 1) * s] : cplx{});
            dst[k] = c * (right - left);
        }
    }
}

inline WaveFunction apply_derivative(const WaveFunction& f, int axis) {
    WaveFunction out(f.grid());
    apply_derivative_into(f, axis, out);
    return out;
}

/// Compact second difference (f[i+1] - 2 f[i] + f[i-1]) / h^2 along one axis, added to out.
inline void add_second_difference(const WaveFunction& f, int axis, cplx scale, WaveFunction& out) {
    const GridSpec& g = f.grid();
    detail::check_axis(g, axis);
    const double c = 1.0 / (g.spacing() * g.spacing());
    const int n = g.points_per_axis();
    const std::size_t s = g.stride(axis);
    const bool periodic = g.boundary() == Boundary::periodic;
    auto src = f.values();
    auto dst = out.values();
    const std::size_t lines = g.size() / static_cast<std::size_t>(n);
    const cplx w = scale * c;
    for (std::size_t line = 0; line < lines; ++line) {
        std::size_t base = (s == 1) ? line * n : line;
        for (int i = 0; i < n; ++i) {
            const std::size_t k = base + static_cast<std::size_t>(i) * s;
            cplx right = (i + 1 < n) ? src[k + s] : (periodic ? src[base] : cplx{});
            cplx left = (i > 0) ? src[k - s] : (periodic ? src[base + (n - 1) * s] : cplx{});
            dst[k] += w * (right - 2.0 * src[k] + left);
        }
    }
}

inline void apply_laplacian_into(const WaveFunction& f, WaveFunction& out) {
    out.fill(0.0);
    for (int a = 0; a < f.grid().dimension(); ++a) add_second_difference(f, a, 1.0, out);
}

inline WaveFunction apply_laplacian(const WaveFunction& f) {
    WaveFunction out(f.grid());
    apply_laplacian_into(f, out);
    return out;
}

inline void check_field(std::span<const cplx> phi, std::size_t n) {
    if (phi.size() != n) throw std::invalid_argument("sampled field length does not match grid");
    for (const auto& v : phi) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
            throw std::invalid_argument("sampled field contains a non-finite value");
        }
    }
}

/// Pointwise product phi_i * f_i.
inline WaveFunction apply_multiplier(const WaveFunction& f, std::span<const cplx> phi) {
    check_field(phi, f.size());
    WaveFunction out(f.grid());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = phi[i] * f[i];
    return out;
}

/// Samples a function of position at every node.
inline std::vector<cplx> sample_on_grid(const GridSpec& g,
                                        const std::function<cplx(const Point&)>& fn) {
    std::vector<cplx> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = fn(g.position(i));
    return out;
}

/**
 * Normalised discrete Gaussian exp(-|x-c|^2/(4w^2) + i p.x).
 *
 * Rejects packets whose 4w support reaches the box edge.
 */
inline WaveFunction make_gaussian(const GridSpec& g, std::span<const double> center, double width,
                                  std::span<const double> momentum) {
    const int d = g.dimension();
    if (static_cast<int>(center.size()) != d || static_cast<int>(momentum.size()) != d) {
        throw std::invalid_argument("gaussian center/momentum must have d components");
    }
    if (!(width > 0.0)) throw std::invalid_argument("gaussian width must be positive");
    double c2 = 0.0;
    for (double c : center) c2 += c * c;
    const double reach = std::sqrt(c2) + 4.0 * width;
    if (!(reach < g.half_width())) {
        std::ostringstream msg;
        msg << "gaussian support |c| + 4w = " << reach << " reaches the box edge L = "
            << g.half_width();
        throw std::invalid_argument(msg.str());
    }
    WaveFunction out(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        Point x = g.position(i);
        double r2 = 0.0;
        double phase = 0.0;
        for (int a = 0; a < d; ++a) {
            r2 += (x[a] - center[a]) * (x[a] - center[a]);
            phase += momentum[a] * x[a];
        }
        out[i] = std::exp(-r2 / (4.0 * width * width)) * std::polar(1.0, phase);
    }
    out *= 1.0 / norm(out);
    return out;
}

inline WaveFunction make_gaussian(const GridSpec& g, std::initializer_list<double> center,
                                  double width, std::initializer_list<double> momentum) {
    std::vector<double> c(center), p(momentum);
    return make_gaussian(g, std::span<const double>(c), width, std::span<const double>(p));
}

/// h^d sum |f_i|^2 over nodes with any coordinate beyond L - margin in magnitude.
inline double boundary_mass(const WaveFunction& f, double margin) {
    const GridSpec& g = f.grid();
    if (!(margin > 0.0 && margin < g.half_width())) {
        throw std::invalid_argument("boundary margin must lie in (0, L)");
    }
    const double edge = g.half_width() - margin;
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        Point x = g.position(i);
        bool outside = std::abs(x[0]) > edge || (g.dimension() == 2 && std::abs(x[1]) > edge);
        if (outside) acc += std::norm(f[i]);
    }
    return acc * g.cell_volume();
}

}  // namespace qtraj
