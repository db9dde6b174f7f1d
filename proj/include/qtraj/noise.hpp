#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace qtraj {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) {
        for (int r = 0; r < 10; ++r) {
            if (r > 0) {
                key[0] += 0x9E3779B9u;
                key[1] += 0xBB67AE85u;
            }
            ctr = round(ctr, key);
        }
        return ctr;
    }

private:
    static Counter round(const Counter& c, const Key& k) {
        const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
        const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/**
 * Wiener increments derived from (seed, trajectory, channel, step) alone, so
 * any parallel schedule reproduces the same paths.
 *
 * With substeps = s, the increment of step k over dt is the sum of the s
 * increments of fine steps k*s .. k*s+s-1 over dt/s. A run at dt with s = 2
 * and a run at dt/2 with s = 1 therefore see the same Brownian path.
 */
class NoiseSource {
public:
    explicit NoiseSource(std::uint64_t seed, int substeps = 1) : seed_(seed), substeps_(substeps) {
        if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");
    }

    std::uint64_t seed() const { return seed_; }
    int substeps() const { return substeps_; }

    /// Standard normal variate attached to one fine step.
    double standard_normal(std::uint64_t trajectory, std::uint32_t channel, std::uint64_t fine_step) const {
        const Philox4x32::Counter ctr = {static_cast<std::uint32_t>(fine_step),
                                         static_cast<std::uint32_t>(fine_step >> 32), channel,
                                         static_cast<std::uint32_t>(trajectory)};
        const Philox4x32::Key key = {static_cast<std::uint32_t>(seed_ ^ (trajectory >> 32) * 0x9E3779B97F4A7C15ull),
                                     static_cast<std::uint32_t>(seed_ >> 32)};
        const auto w = Philox4x32::generate(ctr, key);
        const double u1 = to_unit(w[0], w[1]);
        const double u2 = to_unit(w[2], w[3]);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// W(t_{k+1}) - W(t_k) for channel `channel` with t_k = k dt.
    double increment(std::uint64_t trajectory, std::uint32_t channel, std::uint64_t step, double dt) const {
        double sum = 0.0;
        const auto s = static_cast<std::uint64_t>(substeps_);
        for (std::uint64_t j = 0; j < s; ++j) sum += standard_normal(trajectory, channel, step * s + j);
        return std::sqrt(dt / substeps_) * sum;
    }

private:
    // uniform on (0, 1) with 53 random bits
    static double to_unit(std::uint32_t a, std::uint32_t b) {
        const std::uint64_t bits = ((std::uint64_t{a} << 32) | b) >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    std::uint64_t seed_;
    int substeps_;
};

}  // namespace qtraj
