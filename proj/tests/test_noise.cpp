#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "qtraj/qtraj.hpp"

using namespace qtraj;

// Known-answer vectors published with the Random123 reference implementation.
TEST(Philox, KnownAnswers) {
    using C = Philox4x32::Counter;
    using K = Philox4x32::Key;
    EXPECT_EQ(Philox4x32::generate(C{0, 0, 0, 0}, K{0, 0}), (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
    EXPECT_EQ(Philox4x32::generate(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, K{0xffffffff, 0xffffffff}),
              (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
    EXPECT_EQ(Philox4x32::generate(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}),
              (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(NoiseSource, PureFunctionOfCoordinates) {
    NoiseSource a(42), b(42);
    EXPECT_EQ(a.increment(7, 0, 123, 1e-3), b.increment(7, 0, 123, 1e-3));
    // evaluation order does not matter
    const double later = a.increment(3, 1, 99, 1e-3);
    a.increment(0, 0, 0, 1e-3);
    EXPECT_EQ(a.increment(3, 1, 99, 1e-3), later);
}

TEST(NoiseSource, StreamsAreDistinct) {
    NoiseSource a(42), c(43);
    std::set<double> seen;
    for (std::uint64_t traj : {0ull, 1ull, (1ull << 32) + 1}) {
        for (std::uint32_t ch : {0u, 1u}) {
            for (std::uint64_t step : {0ull, 1ull, (1ull << 33)}) seen.insert(a.standard_normal(traj, ch, step));
        }
    }
    EXPECT_EQ(seen.size(), 18u);
    EXPECT_NE(a.standard_normal(0, 0, 0), c.standard_normal(0, 0, 0));
}

TEST(NoiseSource, IncrementMoments) {
    NoiseSource n(2024);
    const double dt = 1e-2;
    const int count = 200000;
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    for (int k = 0; k < count; ++k) {
        const double w = n.increment(static_cast<std::uint64_t>(k % 1000), 0, static_cast<std::uint64_t>(k / 1000), dt);
        s1 += w;
        s2 += w * w;
        s4 += w * w * w * w;
    }
    const double mean = s1 / count, var = s2 / count, kurt = s4 / count / (var * var);
    // 5 sigma bands of the sample moments of N(0, dt)
    EXPECT_NEAR(mean, 0.0, 5.0 * std::sqrt(dt / count));
    EXPECT_NEAR(var / dt, 1.0, 5.0 * std::sqrt(2.0 / count));
    EXPECT_NEAR(kurt, 3.0, 5.0 * std::sqrt(96.0 / count));
}

TEST(NoiseSource, SubstepsShareTheBrownianPath) {
    const double dt = 1e-3;
    NoiseSource coarse(11, 2), fine(11, 1);
    for (std::uint64_t k = 0; k < 50; ++k) {
        const double sum = fine.increment(5, 0, 2 * k, dt / 2) + fine.increment(5, 0, 2 * k + 1, dt / 2);
        EXPECT_NEAR(coarse.increment(5, 0, k, dt), sum, 1e-15);
    }
    EXPECT_THROW(NoiseSource(1, 0), std::invalid_argument);
}

TEST(ParallelMap, ResultsInIndexOrderForAnyThreadCount) {
    std::function<std::uint64_t(std::size_t)> f = [](std::size_t i) { return i * i + 1; };
    const auto ref = parallel_map<std::uint64_t>(100, 1, f);
    for (int threads : {2, 3, 8}) EXPECT_EQ(parallel_map<std::uint64_t>(100, threads, f), ref);
    EXPECT_EQ(ref[9], 82u);
}

TEST(ParallelMap, PropagatesExceptions) {
    std::function<int(std::size_t)> f = [](std::size_t i) -> int {
        if (i == 17) throw std::runtime_error("boom");
        return 0;
    };
    EXPECT_THROW(parallel_map<int>(40, 4, f), std::runtime_error);
}
