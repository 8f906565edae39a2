#include <gtest/gtest.h>

#include "scdd/rng.hpp"

#include <cmath>
#include <set>

using namespace scdd;

TEST(Rng, SameSeedSameSequence) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a.next_u64(), b.next_u64());
    }
}

TEST(Rng, SubstreamsDiffer) {
    auto a = Rng::substream(7, "data");
    auto b = Rng::substream(7, "split");
    auto c = Rng::substream(7, "data");
    EXPECT_NE(a.next_u64(), b.next_u64());
    EXPECT_EQ(Rng::substream(7, "data").next_u64(), c.next_u64());
}

TEST(Rng, UniformMoments) {
    Rng rng(1);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        s += u;
        s2 += u * u;
    }
    EXPECT_NEAR(s / n, 0.5, 0.005);
    EXPECT_NEAR(s2 / n - 0.25, 1.0 / 12, 0.005);
}

TEST(Rng, NormalMoments) {
    Rng rng(2);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

class PoissonMoments : public ::testing::TestWithParam<double> {};

TEST_P(PoissonMoments, MeanAndVarianceMatchRate) {
    const double rate = GetParam();
    Rng rng(3);
    const int n = 100000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        double k = static_cast<double>(rng.poisson(rate));
        s += k;
        s2 += k * k;
    }
    const double m = s / n;
    const double v = s2 / n - m * m;
    // 5 standard errors of the mean; variance to 3%.
    EXPECT_NEAR(m, rate, 5 * std::sqrt(rate / n));
    EXPECT_NEAR(v / rate, 1.0, 0.03);
}

INSTANTIATE_TEST_SUITE_P(Rates, PoissonMoments, ::testing::Values(0.05, 1.0, 4.5, 11.9, 12.0, 30.0, 250.0));

TEST(Rng, PoissonZeroRate) {
    Rng rng(4);
    EXPECT_EQ(rng.poisson(0.0), 0u);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
    Rng rng(5);
    auto s = rng.sample_without_replacement(50, 20);
    ASSERT_EQ(s.size(), 20u);
    std::set<std::size_t> uniq(s.begin(), s.end());
    EXPECT_EQ(uniq.size(), 20u);
    for (auto v : s) {
        EXPECT_LT(v, 50u);
    }
    auto all = rng.sample_without_replacement(5, 5);
    EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 5u);
}

TEST(Rng, UniformIndexCoversRange) {
    Rng rng(6);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
        hits[rng.uniform_index(7)]++;
    }
    for (int h : hits) {
        EXPECT_GT(h, 800);
    }
}
