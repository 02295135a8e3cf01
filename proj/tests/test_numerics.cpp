#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "test_util.hpp"

using namespace reducr;

namespace {

// log-softmax evaluated in long double without max-shifting, as an independent oracle.
std::vector<long double> log_softmax_oracle(const std::vector<double>& z) {
    long double top = z[0];
    for (double v : z) top = std::max<long double>(top, v);
    long double sum = 0;
    for (double v : z) sum += std::exp(static_cast<long double>(v) - top);
    std::vector<long double> out;
    for (double v : z) out.push_back(static_cast<long double>(v) - top - std::log(sum));
    return out;
}

// Best k-subset by summed score, enumerating all subsets.
std::set<std::size_t> best_subset_oracle(const std::vector<double>& scores, std::size_t k) {
    const std::size_t n = scores.size();
    double best = -1e300;
    std::set<std::size_t> arg;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
        double s = 0;
        std::set<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (1u << i)) {
                s += scores[i];
                members.insert(i);
            }
        }
        if (s > best) {
            best = s;
            arg = members;
        }
    }
    return arg;
}

}  // namespace

TEST(LogSoftmax, SymmetricPair) {
    const auto out = log_softmax(std::vector<double>{0.0, 0.0});
    EXPECT_DOUBLE_EQ(out[0], -std::log(2.0));
    EXPECT_DOUBLE_EQ(out[1], -std::log(2.0));
}

TEST(LogSoftmax, ConstantInputIsMinusLogC) {
    for (std::size_t c : {2u, 3u, 7u, 10u}) {
        const auto out = log_softmax(std::vector<double>(c, 3.5));
        for (double v : out) EXPECT_NEAR(v, -std::log(static_cast<double>(c)), 1e-15);
    }
}

TEST(LogSoftmax, LargeLogitsDoNotOverflow) {
    const std::vector<double> z{1000.0, 0.0};
    const auto out = log_softmax(z);
    const auto ref = log_softmax_oracle(z);
    EXPECT_TRUE(std::isfinite(out[0]) && std::isfinite(out[1]));
    EXPECT_NEAR(out[0], static_cast<double>(ref[0]), 1e-12);
    EXPECT_NEAR(out[1], static_cast<double>(ref[1]), 1e-9);
    EXPECT_NEAR(out[1], -1000.0, 1e-9);
}

TEST(LogSoftmax, MatchesExtendedPrecisionOracleOnRandomInputs) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> z(2 + rng.below(9));
        for (double& v : z) v = 30.0 * rng.normal();
        const auto out = log_softmax(z);
        const auto ref = log_softmax_oracle(z);
        for (std::size_t i = 0; i < z.size(); ++i) {
            EXPECT_NEAR(out[i], static_cast<double>(ref[i]), 1e-12 * (1.0 + std::abs(static_cast<double>(ref[i]))));
        }
    }
}

TEST(LogSoftmax, RejectsNonFinite) {
    EXPECT_THROW(log_softmax(std::vector<double>{0.0, NAN}), InvalidInput);
    EXPECT_THROW(log_softmax(std::vector<double>{INFINITY, 0.0}), InvalidInput);
    EXPECT_THROW(log_softmax(std::vector<double>{}), InvalidInput);
}

TEST(CrossEntropy, Examples) {
    const std::vector<double> uniform(10, -std::log(10.0));
    for (std::size_t y = 0; y < 10; ++y) EXPECT_NEAR(cross_entropy(uniform, y), 2.302585092994046, 1e-12);
    EXPECT_EQ(cross_entropy(std::vector<double>{0.0, -INFINITY}, 0), 0.0);
    EXPECT_NEAR(cross_entropy(std::vector<double>{std::log(0.7), std::log(0.3)}, 1), 1.2039728043259361, 1e-12);
    EXPECT_THROW(cross_entropy(uniform, 10), InvalidInput);
}

TEST(TopK, StrictOrdering) {
    Rng rng(1);
    const auto idx = top_k_indices(std::vector<double>{0.1, 0.9, 0.5}, 2, rng);
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()), (std::set<std::size_t>{1, 2}));
    EXPECT_EQ(idx[0], 1u);
}

TEST(TopK, RejectsOversizedK) {
    Rng rng(1);
    EXPECT_THROW(top_k_indices(std::vector<double>{1.0, 2.0}, 3, rng), InvalidInput);
    EXPECT_THROW(top_k_indices(std::vector<double>{1.0, NAN}, 1, rng), InvalidInput);
}

TEST(TopK, MatchesExhaustiveSubsetOracle) {
    Rng data(5);
    Rng rng(6);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + data.below(10);
        const std::size_t k = std::min<std::size_t>(n, 1 + data.below(4));
        std::vector<double> scores(n);
        for (double& s : scores) s = data.normal();
        const auto idx = top_k_indices(scores, k, rng);
        EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()), best_subset_oracle(scores, k));
    }
}

TEST(TopK, EightChooseThree) {
    Rng data(8);
    Rng rng(9);
    std::vector<double> scores(8);
    for (double& s : scores) s = data.uniform();
    const auto idx = top_k_indices(scores, 3, rng);
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()), best_subset_oracle(scores, 3));
}

TEST(TopK, TiesResolvedUniformly) {
    Rng rng(21);
    const std::vector<double> scores(5, 0.0);
    std::vector<int> hits(5, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) hits[top_k_indices(scores, 1, rng)[0]] += 1;
    for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 0.2, 0.01);
}

TEST(TopK, TiesOnlyAffectTheBoundary) {
    Rng rng(2);
    const std::vector<double> scores{3.0, 1.0, 1.0, 1.0, 0.0};
    for (int i = 0; i < 100; ++i) {
        const auto idx = top_k_indices(scores, 2, rng);
        EXPECT_EQ(idx[0], 0u);
        EXPECT_TRUE(idx[1] >= 1 && idx[1] <= 3);
    }
}

TEST(Rng, DeterministicAndStreamSeparated) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
    Rng s1 = Rng::derive(42, 1), s2 = Rng::derive(42, 2);
    EXPECT_NE(s1.next(), s2.next());
}

TEST(Rng, BelowIsInRangeAndRoughlyUniform) {
    Rng rng(3);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const auto v = rng.below(7);
        ASSERT_LT(v, 7u);
        hits[v] += 1;
    }
    for (int h : hits) EXPECT_NEAR(h / 70000.0, 1.0 / 7.0, 0.01);
    EXPECT_THROW(rng.below(0), InvalidInput);
}

TEST(Rng, NormalMoments) {
    Rng rng(4);
    std::vector<double> v(100000);
    for (double& x : v) x = rng.normal();
    const MeanStd m = mean_std(v);
    EXPECT_NEAR(m.mean, 0.0, 0.02);
    EXPECT_NEAR(m.std, 1.0, 0.02);
}

TEST(MeanStd, SampleConvention) {
    const MeanStd m = mean_std(std::vector<double>{0.8, 0.9});
    EXPECT_NEAR(m.mean, 0.85, 1e-15);
    EXPECT_NEAR(m.std, 0.070710678118654752, 1e-12);
    EXPECT_EQ(mean_std(std::vector<double>{0.5}).std, 0.0);
}
