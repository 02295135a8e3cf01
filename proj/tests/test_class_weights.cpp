#include <cmath>
#include <numeric>

#include "test_util.hpp"

using namespace reducr;

namespace {

void expect_on_simplex(const ClassWeights& w) {
    double sum = 0.0;
    for (double v : w.values()) {
        EXPECT_GE(v, 0.0);
        sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
}

LossTable one_point(double target, std::vector<double> experts) {
    LossTable t;
    t.target = {target};
    for (double e : experts) t.experts.push_back({e});
    return t;
}

}  // namespace

TEST(ClassWeights, UniformInit) {
    for (double v : init_weights(10).values()) EXPECT_NEAR(v, 0.1, 1e-15);
    const auto two = init_weights(2).values();
    EXPECT_NEAR(two[0], 0.5, 1e-15);
    EXPECT_NEAR(two[1], 0.5, 1e-15);
    expect_on_simplex(init_weights(7));
    EXPECT_THROW(init_weights(1), InvalidInput);
}

TEST(ClassWeights, FromValuesValidates) {
    EXPECT_THROW(ClassWeights::from_values(std::vector<double>{0.5, 0.6}), InvalidInput);
    EXPECT_THROW(ClassWeights::from_values(std::vector<double>{1.5, -0.5}), InvalidInput);
    const auto w = ClassWeights::from_values(std::vector<double>{0.25, 0.75});
    EXPECT_NEAR(w[1], 0.75, 1e-15);
}

TEST(UpdateWeights, HandComputedTwoClass) {
    const auto w = update_weights(init_weights(2), std::vector<double>{0.0, std::log(2.0)}, 1.0);
    EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-12);
}

TEST(UpdateWeights, EtaZeroIsIdentity) {
    const auto w0 = ClassWeights::from_values(std::vector<double>{0.1, 0.2, 0.7});
    const auto w1 = update_weights(w0, std::vector<double>{5.0, -3.0, 100.0}, 0.0);
    EXPECT_EQ(w1.values(), w0.values());
}

TEST(UpdateWeights, EqualAlphaLeavesWeightsUnchanged) {
    const auto w0 = ClassWeights::from_values(std::vector<double>{0.1, 0.2, 0.7});
    const auto w1 = update_weights(w0, std::vector<double>{3.0, 3.0, 3.0}, 0.5);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(w1[c], w0[c], 1e-15);
}

TEST(UpdateWeights, SimplexPreservedUnderRandomUpdates) {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t C = 2 + rng.below(12);
        ClassWeights w = init_weights(C);
        const double eta = std::pow(10.0, -4.0 + 4.0 * rng.uniform());
        for (int t = 0; t < 500; ++t) {
            std::vector<double> alpha(C);
            for (double& a : alpha) a = 20.0 * rng.normal();
            w = update_weights(w, alpha, eta);
            expect_on_simplex(w);
        }
    }
}

TEST(UpdateWeights, TelescopesToClosedForm) {
    // w_T proportional to w_0 * exp(-eta * sum_t alpha_t).
    Rng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t C = 2 + rng.below(8);
        const double eta = 0.01 + 0.1 * rng.uniform();
        ClassWeights w = init_weights(C);
        std::vector<long double> total(C, 0.0L);
        for (int t = 0; t < 300; ++t) {
            std::vector<double> alpha(C);
            for (std::size_t c = 0; c < C; ++c) {
                alpha[c] = rng.normal();
                total[c] += alpha[c];
            }
            w = update_weights(w, alpha, eta);
        }
        long double top = -1e300L;
        for (auto s : total) top = std::max(top, -eta * s);
        long double norm = 0.0L;
        for (auto s : total) norm += std::exp(-eta * s - top);
        for (std::size_t c = 0; c < C; ++c) {
            const double expected = static_cast<double>(std::exp(-eta * total[c] - top) / norm);
            EXPECT_NEAR(w[c], expected, 1e-9);
        }
    }
}

TEST(UpdateWeights, LongRunsKeepSmallClassesRecoverable) {
    ClassWeights w = init_weights(3);
    for (int t = 0; t < 2000; ++t) w = update_weights(w, std::vector<double>{0.0, 10.0, 0.0}, 1.0);
    EXPECT_TRUE(std::isfinite(w.log_values()[1]));
    for (int t = 0; t < 4000; ++t) w = update_weights(w, std::vector<double>{10.0, 0.0, 10.0}, 1.0);
    EXPECT_GT(w[1], 0.99);
}

TEST(UpdateWeights, NonFiniteUpdateRaisesNumericError) {
    EXPECT_THROW(update_weights(init_weights(2), std::vector<double>{1e308, 0.0}, 10.0), NumericError);
    EXPECT_THROW(update_weights(init_weights(2), std::vector<double>{NAN, 0.0}, 1.0), NumericError);
    EXPECT_THROW(update_weights(init_weights(2), std::vector<double>{0.0}, 1.0), InvalidInput);
}

TEST(Alpha, HandExamples) {
    const ExcessTerms terms;
    const std::vector<std::size_t> sel{0};
    EXPECT_NEAR(compute_alpha(one_point(2.0, {0.5}), sel, std::vector<double>{0.7}, terms)[0], 0.8, 1e-15);
    EXPECT_NEAR(compute_alpha(one_point(0.3, {0.9}), sel, std::vector<double>{0.7}, terms)[0], -0.7, 1e-15);
    ExcessTerms raw;
    raw.clip = false;
    EXPECT_NEAR(compute_alpha(one_point(0.3, {0.9}), sel, std::vector<double>{0.7}, raw)[0], -1.3, 1e-15);
    const auto empty = compute_alpha(one_point(0.3, {0.9, 0.1}), {}, std::vector<double>{0.7, 0.2}, terms);
    EXPECT_EQ(empty, (std::vector<double>{-0.7, -0.2}));
}

TEST(Alpha, SumsOverSelectedAndHonoursAblations) {
    LossTable t;
    t.target = {1.0, 2.0, 3.0};
    t.experts = {{0.5, 2.5, 1.0}, {0.0, 0.0, 4.0}};
    const std::vector<std::size_t> sel{0, 2};
    const std::vector<double> hold{0.3, 0.6};
    ExcessTerms terms;
    auto alpha = compute_alpha(t, sel, hold, terms);
    EXPECT_NEAR(alpha[0], (0.5 + 2.0) - 0.3, 1e-15);
    EXPECT_NEAR(alpha[1], (1.0 + 0.0) - 0.6, 1e-15);
    terms.holdout_loss = false;
    alpha = compute_alpha(t, sel, hold, terms);
    EXPECT_NEAR(alpha[0], 2.5, 1e-15);
    terms = {};
    terms.model_loss = false;  // max(0, -expert) is always 0
    alpha = compute_alpha(t, sel, hold, terms);
    EXPECT_NEAR(alpha[0], -0.3, 1e-15);
    terms = {};
    terms.expert_loss = false;
    alpha = compute_alpha(t, sel, hold, terms);
    EXPECT_NEAR(alpha[1], 4.0 - 0.6, 1e-15);
    EXPECT_THROW(compute_alpha(t, sel, std::vector<double>{0.3}, ExcessTerms{}), InvalidInput);
}

TEST(Tracker, FullRefreshMatchesEvaluate) {
    const DataPool pool = reducr::testing::small_pool();
    const WeightedBatch holdout = pool.split_batch(Split::holdout);
    const auto groups = SuperclassMap::identity(4);
    HoldoutLossTracker tracker(HoldoutLossTracker::Mode::full, 4);
    const LearnerState zero = init_learner(Architecture::softmax(pool.dim, 4), 0);
    tracker = refresh_holdout_full(tracker, zero, holdout, groups);
    for (double v : tracker.values()) EXPECT_NEAR(v, std::log(4.0), 1e-12);

    Rng rng(2);
    LearnerState s = zero;
    for (double& p : s.params) p = rng.normal();
    tracker = refresh_holdout_full(tracker, s, holdout, groups);
    const Evaluation ev = evaluate(s, holdout);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(tracker[c], *ev.mean_loss[c]);
    EXPECT_EQ(tracker.refreshes(), 2u);
}

TEST(Tracker, PerfectTargetHasNearZeroLoss) {
    WeightedBatch b;
    b.dim = 2;
    b.push_back(std::vector<double>{1.0, 0.0}, 0);
    b.push_back(std::vector<double>{0.0, 1.0}, 1);
    LearnerState s = init_learner(Architecture::softmax(2, 2), 0);
    s.params = {40.0, 0.0, 0.0, 40.0, 0.0, 0.0};
    HoldoutLossTracker tracker(HoldoutLossTracker::Mode::full, 2);
    tracker = refresh_holdout_full(tracker, s, b, SuperclassMap::identity(2));
    for (double v : tracker.values()) EXPECT_LT(v, 1e-12);
}

TEST(Tracker, EmptyClassInHoldoutIsAnError) {
    WeightedBatch b;
    b.dim = 1;
    b.push_back(std::vector<double>{1.0}, 0);
    const LearnerState s = init_learner(Architecture::softmax(1, 2), 0);
    HoldoutLossTracker tracker(HoldoutLossTracker::Mode::full, 2);
    EXPECT_THROW(refresh_holdout_full(tracker, s, b, SuperclassMap::identity(2)), InvalidInput);
}

TEST(Tracker, EwmaTwoStepHandValues) {
    HoldoutLossTracker t(HoldoutLossTracker::Mode::ewma, 1, 0.9);
    t.fold({1.0});
    EXPECT_NEAR(t[0], 1.0, 1e-12);
    t.fold({2.0});
    // raw = 0.9 * 0.1 + 0.1 * 2 = 0.29; debiased 0.29 / (1 - 0.81).
    EXPECT_NEAR(t[0], 0.29 / 0.19, 1e-12);
    EXPECT_NEAR(t[0], 1.526315789473684, 1e-12);
}

TEST(Tracker, EwmaDecayZeroIsLatestBatchMean) {
    HoldoutLossTracker t(HoldoutLossTracker::Mode::ewma, 2, 0.0);
    t.fold({0.3, 1.7});
    t.fold({2.5, 0.125});
    EXPECT_EQ(t[0], 2.5);
    EXPECT_EQ(t[1], 0.125);
}

TEST(Tracker, EwmaConstantMeansAreAFixedPoint) {
    for (double a : {0.5, 0.9, 0.99}) {
        HoldoutLossTracker t(HoldoutLossTracker::Mode::ewma, 1, a);
        for (int n = 0; n < 50; ++n) {
            t.fold({0.75});
            EXPECT_NEAR(t[0], 0.75, 1e-12);
        }
    }
}

TEST(Tracker, EwmaDecayOneIsRunningMean) {
    HoldoutLossTracker t(HoldoutLossTracker::Mode::ewma, 1, 1.0);
    t.fold({1.0});
    t.fold({2.0});
    t.fold({6.0});
    EXPECT_NEAR(t[0], 3.0, 1e-15);
}

TEST(Tracker, EwmaAbsentGroupKeepsValueAndCount) {
    HoldoutLossTracker t(HoldoutLossTracker::Mode::ewma, 2, 0.9);
    t.fold({1.0, 4.0});
    t.fold({std::nullopt, 2.0});
    EXPECT_NEAR(t[0], 1.0, 1e-12);
    t.fold({2.0, std::nullopt});
    // group 0 has seen two updates: same as the two-step hand value.
    EXPECT_NEAR(t[0], 0.29 / 0.19, 1e-12);
    EXPECT_THROW(HoldoutLossTracker(HoldoutLossTracker::Mode::ewma, 2, 1.5), InvalidInput);
}

TEST(Tracker, EwmaRefreshSamplesHoldout) {
    const DataPool pool = reducr::testing::small_pool();
    const LearnerState zero = init_learner(Architecture::softmax(pool.dim, 4), 0);
    HoldoutLossTracker t(HoldoutLossTracker::Mode::ewma, 4, 0.9);
    Rng rng(1);
    t = refresh_holdout_ewma(t, zero, pool.split_batch(Split::holdout), 64, SuperclassMap::identity(4), rng);
    for (double v : t.values()) EXPECT_NEAR(v, std::log(4.0), 1e-12);
}
