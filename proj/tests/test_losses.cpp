#include "support.hpp"

#include "tempoc/errors.hpp"
#include "tempoc/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace tempoc;
using tempoc::testing::FixedFlowEstimator;
using tempoc::testing::LinearFlowEstimator;
using tempoc::testing::loop_gradient;
using tempoc::testing::masked_pair_oracle;
using tempoc::testing::reference_warp;

namespace {

constexpr double kAlpha = 50.0;

torch::Tensor rand64(std::vector<int64_t> sizes)
{
    return torch::rand(sizes, torch::kFloat64);
}

}  // namespace

TEST(ConstancyPairs, EnumeratesAllLongRangePairs)
{
    for (int64_t frames = 2; frames <= 9; ++frames) {
        std::set<std::pair<int64_t, int64_t>> brute;
        for (int64_t p = 0; p < frames; ++p)
            for (int64_t t = 0; t < frames; ++t)
                if (t - p >= 2)
                    brute.insert({p, t});
        auto pairs = losses::constancy_pairs(frames);
        EXPECT_EQ((std::set<std::pair<int64_t, int64_t>>(pairs.begin(), pairs.end())), brute);
        EXPECT_EQ(static_cast<int64_t>(pairs.size()), (frames - 1) * (frames - 2) / 2);
    }
}

TEST(ConstancyLoss, MatchesBruteForceEnumerationOnFourFrames)
{
    torch::manual_seed(21);
    LinearFlowEstimator est(3);
    est.to(torch::kFloat64);
    auto raw = rand64({4, 3, 8, 8});
    auto out = rand64({4, 3, 8, 8});
    double oracle = 0.0;
    for (int64_t p = 0; p < 4; ++p)
        for (int64_t t = p + 2; t < 4; ++t)
            oracle += masked_pair_oracle(out, raw, est, p, t, t, kAlpha);
    auto value = losses::loss_constancy(out, raw, est, kAlpha).item<double>();
    EXPECT_NEAR(value, oracle, 1e-6);
}

TEST(ConstancyLoss, LiteralModeUsesPreviousFrameFlow)
{
    torch::manual_seed(22);
    LinearFlowEstimator est(4);
    est.to(torch::kFloat64);
    auto raw = rand64({4, 3, 8, 8});
    auto out = rand64({4, 3, 8, 8});
    double oracle = 0.0;
    for (int64_t p = 0; p < 4; ++p)
        for (int64_t t = p + 2; t < 4; ++t)
            oracle += masked_pair_oracle(out, raw, est, p, t, t - 1, kAlpha);
    auto literal =
        losses::loss_constancy(out, raw, est, kAlpha, 0, 0, losses::ConstancyFlowMode::literal).item<double>();
    EXPECT_NEAR(literal, oracle, 1e-6);
    EXPECT_NE(literal, losses::loss_constancy(out, raw, est, kAlpha).item<double>());
}

TEST(ConstancyLoss, SubsamplingIsRescaledAndUnbiased)
{
    torch::manual_seed(23);
    LinearFlowEstimator est(5);
    est.to(torch::kFloat64);
    auto raw = rand64({5, 3, 8, 8});
    auto out = rand64({5, 3, 8, 8});
    const auto pairs = losses::constancy_pairs(5);  // 6 pairs
    std::vector<double> per_pair;
    for (const auto& pr : pairs)
        per_pair.push_back(losses::constancy_over_pairs(out, raw, est, kAlpha, {pr}).item<double>());
    double full = 0.0;
    for (double v : per_pair)
        full += v;
    EXPECT_NEAR(losses::loss_constancy(out, raw, est, kAlpha).item<double>(), full, 1e-9);

    double mean = 0.0;
    const int draws = 400;
    for (int s = 0; s < draws; ++s) {
        const double v = losses::loss_constancy(out, raw, est, kAlpha, 2, static_cast<uint64_t>(s)).item<double>();
        // Every draw is 3 x (sum of two distinct per-pair values).
        bool matched = false;
        for (size_t i = 0; i < per_pair.size() && !matched; ++i)
            for (size_t j = i + 1; j < per_pair.size() && !matched; ++j)
                matched = std::abs(v - 3.0 * (per_pair[i] + per_pair[j])) < 1e-9;
        EXPECT_TRUE(matched);
        mean += v / draws;
    }
    EXPECT_NEAR(mean, full, 0.1 * full);
}

TEST(ReconstructionLoss, HandComputedTwoByTwo)
{
    flow::ZeroFlowEstimator zero;
    auto raw = torch::zeros({2, 3, 2, 2}, torch::kFloat64);
    raw[1][0][0][0] = 0.1;  // e^2 = 0.01 -> mask exp(-0.5)
    auto out = torch::zeros({2, 3, 2, 2}, torch::kFloat64);
    out[1].index_put_({torch::indexing::Slice(), 0, 0}, 0.2);  // L1 0.6 at (0, 0)
    out[1][0][0][1] = 0.1;
    out[1][0][1][0] = 0.1;
    out[1][0][1][1] = 0.1;
    const double expected = (std::exp(-0.5) * 0.6 + 3 * 0.1) / 4.0;
    EXPECT_NEAR(losses::loss_reconstruction(out, raw, zero, kAlpha).item<double>(), expected, 1e-12);
    EXPECT_NEAR(expected, 0.1659795, 1e-6);
}

TEST(ReconstructionLoss, MatchesScalarOracleWithLearnedFlow)
{
    torch::manual_seed(24);
    LinearFlowEstimator est(6);
    est.to(torch::kFloat64);
    auto raw = rand64({3, 3, 8, 8});
    auto out = rand64({3, 3, 8, 8});
    const double oracle =
        masked_pair_oracle(out, raw, est, 0, 1, 1, kAlpha) + masked_pair_oracle(out, raw, est, 1, 2, 2, kAlpha);
    EXPECT_NEAR(losses::loss_reconstruction(out, raw, est, kAlpha).item<double>(), oracle, 1e-9);
}

TEST(FlowGradientLoss, MatchesCompositionalOracle)
{
    torch::manual_seed(25);
    LinearFlowEstimator est(7);
    est.to(torch::kFloat64);
    auto raw = rand64({3, 3, 8, 8});
    auto out = rand64({3, 3, 8, 8});
    double oracle = 0.0;
    {
        torch::NoGradGuard no_grad;
        for (int64_t t = 1; t < 3; ++t) {
            auto fo = est.estimate(out[t].unsqueeze(0), out[t - 1].unsqueeze(0))[0];
            auto fi = est.estimate(raw[t].unsqueeze(0), raw[t - 1].unsqueeze(0))[0];
            oracle += (loop_gradient(fo) - loop_gradient(fi)).abs().sum(0).mean().item<double>();
        }
    }
    EXPECT_NEAR(losses::loss_flow_gradient(out, raw, est).item<double>(), oracle, 1e-9);
}

TEST(FlowGradientLoss, ZeroWhenOutputMotionMatchesRaw)
{
    torch::manual_seed(26);
    LinearFlowEstimator est(8);
    auto raw = torch::rand({3, 3, 8, 8});
    EXPECT_EQ(losses::loss_flow_gradient(raw, raw, est).item<double>(), 0.0);
    // Constant flow offsets have zero spatial gradient.
    auto flow = torch::zeros({1, 2, 8, 8});
    flow.select(1, 0).fill_(2.0);
    FixedFlowEstimator fixed(flow);
    EXPECT_EQ(losses::loss_flow_gradient(torch::rand({3, 3, 8, 8}), raw, fixed).item<double>(), 0.0);
    EXPECT_EQ(losses::flow_gradient_distance(flow, torch::zeros_like(flow), losses::FlowMatchMode::raw_flow)
                  .item<double>(),
              2.0);
}

TEST(PerceptualLoss, IdentityFeaturesGiveMeanAbsoluteDifference)
{
    torch::manual_seed(27);
    features::IdentityFeatures id;
    auto out = rand64({4, 3, 8, 8});
    auto proc = rand64({4, 3, 8, 8});
    double oracle = 0.0;
    for (int64_t t = 1; t < 4; ++t)
        oracle += (out[t] - proc[t]).abs().mean().item<double>();
    EXPECT_NEAR(losses::loss_perceptual(out, proc, id).item<double>(), oracle, 1e-12);
}

TEST(TotalLoss, EqualsLambdaWeightedRecomposition)
{
    torch::manual_seed(28);
    LinearFlowEstimator est(9);
    est.to(torch::kFloat64);
    auto feats = features::make_feature_extractor("random_conv", "", 3);
    feats->to(torch::kFloat64);
    auto raw = rand64({2, 5, 3, 8, 8});
    auto proc = rand64({2, 5, 3, 8, 8});
    auto out = rand64({2, 5, 3, 8, 8});
    losses::LossWeights w{0.7, 1.3, 0.25, 2.0, kAlpha};
    auto report = losses::total_loss(out, raw, proc, est, *feats, w);
    const double fg = losses::loss_flow_gradient(out, raw, est).item<double>();
    const double rec = losses::loss_reconstruction(out, raw, est, kAlpha).item<double>();
    const double p = losses::loss_perceptual(out, proc, *feats).item<double>();
    const double c = losses::loss_constancy(out, raw, est, kAlpha).item<double>();
    EXPECT_NEAR(report.terms[0], fg, 1e-9);
    EXPECT_NEAR(report.terms[1], rec, 1e-9);
    EXPECT_NEAR(report.terms[2], p, 1e-9);
    EXPECT_NEAR(report.terms[3], c, 1e-9);
    EXPECT_NEAR(report.total, 0.7 * fg + 1.3 * rec + 0.25 * p + 2.0 * c, 1e-6);
    EXPECT_NEAR(report.total_tensor.item<double>(), report.total, 1e-12);
}

TEST(TotalLoss, DisabledTermsAreExcluded)
{
    torch::manual_seed(29);
    LinearFlowEstimator est(10);
    features::IdentityFeatures id;
    auto raw = torch::rand({4, 3, 8, 8});
    auto out = torch::rand({4, 3, 8, 8});
    losses::LossOptions options;
    options.use_flow_gradient = false;
    options.use_constancy = false;
    auto report = losses::total_loss(out, raw, raw, est, id, {}, options);
    EXPECT_FALSE(report.enabled[0]);
    EXPECT_FALSE(report.enabled[3]);
    EXPECT_EQ(report.terms[0], 0.0);
    EXPECT_NEAR(report.total, report.terms[1] + 0.1 * report.terms[2], 1e-6);
}

TEST(TotalLoss, BatchIsAveragedPerClip)
{
    torch::manual_seed(30);
    LinearFlowEstimator est(11);
    est.to(torch::kFloat64);
    features::IdentityFeatures id;
    auto raw = rand64({2, 4, 3, 8, 8});
    auto out = rand64({2, 4, 3, 8, 8});
    auto both = losses::total_loss(out, raw, raw, est, id, {}).total;
    auto a = losses::total_loss(out[0], raw[0], raw[0], est, id, {}).total;
    auto b = losses::total_loss(out[1], raw[1], raw[1], est, id, {}).total;
    EXPECT_NEAR(both, 0.5 * (a + b), 1e-9);
}

TEST(TotalLoss, OnlyOutputsReceiveGradient)
{
    torch::manual_seed(31);
    LinearFlowEstimator est(12);
    est.to(torch::kFloat64);
    features::IdentityFeatures id;
    auto raw = rand64({4, 3, 8, 8}).requires_grad_(true);
    auto proc = rand64({4, 3, 8, 8}).requires_grad_(true);
    auto out = rand64({4, 3, 8, 8}).requires_grad_(true);
    auto report = losses::total_loss(out, raw, proc, est, id, {});
    auto grads = torch::autograd::grad({report.total_tensor}, {out, raw, proc}, {}, false, false, true);
    ASSERT_TRUE(grads[0].defined());
    EXPECT_GT(grads[0].abs().max().item<double>(), 0.0);
    EXPECT_TRUE(!grads[1].defined() || grads[1].abs().max().item<double>() == 0.0);
    EXPECT_TRUE(!grads[2].defined() || grads[2].abs().max().item<double>() == 0.0);
}

TEST(LossWeights, RejectNegativeOrNonFinite)
{
    losses::LossWeights w;
    w.perceptual = -1.0;
    EXPECT_THROW(w.validate(), ContractViolation);
    w.perceptual = 0.1;
    w.alpha = 0.0;
    EXPECT_THROW(w.validate(), ContractViolation);
}
