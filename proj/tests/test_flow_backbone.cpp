#include "support.hpp"

#include "tempoc/errors.hpp"
#include "tempoc/flow_backbone.hpp"
#include "tempoc/synthetic.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace tempoc;
using tempoc::testing::TempDir;

TEST(PyramidFlowNet, UntrainedNetOutputsZeroFlow)
{
    torch::manual_seed(0);
    flow::PyramidFlowNet net;
    auto a = torch::rand({2, 3, 32, 32});
    auto b = torch::rand({2, 3, 32, 32});
    auto f = net.estimate(a, b);
    EXPECT_EQ(f.sizes(), torch::IntArrayRef({2, 2, 32, 32}));
    EXPECT_EQ(f.abs().max().item<float>(), 0.0f);
}

TEST(PyramidFlowNet, PadsAndCropsOddSizes)
{
    torch::manual_seed(0);
    flow::PyramidFlowNet net({3, 3, {8, 8, 4}});
    {
        torch::NoGradGuard no_grad;
        for (auto& p : net.parameters())
            p.add_(torch::randn_like(p) * 0.1);
    }
    auto f = net.estimate(torch::rand({1, 3, 13, 19}), torch::rand({1, 3, 13, 19}));
    EXPECT_EQ(f.sizes(), torch::IntArrayRef({1, 2, 13, 19}));
    EXPECT_GT(f.abs().max().item<float>(), 0.0f);
}

TEST(PyramidFlowNet, PyramidLevelsDoubleInResolution)
{
    flow::PyramidFlowNet net({3, 3, {8, 8, 4}});
    auto levels = net.estimate_pyramid(torch::rand({1, 3, 32, 32}), torch::rand({1, 3, 32, 32}));
    ASSERT_EQ(levels.size(), 3u);
    EXPECT_EQ(levels[0].size(2), 8);
    EXPECT_EQ(levels[1].size(2), 16);
    EXPECT_EQ(levels[2].size(2), 32);
}

TEST(FlowEstimator, IdenticalFramesGiveExactlyZeroFlow)
{
    flow::PyramidFlowNet net({3, 3, {8, 8, 4}});
    {
        torch::NoGradGuard no_grad;
        for (auto& p : net.parameters())
            p.add_(torch::randn_like(p) * 0.2);
    }
    auto a = torch::rand({2, 3, 16, 16});
    auto b = a.clone();
    b[1] = torch::rand({3, 16, 16});
    auto f = net.estimate(a, b);
    EXPECT_EQ(f[0].abs().max().item<float>(), 0.0f);
    EXPECT_GT(f[1].abs().max().item<float>(), 0.0f);
}

TEST(FlowEstimator, RejectsBadShapes)
{
    flow::ZeroFlowEstimator zero;
    EXPECT_THROW(zero.estimate(torch::rand({1, 3, 8, 8}), torch::rand({1, 3, 8, 9})), ContractViolation);
    EXPECT_THROW(zero.estimate(torch::rand({1, 1, 8, 8}), torch::rand({1, 1, 8, 8})), ContractViolation);
    auto f = flow::estimate(zero, Frame{torch::rand({3, 8, 8}), 4}, Frame{torch::rand({3, 8, 8}), 3});
    EXPECT_EQ(f.source_index, 3);
    EXPECT_EQ(f.target_index, 4);
}

TEST(FlowEstimator, CloneIsIndependentAndCopyStateSyncs)
{
    torch::manual_seed(1);
    flow::PyramidFlowNet net({2, 3, {8, 8, 4}});
    auto clone = net.clone_estimator();
    {
        torch::NoGradGuard no_grad;
        net.parameters().front().add_(1.0);
    }
    EXPECT_FALSE(torch::equal(net.parameters().front(), clone->parameters().front()));
    flow::copy_state(net, *clone);
    EXPECT_TRUE(torch::equal(net.parameters().front(), clone->parameters().front()));
}

TEST(FlowEstimator, EndpointErrorOracle)
{
    auto a = torch::zeros({1, 2, 8, 8});
    auto b = torch::zeros({1, 2, 8, 8});
    b.select(1, 0).fill_(3.0);
    b.select(1, 1).fill_(4.0);
    EXPECT_NEAR(flow::endpoint_error(a, b), 5.0, 1e-6);
}

TEST(ScriptedFlowEstimator, LoadsTorchScriptAndClones)
{
    TempDir dir("scripted");
    torch::jit::Module m("ToyFlow");
    m.register_parameter("gain", torch::tensor({2.0f}), false);
    m.define(R"(
def forward(self, target, source):
    return self.gain * (target - source)[:, 0:2]
)");
    m.save((dir / "toy.pt").string());

    auto est = flow::ScriptedFlowEstimator::load(dir / "toy.pt");
    EXPECT_EQ(est->parameters().size(), 1u);
    auto t = torch::rand({1, 3, 8, 8});
    auto s = torch::rand({1, 3, 8, 8});
    auto f = est->estimate(t, s);
    EXPECT_TRUE(torch::allclose(f, 2.0 * (t - s).slice(1, 0, 2)));

    auto clone = est->clone_estimator();
    {
        torch::NoGradGuard no_grad;
        est->parameters().front().fill_(5.0);
    }
    EXPECT_TRUE(torch::allclose(clone->estimate(t, s), 2.0 * (t - s).slice(1, 0, 2)));
    EXPECT_THROW(flow::ScriptedFlowEstimator::load(dir / "missing.pt"), ConfigError);
}

TEST(Pretraining, ZeroStepsLeavesEstimatorUntouched)
{
    torch::manual_seed(2);
    flow::PyramidFlowNet net({2, 3, {8, 8, 4}});
    auto before = net.parameters().front().clone();
    std::vector<VideoSequence> clips{synth::make_translation_clip(3, 16, 16, 1, 0, 0).raw};
    flow::PretrainOptions options;
    options.steps = 0;
    auto report = flow::pretrain_flow(net, clips, options);
    EXPECT_TRUE(report.losses.empty());
    EXPECT_TRUE(torch::equal(before, net.parameters().front()));
    EXPECT_THROW(flow::pretrain_flow(net, {}, options), ContractViolation);
}

TEST(Pretraining, ReducesEndpointErrorOnTranslations)
{
    torch::manual_seed(3);
    flow::PyramidFlowNet net({3, 3, {32, 32, 16}});
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> speed(-2.0, 2.0);
    std::vector<VideoSequence> clips;
    for (int i = 0; i < 32; ++i)
        clips.push_back(synth::make_translation_clip(3, 64, 64, speed(rng), speed(rng), 50 + i).raw);
    auto probe = synth::make_translation_clip(2, 64, 64, 1.5, -1.0, 999);
    auto epe = [&] {
        torch::NoGradGuard no_grad;
        auto f = net.estimate(probe.raw.tensor().slice(0, 1, 2), probe.raw.tensor().slice(0, 0, 1));
        return flow::endpoint_error(f, probe.flows);
    };
    const double before = epe();
    flow::PretrainOptions options;
    options.steps = 400;
    options.batch = 8;
    options.learning_rate = 2e-3;
    auto report = flow::pretrain_flow(net, clips, options);
    EXPECT_EQ(report.losses.size(), 400u);
    EXPECT_LT(epe(), 0.6 * before);
}
