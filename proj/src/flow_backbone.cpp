#include "tempoc/flow_backbone.hpp"

#include "tempoc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace tempoc::flow {

namespace F = torch::nn::functional;

torch::Tensor FlowEstimator::estimate(const torch::Tensor& target, const torch::Tensor& source)
{
    TEMPOC_REQUIRE(target.dim() == 4 && target.size(1) == 3, "estimate: frames must be [N, 3, H, W]");
    TEMPOC_REQUIRE(target.sizes() == source.sizes(), "estimate: frame sizes differ");

    const int64_t stride = int64_t{1} << (pyramid_levels() - 1);
    const int64_t h = target.size(2);
    const int64_t w = target.size(3);
    const int64_t pad_h = (stride - h % stride) % stride;
    const int64_t pad_w = (stride - w % stride) % stride;
    torch::Tensor flow;
    if (pad_h == 0 && pad_w == 0) {
        flow = estimate_padded(target, source);
    } else {
        auto pad = F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate);
        using torch::indexing::Slice;
        flow = estimate_padded(F::pad(target, pad), F::pad(source, pad)).index({Slice(), Slice(), Slice(0, h), Slice(0, w)});
    }

    // Identical frames have no motion. Learned estimators only approximate this,
    // so it is enforced exactly.
    auto identical = torch::eq(target, source).flatten(1).all(1);
    if (identical.any().item<bool>())
        flow = flow * identical.logical_not().to(flow.dtype()).view({-1, 1, 1, 1});
    return flow;
}

FlowField estimate(FlowEstimator& estimator, const Frame& target, const Frame& source)
{
    auto f = estimator.estimate(target.pixels.unsqueeze(0), source.pixels.unsqueeze(0));
    return {f.squeeze(0), source.index, target.index};
}

// ---------------------------------------------------------------------------

PyramidFlowNet::PyramidFlowNet(PyramidFlowOptions options) : options_(std::move(options))
{
    TEMPOC_REQUIRE(options_.levels >= 1, "pyramid flow needs at least one level");
    TEMPOC_REQUIRE(options_.kernel % 2 == 1, "pyramid flow kernel must be odd");
    TEMPOC_REQUIRE(!options_.channels.empty(), "pyramid flow needs hidden channels");

    const int64_t pad = options_.kernel / 2;
    for (int64_t l = 0; l < options_.levels; ++l) {
        torch::nn::Sequential net;
        int64_t in = 8;
        for (int64_t c : options_.channels) {
            net->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, c, options_.kernel).padding(pad)));
            net->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.1)));
            in = c;
        }
        torch::nn::Conv2d head(torch::nn::Conv2dOptions(in, 2, options_.kernel).padding(pad));
        {
            torch::NoGradGuard no_grad;
            head->weight.zero_();
            head->bias.zero_();
        }
        net->push_back(head);
        levels_.push_back(register_module("level" + std::to_string(l), net));
    }
}

std::string PyramidFlowNet::identifier() const
{
    std::string id = "pyramid-l" + std::to_string(options_.levels) + "-k" + std::to_string(options_.kernel) + "-c";
    for (size_t i = 0; i < options_.channels.size(); ++i)
        id += (i ? "." : "") + std::to_string(options_.channels[i]);
    return id;
}

std::shared_ptr<FlowEstimator> PyramidFlowNet::clone_estimator() const
{
    auto copy = std::make_shared<PyramidFlowNet>(options_);
    copy_state(*this, *copy);
    copy->train(is_training());
    return copy;
}

std::vector<torch::Tensor> PyramidFlowNet::estimate_pyramid(const torch::Tensor& target,
                                                            const torch::Tensor& source)
{
    std::vector<torch::Tensor> targets{target - 0.5};
    std::vector<torch::Tensor> sources{source - 0.5};
    for (int64_t l = 1; l < options_.levels; ++l) {
        targets.push_back(F::avg_pool2d(targets.back(), F::AvgPool2dFuncOptions(2)));
        sources.push_back(F::avg_pool2d(sources.back(), F::AvgPool2dFuncOptions(2)));
    }

    std::vector<torch::Tensor> flows;
    const auto& coarse = targets.back();
    torch::Tensor flow = torch::zeros({coarse.size(0), 2, coarse.size(2), coarse.size(3)}, coarse.options());
    for (int64_t l = options_.levels - 1; l >= 0; --l) {
        const auto& t = targets[l];
        if (flow.size(2) != t.size(2)) {
            flow = 2.0 * F::interpolate(flow, F::InterpolateFuncOptions()
                                                  .size(std::vector<int64_t>{t.size(2), t.size(3)})
                                                  .mode(torch::kBilinear)
                                                  .align_corners(false));
        }
        auto warped = core::backward_warp(sources[l], flow);
        flow = flow + levels_[l]->forward(torch::cat({t, warped, flow}, 1));
        flows.push_back(flow);
    }
    return flows;
}

torch::Tensor PyramidFlowNet::estimate_padded(const torch::Tensor& target, const torch::Tensor& source)
{
    return estimate_pyramid(target, source).back();
}

// ---------------------------------------------------------------------------

std::shared_ptr<FlowEstimator> ZeroFlowEstimator::clone_estimator() const
{
    return std::make_shared<ZeroFlowEstimator>();
}

torch::Tensor ZeroFlowEstimator::estimate_padded(const torch::Tensor& target, const torch::Tensor&)
{
    return torch::zeros({target.size(0), 2, target.size(2), target.size(3)}, target.options());
}

// ---------------------------------------------------------------------------

ScriptedFlowEstimator::ScriptedFlowEstimator(torch::jit::Module module, std::string identifier, int64_t levels)
    : module_(std::move(module)), identifier_(std::move(identifier)), levels_(levels)
{
    TEMPOC_REQUIRE(levels_ >= 1, "scripted estimator needs levels >= 1");
    for (const auto& p : module_.named_parameters(/*recurse=*/true)) {
        std::string name = p.name;
        std::replace(name.begin(), name.end(), '.', '_');
        register_parameter(name, p.value, p.value.requires_grad());
    }
}

std::shared_ptr<ScriptedFlowEstimator> ScriptedFlowEstimator::load(const std::filesystem::path& path,
                                                                   int64_t levels)
{
    torch::jit::Module module;
    try {
        module = torch::jit::load(path.string());
    } catch (const c10::Error& e) {
        throw ConfigError("cannot load TorchScript flow estimator '" + path.string() + "'");
    }
    return std::make_shared<ScriptedFlowEstimator>(std::move(module), "scripted:" + path.filename().string(),
                                                   levels);
}

std::shared_ptr<FlowEstimator> ScriptedFlowEstimator::clone_estimator() const
{
    return std::make_shared<ScriptedFlowEstimator>(module_.deepcopy(), identifier_, levels_);
}

torch::Tensor ScriptedFlowEstimator::estimate_padded(const torch::Tensor& target, const torch::Tensor& source)
{
    auto out = module_.forward({target, source}).toTensor();
    TEMPOC_REQUIRE(out.dim() == 4 && out.size(1) == 2 && out.size(2) == target.size(2) &&
                       out.size(3) == target.size(3),
                   "scripted estimator returned a flow of the wrong shape");
    return out;
}

// ---------------------------------------------------------------------------

void copy_state(const torch::nn::Module& src, torch::nn::Module& dst)
{
    torch::NoGradGuard no_grad;
    auto dst_params = dst.named_parameters(true);
    for (const auto& p : src.named_parameters(true)) {
        auto* target = dst_params.find(p.key());
        TEMPOC_REQUIRE(target != nullptr, "copy_state: missing parameter " + p.key());
        target->copy_(p.value());
    }
    auto dst_buffers = dst.named_buffers(true);
    for (const auto& b : src.named_buffers(true)) {
        auto* target = dst_buffers.find(b.key());
        TEMPOC_REQUIRE(target != nullptr, "copy_state: missing buffer " + b.key());
        target->copy_(b.value());
    }
}

double endpoint_error(const torch::Tensor& predicted, const torch::Tensor& truth)
{
    TEMPOC_REQUIRE(predicted.sizes() == truth.sizes(), "endpoint_error: dimension mismatch");
    torch::NoGradGuard no_grad;
    return (predicted - truth).pow(2).sum(1).sqrt().mean().item<double>();
}

namespace {

/// 1 where the flow lands inside the source frame, else 0. [N, 1, H, W], no gradient.
torch::Tensor in_bounds(const torch::Tensor& flow)
{
    torch::NoGradGuard no_grad;
    const int64_t h = flow.size(2);
    const int64_t w = flow.size(3);
    auto opts = flow.options();
    auto px = torch::arange(w, opts).view({1, 1, w}) + flow.select(1, 0);
    auto py = torch::arange(h, opts).view({1, h, 1}) + flow.select(1, 1);
    auto inside = px.ge(0) & px.le(w - 1) & py.ge(0) & py.le(h - 1);
    return inside.unsqueeze(1).to(flow.scalar_type());
}

}  // namespace

PretrainReport pretrain_flow(FlowEstimator& estimator, const std::vector<VideoSequence>& clips,
                             const PretrainOptions& options)
{
    TEMPOC_REQUIRE(!clips.empty(), "pretrain_flow: empty clip list");
    for (const auto& c : clips)
        TEMPOC_REQUIRE(c.length() >= 2, "pretrain_flow: every clip needs at least 2 frames");

    PretrainReport report;
    if (options.steps == 0)
        return report;

    auto params = estimator.parameters();
    TEMPOC_REQUIRE(!params.empty(), "pretrain_flow: estimator has no trainable parameters");
    torch::optim::Adam optimizer(params, torch::optim::AdamOptions(options.learning_rate));
    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<size_t> pick_clip(0, clips.size() - 1);
    std::bernoulli_distribution reverse(0.5);

    const auto device = params.front().device();
    estimator.train();
    for (int64_t step = 0; step < options.steps; ++step) {
        std::vector<torch::Tensor> targets, sources;
        for (int64_t b = 0; b < options.batch; ++b) {
            const auto& clip = clips[pick_clip(rng)];
            std::uniform_int_distribution<int64_t> pick_t(1, clip.length() - 1);
            const int64_t t = pick_t(rng);
            auto a = clip.tensor()[t];
            auto s = clip.tensor()[t - 1];
            if (reverse(rng))
                std::swap(a, s);
            targets.push_back(a);
            sources.push_back(s);
        }
        auto target = torch::stack(targets).to(device);
        auto source = torch::stack(sources).to(device);

        auto flow = estimator.estimate(target, source);
        auto valid = in_bounds(flow);
        auto residual = (target - core::backward_warp(source, flow)).abs().sum(1, true);
        auto photometric = (valid * residual).sum() / (3.0 * valid.sum().clamp_min(1.0));
        auto smooth = core::flow_spatial_gradient(flow).abs().mean();
        auto loss = photometric + options.smoothness * smooth;

        const double progress = static_cast<double>(step) / static_cast<double>(options.steps);
        const double scale =
            options.final_lr_fraction + (1.0 - options.final_lr_fraction) * 0.5 * (1.0 + std::cos(M_PI * progress));
        for (auto& group : optimizer.param_groups())
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(options.learning_rate * scale);

        optimizer.zero_grad();
        loss.backward();
        optimizer.step();
        report.losses.push_back(loss.item<double>());
        if (options.on_step)
            options.on_step(step + 1, report.losses.back());
    }
    return report;
}

}  // namespace tempoc::flow
