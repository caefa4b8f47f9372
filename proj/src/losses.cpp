#include "tempoc/losses.hpp"

#include "tempoc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace tempoc::losses {

using torch::indexing::None;
using torch::indexing::Slice;

void LossWeights::validate() const
{
    for (double w : {flow_gradient, reconstruction, perceptual, constancy})
        TEMPOC_REQUIRE(std::isfinite(w) && w >= 0.0, "loss weights must be finite and nonnegative");
    TEMPOC_REQUIRE(std::isfinite(alpha) && alpha > 0.0, "mask alpha must be positive");
}

namespace {

torch::Tensor as_batched(const torch::Tensor& seq, const char* what)
{
    TEMPOC_REQUIRE(seq.defined() && (seq.dim() == 4 || seq.dim() == 5) && seq.size(-3) == 3,
                   std::string(what) + ": expected [T, 3, H, W] or [B, T, 3, H, W]");
    return seq.dim() == 5 ? seq : seq.unsqueeze(0);
}

void require_aligned(const torch::Tensor& a, const torch::Tensor& b, const char* what)
{
    TEMPOC_REQUIRE(a.sizes() == b.sizes(), std::string(what) + ": sequences are not aligned");
    TEMPOC_REQUIRE(a.size(1) >= 2, std::string(what) + ": needs at least 2 frames");
}

/// [B, K, C, H, W] -> [B*K, C, H, W]
torch::Tensor fold(const torch::Tensor& x)
{
    return x.reshape({x.size(0) * x.size(1), x.size(2), x.size(3), x.size(4)});
}

torch::Tensor unfold(const torch::Tensor& x, int64_t batch)
{
    return x.reshape({batch, x.size(0) / batch, x.size(1), x.size(2), x.size(3)});
}

/// Mean over batch and pixels of mask * sum_c |a - b|, summed over frame pairs.
/// a, b: [B, K, C, H, W]; mask: [B, K, 1, H, W].
torch::Tensor masked_l1_sum(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask)
{
    auto per_pixel = mask.squeeze(2) * (a - b).abs().sum(2);  // [B, K, H, W]
    return per_pixel.mean(std::vector<int64_t>{0, 2, 3}).sum();
}

}  // namespace

RawMotion consecutive_raw_motion(const torch::Tensor& raws, flow::FlowEstimator& estimator, double alpha)
{
    torch::NoGradGuard no_grad;
    auto raw = as_batched(raws, "raw motion").detach();
    TEMPOC_REQUIRE(raw.size(1) >= 2, "raw motion needs at least 2 frames");
    const int64_t batch = raw.size(0);
    auto later = fold(raw.index({Slice(), Slice(1, None)}));
    auto earlier = fold(raw.index({Slice(), Slice(None, -1)}));
    auto flows = estimator.estimate(later, earlier);
    auto masks = core::occlusion_mask(later, earlier, flows, alpha);
    return {unfold(flows, batch), unfold(masks, batch)};
}

torch::Tensor flow_gradient_distance(const torch::Tensor& flow_output, const torch::Tensor& flow_raw,
                                     FlowMatchMode mode)
{
    TEMPOC_REQUIRE(flow_output.sizes() == flow_raw.sizes(), "flow_gradient_distance: dimension mismatch");
    if (mode == FlowMatchMode::raw_flow)
        return (flow_output - flow_raw).abs().sum(1).mean();
    return (core::flow_spatial_gradient(flow_output) - core::flow_spatial_gradient(flow_raw)).abs().sum(1).mean();
}

torch::Tensor loss_flow_gradient(const torch::Tensor& outputs, const torch::Tensor& raws,
                                 flow::FlowEstimator& estimator, FlowMatchMode mode, const RawMotion* motion)
{
    auto out = as_batched(outputs, "loss_flow_gradient");
    auto raw = as_batched(raws, "loss_flow_gradient");
    require_aligned(out, raw, "loss_flow_gradient");

    RawMotion local;
    if (motion == nullptr) {
        local = consecutive_raw_motion(raw, estimator, core::kDefaultMaskAlpha);
        motion = &local;
    }
    const int64_t batch = out.size(0);
    const int64_t pairs = out.size(1) - 1;
    auto out_flows = estimator.estimate(fold(out.index({Slice(), Slice(1, None)})),
                                        fold(out.index({Slice(), Slice(None, -1)})));
    auto raw_flows = fold(motion->flows);

    // Per pair so that every pair is pixel-averaged on its own before summing.
    auto per_pair_out = unfold(out_flows, batch);
    auto per_pair_raw = unfold(raw_flows, batch);
    torch::Tensor total = torch::zeros({}, out.options());
    for (int64_t k = 0; k < pairs; ++k)
        total = total + flow_gradient_distance(per_pair_out.select(1, k), per_pair_raw.select(1, k), mode);
    return total;
}

torch::Tensor loss_reconstruction(const torch::Tensor& outputs, const torch::Tensor& raws,
                                  flow::FlowEstimator& estimator, double alpha, const RawMotion* motion)
{
    auto out = as_batched(outputs, "loss_reconstruction");
    auto raw = as_batched(raws, "loss_reconstruction");
    require_aligned(out, raw, "loss_reconstruction");

    RawMotion local;
    if (motion == nullptr) {
        local = consecutive_raw_motion(raw, estimator, alpha);
        motion = &local;
    }
    const int64_t batch = out.size(0);
    auto later = out.index({Slice(), Slice(1, None)});
    auto warped = unfold(core::backward_warp(fold(out.index({Slice(), Slice(None, -1)})), fold(motion->flows)), batch);
    return masked_l1_sum(later, warped, motion->masks);
}

torch::Tensor loss_perceptual(const torch::Tensor& outputs, const torch::Tensor& processed,
                              features::FeatureExtractor& features)
{
    auto out = as_batched(outputs, "loss_perceptual");
    auto proc = as_batched(processed, "loss_perceptual");
    require_aligned(out, proc, "loss_perceptual");

    const int64_t batch = out.size(0);
    auto out_features = features.extract(fold(out.index({Slice(), Slice(1, None)})));
    torch::Tensor proc_features;
    {
        torch::NoGradGuard no_grad;
        proc_features = features.extract(fold(proc.index({Slice(), Slice(1, None)}).detach()));
    }
    auto diff = (out_features - proc_features).abs();
    auto per_frame = diff.reshape({batch, diff.size(0) / batch, -1}).mean(std::vector<int64_t>{0, 2});
    return per_frame.sum();
}

std::vector<std::pair<int64_t, int64_t>> constancy_pairs(int64_t frames)
{
    std::vector<std::pair<int64_t, int64_t>> pairs;
    for (int64_t p = 0; p + 2 < frames; ++p)
        for (int64_t t = p + 2; t < frames; ++t)
            pairs.emplace_back(p, t);
    return pairs;
}

torch::Tensor constancy_over_pairs(const torch::Tensor& outputs, const torch::Tensor& raws,
                                   flow::FlowEstimator& estimator, double alpha,
                                   const std::vector<std::pair<int64_t, int64_t>>& pairs, ConstancyFlowMode mode)
{
    auto out = as_batched(outputs, "loss_constancy");
    auto raw = as_batched(raws, "loss_constancy");
    TEMPOC_REQUIRE(out.sizes() == raw.sizes(), "loss_constancy: sequences are not aligned");
    if (pairs.empty())
        return torch::zeros({}, out.options());

    const int64_t frames = out.size(1);
    std::vector<int64_t> anchors, targets, flow_targets;
    for (const auto& [p, t] : pairs) {
        TEMPOC_REQUIRE(p >= 0 && t < frames && t >= p + 2, "loss_constancy: invalid (p, t) pair");
        anchors.push_back(p);
        targets.push_back(t);
        flow_targets.push_back(mode == ConstancyFlowMode::literal ? t - 1 : t);
    }
    auto device = out.device();
    auto anchor_idx = torch::tensor(anchors, torch::kLong).to(device);
    auto target_idx = torch::tensor(targets, torch::kLong).to(device);
    auto flow_idx = torch::tensor(flow_targets, torch::kLong).to(device);
    const int64_t batch = out.size(0);

    torch::Tensor flows, masks;
    {
        torch::NoGradGuard no_grad;
        auto r = raw.detach();
        auto raw_anchor = fold(r.index_select(1, anchor_idx));
        auto raw_target = fold(r.index_select(1, target_idx));
        flows = estimator.estimate(fold(r.index_select(1, flow_idx)), raw_anchor);
        masks = unfold(core::occlusion_mask(raw_target, raw_anchor, flows, alpha), batch);
    }
    auto warped = unfold(core::backward_warp(fold(out.index_select(1, anchor_idx)), flows), batch);
    return masked_l1_sum(out.index_select(1, target_idx), warped, masks);
}

torch::Tensor loss_constancy(const torch::Tensor& outputs, const torch::Tensor& raws, flow::FlowEstimator& estimator,
                             double alpha, int64_t max_anchors, uint64_t seed, ConstancyFlowMode mode)
{
    auto out = as_batched(outputs, "loss_constancy");
    TEMPOC_REQUIRE(max_anchors >= 0, "max_anchors must be nonnegative");
    auto pairs = constancy_pairs(out.size(1));
    if (max_anchors == 0 || static_cast<int64_t>(pairs.size()) <= max_anchors)
        return constancy_over_pairs(outputs, raws, estimator, alpha, pairs, mode);

    std::vector<std::pair<int64_t, int64_t>> drawn;
    std::sample(pairs.begin(), pairs.end(), std::back_inserter(drawn), max_anchors, std::mt19937_64(seed));
    const double scale = static_cast<double>(pairs.size()) / static_cast<double>(drawn.size());
    return scale * constancy_over_pairs(outputs, raws, estimator, alpha, drawn, mode);
}

LossReport total_loss(const torch::Tensor& outputs, const torch::Tensor& raws, const torch::Tensor& processed,
                      flow::FlowEstimator& estimator, features::FeatureExtractor& features,
                      const LossWeights& weights, const LossOptions& options)
{
    weights.validate();
    auto out = as_batched(outputs, "total_loss");
    auto raw = as_batched(raws, "total_loss");
    auto proc = as_batched(processed, "total_loss");
    require_aligned(out, raw, "total_loss");
    require_aligned(out, proc, "total_loss");

    LossReport report;
    report.enabled = {options.use_flow_gradient, options.use_reconstruction, options.use_perceptual,
                      options.use_constancy};
    const std::array<double, 4> lambdas{weights.flow_gradient, weights.reconstruction, weights.perceptual,
                                        weights.constancy};

    RawMotion motion;
    if (options.use_flow_gradient || options.use_reconstruction)
        motion = consecutive_raw_motion(raw, estimator, weights.alpha);

    if (options.use_flow_gradient)
        report.term_tensors[0] = loss_flow_gradient(out, raw, estimator, options.flow_match, &motion);
    if (options.use_reconstruction)
        report.term_tensors[1] = loss_reconstruction(out, raw, estimator, weights.alpha, &motion);
    if (options.use_perceptual)
        report.term_tensors[2] = loss_perceptual(out, proc, features);
    if (options.use_constancy)
        report.term_tensors[3] = loss_constancy(out, raw, estimator, weights.alpha, options.max_anchors,
                                                options.pair_seed, options.constancy_flow);

    torch::Tensor total = torch::zeros({}, out.options());
    for (size_t i = 0; i < 4; ++i) {
        if (!report.enabled[i])
            continue;
        total = total + lambdas[i] * report.term_tensors[i];
        report.terms[i] = report.term_tensors[i].item<double>();
    }
    report.total_tensor = total;
    report.total = total.item<double>();
    return report;
}

}  // namespace tempoc::losses
