#pragma once

#include "tempoc/features.hpp"
#include "tempoc/flow_backbone.hpp"

#include <array>
#include <string>
#include <utility>
#include <vector>

/// Training objectives. Sequences are [T, 3, H, W] or [B, T, 3, H, W] tensors of
/// outputs O, raw frames I and processed frames P. Every term is summed over
/// frame pairs and averaged over pixels (and batch) within a frame; per-pixel
/// distances are L1 summed over channels.
///
/// Raw-side flows and masks are computed without gradient, and P only enters
/// through detached features, so only O (and, through the O-side flows of the
/// flow-gradient term, the estimator) receive gradients.
namespace tempoc::losses {

struct LossWeights {
    double flow_gradient = 1.0;
    double reconstruction = 1.0;
    double perceptual = 0.1;
    double constancy = 1.0;
    double alpha = 50.0;

    void validate() const;
};

/// Which raw flow the long-range term pairs with O[p] -> O[t]: of(I[t], I[p])
/// (index_consistent) or of(I[t-1], I[p]) as literally printed (literal).
enum class ConstancyFlowMode { index_consistent, literal };

/// Compare spatial gradients of the flows (gradient) or the flows themselves
/// (raw_flow, ablation only).
enum class FlowMatchMode { gradient, raw_flow };

struct LossOptions {
    bool use_flow_gradient = true;
    bool use_reconstruction = true;
    bool use_perceptual = true;
    bool use_constancy = true;
    ConstancyFlowMode constancy_flow = ConstancyFlowMode::index_consistent;
    FlowMatchMode flow_match = FlowMatchMode::gradient;
    /// Cap on (p, t) pairs for the constancy term; 0 evaluates every pair.
    int64_t max_anchors = 0;
    uint64_t pair_seed = 0;
};

inline constexpr std::array<const char*, 4> kTermNames{"l_fg", "l_rec", "l_p", "l_const"};

struct LossReport {
    std::array<double, 4> terms{};       // fg, rec, p, const
    std::array<bool, 4> enabled{};
    double total = 0.0;
    torch::Tensor total_tensor;          // differentiable weighted sum
    std::array<torch::Tensor, 4> term_tensors;
};

/// Flows and occlusion masks between consecutive raw frames, shared by the
/// flow-gradient and reconstruction terms. flows[:, t-1] = of(I[t], I[t-1]).
struct RawMotion {
    torch::Tensor flows;  // [B, T-1, 2, H, W]
    torch::Tensor masks;  // [B, T-1, 1, H, W]
};

RawMotion consecutive_raw_motion(const torch::Tensor& raws, flow::FlowEstimator& estimator, double alpha);

/// Per-pixel L1 over the four gradient channels (or two flow channels in
/// raw_flow mode), averaged over pixels. Flows [N, 2, H, W].
torch::Tensor flow_gradient_distance(const torch::Tensor& flow_output, const torch::Tensor& flow_raw,
                                     FlowMatchMode mode = FlowMatchMode::gradient);

torch::Tensor loss_flow_gradient(const torch::Tensor& outputs, const torch::Tensor& raws,
                                 flow::FlowEstimator& estimator, FlowMatchMode mode = FlowMatchMode::gradient,
                                 const RawMotion* motion = nullptr);

torch::Tensor loss_reconstruction(const torch::Tensor& outputs, const torch::Tensor& raws,
                                  flow::FlowEstimator& estimator, double alpha, const RawMotion* motion = nullptr);

torch::Tensor loss_perceptual(const torch::Tensor& outputs, const torch::Tensor& processed,
                              features::FeatureExtractor& features);

/// All (p, t) with 0 <= p <= T-3 and p+2 <= t <= T-1 (zero-based).
std::vector<std::pair<int64_t, int64_t>> constancy_pairs(int64_t frames);

/// Masked warped L1 summed over exactly the given pairs.
torch::Tensor constancy_over_pairs(const torch::Tensor& outputs, const torch::Tensor& raws,
                                   flow::FlowEstimator& estimator, double alpha,
                                   const std::vector<std::pair<int64_t, int64_t>>& pairs,
                                   ConstancyFlowMode mode = ConstancyFlowMode::index_consistent);

/// Long-range term over all pairs, or over max_anchors pairs drawn uniformly
/// with `seed` and rescaled by (all pairs / drawn pairs).
torch::Tensor loss_constancy(const torch::Tensor& outputs, const torch::Tensor& raws, flow::FlowEstimator& estimator,
                             double alpha, int64_t max_anchors = 0, uint64_t seed = 0,
                             ConstancyFlowMode mode = ConstancyFlowMode::index_consistent);

LossReport total_loss(const torch::Tensor& outputs, const torch::Tensor& raws, const torch::Tensor& processed,
                      flow::FlowEstimator& estimator, features::FeatureExtractor& features,
                      const LossWeights& weights, const LossOptions& options = {});

}  // namespace tempoc::losses
