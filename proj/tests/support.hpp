#pragma once

#include "tempoc/flow_backbone.hpp"
#include "tempoc/video_core.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>

namespace tempoc::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Scalar bilinear backward warp with border clamping, written independently
/// of the tensor implementation. source [C, H, W], flow [2, H, W], float64.
torch::Tensor reference_warp(const torch::Tensor& source, const torch::Tensor& flow);

/// Estimator that returns a fixed flow for every pair (broadcast over the batch).
class FixedFlowEstimator : public flow::FlowEstimator {
public:
    explicit FixedFlowEstimator(torch::Tensor flow) : flow_(std::move(flow)) {}
    std::string identifier() const override { return "fixed"; }
    std::shared_ptr<flow::FlowEstimator> clone_estimator() const override
    {
        return std::make_shared<FixedFlowEstimator>(flow_.clone());
    }

protected:
    torch::Tensor estimate_padded(const torch::Tensor& target, const torch::Tensor&) override
    {
        return flow_.to(target.options()).expand({target.size(0), 2, target.size(2), target.size(3)}).clone();
    }

private:
    torch::Tensor flow_;
};

/// Pairwise estimator whose flow is an affine function of both frames: flow =
/// conv(cat(target, source)) with fixed random weights. Differentiable in both
/// inputs, so it exercises gradient paths through the estimator.
class LinearFlowEstimator : public flow::FlowEstimator {
public:
    explicit LinearFlowEstimator(uint64_t seed, double scale = 0.5);
    std::string identifier() const override { return "linear"; }
    std::shared_ptr<flow::FlowEstimator> clone_estimator() const override;

protected:
    torch::Tensor estimate_padded(const torch::Tensor& target, const torch::Tensor& source) override;

private:
    uint64_t seed_;
    double scale_;
    torch::Tensor weight_;
};

/// Scalar-loop masked warped L1 for one pair (p, t) of a float64 clip [T, 3, H, W]:
/// mean_x M(x) * sum_c |O_t - warp(O_p, f)|, with f = of(I_flow_frame, I_p) and
/// M = exp(-alpha * sum_c (I_t - warp(I_p, f))^2).
double masked_pair_oracle(const torch::Tensor& out, const torch::Tensor& raw, flow::FlowEstimator& est, int64_t p,
                          int64_t t, int64_t flow_frame, double alpha);

/// Forward-difference flow gradients of a float64 flow [2, H, W] by explicit loops, [4, H, W].
torch::Tensor loop_gradient(const torch::Tensor& flow);

}  // namespace tempoc::testing
