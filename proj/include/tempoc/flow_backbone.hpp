#pragma once

#include "tempoc/video_core.hpp"

#include <torch/script.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tempoc::flow {

/// Optical flow behind one interface. estimate() returns the field f such that
/// backward_warp(source, f) approximates target. Inputs whose size is not a
/// multiple of the pyramid stride are replicate-padded and the flow is cropped.
class FlowEstimator : public torch::nn::Module {
public:
    ~FlowEstimator() override = default;

    /// target, source: [N, 3, H, W]. Returns [N, 2, H, W]; pairs of bitwise
    /// identical frames get exactly zero flow.
    torch::Tensor estimate(const torch::Tensor& target, const torch::Tensor& source);

    virtual std::string identifier() const = 0;
    virtual int64_t pyramid_levels() const { return 1; }

    /// Independent deep copy (parameters copied, not shared).
    virtual std::shared_ptr<FlowEstimator> clone_estimator() const = 0;

protected:
    /// Called with sizes already divisible by 2^(pyramid_levels - 1).
    virtual torch::Tensor estimate_padded(const torch::Tensor& target, const torch::Tensor& source) = 0;
};

FlowField estimate(FlowEstimator& estimator, const Frame& target, const Frame& source);

/// Coarse-to-fine residual flow network. Each level sees
/// [target, source warped by the upsampled coarse flow, that flow] and predicts a
/// flow increment. The last convolution of every level starts at zero, so an
/// untrained network returns zero flow.
struct PyramidFlowOptions {
    int64_t levels = 3;
    int64_t kernel = 7;
    std::vector<int64_t> channels{32, 64, 32, 16};
};

class PyramidFlowNet : public FlowEstimator {
public:
    explicit PyramidFlowNet(PyramidFlowOptions options = {});

    std::string identifier() const override;
    int64_t pyramid_levels() const override { return options_.levels; }
    std::shared_ptr<FlowEstimator> clone_estimator() const override;

    const PyramidFlowOptions& options() const { return options_; }

    /// Per-level flows, coarsest first; the last entry is the full-resolution flow.
    std::vector<torch::Tensor> estimate_pyramid(const torch::Tensor& target, const torch::Tensor& source);

protected:
    torch::Tensor estimate_padded(const torch::Tensor& target, const torch::Tensor& source) override;

private:
    PyramidFlowOptions options_;
    std::vector<torch::nn::Sequential> levels_;
};

/// Always returns zero flow. Has no parameters.
class ZeroFlowEstimator : public FlowEstimator {
public:
    std::string identifier() const override { return "zero"; }
    std::shared_ptr<FlowEstimator> clone_estimator() const override;

protected:
    torch::Tensor estimate_padded(const torch::Tensor& target, const torch::Tensor& source) override;
};

/// Adapter for externally trained estimators exported as TorchScript modules
/// whose forward(target, source) returns [N, 2, H, W]. The script module's
/// parameters are registered here, so they train and serialize like any other.
class ScriptedFlowEstimator : public FlowEstimator {
public:
    ScriptedFlowEstimator(torch::jit::Module module, std::string identifier, int64_t levels = 1);
    static std::shared_ptr<ScriptedFlowEstimator> load(const std::filesystem::path& path, int64_t levels = 1);

    std::string identifier() const override { return identifier_; }
    int64_t pyramid_levels() const override { return levels_; }
    std::shared_ptr<FlowEstimator> clone_estimator() const override;

protected:
    torch::Tensor estimate_padded(const torch::Tensor& target, const torch::Tensor& source) override;

private:
    torch::jit::Module module_;
    std::string identifier_;
    int64_t levels_;
};

/// Copy parameter and buffer values from src into dst (matched by name).
void copy_state(const torch::nn::Module& src, torch::nn::Module& dst);

/// Mean endpoint error between two [N, 2, H, W] flows.
double endpoint_error(const torch::Tensor& predicted, const torch::Tensor& truth);

struct PretrainOptions {
    int64_t steps = 500;
    int64_t batch = 8;
    double learning_rate = 1e-3;
    double smoothness = 0.1;
    /// Learning rate follows a cosine from learning_rate down to
    /// final_lr_fraction * learning_rate.
    double final_lr_fraction = 0.05;
    uint64_t seed = 0;
    std::function<void(int64_t step, double loss)> on_step;
};

struct PretrainReport {
    std::vector<double> losses;
};

/// Unsupervised photometric pretraining on consecutive frame pairs drawn from
/// clips (either direction): mean |target - warp(source, f)| over pixels whose
/// flow stays inside the source frame, plus smoothness * mean |grad f|.
/// steps == 0 leaves the estimator untouched.
PretrainReport pretrain_flow(FlowEstimator& estimator, const std::vector<VideoSequence>& clips,
                             const PretrainOptions& options);

}  // namespace tempoc::flow
