#pragma once

#include "tempoc/flow_backbone.hpp"
#include "tempoc/video_core.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace tempoc::model {

/// Layer sizes of the restoration network. widths has one entry per stride-2
/// encoder stage; the last width is the bottleneck width.
struct ModelConfig {
    std::vector<int64_t> widths{32, 64, 128};
    int64_t residual_blocks = 4;
    int64_t lstm_channels = 128;
    /// Flows are divided by this before entering the motion encoder.
    double flow_scale = 4.0;
};

/// ConvLSTM hidden and cell maps at bottleneck resolution. Empty means "start of
/// sequence" and is treated as zeros.
struct RecurrentState {
    torch::Tensor hidden;
    torch::Tensor cell;

    bool empty() const { return !hidden.defined(); }
};

class ConvLSTMCellImpl : public torch::nn::Module {
public:
    ConvLSTMCellImpl(int64_t input_channels, int64_t hidden_channels, int64_t kernel = 3);

    RecurrentState forward(const torch::Tensor& input, const RecurrentState& state);
    int64_t hidden_channels() const { return hidden_channels_; }

private:
    int64_t hidden_channels_;
    torch::nn::Conv2d gates_{nullptr};
};
TORCH_MODULE(ConvLSTMCell);

class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Stack of stride-2 conv stages; forward returns every stage's output, finest
/// first, so the content stream can feed decoder skips.
class EncoderImpl : public torch::nn::Module {
public:
    EncoderImpl(int64_t input_channels, const std::vector<int64_t>& widths);
    std::vector<torch::Tensor> forward(const torch::Tensor& x);

private:
    std::vector<torch::nn::Sequential> stages_;
};
TORCH_MODULE(Encoder);

/// Upsampling decoder. Each stage doubles resolution, concatenates the matching
/// content skip and convolves; the head predicts a 3-channel residual and is
/// zero-initialised.
class DecoderImpl : public torch::nn::Module {
public:
    DecoderImpl(int64_t bottleneck_channels, const std::vector<int64_t>& widths, int64_t input_channels);
    torch::Tensor forward(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips,
                          const torch::Tensor& input);

private:
    std::vector<torch::nn::Sequential> stages_;
    torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Decoder);

/// Named parameter group, used for optimizer groups and dead-branch checks.
struct ParameterGroup {
    std::string name;
    std::vector<torch::Tensor> parameters;
};

/// Two-branch temporal consistency network.
///
/// Content branch: encodes the channel-stacked triplet (P[t-1], P[t], P[t+1]).
/// Motion branch: two passes of one shared flow estimator, f(P[t] <- P[t-1]) and
/// f(P[t] <- P[t+1]), stacked and encoded. Both branches meet at bottleneck scale
/// (concatenation + 1x1 conv), go through residual blocks and a ConvLSTM, and are
/// decoded with skips from the content stream into a residual on P[t].
class RestorationNet : public torch::nn::Module {
public:
    RestorationNet(ModelConfig config, std::shared_ptr<flow::FlowEstimator> estimator);

    /// Frames [N, 3, H, W]. Sizes not divisible by 2^depth are reflect-padded and
    /// the output cropped. Output is clamp(P[t] + residual, 0, 1).
    std::pair<torch::Tensor, RecurrentState> forward_step(const torch::Tensor& prev, const torch::Tensor& curr,
                                                          const torch::Tensor& next,
                                                          const RecurrentState& state);

    /// processed [T, 3, H, W] or [B, T, 3, H, W], T >= 3. Frame 0 passes through,
    /// frames 1..T-1 come from forward_step with a fresh recurrent state; the last
    /// frame uses itself as its successor. truncation > 0 detaches the recurrent
    /// state every `truncation` steps; 0 keeps the full unrolled graph.
    torch::Tensor process_sequence(const torch::Tensor& processed, int64_t truncation = 0);
    VideoSequence process_sequence(const VideoSequence& processed);

    flow::FlowEstimator& estimator() { return *estimator_; }
    std::shared_ptr<flow::FlowEstimator> estimator_ptr() const { return estimator_; }
    const ModelConfig& config() const { return config_; }
    int64_t stride() const { return int64_t{1} << config_.widths.size(); }

    /// content_encoder, motion_encoder, flow_estimator, bottleneck, decoder.
    std::vector<ParameterGroup> parameter_groups() const;

    /// The motion branch on its own: [N, 4, H, W] stacked backward and forward flow.
    torch::Tensor motion_flows(const torch::Tensor& prev, const torch::Tensor& curr, const torch::Tensor& next);

private:
    ModelConfig config_;
    std::shared_ptr<flow::FlowEstimator> estimator_;
    Encoder content_{nullptr};
    Encoder motion_{nullptr};
    torch::nn::Conv2d fuse_{nullptr};
    torch::nn::Sequential residual_{nullptr};
    ConvLSTMCell lstm_{nullptr};
    Decoder decoder_{nullptr};
};

}  // namespace tempoc::model
