#include "tempoc/model.hpp"

#include "tempoc/errors.hpp"

namespace tempoc::model {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1)
{
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::LeakyReLU activation()
{
    return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2));
}

torch::Tensor upsample2x(const torch::Tensor& x)
{
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

}  // namespace

ConvLSTMCellImpl::ConvLSTMCellImpl(int64_t input_channels, int64_t hidden_channels, int64_t kernel)
    : hidden_channels_(hidden_channels)
{
    gates_ = register_module(
        "gates", torch::nn::Conv2d(torch::nn::Conv2dOptions(input_channels + hidden_channels, 4 * hidden_channels,
                                                            kernel)
                                       .padding(kernel / 2)));
    torch::NoGradGuard no_grad;
    // Forget gate bias 1: the cell starts out remembering.
    gates_->bias.narrow(0, hidden_channels, hidden_channels).fill_(1.0);
}

RecurrentState ConvLSTMCellImpl::forward(const torch::Tensor& input, const RecurrentState& state)
{
    torch::Tensor hidden = state.hidden;
    torch::Tensor cell = state.cell;
    if (state.empty()) {
        hidden = torch::zeros({input.size(0), hidden_channels_, input.size(2), input.size(3)}, input.options());
        cell = torch::zeros_like(hidden);
    }
    TEMPOC_REQUIRE(hidden.size(0) == input.size(0) && hidden.size(2) == input.size(2) &&
                       hidden.size(3) == input.size(3),
                   "recurrent state does not match the bottleneck size");

    auto gates = gates_->forward(torch::cat({input, hidden}, 1)).chunk(4, 1);
    auto in_gate = torch::sigmoid(gates[0]);
    auto forget_gate = torch::sigmoid(gates[1]);
    auto out_gate = torch::sigmoid(gates[2]);
    auto candidate = torch::tanh(gates[3]);
    auto next_cell = forget_gate * cell + in_gate * candidate;
    return {out_gate * torch::tanh(next_cell), next_cell};
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels)
{
    conv1_ = register_module("conv1", conv3x3(channels, channels));
    conv2_ = register_module("conv2", conv3x3(channels, channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x)
{
    return x + conv2_->forward(F::leaky_relu(conv1_->forward(x), F::LeakyReLUFuncOptions().negative_slope(0.2)));
}

EncoderImpl::EncoderImpl(int64_t input_channels, const std::vector<int64_t>& widths)
{
    int64_t in = input_channels;
    for (size_t i = 0; i < widths.size(); ++i) {
        torch::nn::Sequential stage(conv3x3(in, widths[i], 2), activation(), conv3x3(widths[i], widths[i]),
                                    activation());
        stages_.push_back(register_module("stage" + std::to_string(i), stage));
        in = widths[i];
    }
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& x)
{
    std::vector<torch::Tensor> features;
    auto h = x;
    for (auto& stage : stages_) {
        h = stage->forward(h);
        features.push_back(h);
    }
    return features;
}

DecoderImpl::DecoderImpl(int64_t bottleneck_channels, const std::vector<int64_t>& widths, int64_t input_channels)
{
    const auto depth = static_cast<int64_t>(widths.size());
    int64_t in = bottleneck_channels;
    for (int64_t level = depth - 1; level >= 0; --level) {
        // Stage output lands at the resolution of encoder stage level - 1 (or the
        // input for level 0), so its skip comes from there.
        const int64_t skip = level > 0 ? widths[level - 1] : input_channels;
        const int64_t out = level > 0 ? widths[level - 1] : widths[0];
        torch::nn::Sequential stage(conv3x3(in + skip, out), activation());
        stages_.push_back(register_module("stage" + std::to_string(depth - 1 - level), stage));
        in = out;
    }
    head_ = register_module("head", conv3x3(in, 3));
    torch::NoGradGuard no_grad;
    head_->weight.zero_();
    head_->bias.zero_();
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips,
                                   const torch::Tensor& input)
{
    auto h = bottleneck;
    const auto depth = static_cast<int64_t>(stages_.size());
    for (int64_t i = 0; i < depth; ++i) {
        const int64_t level = depth - 1 - i;
        const auto& skip = level > 0 ? skips[level - 1] : input;
        h = stages_[i]->forward(torch::cat({upsample2x(h), skip}, 1));
    }
    return head_->forward(h);
}

RestorationNet::RestorationNet(ModelConfig config, std::shared_ptr<flow::FlowEstimator> estimator)
    : config_(std::move(config)), estimator_(std::move(estimator))
{
    TEMPOC_REQUIRE(estimator_ != nullptr, "RestorationNet needs a flow estimator");
    TEMPOC_REQUIRE(!config_.widths.empty(), "RestorationNet needs at least one encoder stage");
    TEMPOC_REQUIRE(config_.residual_blocks >= 0 && config_.lstm_channels > 0, "invalid bottleneck sizes");
    TEMPOC_REQUIRE(config_.flow_scale > 0.0, "flow_scale must be positive");

    const int64_t bottleneck = config_.widths.back();
    register_module("flow", estimator_);
    content_ = register_module("content_encoder", Encoder(9, config_.widths));
    motion_ = register_module("motion_encoder", Encoder(4, config_.widths));
    fuse_ = register_module("fuse", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * bottleneck, bottleneck, 1)));
    residual_ = register_module("residual", torch::nn::Sequential());
    for (int64_t i = 0; i < config_.residual_blocks; ++i)
        residual_->push_back(ResidualBlock(bottleneck));
    lstm_ = register_module("lstm", ConvLSTMCell(bottleneck, config_.lstm_channels));
    decoder_ = register_module("decoder", Decoder(config_.lstm_channels, config_.widths, 9));
}

torch::Tensor RestorationNet::motion_flows(const torch::Tensor& prev, const torch::Tensor& curr,
                                           const torch::Tensor& next)
{
    // Both passes go through the same estimator in one batch.
    auto flows = estimator_->estimate(torch::cat({curr, curr}, 0), torch::cat({prev, next}, 0));
    auto halves = flows.chunk(2, 0);
    return torch::cat({halves[0], halves[1]}, 1);
}

std::pair<torch::Tensor, RecurrentState> RestorationNet::forward_step(const torch::Tensor& prev,
                                                                      const torch::Tensor& curr,
                                                                      const torch::Tensor& next,
                                                                      const RecurrentState& state)
{
    TEMPOC_REQUIRE(curr.dim() == 4 && curr.size(1) == 3, "forward_step: frames must be [N, 3, H, W]");
    TEMPOC_REQUIRE(prev.sizes() == curr.sizes() && next.sizes() == curr.sizes(),
                   "forward_step: triplet frames differ in size");

    const int64_t h = curr.size(2);
    const int64_t w = curr.size(3);
    const int64_t s = stride();
    const int64_t pad_h = (s - h % s) % s;
    const int64_t pad_w = (s - w % s) % s;
    auto pad = [&](const torch::Tensor& x) {
        if (pad_h == 0 && pad_w == 0)
            return x;
        return F::pad(x, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReflect));
    };
    auto p_prev = pad(prev);
    auto p_curr = pad(curr);
    auto p_next = pad(next);

    auto triplet = torch::cat({p_prev, p_curr, p_next}, 1);
    auto content = content_->forward(triplet);
    auto motion = motion_->forward(motion_flows(p_prev, p_curr, p_next) / config_.flow_scale);

    auto fused = fuse_->forward(torch::cat({content.back(), motion.back()}, 1));
    fused = residual_->forward(fused);
    auto next_state = lstm_->forward(fused, state);

    auto residual = decoder_->forward(next_state.hidden, content, triplet);
    auto out = (p_curr + residual).clamp(0.0, 1.0);
    if (pad_h != 0 || pad_w != 0) {
        using torch::indexing::Slice;
        out = out.index({Slice(), Slice(), Slice(0, h), Slice(0, w)});
    }
    return {out, next_state};
}

torch::Tensor RestorationNet::process_sequence(const torch::Tensor& processed, int64_t truncation)
{
    TEMPOC_REQUIRE(processed.dim() == 4 || processed.dim() == 5,
                   "process_sequence expects [T, 3, H, W] or [B, T, 3, H, W]");
    const bool batched = processed.dim() == 5;
    auto clip = (batched ? processed : processed.unsqueeze(0)).to(parameters().front().device());
    const int64_t frames = clip.size(1);
    TEMPOC_REQUIRE(frames >= 3, "process_sequence needs at least 3 frames");
    TEMPOC_REQUIRE(truncation >= 0, "truncation must be >= 0");

    std::vector<torch::Tensor> outputs{clip.select(1, 0)};
    RecurrentState state;
    for (int64_t t = 1; t < frames; ++t) {
        auto next = clip.select(1, t + 1 < frames ? t + 1 : t);
        auto [out, updated] = forward_step(clip.select(1, t - 1), clip.select(1, t), next, state);
        outputs.push_back(out);
        state = std::move(updated);
        if (truncation > 0 && t % truncation == 0) {
            state.hidden = state.hidden.detach();
            state.cell = state.cell.detach();
        }
    }
    auto result = torch::stack(outputs, 1);
    return batched ? result : result.squeeze(0);
}

VideoSequence RestorationNet::process_sequence(const VideoSequence& processed)
{
    return {process_sequence(processed.tensor()).to(torch::kCPU), Role::output, processed.first_index()};
}

std::vector<ParameterGroup> RestorationNet::parameter_groups() const
{
    std::vector<torch::Tensor> bottleneck = fuse_->parameters();
    for (const auto& p : residual_->parameters())
        bottleneck.push_back(p);
    for (const auto& p : lstm_->parameters())
        bottleneck.push_back(p);
    return {
        {"content_encoder", content_->parameters()},
        {"motion_encoder", motion_->parameters()},
        {"flow_estimator", estimator_->parameters()},
        {"bottleneck", bottleneck},
        {"decoder", decoder_->parameters()},
    };
}

}  // namespace tempoc::model
