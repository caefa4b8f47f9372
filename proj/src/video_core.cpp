#include "tempoc/video_core.hpp"

#include "tempoc/errors.hpp"

#include <algorithm>
#include <cstdlib>

namespace tempoc {

std::string to_string(Role role)
{
    switch (role) {
    case Role::raw: return "raw";
    case Role::processed: return "processed";
    case Role::output: return "output";
    }
    return "unknown";
}

VideoSequence::VideoSequence(torch::Tensor frames, Role role, int64_t first_index)
    : frames_(std::move(frames)), role_(role), first_index_(first_index)
{
    TEMPOC_REQUIRE(frames_.defined() && frames_.dim() == 4 && frames_.size(1) == 3,
                   "VideoSequence expects a [T, 3, H, W] tensor");
    TEMPOC_REQUIRE(frames_.size(0) >= 1, "VideoSequence needs at least one frame");
    TEMPOC_REQUIRE(frames_.size(2) >= core::kMinFrameSize && frames_.size(3) >= core::kMinFrameSize,
                   "frame height and width must be at least 8");
    TEMPOC_REQUIRE(first_index_ >= 0, "frame timestamps are nonnegative");
}

VideoSequence VideoSequence::from_frames(const std::vector<Frame>& frames, Role role)
{
    TEMPOC_REQUIRE(!frames.empty(), "VideoSequence needs at least one frame");
    std::vector<torch::Tensor> pixels;
    pixels.reserve(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) {
        TEMPOC_REQUIRE(frames[i].index == frames[0].index + static_cast<int64_t>(i),
                       "frame timestamps must increase by exactly 1");
        TEMPOC_REQUIRE(frames[i].pixels.sizes() == frames[0].pixels.sizes(),
                       "all frames of a sequence must share dimensions");
        pixels.push_back(frames[i].pixels);
    }
    return {torch::stack(pixels), role, frames[0].index};
}

Frame VideoSequence::frame(int64_t t) const
{
    TEMPOC_REQUIRE(t >= 0 && t < length(), "frame index out of range");
    return {frames_[t], first_index_ + t};
}

namespace core {

bool all_finite(const torch::Tensor& t)
{
    return torch::isfinite(t).all().item<bool>();
}

namespace {

void require_same_spatial(const torch::Tensor& a, const torch::Tensor& b, const char* what)
{
    TEMPOC_REQUIRE(a.dim() == 4 && b.dim() == 4, std::string(what) + ": expected 4-D tensors");
    TEMPOC_REQUIRE(a.size(0) == b.size(0) && a.size(2) == b.size(2) && a.size(3) == b.size(3),
                   std::string(what) + ": dimension mismatch");
}

void require_flow(const torch::Tensor& flow, const char* what)
{
    TEMPOC_REQUIRE(flow.dim() == 4 && flow.size(1) == 2,
                   std::string(what) + ": flow must be [N, 2, H, W]");
}

}  // namespace

torch::Tensor backward_warp(const torch::Tensor& source, const torch::Tensor& flow)
{
    require_flow(flow, "backward_warp");
    require_same_spatial(source, flow, "backward_warp");
    TEMPOC_REQUIRE(source.scalar_type() == flow.scalar_type(),
                   "backward_warp: source and flow dtypes differ");
    TEMPOC_REQUIRE(all_finite(flow), "backward_warp: flow contains non-finite values");

    const int64_t n = source.size(0);
    const int64_t c = source.size(1);
    const int64_t h = source.size(2);
    const int64_t w = source.size(3);

    auto opts = flow.options();
    auto xs = torch::arange(w, opts).view({1, 1, w});
    auto ys = torch::arange(h, opts).view({1, h, 1});

    // clamp() passes gradient inside [lo, hi] (inclusive) and blocks it outside.
    auto px = (xs + flow.select(1, 0)).clamp(0, static_cast<double>(w - 1));
    auto py = (ys + flow.select(1, 1)).clamp(0, static_cast<double>(h - 1));

    // Left/top corner, kept one short of the border so the right/bottom neighbour
    // stays inside; the weight becomes 1 on the last row/column instead.
    auto x0 = px.detach().floor().clamp_max(static_cast<double>(std::max<int64_t>(w - 2, 0)));
    auto y0 = py.detach().floor().clamp_max(static_cast<double>(std::max<int64_t>(h - 2, 0)));
    auto wx = (px - x0).unsqueeze(1);
    auto wy = (py - y0).unsqueeze(1);

    auto x0i = x0.to(torch::kLong);
    auto y0i = y0.to(torch::kLong);
    auto x1i = (x0i + 1).clamp_max(w - 1);
    auto y1i = (y0i + 1).clamp_max(h - 1);

    auto flat = source.reshape({n, c, h * w});
    auto sample = [&](const torch::Tensor& yi, const torch::Tensor& xi) {
        auto idx = (yi * w + xi).reshape({n, 1, h * w}).expand({n, c, h * w});
        return flat.gather(2, idx).reshape({n, c, h, w});
    };

    auto top = sample(y0i, x0i) * (1 - wx) + sample(y0i, x1i) * wx;
    auto bottom = sample(y1i, x0i) * (1 - wx) + sample(y1i, x1i) * wx;
    return top * (1 - wy) + bottom * wy;
}

Frame backward_warp(const Frame& source, const FlowField& flow)
{
    auto out = backward_warp(source.pixels.unsqueeze(0), flow.vectors.unsqueeze(0));
    return {out.squeeze(0), flow.target_index};
}

torch::Tensor mask_from_residual(const torch::Tensor& residual, double alpha)
{
    TEMPOC_REQUIRE(alpha > 0.0, "occlusion mask alpha must be positive");
    return torch::exp(-alpha * residual.pow(2).sum(1, /*keepdim=*/true));
}

torch::Tensor occlusion_mask(const torch::Tensor& target, const torch::Tensor& source,
                             const torch::Tensor& flow, double alpha)
{
    require_same_spatial(target, source, "occlusion_mask");
    TEMPOC_REQUIRE(target.size(1) == source.size(1), "occlusion_mask: channel mismatch");
    TEMPOC_REQUIRE(alpha > 0.0, "occlusion mask alpha must be positive");
    return mask_from_residual(target - backward_warp(source, flow), alpha);
}

OcclusionMask occlusion_mask(const Frame& target, const Frame& source, const FlowField& flow,
                             double alpha)
{
    auto m = occlusion_mask(target.pixels.unsqueeze(0), source.pixels.unsqueeze(0),
                            flow.vectors.unsqueeze(0), alpha);
    return {m.squeeze(0)};
}

torch::Tensor flow_spatial_gradient(const torch::Tensor& flow)
{
    require_flow(flow, "flow_spatial_gradient");
    using torch::indexing::None;
    using torch::indexing::Slice;

    auto dx = torch::constant_pad_nd(
        flow.index({Slice(), Slice(), Slice(), Slice(1, None)}) -
            flow.index({Slice(), Slice(), Slice(), Slice(None, -1)}),
        {0, 1, 0, 0});
    auto dy = torch::constant_pad_nd(
        flow.index({Slice(), Slice(), Slice(1, None), Slice()}) -
            flow.index({Slice(), Slice(), Slice(None, -1), Slice()}),
        {0, 0, 0, 1});

    return torch::cat({dx.narrow(1, 0, 1), dy.narrow(1, 0, 1), dx.narrow(1, 1, 1), dy.narrow(1, 1, 1)},
                      1);
}

torch::Tensor flow_noise(const torch::Tensor& flow_inconsistent, const torch::Tensor& flow_consistent)
{
    TEMPOC_REQUIRE(flow_inconsistent.sizes() == flow_consistent.sizes(),
                   "flow_noise: dimension mismatch");
    return flow_inconsistent - flow_consistent;
}

FlowField flow_noise(const FlowField& flow_inconsistent, const FlowField& flow_consistent)
{
    return {flow_noise(flow_inconsistent.vectors, flow_consistent.vectors),
            flow_inconsistent.source_index, flow_inconsistent.target_index};
}

NoiseBoundaryStats noise_boundary_stats(const torch::Tensor& noise, const torch::Tensor& flow_consistent)
{
    TEMPOC_REQUIRE(noise.sizes() == flow_consistent.sizes(), "noise_boundary_stats: dimension mismatch");
    torch::NoGradGuard no_grad;
    auto energy = noise.pow(2).sum(1);
    auto boundary = flow_spatial_gradient(flow_consistent).abs().sum(1);
    NoiseBoundaryStats stats;
    stats.uniform_energy = energy.mean().item<double>();
    const double total_weight = boundary.sum().item<double>();
    if (total_weight > 0.0)
        stats.weighted_energy = (energy * boundary).sum().item<double>() / total_weight;
    return stats;
}

torch::Device default_device()
{
    const char* env = std::getenv("TEMPOC_DEVICE");
    const std::string choice = env ? env : "auto";
    if (choice == "cpu")
        return torch::kCPU;
    if (choice == "cuda") {
        if (!torch::cuda::is_available())
            throw ConfigError("TEMPOC_DEVICE=cuda but no CUDA device is available");
        return torch::kCUDA;
    }
    if (choice == "auto" || choice.empty())
        return torch::cuda::is_available() ? torch::Device(torch::kCUDA) : torch::Device(torch::kCPU);
    throw ConfigError("unknown TEMPOC_DEVICE value '" + choice + "' (expected cpu, cuda or auto)");
}

}  // namespace core
}  // namespace tempoc
