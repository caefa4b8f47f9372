#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace tempoc {

/// Which stage of the pipeline a clip belongs to.
enum class Role { raw, processed, output };

std::string to_string(Role role);

/// One RGB frame, pixels stored channel-first as [3, H, W] in [0, 1].
struct Frame {
    torch::Tensor pixels;
    int64_t index = 0;
};

/// Dense displacement field [2, H, W] (horizontal, vertical), in pixels.
/// Maps target-frame coordinates to source-frame coordinates.
struct FlowField {
    torch::Tensor vectors;
    int64_t source_index = 0;
    int64_t target_index = 0;
};

/// Per-pixel confidence [1, H, W] in [0, 1].
struct OcclusionMask {
    torch::Tensor weights;
};

/// An ordered clip stored as a single [T, 3, H, W] tensor. Frame timestamps are
/// first_index, first_index + 1, ...
class VideoSequence {
public:
    VideoSequence() = default;
    VideoSequence(torch::Tensor frames, Role role, int64_t first_index = 0);

    static VideoSequence from_frames(const std::vector<Frame>& frames, Role role);

    int64_t length() const { return frames_.defined() ? frames_.size(0) : 0; }
    int64_t height() const { return frames_.size(2); }
    int64_t width() const { return frames_.size(3); }
    Role role() const { return role_; }
    int64_t first_index() const { return first_index_; }

    const torch::Tensor& tensor() const { return frames_; }
    Frame frame(int64_t t) const;

    VideoSequence with_role(Role role) const { return {frames_, role, first_index_}; }

private:
    torch::Tensor frames_;
    Role role_ = Role::raw;
    int64_t first_index_ = 0;
};

namespace core {

/// Minimum frame edge accepted by the frame/sequence types.
inline constexpr int64_t kMinFrameSize = 8;

/// Default sharpness of the photometric occlusion mask.
inline constexpr double kDefaultMaskAlpha = 50.0;

bool all_finite(const torch::Tensor& t);

/// Bilinear backward warp with border clamping.
///
/// out(x, y) = source(x + u(x, y), y + v(x, y)), sampling coordinates clamped to
/// [0, W-1] x [0, H-1]. source is [N, C, H, W], flow is [N, 2, H, W]. Built from
/// differentiable tensor ops, so autograd reaches both source pixels and flow.
/// Zero flow reproduces the source bit-exactly.
torch::Tensor backward_warp(const torch::Tensor& source, const torch::Tensor& flow);
Frame backward_warp(const Frame& source, const FlowField& flow);

/// exp(-alpha * ||target - warp(source, flow)||^2), squared norm summed over
/// channels. Returns [N, 1, H, W].
torch::Tensor occlusion_mask(const torch::Tensor& target, const torch::Tensor& source,
                             const torch::Tensor& flow, double alpha = kDefaultMaskAlpha);
OcclusionMask occlusion_mask(const Frame& target, const Frame& source, const FlowField& flow,
                             double alpha = kDefaultMaskAlpha);

/// Mask from an already computed residual map [N, C, H, W].
torch::Tensor mask_from_residual(const torch::Tensor& residual, double alpha);

/// Forward differences (du/dx, du/dy, dv/dx, dv/dy) of a [N, 2, H, W] flow.
/// The last column (x-differences) and last row (y-differences) are zero.
torch::Tensor flow_spatial_gradient(const torch::Tensor& flow);

/// of_inconsistent - of_consistent. Diagnostic only.
torch::Tensor flow_noise(const torch::Tensor& flow_inconsistent,
                         const torch::Tensor& flow_consistent);
FlowField flow_noise(const FlowField& flow_inconsistent, const FlowField& flow_consistent);

/// Where does flow noise live? weighted_energy is the mean squared noise
/// magnitude weighted by the consistent flow's gradient magnitude; uniform_energy
/// is the unweighted mean. weighted > uniform means noise concentrates on
/// motion boundaries.
struct NoiseBoundaryStats {
    double weighted_energy = 0.0;
    double uniform_energy = 0.0;
    double ratio() const { return uniform_energy > 0.0 ? weighted_energy / uniform_energy : 0.0; }
};

NoiseBoundaryStats noise_boundary_stats(const torch::Tensor& noise,
                                        const torch::Tensor& flow_consistent);

/// Selected from TEMPOC_DEVICE ("cpu", "cuda", "auto"; default auto).
torch::Device default_device();

}  // namespace core
}  // namespace tempoc
