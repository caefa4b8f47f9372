#pragma once

#include "tempoc/video_core.hpp"

#include <cstdint>

namespace tempoc::synth {

/// Smooth random colour texture defined over the continuous plane: a sum of
/// sinusoids with shared orientations and per-channel amplitudes and phases.
/// Values stay within [0.1, 0.9].
class Texture {
public:
    explicit Texture(uint64_t seed, int64_t components = 8, double min_period = 8.0,
                     double max_period = 32.0);

    /// xs, ys: [H, W] sample coordinates. Returns [3, H, W] float32.
    torch::Tensor render(const torch::Tensor& xs, const torch::Tensor& ys) const;

private:
    torch::Tensor kx_, ky_;      // [K]
    torch::Tensor amplitude_;    // [3, K]
    torch::Tensor phase_;        // [3, K]
};

struct SceneOptions {
    int64_t frames = 12;
    int64_t height = 64;
    int64_t width = 64;
    double max_background_speed = 2.0;
    double max_object_speed = 3.0;
    bool foreground_object = true;
};

/// A rendered clip together with its exact backward flows: flows[t - 1] maps
/// frame t to frame t - 1, so backward_warp(frame[t-1], flows[t-1]) ~ frame[t]
/// wherever nothing was occluded.
struct SyntheticClip {
    VideoSequence raw;
    torch::Tensor flows;  // [T - 1, 2, H, W]
};

/// Textured background translating at a random velocity, optionally with a
/// differently textured disk moving on its own path (creating occlusions).
SyntheticClip make_scene_clip(const SceneOptions& options, uint64_t seed);

/// Pure translation: frame t shows the texture moved by t * velocity. Every
/// backward flow equals -velocity.
SyntheticClip make_translation_clip(int64_t frames, int64_t height, int64_t width, double vx, double vy,
                                    uint64_t seed);

}  // namespace tempoc::synth
