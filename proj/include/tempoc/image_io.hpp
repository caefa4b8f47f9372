#pragma once

#include "tempoc/video_core.hpp"

#include <filesystem>
#include <utility>
#include <vector>

namespace tempoc::io {

/// 8-bit RGB(A)/gray PNG to a [3, H, W] float tensor in [0, 1].
torch::Tensor read_png(const std::filesystem::path& path);

/// [3, H, W] tensor in [0, 1] to 8-bit RGB PNG, value * 255 rounded half-up.
void write_png(const std::filesystem::path& path, const torch::Tensor& pixels);

/// (width, height) from the PNG header without decoding pixel data.
std::pair<int64_t, int64_t> png_dimensions(const std::filesystem::path& path);

/// Numerically named PNGs in dir, sorted by their numeric stem.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

VideoSequence load_video(const std::filesystem::path& dir, Role role);

/// Writes 00001.png, 00002.png, ... (directory created if needed).
void save_video(const std::filesystem::path& dir, const VideoSequence& video);

}  // namespace tempoc::io
