#pragma once

#include "tempoc/errors.hpp"
#include "tempoc/video_core.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tempoc::data {

/// Per-frame appearance perturbations standing in for an unknown per-frame
/// image operator. Every frame gets its own random draw, which is what makes the
/// result flicker.
///
/// families: any of "gamma", "gain" (per channel), "offset", "hue" (rotation
/// about the grey axis), "color_matrix" (random 3x3 mix). spatial adds a smooth
/// low-frequency gain field on top.
struct FlickerSpec {
    std::vector<std::string> families{"gamma", "gain", "offset"};
    double strength = 0.5;
    uint64_t seed = 0;
    bool spatial = false;

    void validate() const;
};

VideoSequence synthesize_flicker(const VideoSequence& raw, const FlickerSpec& spec);

/// Stable 64-bit seed from (global seed, clip id, index); sample content does
/// not depend on the order in which samples are drawn.
uint64_t derive_seed(uint64_t global, std::string_view clip_id, uint64_t index);

/// One entry of a manifest file.
struct ClipManifest {
    std::string id;
    std::filesystem::path raw_dir;
    std::optional<std::filesystem::path> processed_dir;
    int64_t frames = 0;
    int64_t width = 0;
    int64_t height = 0;
};

struct ManifestLoad {
    std::vector<ClipManifest> clips;
    std::vector<std::string> errors;    // one per excluded clip
    std::vector<std::string> warnings;
};

/// Parses and validates a manifest: a JSON array of
/// {id, raw_dir, processed_dir?, frames, width, height}. Structural problems
/// throw ConfigError with a line number; clips whose directories don't match
/// their entry are excluded and reported in `errors`. Relative directories are
/// resolved against the manifest's own directory.
ManifestLoad load_manifest(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const std::vector<ClipManifest>& clips);

/// A clip held in memory, raw and processed aligned frame by frame.
struct ClipData {
    std::string id;
    VideoSequence raw;
    VideoSequence processed;
};

/// Loads frames from disk. A clip without processed_dir gets processed frames
/// from `flicker` (seeded per clip), or throws ConfigError if none is given.
ClipData load_clip(const ClipManifest& manifest, const std::optional<FlickerSpec>& flicker = std::nullopt);

struct TrainingSample {
    torch::Tensor raw;        // [T, 3, patch, patch]
    torch::Tensor processed;  // [T, 3, patch, patch]
    int64_t start = 0;
    int64_t crop_y = 0;
    int64_t crop_x = 0;
    std::string clip_id;
};

/// Raised when a clip is too short or too small for the requested window.
class ClipTooSmall : public ContractViolation {
public:
    using ContractViolation::ContractViolation;
};

/// Uniform random start frame and crop origin, identical for raw and processed.
TrainingSample sample_window(const ClipData& clip, int64_t frames, int64_t patch, uint64_t seed);
TrainingSample sample_window(const ClipManifest& manifest, int64_t frames, int64_t patch, uint64_t seed);

/// True when the clip can supply a (frames x patch x patch) window.
bool supports_window(const ClipData& clip, int64_t frames, int64_t patch);

}  // namespace tempoc::data
