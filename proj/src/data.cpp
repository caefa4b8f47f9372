#include "tempoc/data.hpp"

#include "tempoc/image_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tempoc::data {

namespace {

constexpr std::array<std::string_view, 5> kFamilies{"gamma", "gain", "offset", "hue", "color_matrix"};

uint64_t splitmix64(uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t fnv1a(std::string_view s)
{
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// 3x3 rotation by `angle` about the grey axis (1, 1, 1) / sqrt(3).
torch::Tensor hue_rotation(double angle)
{
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double k = (1.0 - c) / 3.0;
    const double r = s / std::sqrt(3.0);
    return torch::tensor({c + k, k - r, k + r, k + r, c + k, k - r, k - r, k + r, c + k}, torch::kFloat32)
        .view({3, 3});
}

torch::Tensor apply_matrix(const torch::Tensor& frame, const torch::Tensor& m)
{
    return torch::einsum("ij,jhw->ihw", {m, frame});
}

torch::Tensor perturb_frame(const torch::Tensor& frame, const FlickerSpec& spec, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double s = spec.strength;
    auto x = frame;
    for (const auto& family : spec.families) {
        if (family == "gamma") {
            x = x.clamp_min(0.0).pow(std::exp(0.5 * s * u(rng)));
        } else if (family == "gain") {
            auto gains = torch::tensor({1.0 + 0.3 * s * u(rng), 1.0 + 0.3 * s * u(rng), 1.0 + 0.3 * s * u(rng)},
                                       torch::kFloat32);
            x = x * gains.view({3, 1, 1});
        } else if (family == "offset") {
            x = x + 0.2 * s * u(rng);
        } else if (family == "hue") {
            const auto mean = x.mean(std::vector<int64_t>{1, 2}, true);
            x = apply_matrix(x - mean, hue_rotation(0.6 * s * u(rng))) + mean;
        } else if (family == "color_matrix") {
            auto m = torch::eye(3, torch::kFloat32);
            for (int64_t i = 0; i < 3; ++i)
                for (int64_t j = 0; j < 3; ++j)
                    m[i][j] += 0.2 * s * u(rng);
            const auto mean = x.mean(std::vector<int64_t>{1, 2}, true);
            x = apply_matrix(x - mean, m) + mean;
        }
    }
    if (spec.spatial) {
        // Smooth gain field: two random low-frequency waves, periods >= the frame size.
        const int64_t h = frame.size(1);
        const int64_t w = frame.size(2);
        auto ys = torch::arange(h, torch::kFloat32).view({h, 1});
        auto xs = torch::arange(w, torch::kFloat32).view({1, w});
        auto field = torch::zeros({h, w}, torch::kFloat32);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
        for (int k = 0; k < 2; ++k) {
            const double fx = u(rng) * std::numbers::pi / static_cast<double>(w);
            const double fy = u(rng) * std::numbers::pi / static_cast<double>(h);
            field = field + 0.5 * torch::sin(fx * xs + fy * ys + phase(rng));
        }
        x = x * (1.0 + 0.3 * s * field).unsqueeze(0);
    }
    return x.clamp(0.0, 1.0);
}

int64_t line_of_offset(const std::string& text, size_t byte)
{
    byte = std::min(byte, text.size());
    return 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n');
}

}  // namespace

void FlickerSpec::validate() const
{
    TEMPOC_REQUIRE(std::isfinite(strength) && strength >= 0.0 && strength <= 1.0,
                   "flicker strength must lie in [0, 1]");
    for (const auto& f : families)
        if (std::find(kFamilies.begin(), kFamilies.end(), f) == kFamilies.end())
            throw ConfigError("unknown perturbation family '" + f + "'");
}

uint64_t derive_seed(uint64_t global, std::string_view clip_id, uint64_t index)
{
    return splitmix64(splitmix64(global) ^ splitmix64(fnv1a(clip_id)) ^ splitmix64(index * 0x2545f4914f6cdd1dULL));
}

VideoSequence synthesize_flicker(const VideoSequence& raw, const FlickerSpec& spec)
{
    spec.validate();
    if (spec.strength == 0.0)
        return {raw.tensor().clone(), Role::processed, raw.first_index()};

    auto frames = raw.tensor().to(torch::kCPU, torch::kFloat32);
    std::vector<torch::Tensor> out;
    out.reserve(frames.size(0));
    for (int64_t t = 0; t < frames.size(0); ++t) {
        std::mt19937_64 rng(derive_seed(spec.seed, "flicker", static_cast<uint64_t>(t)));
        out.push_back(perturb_frame(frames[t], spec, rng));
    }
    return {torch::stack(out).to(raw.tensor().device()), Role::processed, raw.first_index()};
}

// ---------------------------------------------------------------------------

ManifestLoad load_manifest(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open manifest '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();

    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ":" + std::to_string(line_of_offset(text, e.byte)) +
                          ": malformed manifest: " + e.what());
    }
    if (!doc.is_array())
        throw ConfigError(path.string() + ":1: manifest must be a JSON array of clips");

    ManifestLoad result;
    if (doc.empty())
        result.warnings.push_back("manifest '" + path.string() + "' lists no clips");

    for (size_t i = 0; i < doc.size(); ++i) {
        const auto& entry = doc[i];
        const std::string where = path.string() + ": clip #" + std::to_string(i);
        if (!entry.is_object())
            throw ConfigError(where + ": entries must be objects");
        for (const auto& [key, value] : entry.items())
            if (key != "id" && key != "raw_dir" && key != "processed_dir" && key != "frames" && key != "width" &&
                key != "height")
                throw ConfigError(where + ": unknown key '" + key + "'");

        ClipManifest clip;
        try {
            clip.id = entry.at("id").get<std::string>();
            clip.raw_dir = entry.at("raw_dir").get<std::string>();
            if (entry.contains("processed_dir") && !entry.at("processed_dir").is_null())
                clip.processed_dir = fs::path(entry.at("processed_dir").get<std::string>());
            clip.frames = entry.at("frames").get<int64_t>();
            clip.width = entry.at("width").get<int64_t>();
            clip.height = entry.at("height").get<int64_t>();
        } catch (const json::exception& e) {
            throw ConfigError(where + ": " + e.what());
        }
        // Relative directories are relative to the manifest file.
        const auto base = path.parent_path();
        if (clip.raw_dir.is_relative())
            clip.raw_dir = base / clip.raw_dir;
        if (clip.processed_dir && clip.processed_dir->is_relative())
            clip.processed_dir = base / *clip.processed_dir;

        auto check_dir = [&](const fs::path& dir, const char* role) -> std::optional<std::string> {
            if (!fs::is_directory(dir))
                return "clip '" + clip.id + "': " + role + " directory '" + dir.string() + "' does not exist";
            const auto frames = io::list_frames(dir);
            if (frames.empty())
                return "clip '" + clip.id + "': " + role + " directory '" + dir.string() + "' has no frames";
            if (static_cast<int64_t>(frames.size()) != clip.frames)
                return "clip '" + clip.id + "': " + role + " directory has " + std::to_string(frames.size()) +
                       " frames, manifest says " + std::to_string(clip.frames);
            try {
                const auto [w, h] = io::png_dimensions(frames.front());
                if (w != clip.width || h != clip.height)
                    return "clip '" + clip.id + "': " + role + " frames are " + std::to_string(w) + "x" +
                           std::to_string(h) + ", manifest says " + std::to_string(clip.width) + "x" +
                           std::to_string(clip.height);
            } catch (const ConfigError& e) {
                return "clip '" + clip.id + "': " + e.what();
            }
            return std::nullopt;
        };

        auto problem = check_dir(clip.raw_dir, "raw");
        if (!problem && clip.processed_dir)
            problem = check_dir(*clip.processed_dir, "processed");
        if (problem)
            result.errors.push_back(*problem);
        else
            result.clips.push_back(std::move(clip));
    }
    return result;
}

void write_manifest(const fs::path& path, const std::vector<ClipManifest>& clips)
{
    json doc = json::array();
    for (const auto& c : clips) {
        json entry{{"id", c.id}, {"raw_dir", c.raw_dir.string()}, {"frames", c.frames},
                   {"width", c.width}, {"height", c.height}};
        if (c.processed_dir)
            entry["processed_dir"] = c.processed_dir->string();
        doc.push_back(std::move(entry));
    }
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write manifest '" + path.string() + "'");
    out << doc.dump(2) << "\n";
}

ClipData load_clip(const ClipManifest& manifest, const std::optional<FlickerSpec>& flicker)
{
    ClipData clip;
    clip.id = manifest.id;
    clip.raw = io::load_video(manifest.raw_dir, Role::raw);
    if (manifest.processed_dir) {
        clip.processed = io::load_video(*manifest.processed_dir, Role::processed);
        if (clip.processed.tensor().sizes() != clip.raw.tensor().sizes())
            throw ConfigError("clip '" + manifest.id + "': raw and processed frames are not aligned");
    } else if (flicker) {
        auto spec = *flicker;
        spec.seed = derive_seed(flicker->seed, manifest.id, 0);
        clip.processed = synthesize_flicker(clip.raw, spec);
    } else {
        throw ConfigError("clip '" + manifest.id + "' has no processed frames and no flicker spec to make them");
    }
    return clip;
}

bool supports_window(const ClipData& clip, int64_t frames, int64_t patch)
{
    return clip.raw.length() >= frames && clip.raw.height() >= patch && clip.raw.width() >= patch;
}

TrainingSample sample_window(const ClipData& clip, int64_t frames, int64_t patch, uint64_t seed)
{
    TEMPOC_REQUIRE(frames >= 1 && patch >= 1, "sample_window: window must be non-empty");
    if (!supports_window(clip, frames, patch))
        throw ClipTooSmall("clip '" + clip.id + "' (" + std::to_string(clip.raw.length()) + " frames, " +
                           std::to_string(clip.raw.width()) + "x" + std::to_string(clip.raw.height()) +
                           ") cannot supply a " + std::to_string(frames) + "-frame " + std::to_string(patch) +
                           "px window");

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> pick_start(0, clip.raw.length() - frames);
    std::uniform_int_distribution<int64_t> pick_y(0, clip.raw.height() - patch);
    std::uniform_int_distribution<int64_t> pick_x(0, clip.raw.width() - patch);

    TrainingSample sample;
    sample.clip_id = clip.id;
    sample.start = pick_start(rng);
    sample.crop_y = pick_y(rng);
    sample.crop_x = pick_x(rng);

    using torch::indexing::Slice;
    const auto window = std::vector<at::indexing::TensorIndex>{
        Slice(sample.start, sample.start + frames), Slice(), Slice(sample.crop_y, sample.crop_y + patch),
        Slice(sample.crop_x, sample.crop_x + patch)};
    sample.raw = clip.raw.tensor().index(window);
    sample.processed = clip.processed.tensor().index(window);
    return sample;
}

TrainingSample sample_window(const ClipManifest& manifest, int64_t frames, int64_t patch, uint64_t seed)
{
    return sample_window(load_clip(manifest), frames, patch, seed);
}

}  // namespace tempoc::data
