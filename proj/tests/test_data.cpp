#include "support.hpp"

#include "tempoc/data.hpp"
#include "tempoc/errors.hpp"
#include "tempoc/eval.hpp"
#include "tempoc/image_io.hpp"
#include "tempoc/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

using namespace tempoc;
using tempoc::testing::FixedFlowEstimator;
using tempoc::testing::TempDir;

namespace fs = std::filesystem;

namespace {

VideoSequence moving_clip(uint64_t seed = 3)
{
    return synth::make_translation_clip(8, 32, 32, 1.0, 0.0, seed).raw;
}

data::ClipData clip_of(int64_t frames, int64_t h, int64_t w, uint64_t seed)
{
    synth::SceneOptions o;
    o.frames = frames;
    o.height = h;
    o.width = w;
    auto raw = synth::make_scene_clip(o, seed).raw;
    data::FlickerSpec spec;
    spec.seed = seed;
    return {"clip" + std::to_string(seed), raw, data::synthesize_flicker(raw, spec)};
}

void write_clip(const fs::path& dir, int64_t frames, int64_t h, int64_t w)
{
    for (int64_t t = 0; t < frames; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05lld.png", static_cast<long long>(t + 1));
        io::write_png(dir / name, torch::rand({3, h, w}));
    }
}

}  // namespace

TEST(Flicker, ZeroStrengthIsIdentity)
{
    auto raw = moving_clip();
    data::FlickerSpec spec;
    spec.strength = 0.0;
    auto out = data::synthesize_flicker(raw, spec);
    EXPECT_TRUE(torch::equal(out.tensor(), raw.tensor()));
    EXPECT_EQ(out.role(), Role::processed);
}

TEST(Flicker, SameSpecIsBitwiseReproducible)
{
    auto raw = moving_clip();
    data::FlickerSpec spec;
    spec.families = {"gamma", "gain", "offset", "hue", "color_matrix"};
    spec.spatial = true;
    spec.seed = 42;
    auto a = data::synthesize_flicker(raw, spec);
    auto b = data::synthesize_flicker(raw, spec);
    EXPECT_TRUE(torch::equal(a.tensor(), b.tensor()));
    spec.seed = 43;
    EXPECT_FALSE(torch::equal(a.tensor(), data::synthesize_flicker(raw, spec).tensor()));
}

TEST(Flicker, EveryFamilyStaysInRangeAndFlickers)
{
    auto raw = moving_clip();
    for (const std::string family : {"gamma", "gain", "offset", "hue", "color_matrix"}) {
        data::FlickerSpec spec;
        spec.families = {family};
        spec.strength = 0.5;
        spec.seed = 9;
        auto out = data::synthesize_flicker(raw, spec).tensor();
        EXPECT_GE(out.min().item<float>(), 0.0f) << family;
        EXPECT_LE(out.max().item<float>(), 1.0f) << family;
        // Any change from one frame's perturbation to the next shows up here.
        auto delta = (out - raw.tensor()).view({out.size(0), -1});
        for (int64_t t = 1; t < out.size(0); ++t)
            EXPECT_FALSE(torch::allclose(delta[t], delta[t - 1], 0, 1e-6)) << family << " frame " << t;
    }
}

TEST(Flicker, PerFrameMeansVaryOverTime)
{
    auto raw = VideoSequence(torch::full({6, 3, 16, 16}, 0.5), Role::raw);
    data::FlickerSpec spec;
    spec.seed = 5;
    auto out = data::synthesize_flicker(raw, spec).tensor();
    auto means = out.mean(std::vector<int64_t>{1, 2, 3});
    for (int64_t t = 1; t < 6; ++t)
        EXPECT_NE(means[t].item<float>(), means[t - 1].item<float>());
}

TEST(Flicker, UnknownFamilyIsConfigError)
{
    data::FlickerSpec spec;
    spec.families = {"gamma", "sepia"};
    EXPECT_THROW(data::synthesize_flicker(moving_clip(), spec), ConfigError);
}

TEST(Flicker, RaisesWarpErrorWellAboveRaw)
{
    auto clip = synth::make_translation_clip(8, 32, 32, 1.0, 0.0, 3);
    FixedFlowEstimator oracle(clip.flows[0].unsqueeze(0));
    data::FlickerSpec spec;
    spec.seed = 11;
    auto processed = data::synthesize_flicker(clip.raw, spec);
    const double raw_error = eval::temporal_warp_error(clip.raw, std::nullopt, oracle).mean;
    const double self_error = eval::temporal_warp_error(processed, std::nullopt, oracle).mean;
    const double ref_error = eval::temporal_warp_error(processed, clip.raw, oracle).mean;
    EXPECT_GT(self_error, 1.5 * raw_error);
    EXPECT_GT(ref_error, 1.5 * raw_error);
}

TEST(DeriveSeed, StableAndSensitiveToEveryInput)
{
    EXPECT_EQ(data::derive_seed(1, "a", 2), data::derive_seed(1, "a", 2));
    std::set<uint64_t> seeds{data::derive_seed(1, "a", 2), data::derive_seed(2, "a", 2), data::derive_seed(1, "b", 2),
                             data::derive_seed(1, "a", 3)};
    EXPECT_EQ(seeds.size(), 4u);
}

TEST(SampleWindow, DegenerateWindowIsWholeClip)
{
    auto clip = clip_of(5, 16, 24, 1);
    // Non-square clips cannot use the full width with a square patch; the
    // square case covers the degenerate sample.
    auto square = clip_of(5, 16, 16, 2);
    auto s = data::sample_window(square, 5, 16, 77);
    EXPECT_EQ(s.start, 0);
    EXPECT_EQ(s.crop_y, 0);
    EXPECT_EQ(s.crop_x, 0);
    EXPECT_TRUE(torch::equal(s.raw, square.raw.tensor()));
    EXPECT_TRUE(torch::equal(s.processed, square.processed.tensor()));
    EXPECT_EQ(data::sample_window(clip, 5, 16, 1).start, 0);
}

TEST(SampleWindow, SeededAndAligned)
{
    auto clip = clip_of(12, 32, 40, 3);
    auto a = data::sample_window(clip, 4, 16, 123);
    auto b = data::sample_window(clip, 4, 16, 123);
    EXPECT_EQ(a.start, b.start);
    EXPECT_EQ(a.crop_y, b.crop_y);
    EXPECT_EQ(a.crop_x, b.crop_x);
    EXPECT_TRUE(torch::equal(a.raw, b.raw));
    using torch::indexing::Slice;
    for (auto* which : {&clip.raw, &clip.processed}) {
        auto expected = which->tensor().index(
            {Slice(a.start, a.start + 4), Slice(), Slice(a.crop_y, a.crop_y + 16), Slice(a.crop_x, a.crop_x + 16)});
        EXPECT_TRUE(torch::equal(which == &clip.raw ? a.raw : a.processed, expected));
    }
}

TEST(SampleWindow, TooSmallClipIsReported)
{
    auto clip = clip_of(4, 16, 16, 4);
    EXPECT_THROW(data::sample_window(clip, 5, 16, 0), data::ClipTooSmall);
    EXPECT_THROW(data::sample_window(clip, 3, 32, 0), data::ClipTooSmall);
    EXPECT_FALSE(data::supports_window(clip, 5, 16));
    EXPECT_TRUE(data::supports_window(clip, 4, 16));
}

TEST(SampleWindow, StartIndexIsUniform)
{
    auto clip = clip_of(12, 8, 8, 5);
    const int64_t frames = 3;
    const int64_t starts = 12 - frames + 1;
    const int n = 10000;
    std::vector<int> counts(starts, 0);
    for (int i = 0; i < n; ++i)
        counts[data::sample_window(clip, frames, 8, data::derive_seed(9, "hist", i)).start]++;
    const double p = 1.0 / starts;
    const double expected = n * p;
    const double sigma = std::sqrt(n * p * (1 - p));
    for (int64_t k = 0; k < starts; ++k)
        EXPECT_LT(std::abs(counts[k] - expected), 3 * sigma) << "start " << k;
}

TEST(Manifest, EmptyListWarns)
{
    TempDir dir("manifest_empty");
    std::ofstream(dir / "m.json") << "[]";
    auto loaded = data::load_manifest(dir / "m.json");
    EXPECT_TRUE(loaded.clips.empty());
    EXPECT_EQ(loaded.warnings.size(), 1u);
}

TEST(Manifest, MissingDirectoryIsolatedToItsClip)
{
    TempDir dir("manifest_missing");
    write_clip(dir / "a", 3, 8, 8);
    std::vector<data::ClipManifest> clips{{"a", dir / "a", std::nullopt, 3, 8, 8},
                                          {"b", dir / "nowhere", std::nullopt, 3, 8, 8}};
    data::write_manifest(dir / "m.json", clips);
    auto loaded = data::load_manifest(dir / "m.json");
    ASSERT_EQ(loaded.clips.size(), 1u);
    EXPECT_EQ(loaded.clips[0].id, "a");
    ASSERT_EQ(loaded.errors.size(), 1u);
    EXPECT_NE(loaded.errors[0].find("'b'"), std::string::npos);
}

TEST(Manifest, ThreeClipsMatchDirectoryListing)
{
    TempDir dir("manifest_three");
    const std::vector<int64_t> lengths{3, 5, 4};
    std::vector<data::ClipManifest> clips;
    for (size_t i = 0; i < lengths.size(); ++i) {
        const auto id = "c" + std::to_string(i);
        write_clip(dir / id / "raw", lengths[i], 8, 12);
        write_clip(dir / id / "proc", lengths[i], 8, 12);
        clips.push_back({id, dir / id / "raw", dir / id / "proc", lengths[i], 12, 8});
    }
    data::write_manifest(dir / "m.json", clips);
    auto loaded = data::load_manifest(dir / "m.json");
    ASSERT_EQ(loaded.clips.size(), 3u);
    EXPECT_TRUE(loaded.errors.empty());
    for (const auto& c : loaded.clips) {
        int64_t files = 0;
        for (const auto& e : fs::directory_iterator(c.raw_dir))
            files += e.path().extension() == ".png";
        EXPECT_EQ(c.frames, files);
        auto data = data::load_clip(c);
        EXPECT_EQ(data.raw.length(), files);
        EXPECT_EQ(data.processed.length(), files);
    }
}

TEST(Manifest, FrameCountMismatchExcludesClip)
{
    TempDir dir("manifest_count");
    write_clip(dir / "a", 3, 8, 8);
    data::write_manifest(dir / "m.json", {{"a", dir / "a", std::nullopt, 4, 8, 8}});
    auto loaded = data::load_manifest(dir / "m.json");
    EXPECT_TRUE(loaded.clips.empty());
    EXPECT_EQ(loaded.errors.size(), 1u);
}

TEST(Manifest, MalformedFileReportsLine)
{
    TempDir dir("manifest_bad");
    std::ofstream(dir / "m.json") << "[\n  {\"id\": \"a\",\n   \"frames\": 3,,\n  }\n]\n";
    try {
        data::load_manifest(dir / "m.json");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("m.json:3:"), std::string::npos) << e.what();
    }
    std::ofstream(dir / "k.json") << R"([{"id": "a", "raw_dir": "x", "frames": 1, "width": 8, "height": 8, "fps": 3}])";
    EXPECT_THROW(data::load_manifest(dir / "k.json"), ConfigError);
    EXPECT_THROW(data::load_manifest(dir / "absent.json"), ConfigError);
}

TEST(LoadClip, SynthesisesProcessedFramesOnlyWithFlickerSpec)
{
    TempDir dir("load_clip");
    write_clip(dir / "a", 3, 8, 8);
    data::ClipManifest m{"a", dir / "a", std::nullopt, 3, 8, 8};
    EXPECT_THROW(data::load_clip(m), ConfigError);
    auto clip = data::load_clip(m, data::FlickerSpec{});
    EXPECT_EQ(clip.processed.role(), Role::processed);
    EXPECT_FALSE(torch::equal(clip.raw.tensor(), clip.processed.tensor()));
    EXPECT_TRUE(torch::equal(data::load_clip(m, data::FlickerSpec{}).processed.tensor(), clip.processed.tensor()));
}
