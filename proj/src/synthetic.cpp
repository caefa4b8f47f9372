#include "tempoc/synthetic.hpp"

#include "tempoc/errors.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace tempoc::synth {

Texture::Texture(uint64_t seed, int64_t components, double min_period, double max_period)
{
    TEMPOC_REQUIRE(components > 0 && min_period > 0.0 && max_period >= min_period, "invalid texture options");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::uniform_real_distribution<double> period(min_period, max_period);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    kx_ = torch::empty({components}, opts);
    ky_ = torch::empty({components}, opts);
    amplitude_ = torch::empty({3, components}, opts);
    phase_ = torch::empty({3, components}, opts);
    for (int64_t k = 0; k < components; ++k) {
        const double a = angle(rng);
        const double f = 2.0 * std::numbers::pi / period(rng);
        kx_[k] = f * std::cos(a);
        ky_[k] = f * std::sin(a);
    }
    for (int64_t c = 0; c < 3; ++c) {
        double total = 0.0;
        for (int64_t k = 0; k < components; ++k) {
            const double a = 0.2 + unit(rng);
            amplitude_[c][k] = a;
            total += a;
            phase_[c][k] = phase(rng);
        }
        // Sum of amplitudes 0.4 keeps values inside [0.1, 0.9].
        amplitude_[c] *= 0.4 / total;
    }
}

torch::Tensor Texture::render(const torch::Tensor& xs, const torch::Tensor& ys) const
{
    auto x = xs.to(torch::kFloat64).unsqueeze(0);  // [1, H, W]
    auto y = ys.to(torch::kFloat64).unsqueeze(0);
    auto arg = kx_.view({-1, 1, 1}) * x + ky_.view({-1, 1, 1}) * y;  // [K, H, W]
    auto out = torch::empty({3, xs.size(0), xs.size(1)}, torch::kFloat64);
    for (int64_t c = 0; c < 3; ++c) {
        auto waves = torch::sin(arg + phase_[c].view({-1, 1, 1}));
        out[c] = 0.5 + (amplitude_[c].view({-1, 1, 1}) * waves).sum(0);
    }
    return out.to(torch::kFloat32);
}

namespace {

std::pair<torch::Tensor, torch::Tensor> pixel_grid(int64_t height, int64_t width)
{
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto ys = torch::arange(height, opts).view({height, 1}).expand({height, width});
    auto xs = torch::arange(width, opts).view({1, width}).expand({height, width});
    return {xs, ys};
}

}  // namespace

SyntheticClip make_scene_clip(const SceneOptions& options, uint64_t seed)
{
    TEMPOC_REQUIRE(options.frames >= 2, "synthetic clip needs at least 2 frames");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> fraction(0.0, 1.0);

    const Texture background(rng());
    const Texture foreground(rng(), 6, 4.0, 12.0);
    const double bvx = options.max_background_speed * unit(rng);
    const double bvy = options.max_background_speed * unit(rng);
    const double ovx = options.max_object_speed * unit(rng);
    const double ovy = options.max_object_speed * unit(rng);
    const double radius = std::min(options.height, options.width) * (0.15 + 0.1 * fraction(rng));
    const double cx0 = options.width * (0.3 + 0.4 * fraction(rng));
    const double cy0 = options.height * (0.3 + 0.4 * fraction(rng));
    // Arbitrary texture-space offsets so clips from different seeds don't share an origin.
    const double ox = 1000.0 * fraction(rng);
    const double oy = 1000.0 * fraction(rng);

    auto [xs, ys] = pixel_grid(options.height, options.width);
    std::vector<torch::Tensor> frames;
    std::vector<torch::Tensor> flows;
    for (int64_t t = 0; t < options.frames; ++t) {
        auto frame = background.render(xs - bvx * t + ox, ys - bvy * t + oy);
        auto flow = torch::empty({2, options.height, options.width}, torch::kFloat32);
        flow[0].fill_(-bvx);
        flow[1].fill_(-bvy);
        if (options.foreground_object) {
            const double cx = cx0 + ovx * t;
            const double cy = cy0 + ovy * t;
            auto inside = ((xs - cx).pow(2) + (ys - cy).pow(2)).le(radius * radius);
            auto object = foreground.render(xs - ovx * t, ys - ovy * t);
            frame = torch::where(inside.unsqueeze(0), object, frame);
            flow[0].masked_fill_(inside, -ovx);
            flow[1].masked_fill_(inside, -ovy);
        }
        frames.push_back(frame);
        if (t > 0)
            flows.push_back(flow);
    }
    return {VideoSequence(torch::stack(frames), Role::raw), torch::stack(flows)};
}

SyntheticClip make_translation_clip(int64_t frames, int64_t height, int64_t width, double vx, double vy,
                                    uint64_t seed)
{
    TEMPOC_REQUIRE(frames >= 2, "translation clip needs at least 2 frames");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> offset(0.0, 1000.0);
    const Texture texture(rng());
    const double ox = offset(rng);
    const double oy = offset(rng);

    auto [xs, ys] = pixel_grid(height, width);
    std::vector<torch::Tensor> rendered;
    for (int64_t t = 0; t < frames; ++t)
        rendered.push_back(texture.render(xs - vx * t + ox, ys - vy * t + oy));
    auto flow = torch::empty({2, height, width}, torch::kFloat32);
    flow[0].fill_(-vx);
    flow[1].fill_(-vy);
    return {VideoSequence(torch::stack(rendered), Role::raw), flow.unsqueeze(0).expand({frames - 1, 2, height, width}).clone()};
}

}  // namespace tempoc::synth
