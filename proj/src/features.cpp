#include "tempoc/features.hpp"

#include "tempoc/errors.hpp"

#include <cmath>

namespace tempoc::features {

namespace F = torch::nn::functional;

RandomConvFeatures::RandomConvFeatures(uint64_t seed) : seed_(seed)
{
    const std::vector<std::pair<int64_t, int64_t>> shapes{{3, 16}, {16, 32}, {32, 32}, {32, 64}};
    strides_ = {1, 2, 1, 2};
    auto gen = at::detail::createCPUGenerator(seed);
    for (size_t i = 0; i < shapes.size(); ++i) {
        const auto [in, out] = shapes[i];
        auto w = at::normal(0.0, std::sqrt(2.0 / static_cast<double>(in * 9)), {out, in, 3, 3}, gen);
        weights_.push_back(register_buffer("w" + std::to_string(i), w));
    }
}

torch::Tensor RandomConvFeatures::extract(const torch::Tensor& images)
{
    auto h = images - 0.5;
    for (size_t i = 0; i < weights_.size(); ++i) {
        auto w = weights_[i].to(h.device(), h.scalar_type());
        h = torch::relu(F::conv2d(h, w, F::Conv2dFuncOptions().stride(strides_[i]).padding(1)));
    }
    return h;
}

ScriptedFeatures::ScriptedFeatures(torch::jit::Module module, std::string identifier)
    : module_(std::move(module)), identifier_(std::move(identifier))
{
    for (auto p : module_.parameters())
        p.set_requires_grad(false);
    module_.eval();
}

std::shared_ptr<ScriptedFeatures> ScriptedFeatures::load(const std::filesystem::path& path, std::string identifier)
{
    try {
        return std::make_shared<ScriptedFeatures>(torch::jit::load(path.string()), std::move(identifier));
    } catch (const c10::Error&) {
        throw ConfigError("cannot load TorchScript feature extractor '" + path.string() + "'");
    }
}

torch::Tensor ScriptedFeatures::extract(const torch::Tensor& images)
{
    auto opts = images.options();
    auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
    auto stddev = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
    return module_.forward({(images - mean) / stddev}).toTensor();
}

std::shared_ptr<FeatureExtractor> make_feature_extractor(const std::string& name, const std::filesystem::path& path,
                                                         uint64_t seed)
{
    if (name == "identity")
        return std::make_shared<IdentityFeatures>();
    if (name == "random_conv")
        return std::make_shared<RandomConvFeatures>(seed);
    if (name == "vgg16_relu4_3") {
        if (path.empty())
            throw ConfigError("feature extractor vgg16_relu4_3 needs loss.features_path (a TorchScript export)");
        return ScriptedFeatures::load(path, name);
    }
    throw ConfigError("unknown feature extractor '" + name + "'");
}

}  // namespace tempoc::features
