#pragma once

#include <torch/script.h>
#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <string>

namespace tempoc::features {

/// Deterministic differentiable feature map used by the perceptual loss. No
/// implementation exposes trainable parameters.
class FeatureExtractor : public torch::nn::Module {
public:
    ~FeatureExtractor() override = default;
    /// images [N, 3, H, W] in [0, 1] -> [N, C, h, w]
    virtual torch::Tensor extract(const torch::Tensor& images) = 0;
    virtual std::string identifier() const = 0;
};

class IdentityFeatures : public FeatureExtractor {
public:
    torch::Tensor extract(const torch::Tensor& images) override { return images; }
    std::string identifier() const override { return "identity"; }
};

/// Frozen random 4-layer conv stack (3 -> 16 -> 32/2 -> 32 -> 64/2, ReLU),
/// weights drawn from a private generator seeded with `seed`.
class RandomConvFeatures : public FeatureExtractor {
public:
    explicit RandomConvFeatures(uint64_t seed = 0);
    torch::Tensor extract(const torch::Tensor& images) override;
    std::string identifier() const override { return "random_conv:" + std::to_string(seed_); }

private:
    uint64_t seed_;
    std::vector<torch::Tensor> weights_;
    std::vector<int64_t> strides_;
};

/// TorchScript network applied to ImageNet-normalised input, e.g. a VGG-16
/// truncated after relu4_3 and exported offline. Parameters are frozen.
class ScriptedFeatures : public FeatureExtractor {
public:
    ScriptedFeatures(torch::jit::Module module, std::string identifier);
    static std::shared_ptr<ScriptedFeatures> load(const std::filesystem::path& path, std::string identifier);
    torch::Tensor extract(const torch::Tensor& images) override;
    std::string identifier() const override { return identifier_; }

private:
    torch::jit::Module module_;
    std::string identifier_;
};

/// "identity", "random_conv" or "vgg16_relu4_3" (the latter needs `path`).
std::shared_ptr<FeatureExtractor> make_feature_extractor(const std::string& name,
                                                         const std::filesystem::path& path, uint64_t seed);

}  // namespace tempoc::features
