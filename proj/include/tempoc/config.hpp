#pragma once

#include "tempoc/data.hpp"
#include "tempoc/flow_backbone.hpp"
#include "tempoc/losses.hpp"
#include "tempoc/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace tempoc::config {

/// Procedurally generated clips (used when no manifest is given, and for the
/// held-out validation set).
struct SyntheticCorpus {
    int64_t clips = 20;
    int64_t frames = 12;
    int64_t height = 64;
    int64_t width = 64;
    uint64_t seed = 1;
};

struct DataConfig {
    std::string manifest;             // empty: use `synthetic`
    SyntheticCorpus synthetic;
    SyntheticCorpus validation{5, 12, 64, 64, 1001};
};

struct FlowConfig {
    std::string estimator = "pyramid";  // pyramid | zero | scripted
    std::string path;                   // TorchScript file for "scripted"
    flow::PyramidFlowOptions pyramid;
    int64_t pretrain_steps = 2000;
    int64_t pretrain_batch = 8;
    int64_t pretrain_clips = 64;
    double pretrain_lr = 2e-3;
    double smoothness = 0.1;
    double max_pretrain_speed = 3.0;
    double lr_multiplier = 1.0;
};

struct LossConfig {
    losses::LossWeights weights;
    bool use_flow_gradient = true;
    bool use_reconstruction = true;
    bool use_perceptual = true;
    bool use_constancy = true;
    std::string constancy_flow = "index_consistent";  // or "literal"
    std::string flow_match = "gradient";              // or "raw_flow" (ablation)
    int64_t max_anchors = 0;
    std::string features = "random_conv";
    std::string features_path;

    losses::LossOptions options(uint64_t pair_seed) const;
};

struct TrainSection {
    int64_t frames = 15;  // T
    int64_t patch = 256;
    int64_t batch = 1;
    int64_t iterations = 70000;
    double learning_rate = 1e-4;
    int64_t checkpoint_interval = 1000;
    int64_t validation_interval = 500;
    int64_t truncation = 0;  // 0: backpropagate through the whole window
};

struct EvalConfig {
    std::string mode = "raw_reference";  // or "self"
    double alpha = 50.0;
    int64_t iterations = 3;
};

struct Config {
    uint64_t seed = 0;
    DataConfig data;
    data::FlickerSpec flicker;
    model::ModelConfig model;
    FlowConfig flow;
    LossConfig loss;
    TrainSection train;
    EvalConfig eval;

    /// Throws ContractViolation on out-of-range values, ConfigError on unknown
    /// enum strings.
    void validate() const;
};

nlohmann::json to_json(const Config& config);

/// Overlays `doc` onto the defaults. Keys the defaults don't have are rejected.
Config from_json(const nlohmann::json& doc);

/// Reads a JSON config file; ConfigError names the path on failure.
nlohmann::json read_json_file(const std::filesystem::path& path);
Config load_config(const std::filesystem::path& path);

/// Applies "dotted.key=value" to a config document. The value is parsed as JSON
/// when possible, otherwise taken as a string. Unknown keys are rejected.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace tempoc::config
