#pragma once

#include "tempoc/checkpoint.hpp"
#include "tempoc/config.hpp"
#include "tempoc/data.hpp"
#include "tempoc/features.hpp"
#include "tempoc/model.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tempoc::train {

struct Corpus {
    std::vector<data::ClipData> clips;       // training clips that fit the window
    std::vector<data::ClipData> validation;  // fixed held-out synthetic set
    std::vector<std::string> diagnostics;    // excluded clips and why
};

/// Synthetic scenes with per-clip flicker. Clip i of corpus `prefix` always has
/// the same content for a given (corpus seed, flicker seed).
std::vector<data::ClipData> synthetic_clips(const config::SyntheticCorpus& corpus, const data::FlickerSpec& flicker,
                                            const std::string& prefix);

/// Training clips from the manifest (or the synthetic corpus when no manifest is
/// set) plus the validation set. Clips that cannot supply a T x patch x patch
/// window are excluded with a diagnostic.
Corpus build_corpus(const config::Config& config);

/// Untrained estimator as configured ("scripted" is loaded from flow.path).
std::shared_ptr<flow::FlowEstimator> make_estimator(const config::FlowConfig& flow);

/// Translation clips used for unsupervised flow pretraining.
std::vector<VideoSequence> pretraining_clips(const config::Config& config);

/// Photometric pretraining of a pyramid estimator per config; no-op for other
/// estimators or when flow.pretrain_steps is 0.
void pretrain_estimator(flow::FlowEstimator& estimator, const config::Config& config,
                        const std::function<void(const std::string&)>& log = {});

/// A model plus the frozen estimator used to measure warp error and the
/// perceptual feature network.
struct Session {
    config::Config config;
    std::shared_ptr<model::RestorationNet> net;
    std::shared_ptr<flow::FlowEstimator> reference;
    std::shared_ptr<features::FeatureExtractor> features;
};

/// Fresh session: seeded initialisation, flow pretraining, reference snapshot.
Session make_session(const config::Config& config, const std::function<void(const std::string&)>& log = {});
Session session_from_checkpoint(const Checkpoint& checkpoint);

/// Mean held-out warp error of the model's outputs, measured with `reference`
/// in the configured eval mode.
double validation_warp_error(model::RestorationNet& net, flow::FlowEstimator& reference,
                             const std::vector<data::ClipData>& clips, const config::EvalConfig& eval);

struct TrainOptions {
    /// Log, checkpoints and resolved config go here; empty writes nothing.
    std::filesystem::path out_dir;
    /// Continue from this state. Its config must equal the given one apart from
    /// train.iterations.
    std::optional<Checkpoint> resume;
    /// Start from this session instead of creating one (skips pretraining).
    std::optional<Session> session;
    std::function<void(const MetricRow&)> on_row;
    std::function<void(const std::string&)> log;
};

struct TrainResult {
    Checkpoint checkpoint;
    Session session;
};

/// Joint training of the restoration network and its flow estimator. Each
/// iteration samples `batch` windows (seeded by iteration and slot), runs the
/// model over the whole window from a fresh recurrent state, and takes one Adam
/// step on every parameter, the estimator's at lr * flow.lr_multiplier. The
/// loss terms measure flows and masks with the session's frozen reference, so
/// the model's own estimator only learns through the restoration path.
TrainResult train(const config::Config& config, const Corpus& corpus, const TrainOptions& options = {});

/// iteration,l_fg,l_rec,l_p,l_const,total,val_warp_error
std::string csv_header();
std::string csv_row(const MetricRow& row);

}  // namespace tempoc::train
