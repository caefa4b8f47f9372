#include "tempoc/train.hpp"

#include "tempoc/errors.hpp"
#include "tempoc/eval.hpp"
#include "tempoc/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

namespace fs = std::filesystem;

namespace tempoc::train {

namespace {

void say(const std::function<void(const std::string&)>& log, const std::string& message)
{
    if (log)
        log(message);
}

std::string numbered(const std::string& prefix, int64_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%03lld", static_cast<long long>(i));
    return prefix + "-" + buf;
}

std::string format_number(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

/// Config equality for resuming: everything but the iteration budget.
bool resumable(const config::Config& a, const config::Config& b)
{
    auto ja = config::to_json(a);
    auto jb = config::to_json(b);
    ja["train"].erase("iterations");
    jb["train"].erase("iterations");
    return ja == jb;
}

void write_csv(const fs::path& path, const std::vector<MetricRow>& rows)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write training log '" + path.string() + "'");
    out << csv_header() << '\n';
    for (const auto& row : rows)
        out << csv_row(row) << '\n';
}

}  // namespace

std::string csv_header()
{
    return "iteration,l_fg,l_rec,l_p,l_const,total,val_warp_error";
}

std::string csv_row(const MetricRow& row)
{
    std::string line = std::to_string(row.iteration);
    for (double v : row.terms)
        line += "," + format_number(v);
    line += "," + format_number(row.total) + ",";
    if (row.val_warp_error)
        line += format_number(*row.val_warp_error);
    return line;
}

std::vector<data::ClipData> synthetic_clips(const config::SyntheticCorpus& corpus, const data::FlickerSpec& flicker,
                                            const std::string& prefix)
{
    std::vector<data::ClipData> clips;
    synth::SceneOptions scene;
    scene.frames = corpus.frames;
    scene.height = corpus.height;
    scene.width = corpus.width;
    for (int64_t i = 0; i < corpus.clips; ++i) {
        const auto id = numbered(prefix, i);
        auto raw = synth::make_scene_clip(scene, data::derive_seed(corpus.seed, prefix, static_cast<uint64_t>(i))).raw;
        auto spec = flicker;
        spec.seed = data::derive_seed(flicker.seed, id, 0);
        auto processed = data::synthesize_flicker(raw, spec);
        clips.push_back({id, raw, processed});
    }
    return clips;
}

Corpus build_corpus(const config::Config& config)
{
    config.validate();
    Corpus corpus;
    std::vector<data::ClipData> candidates;
    if (!config.data.manifest.empty()) {
        auto loaded = data::load_manifest(config.data.manifest);
        corpus.diagnostics = loaded.errors;
        corpus.diagnostics.insert(corpus.diagnostics.end(), loaded.warnings.begin(), loaded.warnings.end());
        for (const auto& m : loaded.clips)
            candidates.push_back(data::load_clip(m, config.flicker));
    } else {
        candidates = synthetic_clips(config.data.synthetic, config.flicker, "train");
    }
    for (auto& clip : candidates) {
        if (data::supports_window(clip, config.train.frames, config.train.patch)) {
            corpus.clips.push_back(std::move(clip));
        } else {
            corpus.diagnostics.push_back("clip '" + clip.id + "' (" + std::to_string(clip.raw.length()) + " frames, " +
                                         std::to_string(clip.raw.height()) + "x" + std::to_string(clip.raw.width()) +
                                         ") cannot supply a " + std::to_string(config.train.frames) + "-frame " +
                                         std::to_string(config.train.patch) + "px window; skipped");
        }
    }
    corpus.validation = synthetic_clips(config.data.validation, config.flicker, "validation");
    return corpus;
}

std::shared_ptr<flow::FlowEstimator> make_estimator(const config::FlowConfig& flow)
{
    if (flow.estimator == "pyramid")
        return std::make_shared<flow::PyramidFlowNet>(flow.pyramid);
    if (flow.estimator == "zero")
        return std::make_shared<flow::ZeroFlowEstimator>();
    if (flow.estimator == "scripted") {
        if (flow.path.empty())
            throw ConfigError("flow.estimator 'scripted' needs flow.path");
        return flow::ScriptedFlowEstimator::load(flow.path, flow.pyramid.levels);
    }
    throw ConfigError("unknown flow.estimator '" + flow.estimator + "'");
}

std::vector<VideoSequence> pretraining_clips(const config::Config& config)
{
    std::vector<VideoSequence> clips;
    const double speed = config.flow.max_pretrain_speed;
    for (int64_t i = 0; i < config.flow.pretrain_clips; ++i) {
        std::mt19937_64 rng(data::derive_seed(config.seed, "flow-pretrain", static_cast<uint64_t>(i)));
        std::uniform_real_distribution<double> velocity(-speed, speed);
        const double vx = velocity(rng);
        const double vy = velocity(rng);
        clips.push_back(synth::make_translation_clip(4, config.data.synthetic.height, config.data.synthetic.width, vx,
                                                     vy, rng())
                            .raw);
    }
    return clips;
}

void pretrain_estimator(flow::FlowEstimator& estimator, const config::Config& config,
                        const std::function<void(const std::string&)>& log)
{
    if (config.flow.estimator != "pyramid" || config.flow.pretrain_steps == 0)
        return;
    flow::PretrainOptions options;
    options.steps = config.flow.pretrain_steps;
    options.batch = config.flow.pretrain_batch;
    options.learning_rate = config.flow.pretrain_lr;
    options.smoothness = config.flow.smoothness;
    options.seed = data::derive_seed(config.seed, "flow-pretrain-order", 0);
    const int64_t every = std::max<int64_t>(1, options.steps / 10);
    options.on_step = [&](int64_t step, double loss) {
        if (step % every == 0 || step == options.steps)
            say(log, "flow pretraining " + std::to_string(step) + "/" + std::to_string(options.steps) +
                         " loss " + format_number(loss));
    };
    flow::pretrain_flow(estimator, pretraining_clips(config), options);
}

Session make_session(const config::Config& config, const std::function<void(const std::string&)>& log)
{
    config.validate();
    torch::manual_seed(config.seed);
    const auto device = core::default_device();
    auto estimator = make_estimator(config.flow);
    estimator->to(device);
    pretrain_estimator(*estimator, config, log);

    Session session;
    session.config = config;
    session.reference = estimator->clone_estimator();
    for (auto& p : session.reference->parameters())
        p.set_requires_grad(false);
    torch::manual_seed(data::derive_seed(config.seed, "model-init", 0));
    session.net = std::make_shared<model::RestorationNet>(config.model, estimator);
    session.features = features::make_feature_extractor(config.loss.features, config.loss.features_path,
                                                        data::derive_seed(config.seed, "features", 0));
    session.net->to(device);
    session.features->to(device);
    return session;
}

Session session_from_checkpoint(const Checkpoint& checkpoint)
{
    const auto& config = checkpoint.config;
    config.validate();
    Session session;
    session.config = config;
    auto estimator = make_estimator(config.flow);
    TEMPOC_REQUIRE(estimator->identifier() == checkpoint.estimator_identifier,
                   "checkpoint was written with estimator '" + checkpoint.estimator_identifier +
                       "' but the config builds '" + estimator->identifier() + "'");
    session.reference = estimator->clone_estimator();
    restore_state(*session.reference, checkpoint.reference_flow);
    for (auto& p : session.reference->parameters())
        p.set_requires_grad(false);
    session.net = std::make_shared<model::RestorationNet>(config.model, estimator);
    restore_state(*session.net, checkpoint.model);
    session.features = features::make_feature_extractor(config.loss.features, config.loss.features_path,
                                                        data::derive_seed(config.seed, "features", 0));
    const auto device = core::default_device();
    session.net->to(device);
    session.reference->to(device);
    session.features->to(device);
    return session;
}

double validation_warp_error(model::RestorationNet& net, flow::FlowEstimator& reference,
                             const std::vector<data::ClipData>& clips, const config::EvalConfig& eval)
{
    TEMPOC_REQUIRE(!clips.empty(), "validation needs at least one clip");
    torch::NoGradGuard no_grad;
    const bool raw_mode = eval::flow_source_from_string(eval.mode) == eval::FlowSource::raw_reference;
    double sum = 0.0;
    for (const auto& clip : clips) {
        auto restored = net.process_sequence(clip.processed);
        std::optional<VideoSequence> ref;
        if (raw_mode)
            ref = clip.raw;
        sum += eval::temporal_warp_error(restored, ref, reference, eval.alpha).mean;
    }
    return sum / static_cast<double>(clips.size());
}

TrainResult train(const config::Config& config, const Corpus& corpus, const TrainOptions& options)
{
    config.validate();
    TEMPOC_REQUIRE(!corpus.clips.empty(), "training needs at least one usable clip");
    const auto& tc = config.train;

    Session session;
    if (options.resume) {
        TEMPOC_REQUIRE(resumable(options.resume->config, config),
                       "cannot resume: checkpoint config differs from the requested config");
        session = session_from_checkpoint(*options.resume);
        session.config = config;
    } else if (options.session) {
        session = *options.session;
        session.config = config;
    } else {
        session = make_session(config, options.log);
    }
    auto& net = *session.net;

    std::vector<torch::Tensor> main_params, flow_params;
    {
        std::set<const void*> flow_set;
        for (const auto& p : net.estimator().parameters())
            flow_set.insert(p.unsafeGetTensorImpl());
        for (const auto& p : net.parameters())
            (flow_set.count(p.unsafeGetTensorImpl()) ? flow_params : main_params).push_back(p);
    }
    std::vector<torch::optim::OptimizerParamGroup> groups;
    groups.emplace_back(main_params, std::make_unique<torch::optim::AdamOptions>(tc.learning_rate));
    if (!flow_params.empty())
        groups.emplace_back(flow_params,
                            std::make_unique<torch::optim::AdamOptions>(tc.learning_rate * config.flow.lr_multiplier));
    torch::optim::Adam optimizer(std::move(groups), torch::optim::AdamOptions(tc.learning_rate));

    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.estimator_identifier = net.estimator().identifier();
    ckpt.reference_flow = capture_state(*session.reference);
    if (options.resume) {
        restore_adam(optimizer, net, options.resume->optimizer);
        ckpt.iteration = options.resume->iteration;
        ckpt.history = options.resume->history;
        TEMPOC_REQUIRE(ckpt.iteration <= tc.iterations, "checkpoint is already past train.iterations");
    }

    auto snapshot = [&]() {
        ckpt.model = capture_state(net);
        ckpt.optimizer = capture_adam(optimizer, net);
        return ckpt;
    };
    const bool writing = !options.out_dir.empty();
    const auto log_path = options.out_dir / "train_log.csv";
    std::ofstream log_file;
    if (writing) {
        fs::create_directories(options.out_dir);
        std::ofstream(options.out_dir / "resolved_config.json", std::ios::trunc)
            << config::to_json(config).dump(2) << '\n';
        write_csv(log_path, ckpt.history);
        log_file.open(log_path, std::ios::app);
    }

    const auto loss_template = config.loss.options(0);
    std::vector<const data::ClipData*> pool;
    for (const auto& c : corpus.clips)
        pool.push_back(&c);
    const auto device = net.parameters().front().device();

    net.train();
    for (int64_t it = ckpt.iteration + 1; it <= tc.iterations; ++it) {
        std::vector<torch::Tensor> raws, procs;
        for (int64_t b = 0; b < tc.batch; ++b) {
            const uint64_t slot = static_cast<uint64_t>((it - 1) * tc.batch + b);
            const uint64_t sample_seed = data::derive_seed(config.seed, "sample", slot);
            std::mt19937_64 rng(sample_seed);
            std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
            const auto& clip = *pool[pick(rng)];
            auto sample = data::sample_window(clip, tc.frames, tc.patch, data::derive_seed(sample_seed, clip.id, 0));
            raws.push_back(sample.raw);
            procs.push_back(sample.processed);
        }
        auto raw = torch::stack(raws).to(device);
        auto processed = torch::stack(procs).to(device);

        auto outputs = net.process_sequence(processed, tc.truncation);
        auto loss_options = loss_template;
        loss_options.pair_seed = data::derive_seed(config.seed, "pairs", static_cast<uint64_t>(it));
        auto report = losses::total_loss(outputs, raw, processed, *session.reference, *session.features,
                                         config.loss.weights, loss_options);
        for (size_t i = 0; i < report.terms.size(); ++i)
            if (report.enabled[i] && !std::isfinite(report.terms[i]))
                throw NonFiniteLoss(it, losses::kTermNames[i]);
        if (!std::isfinite(report.total))
            throw NonFiniteLoss(it, "total");

        optimizer.zero_grad();
        report.total_tensor.backward();
        optimizer.step();

        MetricRow row;
        row.iteration = it;
        row.terms = report.terms;
        row.total = report.total;
        if (tc.validation_interval > 0 && it % tc.validation_interval == 0) {
            row.val_warp_error = validation_warp_error(net, *session.reference, corpus.validation, config.eval);
            net.train();
        }
        ckpt.iteration = it;
        ckpt.history.push_back(row);
        if (writing)
            log_file << csv_row(row) << '\n' << std::flush;
        if (options.on_row)
            options.on_row(row);
        if (writing && tc.checkpoint_interval > 0 && it % tc.checkpoint_interval == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_%07lld.tpc", static_cast<long long>(it));
            save_checkpoint(snapshot(), options.out_dir / name);
        }
    }

    snapshot();
    if (writing)
        save_checkpoint(ckpt, options.out_dir / "final.tpc");
    return {ckpt, session};
}

}  // namespace tempoc::train
