#include "cli.hpp"

#include "tempoc/checkpoint.hpp"
#include "tempoc/config.hpp"
#include "tempoc/data.hpp"
#include "tempoc/errors.hpp"
#include "tempoc/eval.hpp"
#include "tempoc/gradient_check.hpp"
#include "tempoc/image_io.hpp"
#include "tempoc/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace tempoc::cli {

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
};

struct Invocation {
    Common common;
    // synth-flicker
    std::string input;
    // train
    std::string resume;
    // infer / eval / iterate
    std::string ckpt;
    std::string video;
    std::string reference;
    std::string mode;
    std::string task = "synthetic";
    std::vector<std::string> cite;
    int64_t k = -1;
    int64_t clips = 5;
    // gradcheck
    int64_t probes = 32;
};

std::string fmt(double v, const char* pattern = "%.9g")
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), pattern, v);
    return buf;
}

config::Config resolve_config(const Common& common)
{
    nlohmann::json doc = common.config_path.empty() ? nlohmann::json::object()
                                                    : config::read_json_file(common.config_path);
    for (const auto& assignment : common.overrides)
        config::apply_override(doc, assignment);
    auto cfg = config::from_json(doc);
    cfg.validate();
    return cfg;
}

/// Checkpoint config plus command-line overrides (eval settings only make sense
/// to override here, but any key is accepted).
config::Config checkpoint_config(const train::Checkpoint& ckpt, const Common& common)
{
    auto doc = config::to_json(ckpt.config);
    if (!common.config_path.empty())
        doc.merge_patch(config::read_json_file(common.config_path));
    for (const auto& assignment : common.overrides)
        config::apply_override(doc, assignment);
    auto cfg = config::from_json(doc);
    cfg.validate();
    return cfg;
}

fs::path require_out(const Common& common)
{
    if (common.out_dir.empty())
        throw ConfigError("--out is required for this subcommand");
    fs::create_directories(common.out_dir);
    return common.out_dir;
}

void write_snapshot(const fs::path& out_dir, const config::Config& cfg)
{
    std::ofstream(out_dir / "resolved_config.json", std::ios::trunc) << config::to_json(cfg).dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

std::function<void(const std::string&)> logger(std::ostream& err)
{
    return [&err](const std::string& message) { err << message << '\n'; };
}

/// Estimator for measuring warp error: the checkpoint's frozen reference, or a
/// freshly built (and, for the pyramid net, pretrained) one.
std::shared_ptr<flow::FlowEstimator> metric_estimator(const Invocation& inv, const config::Config& cfg,
                                                      std::ostream& err)
{
    if (!inv.ckpt.empty())
        return train::session_from_checkpoint(train::load_checkpoint(inv.ckpt)).reference;
    auto estimator = train::make_estimator(cfg.flow);
    train::pretrain_estimator(*estimator, cfg, logger(err));
    return estimator;
}

int cmd_synth_flicker(const Invocation& inv, std::ostream& out, std::ostream& err)
{
    const auto cfg = resolve_config(inv.common);
    const auto out_dir = require_out(inv.common);
    write_snapshot(out_dir, cfg);
    if (!inv.input.empty()) {
        auto raw = io::load_video(inv.input, Role::raw);
        auto processed = data::synthesize_flicker(raw, cfg.flicker);
        io::save_video(out_dir / "processed", processed);
        out << "wrote " << processed.length() << " frames to " << (out_dir / "processed").string() << '\n';
        return kOk;
    }
    // No input: render the configured synthetic corpus with a manifest.
    auto clips = train::synthetic_clips(cfg.data.synthetic, cfg.flicker, "train");
    std::vector<data::ClipManifest> manifest;
    for (const auto& clip : clips) {
        io::save_video(out_dir / "raw" / clip.id, clip.raw);
        io::save_video(out_dir / "processed" / clip.id, clip.processed);
        manifest.push_back({clip.id, fs::path("raw") / clip.id, fs::path("processed") / clip.id,
                            clip.raw.length(), clip.raw.width(), clip.raw.height()});
    }
    data::write_manifest(out_dir / "manifest.json", manifest);
    out << "wrote " << clips.size() << " clips and " << (out_dir / "manifest.json").string() << '\n';
    (void)err;
    return kOk;
}

int cmd_train(const Invocation& inv, std::ostream& out, std::ostream& err)
{
    const auto cfg = resolve_config(inv.common);
    const auto out_dir = require_out(inv.common);
    write_snapshot(out_dir, cfg);
    auto corpus = train::build_corpus(cfg);
    for (const auto& d : corpus.diagnostics)
        err << "warning: " << d << '\n';
    train::TrainOptions options;
    options.out_dir = out_dir;
    options.log = logger(err);
    if (!inv.resume.empty())
        options.resume = train::load_checkpoint(inv.resume);
    const int64_t every = std::max<int64_t>(1, cfg.train.iterations / 20);
    options.on_row = [&](const train::MetricRow& row) {
        if (row.iteration % every == 0 || row.val_warp_error)
            err << "iteration " << row.iteration << " total " << fmt(row.total)
                << (row.val_warp_error ? " val_warp_error " + fmt(*row.val_warp_error) : std::string()) << '\n';
    };
    auto result = train::train(cfg, corpus, options);
    out << "trained " << result.checkpoint.iteration << " iterations; checkpoint "
        << (out_dir / "final.tpc").string() << '\n';
    return kOk;
}

int cmd_infer(const Invocation& inv, std::ostream& out, std::ostream&)
{
    if (inv.ckpt.empty() || inv.video.empty())
        throw ConfigError("infer needs --ckpt and --video");
    auto ckpt = train::load_checkpoint(inv.ckpt);
    const auto cfg = checkpoint_config(ckpt, inv.common);
    const auto out_dir = require_out(inv.common);
    write_snapshot(out_dir, cfg);
    auto session = train::session_from_checkpoint(ckpt);
    torch::NoGradGuard no_grad;
    auto processed = io::load_video(inv.video, Role::processed);
    auto restored = session.net->process_sequence(processed);
    io::save_video(out_dir / "frames", restored);
    out << "wrote " << restored.length() << " frames to " << (out_dir / "frames").string() << '\n';
    return kOk;
}

std::vector<eval::Citation> parse_citations(const std::vector<std::string>& specs)
{
    std::vector<eval::Citation> citations;
    for (const auto& spec : specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--cite expects label=value, got '" + spec + "'");
        try {
            citations.push_back({spec.substr(0, eq), {{"average", std::stod(spec.substr(eq + 1))}}});
        } catch (const std::exception&) {
            throw ConfigError("--cite value in '" + spec + "' is not a number");
        }
    }
    return citations;
}

int cmd_eval(const Invocation& inv, std::ostream& out, std::ostream& err)
{
    std::optional<train::Checkpoint> ckpt;
    if (!inv.ckpt.empty())
        ckpt = train::load_checkpoint(inv.ckpt);
    const auto cfg = ckpt ? checkpoint_config(*ckpt, inv.common) : resolve_config(inv.common);
    if (!inv.common.out_dir.empty())
        write_snapshot(require_out(inv.common), cfg);

    if (!inv.video.empty()) {
        auto video = io::load_video(inv.video, Role::output);
        std::optional<VideoSequence> reference;
        if (!inv.reference.empty())
            reference = io::load_video(inv.reference, Role::raw);
        auto estimator = metric_estimator(inv, cfg, err);
        auto result = eval::temporal_warp_error(video, reference, *estimator, cfg.eval.alpha);
        out << "warp_error " << fmt(result.mean, "%.10f") << " mode " << eval::to_string(result.mode) << '\n';
        for (size_t i = 0; i < result.per_pair.size(); ++i)
            out << "pair " << i + 1 << ' ' << fmt(result.per_pair[i], "%.10f") << '\n';
        if (!inv.common.out_dir.empty()) {
            const auto mode = eval::to_string(result.mode);
            std::string csv = "task,method,clip,warp_error,mode\n";
            csv += inv.task + ",video," + fs::path(inv.video).filename().string() + "," + fmt(result.mean, "%.6f") +
                   "," + mode + "\n";
            write_text(fs::path(inv.common.out_dir) / "report.csv", csv);
        }
        return kOk;
    }

    // Corpus mode: processed input versus model output on the held-out set (or
    // the manifest clips), as a report table.
    if (!ckpt)
        throw ConfigError("eval needs --video, or --ckpt to evaluate a trained model");
    const auto out_dir = require_out(inv.common);
    auto session = train::session_from_checkpoint(*ckpt);
    const bool raw_mode = eval::flow_source_from_string(cfg.eval.mode) == eval::FlowSource::raw_reference;
    std::vector<data::ClipData> clips;
    if (cfg.data.manifest.empty()) {
        clips = train::synthetic_clips(cfg.data.validation, cfg.flicker, "validation");
    } else {
        auto loaded = data::load_manifest(cfg.data.manifest);
        for (const auto& e : loaded.errors)
            err << "warning: " << e << '\n';
        for (const auto& m : loaded.clips)
            clips.push_back(data::load_clip(m, cfg.flicker));
    }
    std::vector<eval::ReportEntry> entries;
    torch::NoGradGuard no_grad;
    for (const auto& clip : clips) {
        std::optional<VideoSequence> reference;
        if (raw_mode)
            reference = clip.raw;
        entries.push_back({inv.task, "processed", clip.id,
                           eval::temporal_warp_error(clip.processed, reference, *session.reference, cfg.eval.alpha)});
        auto restored = session.net->process_sequence(clip.processed);
        entries.push_back({inv.task, "restored", clip.id,
                           eval::temporal_warp_error(restored, reference, *session.reference, cfg.eval.alpha)});
    }
    auto report = eval::build_report(entries, parse_citations(inv.cite));
    write_text(out_dir / "report.csv", report.csv);
    write_text(out_dir / "table.csv", report.table_csv);
    write_text(out_dir / "table.txt", report.text);
    out << report.text;
    return kOk;
}

std::string curve_csv(const std::string& clip, const eval::IterationCurve& curve, bool header)
{
    std::string csv = header ? "clip,iteration,warp_error\n" : "";
    for (const auto& [i, v] : curve.points)
        csv += clip + "," + std::to_string(i) + "," + fmt(v, "%.10f") + "\n";
    return csv;
}

int cmd_iterate(const Invocation& inv, std::ostream& out, std::ostream&)
{
    if (inv.ckpt.empty())
        throw ConfigError("iterate needs --ckpt");
    auto ckpt = train::load_checkpoint(inv.ckpt);
    const auto cfg = checkpoint_config(ckpt, inv.common);
    const auto out_dir = require_out(inv.common);
    write_snapshot(out_dir, cfg);
    const int64_t k = inv.k >= 0 ? inv.k : cfg.eval.iterations;
    auto session = train::session_from_checkpoint(ckpt);

    std::vector<std::pair<std::string, std::pair<VideoSequence, std::optional<VideoSequence>>>> jobs;
    if (!inv.video.empty()) {
        std::optional<VideoSequence> reference;
        if (!inv.reference.empty())
            reference = io::load_video(inv.reference, Role::raw);
        jobs.push_back({"", {io::load_video(inv.video, Role::processed), reference}});
    } else {
        auto clips = train::synthetic_clips(cfg.data.validation, cfg.flicker, "validation");
        const bool raw_mode = eval::flow_source_from_string(cfg.eval.mode) == eval::FlowSource::raw_reference;
        for (int64_t i = 0; i < std::min<int64_t>(inv.clips, static_cast<int64_t>(clips.size())); ++i) {
            std::optional<VideoSequence> reference;
            if (raw_mode)
                reference = clips[i].raw;
            jobs.push_back({clips[i].id, {clips[i].processed, reference}});
        }
    }

    std::string csv;
    for (const auto& [name, job] : jobs) {
        auto curve = eval::iterate_restore(*session.net, job.first, k, job.second, *session.reference, cfg.eval.alpha);
        const fs::path base = name.empty() ? out_dir : out_dir / name;
        for (size_t i = 0; i < curve.videos.size(); ++i)
            io::save_video(base / ("iter_" + std::to_string(i)), curve.videos[i]);
        csv += curve_csv(name.empty() ? fs::path(inv.video).filename().string() : name, curve, csv.empty());
        for (const auto& [i, v] : curve.points)
            out << (name.empty() ? std::string() : name + " ") << "iteration " << i << " warp_error "
                << fmt(v, "%.10f") << '\n';
    }
    write_text(out_dir / "curve.csv", csv);
    return kOk;
}

int cmd_gradcheck(const Invocation& inv, std::ostream& out, std::ostream&)
{
    const auto cfg = resolve_config(inv.common);
    if (!inv.common.out_dir.empty())
        write_snapshot(require_out(inv.common), cfg);
    train::GradientCheckOptions options;
    options.probes = inv.probes;
    options.seed = cfg.seed;
    auto report = train::gradient_check(cfg, options);
    std::string csv = "term,probes,max_relative_error,max_abs_gradient,passed\n";
    for (const auto& e : report.entries) {
        out << e.term << " max_relative_error " << fmt(e.max_relative_error, "%.3e") << " max_abs_gradient "
            << fmt(e.max_abs_gradient, "%.3e") << (e.passed ? " PASS" : " FAIL") << '\n';
        csv += e.term + "," + std::to_string(e.probes) + "," + fmt(e.max_relative_error) + "," +
               fmt(e.max_abs_gradient) + "," + (e.passed ? "1" : "0") + "\n";
    }
    out << "stop_gradient " << (report.stop_gradient_exact ? "PASS" : "FAIL") << '\n';
    if (!inv.common.out_dir.empty())
        write_text(fs::path(inv.common.out_dir) / "gradcheck.csv", csv);
    return report.passed() ? kOk : kContractViolation;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Blind temporal consistency restoration toolkit", "tempoc"};
    app.require_subcommand(1);
    Invocation inv;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", inv.common.config_path, "JSON config file");
        sub->add_option("--set", inv.common.overrides, "Override a config value (dotted.key=value)")
            ->allow_extra_args(false);
        sub->add_option("--out", inv.common.out_dir, "Output directory");
    };

    auto* synth = app.add_subcommand("synth-flicker", "Apply synthetic flicker to a frame directory or render a corpus");
    add_common(synth);
    synth->add_option("--input", inv.input, "Raw frame directory");

    auto* train_cmd = app.add_subcommand("train", "Train the restoration network");
    add_common(train_cmd);
    train_cmd->add_option("--resume", inv.resume, "Checkpoint to resume from");

    auto* infer = app.add_subcommand("infer", "Restore one video");
    add_common(infer);
    infer->add_option("--ckpt", inv.ckpt, "Model checkpoint");
    infer->add_option("--video", inv.video, "Processed frame directory");

    auto* eval_cmd = app.add_subcommand("eval", "Temporal warp error of a video, or a report for a model");
    add_common(eval_cmd);
    eval_cmd->add_option("--ckpt", inv.ckpt, "Model checkpoint (also supplies the flow estimator)");
    eval_cmd->add_option("--video", inv.video, "Frame directory to evaluate");
    eval_cmd->add_option("--reference", inv.reference, "Raw frame directory (raw-reference mode)");
    eval_cmd->add_option("--task", inv.task, "Task label used in reports");
    eval_cmd->add_option("--cite", inv.cite, "Static comparison value for the average row (label=value)");

    auto* iterate = app.add_subcommand("iterate", "Feed restored output back through the model k times");
    add_common(iterate);
    iterate->add_option("--ckpt", inv.ckpt, "Model checkpoint");
    iterate->add_option("--k", inv.k, "Number of restoration passes (default eval.iterations)");
    iterate->add_option("--video", inv.video, "Processed frame directory (default: held-out clips)");
    iterate->add_option("--reference", inv.reference, "Raw frame directory for raw-reference mode");
    iterate->add_option("--clips", inv.clips, "Held-out clips to use when --video is absent");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every enabled loss term");
    add_common(grad);
    grad->add_option("--probes", inv.probes, "Probed elements per term");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }

    try {
        if (synth->parsed())
            return cmd_synth_flicker(inv, out, err);
        if (train_cmd->parsed())
            return cmd_train(inv, out, err);
        if (infer->parsed())
            return cmd_infer(inv, out, err);
        if (eval_cmd->parsed())
            return cmd_eval(inv, out, err);
        if (iterate->parsed())
            return cmd_iterate(inv, out, err);
        return cmd_gradcheck(inv, out, err);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const VersionError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const IntegrityError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ContractViolation& e) {
        err << "contract violation: " << e.what() << '\n';
        return kContractViolation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kContractViolation;
    }
}

}  // namespace tempoc::cli
