#include "tempoc/config.hpp"

#include "tempoc/errors.hpp"

#include <fstream>
#include <sstream>

using nlohmann::json;

namespace tempoc::config {

namespace {

json corpus_json(const SyntheticCorpus& c)
{
    return {{"clips", c.clips}, {"frames", c.frames}, {"height", c.height}, {"width", c.width}, {"seed", c.seed}};
}

SyntheticCorpus corpus_from(const json& j)
{
    return {j.at("clips").get<int64_t>(), j.at("frames").get<int64_t>(), j.at("height").get<int64_t>(),
            j.at("width").get<int64_t>(), j.at("seed").get<uint64_t>()};
}

/// Recursively overlay `user` onto `base`; every user key must already exist.
void merge_strict(json& base, const json& user, const std::string& path)
{
    if (!user.is_object())
        throw ConfigError("config" + (path.empty() ? "" : " key '" + path + "'") + " must be a JSON object");
    for (const auto& [key, value] : user.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (!base.contains(key))
            throw ConfigError("unknown config key '" + full + "'");
        auto& slot = base[key];
        if (slot.is_object())
            merge_strict(slot, value, full);
        else
            slot = value;
    }
}

}  // namespace

losses::LossOptions LossConfig::options(uint64_t pair_seed) const
{
    losses::LossOptions o;
    o.use_flow_gradient = use_flow_gradient;
    o.use_reconstruction = use_reconstruction;
    o.use_perceptual = use_perceptual;
    o.use_constancy = use_constancy;
    o.constancy_flow = constancy_flow == "literal" ? losses::ConstancyFlowMode::literal
                                                   : losses::ConstancyFlowMode::index_consistent;
    o.flow_match = flow_match == "raw_flow" ? losses::FlowMatchMode::raw_flow : losses::FlowMatchMode::gradient;
    o.max_anchors = max_anchors;
    o.pair_seed = pair_seed;
    return o;
}

void Config::validate() const
{
    // Bad values in a config file are configuration errors, not contract violations.
    try {
        flicker.validate();
        loss.weights.validate();
    } catch (const ContractViolation& e) {
        throw ConfigError(e.what());
    }
    auto require = [](bool ok, const std::string& message) {
        if (!ok)
            throw ConfigError(message);
    };
    require(train.frames >= 3, "train.frames (T) must be at least 3");
    require(train.batch >= 1, "train.batch must be positive");
    require(train.iterations >= 0, "train.iterations must be nonnegative");
    require(train.learning_rate > 0.0, "train.learning_rate must be positive");
    require(train.checkpoint_interval >= 0 && train.validation_interval >= 0 && train.truncation >= 0,
            "train intervals must be nonnegative");
    require(!model.widths.empty(), "model.widths must not be empty");
    const int64_t stride = int64_t{1} << model.widths.size();
    require(train.patch >= core::kMinFrameSize && train.patch % stride == 0,
            "train.patch must be at least 8 and divisible by the encoder stride " + std::to_string(stride));
    require(flow.lr_multiplier >= 0.0, "flow.lr_multiplier must be nonnegative");
    require(flow.pretrain_steps >= 0 && flow.pretrain_batch >= 1 && flow.pretrain_clips >= 1,
            "invalid flow pretraining settings");
    require(loss.max_anchors >= 0, "loss.max_anchors must be nonnegative");
    require(eval.alpha > 0.0 && eval.iterations >= 0, "invalid eval settings");
    require(data.synthetic.clips >= 1 && data.validation.clips >= 1, "synthetic corpora need clips");

    if (flow.estimator != "pyramid" && flow.estimator != "zero" && flow.estimator != "scripted")
        throw ConfigError("unknown flow.estimator '" + flow.estimator + "'");
    if (loss.constancy_flow != "index_consistent" && loss.constancy_flow != "literal")
        throw ConfigError("unknown loss.constancy_flow '" + loss.constancy_flow + "'");
    if (loss.flow_match != "gradient" && loss.flow_match != "raw_flow")
        throw ConfigError("unknown loss.flow_match '" + loss.flow_match + "'");
    if (eval.mode != "raw_reference" && eval.mode != "self")
        throw ConfigError("unknown eval.mode '" + eval.mode + "'");
}

json to_json(const Config& c)
{
    const auto& w = c.loss.weights;
    return {
        {"seed", c.seed},
        {"data",
         {{"manifest", c.data.manifest},
          {"synthetic", corpus_json(c.data.synthetic)},
          {"validation", corpus_json(c.data.validation)}}},
        {"flicker",
         {{"families", c.flicker.families},
          {"strength", c.flicker.strength},
          {"seed", c.flicker.seed},
          {"spatial", c.flicker.spatial}}},
        {"model",
         {{"widths", c.model.widths},
          {"residual_blocks", c.model.residual_blocks},
          {"lstm_channels", c.model.lstm_channels},
          {"flow_scale", c.model.flow_scale}}},
        {"flow",
         {{"estimator", c.flow.estimator},
          {"path", c.flow.path},
          {"levels", c.flow.pyramid.levels},
          {"kernel", c.flow.pyramid.kernel},
          {"channels", c.flow.pyramid.channels},
          {"pretrain_steps", c.flow.pretrain_steps},
          {"pretrain_batch", c.flow.pretrain_batch},
          {"pretrain_clips", c.flow.pretrain_clips},
          {"pretrain_lr", c.flow.pretrain_lr},
          {"smoothness", c.flow.smoothness},
          {"max_pretrain_speed", c.flow.max_pretrain_speed},
          {"lr_multiplier", c.flow.lr_multiplier}}},
        {"loss",
         {{"lambda_fg", w.flow_gradient},
          {"lambda_reconstruction", w.reconstruction},
          {"lambda_perceptual", w.perceptual},
          {"lambda_constancy", w.constancy},
          {"alpha", w.alpha},
          {"use_flow_gradient", c.loss.use_flow_gradient},
          {"use_reconstruction", c.loss.use_reconstruction},
          {"use_perceptual", c.loss.use_perceptual},
          {"use_constancy", c.loss.use_constancy},
          {"constancy_flow", c.loss.constancy_flow},
          {"flow_match", c.loss.flow_match},
          {"max_anchors", c.loss.max_anchors},
          {"features", c.loss.features},
          {"features_path", c.loss.features_path}}},
        {"train",
         {{"frames", c.train.frames},
          {"patch", c.train.patch},
          {"batch", c.train.batch},
          {"iterations", c.train.iterations},
          {"learning_rate", c.train.learning_rate},
          {"checkpoint_interval", c.train.checkpoint_interval},
          {"validation_interval", c.train.validation_interval},
          {"truncation", c.train.truncation}}},
        {"eval", {{"mode", c.eval.mode}, {"alpha", c.eval.alpha}, {"iterations", c.eval.iterations}}},
    };
}

Config from_json(const json& doc)
{
    json merged = to_json(Config{});
    merge_strict(merged, doc, "");

    Config c;
    try {
        c.seed = merged.at("seed").get<uint64_t>();
        const auto& d = merged.at("data");
        c.data.manifest = d.at("manifest").get<std::string>();
        c.data.synthetic = corpus_from(d.at("synthetic"));
        c.data.validation = corpus_from(d.at("validation"));

        const auto& f = merged.at("flicker");
        c.flicker.families = f.at("families").get<std::vector<std::string>>();
        c.flicker.strength = f.at("strength").get<double>();
        c.flicker.seed = f.at("seed").get<uint64_t>();
        c.flicker.spatial = f.at("spatial").get<bool>();

        const auto& m = merged.at("model");
        c.model.widths = m.at("widths").get<std::vector<int64_t>>();
        c.model.residual_blocks = m.at("residual_blocks").get<int64_t>();
        c.model.lstm_channels = m.at("lstm_channels").get<int64_t>();
        c.model.flow_scale = m.at("flow_scale").get<double>();

        const auto& fl = merged.at("flow");
        c.flow.estimator = fl.at("estimator").get<std::string>();
        c.flow.path = fl.at("path").get<std::string>();
        c.flow.pyramid.levels = fl.at("levels").get<int64_t>();
        c.flow.pyramid.kernel = fl.at("kernel").get<int64_t>();
        c.flow.pyramid.channels = fl.at("channels").get<std::vector<int64_t>>();
        c.flow.pretrain_steps = fl.at("pretrain_steps").get<int64_t>();
        c.flow.pretrain_batch = fl.at("pretrain_batch").get<int64_t>();
        c.flow.pretrain_clips = fl.at("pretrain_clips").get<int64_t>();
        c.flow.pretrain_lr = fl.at("pretrain_lr").get<double>();
        c.flow.smoothness = fl.at("smoothness").get<double>();
        c.flow.max_pretrain_speed = fl.at("max_pretrain_speed").get<double>();
        c.flow.lr_multiplier = fl.at("lr_multiplier").get<double>();

        const auto& l = merged.at("loss");
        c.loss.weights.flow_gradient = l.at("lambda_fg").get<double>();
        c.loss.weights.reconstruction = l.at("lambda_reconstruction").get<double>();
        c.loss.weights.perceptual = l.at("lambda_perceptual").get<double>();
        c.loss.weights.constancy = l.at("lambda_constancy").get<double>();
        c.loss.weights.alpha = l.at("alpha").get<double>();
        c.loss.use_flow_gradient = l.at("use_flow_gradient").get<bool>();
        c.loss.use_reconstruction = l.at("use_reconstruction").get<bool>();
        c.loss.use_perceptual = l.at("use_perceptual").get<bool>();
        c.loss.use_constancy = l.at("use_constancy").get<bool>();
        c.loss.constancy_flow = l.at("constancy_flow").get<std::string>();
        c.loss.flow_match = l.at("flow_match").get<std::string>();
        c.loss.max_anchors = l.at("max_anchors").get<int64_t>();
        c.loss.features = l.at("features").get<std::string>();
        c.loss.features_path = l.at("features_path").get<std::string>();

        const auto& t = merged.at("train");
        c.train.frames = t.at("frames").get<int64_t>();
        c.train.patch = t.at("patch").get<int64_t>();
        c.train.batch = t.at("batch").get<int64_t>();
        c.train.iterations = t.at("iterations").get<int64_t>();
        c.train.learning_rate = t.at("learning_rate").get<double>();
        c.train.checkpoint_interval = t.at("checkpoint_interval").get<int64_t>();
        c.train.validation_interval = t.at("validation_interval").get<int64_t>();
        c.train.truncation = t.at("truncation").get<int64_t>();

        const auto& e = merged.at("eval");
        c.eval.mode = e.at("mode").get<std::string>();
        c.eval.alpha = e.at("alpha").get<double>();
        c.eval.iterations = e.at("iterations").get<int64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
    return c;
}

json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return json::parse(buffer.str());
    } catch (const json::parse_error& e) {
        throw ConfigError("malformed config file '" + path.string() + "': " + e.what());
    }
}

Config load_config(const std::filesystem::path& path)
{
    return from_json(read_json_file(path));
}

void apply_override(json& doc, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);

    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }

    // Validate the key path against the defaults, then write into doc.
    const json defaults = to_json(Config{});
    const json* probe = &defaults;
    json* slot = &doc;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.'))
        path.push_back(part);
    for (size_t i = 0; i < path.size(); ++i) {
        if (!probe->is_object() || !probe->contains(path[i]))
            throw ConfigError("unknown config key '" + key + "'");
        probe = &(*probe)[path[i]];
        if (!slot->is_object())
            *slot = json::object();
        slot = &(*slot)[path[i]];
    }
    if (probe->is_object())
        throw ConfigError("config key '" + key + "' names a section, not a value");
    *slot = value;
}

}  // namespace tempoc::config
