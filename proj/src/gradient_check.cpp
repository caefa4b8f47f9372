#include "tempoc/gradient_check.hpp"

#include "tempoc/data.hpp"
#include "tempoc/errors.hpp"
#include "tempoc/losses.hpp"
#include "tempoc/synthetic.hpp"
#include "tempoc/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace tempoc::train {

bool GradientCheckReport::passed() const
{
    if (!stop_gradient_exact)
        return false;
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

GradientCheckEntry check_gradient(const std::string& name,
                                  const std::function<torch::Tensor(const torch::Tensor&)>& f,
                                  const torch::Tensor& point, const GradientCheckOptions& options)
{
    TEMPOC_REQUIRE(point.scalar_type() == torch::kFloat64, "gradient checks run in float64");
    TEMPOC_REQUIRE(options.probes > 0 && options.step > 0.0, "invalid gradient-check options");

    auto x = point.detach().clone().set_requires_grad(true);
    auto value = f(x);
    TEMPOC_REQUIRE(value.numel() == 1, "gradient check needs a scalar function");
    auto grads = torch::autograd::grad({value}, {x}, {}, false, false, true);
    auto analytic = grads[0].defined() ? grads[0].detach() : torch::zeros_like(x);
    auto analytic_flat = analytic.reshape(-1);

    std::mt19937_64 rng(data::derive_seed(options.seed, name, 0));
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);

    GradientCheckEntry entry;
    entry.term = name;
    entry.probes = options.probes;
    torch::NoGradGuard no_grad;
    auto base = point.detach().clone();
    auto flat = base.view(-1);
    for (int64_t i = 0; i < options.probes; ++i) {
        const int64_t k = pick(rng);
        const double original = flat[k].item<double>();
        flat[k] = original + options.step;
        const double up = f(base).item<double>();
        flat[k] = original - options.step;
        const double down = f(base).item<double>();
        flat[k] = original;

        const double numeric = (up - down) / (2.0 * options.step);
        const double a = analytic_flat[k].item<double>();
        const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
        const double rel = (a == numeric) ? 0.0 : std::abs(a - numeric) / denom;
        entry.max_relative_error = std::max(entry.max_relative_error, rel);
        entry.max_abs_gradient = std::max(entry.max_abs_gradient, std::abs(a));
    }
    entry.passed = entry.max_relative_error < options.tolerance;
    return entry;
}

GradientCheckReport gradient_check(const config::Config& config, const GradientCheckOptions& options)
{
    config.validate();
    TEMPOC_REQUIRE(options.frames >= 3 && options.size >= core::kMinFrameSize, "gradient check clip too small");

    auto estimator = make_estimator(config.flow);
    estimator->to(torch::kFloat64);
    {
        torch::NoGradGuard no_grad;
        auto gen = at::detail::createCPUGenerator(data::derive_seed(options.seed, "estimator", 0));
        for (auto& p : estimator->parameters())
            p.add_(at::normal(0.0, 0.05, p.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat64)));
    }
    auto features = features::make_feature_extractor(config.loss.features, config.loss.features_path,
                                                     data::derive_seed(config.seed, "features", 0));
    features->to(torch::kFloat64);

    // Textured translating clip; P and O are noisy copies kept away from 0 and 1.
    auto clip = synth::make_translation_clip(options.frames, options.size, options.size, 0.7, -0.4, options.seed);
    auto gen = at::detail::createCPUGenerator(data::derive_seed(options.seed, "clip", 0));
    auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
    auto raw = clip.raw.tensor().to(torch::kFloat64);
    auto processed = (raw + at::normal(0.0, 0.05, raw.sizes(), gen, f64)).clamp(0.05, 0.95);
    auto outputs = (processed + at::normal(0.0, 0.05, raw.sizes(), gen, f64)).clamp(0.05, 0.95);

    const auto& weights = config.loss.weights;
    const auto loss_options = config.loss.options(data::derive_seed(options.seed, "pairs", 0));
    const double alpha = weights.alpha;

    GradientCheckReport report;
    report.tolerance = options.tolerance;
    auto add = [&](bool enabled, const std::string& name, double lambda,
                   const std::function<torch::Tensor(const torch::Tensor&)>& term) {
        if (!enabled)
            return;
        report.entries.push_back(check_gradient(
            name, [&](const torch::Tensor& o) { return lambda * term(o); }, outputs, options));
    };
    add(loss_options.use_flow_gradient, "l_fg", weights.flow_gradient, [&](const torch::Tensor& o) {
        return losses::loss_flow_gradient(o, raw, *estimator, loss_options.flow_match);
    });
    add(loss_options.use_reconstruction, "l_rec", weights.reconstruction, [&](const torch::Tensor& o) {
        return losses::loss_reconstruction(o, raw, *estimator, alpha);
    });
    add(loss_options.use_perceptual, "l_p", weights.perceptual,
        [&](const torch::Tensor& o) { return losses::loss_perceptual(o, processed, *features); });
    add(loss_options.use_constancy, "l_const", weights.constancy, [&](const torch::Tensor& o) {
        return losses::loss_constancy(o, raw, *estimator, alpha, loss_options.max_anchors, loss_options.pair_seed,
                                      loss_options.constancy_flow);
    });

    // Stop-gradient contract: only O may receive gradient.
    auto raw_var = raw.clone().set_requires_grad(true);
    auto processed_var = processed.clone().set_requires_grad(true);
    auto out_var = outputs.clone().set_requires_grad(true);
    auto total = losses::total_loss(out_var, raw_var, processed_var, *estimator, *features, weights, loss_options);
    if (!total.total_tensor.requires_grad()) {
        report.stop_gradient_exact = true;
        return report;
    }
    auto grads = torch::autograd::grad({total.total_tensor}, {raw_var, processed_var}, {}, false, false, true);
    report.stop_gradient_exact = std::all_of(grads.begin(), grads.end(), [](const torch::Tensor& g) {
        return !g.defined() || g.abs().max().item<double>() == 0.0;
    });
    return report;
}

}  // namespace tempoc::train
