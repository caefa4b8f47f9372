#pragma once

#include "tempoc/config.hpp"

#include <torch/torch.h>

#include <functional>
#include <string>
#include <vector>

namespace tempoc::train {

struct GradientCheckEntry {
    std::string term;
    int64_t probes = 0;
    double max_relative_error = 0.0;
    double max_abs_gradient = 0.0;  // largest analytic gradient among the probes
    bool passed = false;
};

struct GradientCheckReport {
    std::vector<GradientCheckEntry> entries;  // one per enabled loss term
    /// d(total)/dI and d(total)/dP are absent or exactly zero.
    bool stop_gradient_exact = false;
    double tolerance = 0.0;

    bool passed() const;
};

struct GradientCheckOptions {
    int64_t probes = 32;
    int64_t frames = 3;
    int64_t size = 8;
    double step = 1e-6;
    double tolerance = 1e-3;
    /// Relative errors are taken against max(|analytic|, |numeric|, floor).
    double floor = 1e-6;
    uint64_t seed = 0;
};

/// Compares autograd against central differences of f at `probes` random
/// elements of `point` (float64). f must return a scalar.
GradientCheckEntry check_gradient(const std::string& name,
                                  const std::function<torch::Tensor(const torch::Tensor&)>& f,
                                  const torch::Tensor& point, const GradientCheckOptions& options);

/// Runs the check for each enabled loss term (weighted by its lambda) on a tiny
/// float64 clip. Learned estimators get their parameters perturbed with a
/// seeded draw so that flows, and hence flow gradients, are not trivially zero.
GradientCheckReport gradient_check(const config::Config& config, const GradientCheckOptions& options = {});

}  // namespace tempoc::train
