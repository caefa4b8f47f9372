#pragma once

#include "tempoc/flow_backbone.hpp"
#include "tempoc/model.hpp"
#include "tempoc/video_core.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tempoc::eval {

/// Where flow and occlusion masks come from: the reference (raw) video, or the
/// evaluated video itself.
enum class FlowSource { raw_reference, self };

std::string to_string(FlowSource source);
FlowSource flow_source_from_string(const std::string& name);

struct WarpErrorResult {
    std::vector<double> per_pair;  // pair t-1 -> t, t = 1..T-1
    double mean = 0.0;
    FlowSource mode = FlowSource::self;
    std::string normalization = "mask_sum";
};

/// Per pair: sum_i M_i |V_t - warp(V_{t-1}, f)|_i^2 / sum_i M_i, where
/// f = of(X_t, X_{t-1}) and M is the occlusion mask of X, X being the reference
/// when given and the video otherwise. video/reference are [T, 3, H, W].
WarpErrorResult temporal_warp_error(const torch::Tensor& video, const std::optional<torch::Tensor>& reference,
                                    flow::FlowEstimator& estimator, double alpha = core::kDefaultMaskAlpha);
WarpErrorResult temporal_warp_error(const VideoSequence& video, const std::optional<VideoSequence>& reference,
                                    flow::FlowEstimator& estimator, double alpha = core::kDefaultMaskAlpha);

struct IterationCurve {
    std::vector<std::pair<int64_t, double>> points;  // (iteration, mean warp error)
    std::vector<VideoSequence> videos;               // videos[0] is the input
};

/// Feeds the model's output back in k times, measuring warp error at every
/// stage. In raw-reference mode the reference stays fixed across iterations.
IterationCurve iterate_restore(model::RestorationNet& net, const VideoSequence& processed, int64_t k,
                               const std::optional<VideoSequence>& reference, flow::FlowEstimator& metric_estimator,
                               double alpha = core::kDefaultMaskAlpha);

struct ReportEntry {
    std::string task;
    std::string method;
    std::string clip;
    WarpErrorResult result;
};

/// A static comparison column, e.g. a published number. Shown, never checked.
struct Citation {
    std::string label;
    std::vector<std::pair<std::string, double>> values;  // (task or "average", value)
};

struct Report {
    std::string csv;        // task,method,clip,warp_error,mode, one row per entry
    std::string table_csv;  // task x method means with best / second_best columns
    std::string text;       // aligned table; * best, + second best
    std::vector<std::string> tasks;
    std::vector<std::string> methods;
    std::vector<std::vector<std::optional<double>>> means;  // [task][method]
    std::vector<std::optional<double>> averages;            // [method]
};

/// Rows are tasks, columns methods, both in first-appearance order. Several
/// entries may share a (task, method) cell only if their clips differ; the cell
/// shows their mean. A repeated (task, method, clip) key is a contract violation.
Report build_report(const std::vector<ReportEntry>& entries, const std::vector<Citation>& citations = {});

}  // namespace tempoc::eval
