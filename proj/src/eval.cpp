#include "tempoc/eval.hpp"

#include "tempoc/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace tempoc::eval {

using torch::indexing::None;
using torch::indexing::Slice;

namespace {

// Pairs per estimator call; bounds memory on long clips.
constexpr int64_t kPairChunk = 8;

std::string format_value(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string to_string(FlowSource source)
{
    return source == FlowSource::raw_reference ? "raw_reference" : "self";
}

FlowSource flow_source_from_string(const std::string& name)
{
    if (name == "raw_reference")
        return FlowSource::raw_reference;
    if (name == "self")
        return FlowSource::self;
    throw ConfigError("unknown warp-error mode '" + name + "' (expected raw_reference or self)");
}

WarpErrorResult temporal_warp_error(const torch::Tensor& video, const std::optional<torch::Tensor>& reference,
                                    flow::FlowEstimator& estimator, double alpha)
{
    TEMPOC_REQUIRE(video.dim() == 4 && video.size(1) == 3, "temporal_warp_error expects [T, 3, H, W]");
    TEMPOC_REQUIRE(video.size(0) >= 2, "temporal_warp_error needs at least 2 frames");
    if (reference)
        TEMPOC_REQUIRE(reference->sizes() == video.sizes(), "reference is not aligned with the evaluated video");

    torch::NoGradGuard no_grad;
    const auto param = estimator.parameters();
    const auto est_options = param.empty() ? video.options() : param.front().options();
    const auto& driver = reference ? *reference : video;

    WarpErrorResult result;
    result.mode = reference ? FlowSource::raw_reference : FlowSource::self;
    const int64_t frames = video.size(0);
    for (int64_t begin = 1; begin < frames; begin += kPairChunk) {
        const int64_t end = std::min(frames, begin + kPairChunk);
        auto x_t = driver.index({Slice(begin, end)}).to(est_options);
        auto x_prev = driver.index({Slice(begin - 1, end - 1)}).to(est_options);
        auto flow = estimator.estimate(x_t, x_prev).to(torch::kFloat64);

        auto xd_t = x_t.to(torch::kFloat64);
        auto xd_prev = x_prev.to(torch::kFloat64);
        auto mask = core::occlusion_mask(xd_t, xd_prev, flow, alpha);

        auto v_t = video.index({Slice(begin, end)}).to(xd_t.options());
        auto v_prev = video.index({Slice(begin - 1, end - 1)}).to(xd_t.options());
        auto sq = (v_t - core::backward_warp(v_prev, flow)).pow(2).sum(1, true);
        auto num = (mask * sq).sum({1, 2, 3});
        auto den = mask.sum({1, 2, 3});
        auto per = torch::where(den > 0, num / den.clamp_min(1e-300), torch::zeros_like(num)).to(torch::kCPU);
        for (int64_t i = 0; i < per.size(0); ++i)
            result.per_pair.push_back(per[i].item<double>());
    }
    double sum = 0.0;
    for (double v : result.per_pair)
        sum += v;
    result.mean = sum / static_cast<double>(result.per_pair.size());
    return result;
}

WarpErrorResult temporal_warp_error(const VideoSequence& video, const std::optional<VideoSequence>& reference,
                                    flow::FlowEstimator& estimator, double alpha)
{
    std::optional<torch::Tensor> ref;
    if (reference) {
        TEMPOC_REQUIRE(reference->length() == video.length() && reference->first_index() == video.first_index(),
                       "reference is not aligned with the evaluated video");
        ref = reference->tensor();
    }
    return temporal_warp_error(video.tensor(), ref, estimator, alpha);
}

IterationCurve iterate_restore(model::RestorationNet& net, const VideoSequence& processed, int64_t k,
                               const std::optional<VideoSequence>& reference, flow::FlowEstimator& metric_estimator,
                               double alpha)
{
    TEMPOC_REQUIRE(k >= 0, "iterate_restore needs k >= 0");
    torch::NoGradGuard no_grad;
    IterationCurve curve;
    curve.videos.push_back(processed);
    curve.points.emplace_back(0, temporal_warp_error(processed, reference, metric_estimator, alpha).mean);
    for (int64_t i = 1; i <= k; ++i) {
        auto restored = net.process_sequence(curve.videos.back());
        curve.points.emplace_back(i, temporal_warp_error(restored, reference, metric_estimator, alpha).mean);
        curve.videos.push_back(std::move(restored));
    }
    return curve;
}

Report build_report(const std::vector<ReportEntry>& entries, const std::vector<Citation>& citations)
{
    TEMPOC_REQUIRE(!entries.empty(), "build_report needs at least one result");

    Report report;
    std::map<std::string, size_t> task_index, method_index;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& e : entries) {
        TEMPOC_REQUIRE(seen.insert({e.task, e.method, e.clip}).second,
                       "duplicate result for task '" + e.task + "', method '" + e.method + "'" +
                           (e.clip.empty() ? std::string() : ", clip '" + e.clip + "'"));
        if (task_index.emplace(e.task, report.tasks.size()).second)
            report.tasks.push_back(e.task);
        if (method_index.emplace(e.method, report.methods.size()).second)
            report.methods.push_back(e.method);
    }

    const size_t nt = report.tasks.size();
    const size_t nm = report.methods.size();
    std::vector<std::vector<double>> sums(nt, std::vector<double>(nm, 0.0));
    std::vector<std::vector<int>> counts(nt, std::vector<int>(nm, 0));
    std::ostringstream csv;
    csv << "task,method,clip,warp_error,mode\n";
    for (const auto& e : entries) {
        sums[task_index[e.task]][method_index[e.method]] += e.result.mean;
        counts[task_index[e.task]][method_index[e.method]] += 1;
        csv << csv_field(e.task) << ',' << csv_field(e.method) << ',' << csv_field(e.clip) << ','
            << format_value(e.result.mean) << ',' << to_string(e.result.mode) << '\n';
    }
    report.csv = csv.str();

    report.means.assign(nt, std::vector<std::optional<double>>(nm));
    for (size_t t = 0; t < nt; ++t)
        for (size_t m = 0; m < nm; ++m)
            if (counts[t][m] > 0)
                report.means[t][m] = sums[t][m] / counts[t][m];
    report.averages.assign(nm, std::nullopt);
    for (size_t m = 0; m < nm; ++m) {
        double s = 0.0;
        int n = 0;
        for (size_t t = 0; t < nt; ++t)
            if (report.means[t][m]) {
                s += *report.means[t][m];
                ++n;
            }
        if (n > 0)
            report.averages[m] = s / n;
    }

    // Ranks within one row: best and second-best method indices.
    auto rank = [nm](const std::vector<std::optional<double>>& row) {
        std::vector<size_t> order;
        for (size_t m = 0; m < nm; ++m)
            if (row[m])
                order.push_back(m);
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return *row[a] < *row[b]; });
        return order;
    };

    std::vector<std::string> header{"task"};
    header.insert(header.end(), report.methods.begin(), report.methods.end());
    for (const auto& c : citations)
        header.push_back(c.label + " (cited)");

    std::vector<std::vector<std::string>> cells;
    std::ostringstream table_csv;
    for (size_t i = 0; i < header.size(); ++i)
        table_csv << (i ? "," : "") << csv_field(header[i]);
    table_csv << ",best,second_best\n";

    auto citation_value = [](const Citation& c, const std::string& key) -> std::string {
        for (const auto& [k, v] : c.values)
            if (k == key)
                return format_value(v);
        return "-";
    };

    auto emit_row = [&](const std::string& label, const std::vector<std::optional<double>>& row) {
        const auto order = rank(row);
        std::vector<std::string> text_row{label};
        table_csv << csv_field(label);
        for (size_t m = 0; m < nm; ++m) {
            std::string v = row[m] ? format_value(*row[m]) : "";
            table_csv << ',' << v;
            std::string mark = " ";
            if (!order.empty() && order[0] == m)
                mark = "*";
            else if (order.size() > 1 && order[1] == m)
                mark = "+";
            text_row.push_back(row[m] ? v + mark : "-");
        }
        for (const auto& c : citations) {
            const auto v = citation_value(c, label);
            table_csv << ',' << (v == "-" ? "" : v);
            text_row.push_back(v);
        }
        table_csv << ',' << (order.empty() ? "" : csv_field(report.methods[order[0]])) << ','
                  << (order.size() > 1 ? csv_field(report.methods[order[1]]) : "") << '\n';
        cells.push_back(std::move(text_row));
    };
    for (size_t t = 0; t < nt; ++t)
        emit_row(report.tasks[t], report.means[t]);
    emit_row("average", report.averages);
    report.table_csv = table_csv.str();

    std::vector<size_t> widths(header.size(), 0);
    for (size_t i = 0; i < header.size(); ++i)
        widths[i] = header[i].size();
    for (const auto& row : cells)
        for (size_t i = 0; i < row.size(); ++i)
            widths[i] = std::max(widths[i], row[i].size());
    std::ostringstream text;
    auto put_row = [&](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i == 0)
                text << row[i] << std::string(widths[i] - row[i].size(), ' ');
            else
                text << "  " << std::string(widths[i] - row[i].size(), ' ') << row[i];
        }
        text << '\n';
    };
    put_row(header);
    size_t total_width = 0;
    for (size_t w : widths)
        total_width += w + 2;
    text << std::string(total_width - 2, '-') << '\n';
    for (size_t r = 0; r < cells.size(); ++r) {
        if (r + 1 == cells.size())
            text << std::string(total_width - 2, '-') << '\n';
        put_row(cells[r]);
    }
    text << "* best  + second best  (mode: " << to_string(entries.front().result.mode) << ")\n";
    report.text = text.str();
    return report;
}

}  // namespace tempoc::eval
