#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unistd.h>

namespace fs = std::filesystem;

namespace tempoc::testing {

TempDir::TempDir(const std::string& tag)
{
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("tempoc_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir()
{
    std::error_code ec;
    fs::remove_all(path_, ec);
}

torch::Tensor reference_warp(const torch::Tensor& source, const torch::Tensor& flow)
{
    auto src = source.to(torch::kFloat64).contiguous();
    auto fl = flow.to(torch::kFloat64).contiguous();
    const int64_t c = src.size(0), h = src.size(1), w = src.size(2);
    auto out = torch::zeros_like(src);
    auto s = src.accessor<double, 3>();
    auto f = fl.accessor<double, 3>();
    auto o = out.accessor<double, 3>();
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const double sx = std::clamp(x + f[0][y][x], 0.0, static_cast<double>(w - 1));
            const double sy = std::clamp(y + f[1][y][x], 0.0, static_cast<double>(h - 1));
            const auto x0 = static_cast<int64_t>(std::floor(sx));
            const auto y0 = static_cast<int64_t>(std::floor(sy));
            const int64_t x1 = std::min(x0 + 1, w - 1);
            const int64_t y1 = std::min(y0 + 1, h - 1);
            const double ax = sx - x0;
            const double ay = sy - y0;
            for (int64_t k = 0; k < c; ++k) {
                o[k][y][x] = (1 - ay) * ((1 - ax) * s[k][y0][x0] + ax * s[k][y0][x1]) +
                             ay * ((1 - ax) * s[k][y1][x0] + ax * s[k][y1][x1]);
            }
        }
    }
    return out;
}

LinearFlowEstimator::LinearFlowEstimator(uint64_t seed, double scale) : seed_(seed), scale_(scale)
{
    auto gen = at::detail::createCPUGenerator(seed);
    weight_ = register_buffer("weight", at::normal(0.0, 1.0, {2, 6, 3, 3}, gen, torch::TensorOptions()));
}

std::shared_ptr<flow::FlowEstimator> LinearFlowEstimator::clone_estimator() const
{
    auto copy = std::make_shared<LinearFlowEstimator>(seed_, scale_);
    copy->to(weight_.scalar_type());
    return copy;
}

torch::Tensor LinearFlowEstimator::estimate_padded(const torch::Tensor& target, const torch::Tensor& source)
{
    auto w = weight_.to(target.options());
    return scale_ * torch::tanh(torch::conv2d(torch::cat({target, source}, 1), w, {}, 1, 1));
}

/// Scalar-loop version of one masked warped L1 term for a single clip:
/// mean_x M(x) * sum_c |O_t - warp(O_p, f)|, with f = of(I_f, I_p) and
/// M = exp(-alpha * sum_c (I_t - warp(I_p, f))^2).
double masked_pair_oracle(const torch::Tensor& out, const torch::Tensor& raw, flow::FlowEstimator& est, int64_t p,
                          int64_t t, int64_t flow_frame, double alpha)
{
    torch::NoGradGuard no_grad;
    auto f = est.estimate(raw[flow_frame].unsqueeze(0), raw[p].unsqueeze(0))[0];
    auto warped_raw = reference_warp(raw[p], f);
    auto warped_out = reference_warp(out[p], f);
    auto raw_t = raw[t];
    auto out_t = out[t];
    auto rt = raw_t.accessor<double, 3>();
    auto ot = out_t.accessor<double, 3>();
    auto wr = warped_raw.accessor<double, 3>();
    auto wo = warped_out.accessor<double, 3>();
    const int64_t h = out.size(2), w = out.size(3);
    double sum = 0.0;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double e2 = 0.0, l1 = 0.0;
            for (int64_t c = 0; c < 3; ++c) {
                e2 += (rt[c][y][x] - wr[c][y][x]) * (rt[c][y][x] - wr[c][y][x]);
                l1 += std::abs(ot[c][y][x] - wo[c][y][x]);
            }
            sum += std::exp(-alpha * e2) * l1;
        }
    return sum / static_cast<double>(h * w);
}

/// Forward-difference flow gradients by explicit loops, [4, H, W].
torch::Tensor loop_gradient(const torch::Tensor& flow)
{
    const int64_t h = flow.size(1), w = flow.size(2);
    auto g = torch::zeros({4, h, w}, torch::kFloat64);
    auto f = flow.accessor<double, 3>();
    auto a = g.accessor<double, 3>();
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                a[2 * c][y][x] = x + 1 < w ? f[c][y][x + 1] - f[c][y][x] : 0.0;
                a[2 * c + 1][y][x] = y + 1 < h ? f[c][y + 1][x] - f[c][y][x] : 0.0;
            }
    return g;
}

}  // namespace tempoc::testing
