#pragma once

#include "tempoc/config.hpp"

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tempoc::train {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// One training-log row: the four loss terms, their weighted total and, every
/// validation interval, the held-out warp error.
struct MetricRow {
    int64_t iteration = 0;
    std::array<double, 4> terms{};
    double total = 0.0;
    std::optional<double> val_warp_error;
};

/// Everything needed to resume training or run inference.
struct Checkpoint {
    config::Config config;
    int64_t iteration = 0;
    std::string estimator_identifier;
    NamedTensors model;           // restoration network incl. its flow estimator
    NamedTensors reference_flow;  // frozen estimator used for warp-error measurement
    NamedTensors optimizer;       // Adam moments and step counts, keyed by parameter name
    std::vector<MetricRow> history;
};

/// Container layout (little-endian):
///   "TPCCKPT\0" | u32 version | u64 payload size | payload | u32 CRC-32(payload)
/// payload: u64 JSON size | JSON metadata | u32 tensor count | tensor records
inline constexpr uint32_t kCheckpointVersion = 1;

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Throws VersionError for other format versions and IntegrityError for
/// truncated or corrupted files. Nothing is returned unless the whole file
/// parsed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters then buffers, CPU copies, in registration order.
NamedTensors capture_state(const torch::nn::Module& module);

/// Strict restore: every name must exist with matching shape and dtype.
void restore_state(torch::nn::Module& module, const NamedTensors& state);

NamedTensors capture_adam(torch::optim::Adam& optimizer, const torch::nn::Module& module);
void restore_adam(torch::optim::Adam& optimizer, const torch::nn::Module& module, const NamedTensors& state);

bool bitwise_equal(const NamedTensors& a, const NamedTensors& b);

}  // namespace tempoc::train
