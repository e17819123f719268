#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fust/model/small_convnet.hpp"

namespace fust::diag {

struct LayerHealth {
    std::string name;
    std::size_t channels = 0;
    double abnormal_ratio = 0.0;
    std::vector<std::size_t> abnormal_ids;
    std::vector<std::size_t> dead_ids;

    bool operator==(const LayerHealth&) const = default;
};

struct ChannelHealthReport {
    std::string model;
    double threshold = 1e-10;
    std::vector<LayerHealth> layers;
    std::vector<std::string> warnings;

    bool operator==(const ChannelHealthReport&) const = default;
};

// Abnormal channels over all scanned channels.
double overall_abnormal_ratio(const ChannelHealthReport& r);

nlohmann::json to_json(const ChannelHealthReport& r);
ChannelHealthReport report_from_json(const nlohmann::json& j);

// Channel k is abnormal iff max(|gamma_k|, |beta_k|) < threshold. For ABRi
// layers only the original layer is scanned. A model without BN layers gives
// an empty report carrying a warning.
ChannelHealthReport scan_abnormal_bn(model::Encoder& encoder, double threshold = 1e-10);
ChannelHealthReport scan_abnormal_bn(model::MultiModalModel& m, double threshold = 1e-10);

struct DeadChannelOptions {
    double sample_fraction = 0.99;
    // Post-ReLU entries with magnitude <= zero_tolerance count as zero.
    double zero_tolerance = 1e-8;
    std::size_t batch_size = 128;
};

struct LayerDead {
    std::string name;
    std::vector<std::size_t> ids;

    bool operator==(const LayerDead&) const = default;
};

// A channel is dead when its post-ReLU map is all zero on at least
// sample_fraction of the probe samples. Layers are selected by an ECMAScript
// regex over the layer name; no match is a contract error. Runs in eval mode.
std::vector<LayerDead> detect_dead_channels(model::Encoder& encoder, const Tensor& probe_inputs,
                                            const std::string& layer_selector = ".*",
                                            const DeadChannelOptions& opts = {});

std::size_t dead_count(const std::vector<LayerDead>& dead);

// Writes dead ids into the matching layers of a scan report.
void attach_dead(ChannelHealthReport& report, const std::vector<LayerDead>& dead);

struct InjectionRecord {
    std::string layer;
    std::vector<std::size_t> ids;
};

struct Provenance {
    double fraction = 0.0;
    double magnitude = 0.0;
    int beta_sign = -1;
    std::uint64_t seed = 0;
    std::vector<InjectionRecord> layers;

    std::size_t total() const;
};

nlohmann::json to_json(const Provenance& p);
Provenance provenance_from_json(const nlohmann::json& j);

// For each BN layer, ceil(fraction * C) channels drawn by a seeded shuffle get
// gamma <- magnitude and beta <- beta_sign * magnitude. ABRi layers are
// injected through their original layer.
Provenance inject_abnormal(model::Encoder& encoder, double fraction, double magnitude = 1e-12, int beta_sign = -1,
                           std::uint64_t seed = 0);

enum class ReportFormat { json, csv };

// JSON: {"model", "threshold", "layers": [{"name", "channels", "abnormal_ratio",
// "abnormal_ids", "dead_ids"}]}. CSV: name,channels,abnormal_ratio,n_dead.
std::string render_report(const ChannelHealthReport& r, ReportFormat format);
void export_report(const ChannelHealthReport& r, const std::filesystem::path& path, ReportFormat format);
ChannelHealthReport import_report(const std::filesystem::path& path);

} // namespace fust::diag
