#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fust/data/synthetic.hpp"
#include "fust/fusion/masking.hpp"
#include "fust/fusion/strategy.hpp"
#include "fust/model/small_convnet.hpp"

namespace fust::cli {

inline constexpr const char* toolkit_version = "0.1.0";

struct DiagnosticsConfig {
    double threshold = 1e-10;
    double sample_fraction = 0.99;
    double zero_tolerance = 1e-8;
    std::size_t probe_samples = 256;
    data::Modality probe_modality = data::Modality::v;
    std::string layer_selector = ".*";
};

// Uni-modal supervised training used by pretrain and finetune.
struct TrainSection {
    data::Modality modality = data::Modality::a;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t train_per_class = 0; // 0 keeps the whole training split
    double abri_init_alpha = 0.5;    // finetune only
};

struct InjectConfig {
    double fraction = 0.5;
    double magnitude = 1e-12;
    int beta_sign = -1;
};

struct ProbeSection {
    data::Modality modality = data::Modality::v;
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

// One experiment. `seed` is the single source of randomness: the synthetic
// and plan sections inherit it, and an explicit section seed must agree.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string run_id = "run";
    std::filesystem::path output_dir = "out";
    data::SyntheticSpec synthetic;
    model::ModelConfig model_a;
    model::ModelConfig model_v;
    fusion::StagePlan plan;
    fusion::MaskingPolicy policy;
    DiagnosticsConfig diagnostics;
    TrainSection pretrain;
    TrainSection finetune{.modality = data::Modality::v};
    InjectConfig inject;
    ProbeSection probe;

    const model::ModelConfig& model(data::Modality m) const { return m == data::Modality::a ? model_a : model_v; }
};

// Fully resolved form; parsing it back gives the same config.
nlohmann::json to_json(const ExperimentConfig& c);

// Strict: unknown keys anywhere raise ConfigError with the dotted field path.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

// Apply "a.b.c=value" to a raw config document. The value is parsed as JSON
// when it is valid JSON and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

nlohmann::json read_json_file(const std::filesystem::path& path);

} // namespace fust::cli
