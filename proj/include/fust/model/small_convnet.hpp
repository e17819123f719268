#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fust/batchnorm/abri.hpp"

namespace fust::model {

using bn::Mode;

struct ModelConfig {
    Shape input_shape{1, 16, 16};         // C, H, W
    std::vector<std::size_t> channels{8, 16, 32}; // one entry per block
    bool residual_connections = false;
    std::size_t n_classes = 6;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    std::size_t block_count() const { return channels.size(); }
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Conv3x3 (stride 2, padding 1, no bias) -> norm -> ReLU, optional identity
// shortcut (subsampled, channel zero-padded) added after the ReLU.
struct ConvBlock {
    Parameter weight;
    bn::NormLayer norm;
};

struct NormSite {
    std::string name;
    bn::NormLayer* layer;
};

struct StateEntry {
    std::string name;
    std::string tag;
    Tensor* tensor;
};

class Encoder {
public:
    Encoder() = default;
    Encoder(ModelConfig cfg, std::string prefix, std::uint64_t seed);

    struct Output {
        Var features;                 // N x feature_dim
        std::vector<Var> activations; // post-ReLU map of every block, when captured
    };

    Output forward(const Var& x, Mode mode, bool capture = false);
    Var features(const Var& x, Mode mode) { return forward(x, mode).features; }

    const ModelConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }
    std::size_t feature_dim() const { return cfg_.channels.back(); }

    std::vector<ConvBlock>& blocks() { return blocks_; }
    const std::vector<ConvBlock>& blocks() const { return blocks_; }

    std::vector<Parameter*> parameters();
    std::vector<NormSite> norm_sites();
    std::vector<StateEntry> state();

    // Wrap every plain BN layer with ABRi. Throws if any block is already wrapped.
    void wrap_abri(double init_alpha = bn::default_init_alpha);
    bool has_abri() const;

    nlohmann::json describe() const;

private:
    ModelConfig cfg_;
    std::string prefix_;
    std::vector<ConvBlock> blocks_;
};

struct LinearHead {
    Parameter weight; // K x D
    Parameter bias;   // K

    static LinearHead init(const std::string& name, std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);
    Var forward(const Var& x);
    std::size_t in_dim() const { return weight.value.dim(1); }
    std::size_t out_dim() const { return weight.value.dim(0); }
    std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

struct UniModalModel {
    Encoder encoder;
    LinearHead head;

    static UniModalModel init(const ModelConfig& cfg, const std::string& prefix, std::uint64_t seed);
    Var logits(const Var& x, Mode mode);
    std::vector<Parameter*> parameters();
    std::vector<StateEntry> state();
    nlohmann::json describe() const;
};

// Two encoders whose pooled features are concatenated into one linear head.
struct MultiModalModel {
    Encoder encoder_a;
    Encoder encoder_v;
    LinearHead head;

    static MultiModalModel assemble(Encoder a, Encoder v, std::size_t n_classes, std::uint64_t seed);
    Var logits(const Var& xa, const Var& xv, Mode mode);
    std::vector<Parameter*> parameters();
    std::vector<StateEntry> state();
    nlohmann::json describe() const;
};

// Rebuild a model skeleton from describe() output; values are filled in later.
Encoder encoder_from_description(const nlohmann::json& j);
UniModalModel unimodal_from_description(const nlohmann::json& j);
MultiModalModel multimodal_from_description(const nlohmann::json& j);

} // namespace fust::model
