#include "fust/model/small_convnet.hpp"

#include <cmath>

#include "fust/common/json_fields.hpp"
#include "fust/numerics/ops.hpp"
#include "fust/numerics/rng.hpp"

namespace fust::model {
namespace {

constexpr ConvGeometry block_geometry{2, 1};
constexpr std::size_t kernel = 3;

Tensor kaiming_normal(const std::string& name, Shape shape, std::size_t fan_in, std::uint64_t seed) {
    Rng rng = keyed_rng({seed, tag(Stream::init), fnv1a(name)});
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor t(std::move(shape), 0.0);
    for (auto& v : t.storage()) v = dist(rng);
    return t;
}

void append_bn_state(std::vector<StateEntry>& out, bn::BatchNormLayer& layer, const std::string& tag_base) {
    out.push_back({layer.gamma.name, tag_base, &layer.gamma.value});
    out.push_back({layer.beta.name, tag_base, &layer.beta.value});
    out.push_back({layer.name + ".running_mean", tag_base + ".stat", &layer.running_mean});
    out.push_back({layer.name + ".running_var", tag_base + ".stat", &layer.running_var});
}

nlohmann::json head_description(const LinearHead& head) {
    return {{"name", head.weight.name.substr(0, head.weight.name.rfind('.'))},
            {"in", head.in_dim()},
            {"out", head.out_dim()}};
}

LinearHead head_from_description(const nlohmann::json& j) {
    return LinearHead::init(j.at("name").get<std::string>(), j.at("in").get<std::size_t>(),
                            j.at("out").get<std::size_t>(), 0);
}

} // namespace

void ModelConfig::validate() const {
    if (input_shape.size() != 3) throw ContractError("model.input_shape: expected [C, H, W]");
    for (std::size_t d : input_shape) {
        if (d == 0) throw ContractError("model.input_shape: every dimension must be >= 1");
    }
    if (channels.empty()) throw ContractError("model.channels: block count must be >= 1");
    for (std::size_t c : channels) {
        if (c == 0) throw ContractError("model.channels: every channel count must be >= 1");
    }
    if (n_classes < 2) throw ContractError("model.n_classes: need at least 2 classes");
    if (bn_eps < 0.0) throw ContractError("model.bn_eps: must be >= 0");
    if (bn_momentum < 0.0 || bn_momentum > 1.0) throw ContractError("model.bn_momentum: outside [0, 1]");
}

nlohmann::json to_json(const ModelConfig& cfg) {
    return {{"input_shape", cfg.input_shape},   {"channels", cfg.channels},
            {"residual_connections", cfg.residual_connections},
            {"n_classes", cfg.n_classes},       {"bn_eps", cfg.bn_eps},
            {"bn_momentum", cfg.bn_momentum}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"input_shape", "channels", "residual_connections", "n_classes", "bn_eps", "bn_momentum"},
                       "model");
    ModelConfig cfg;
    read_field(j, "input_shape", cfg.input_shape, "model");
    read_field(j, "channels", cfg.channels, "model");
    read_field(j, "residual_connections", cfg.residual_connections, "model");
    read_field(j, "n_classes", cfg.n_classes, "model");
    read_field(j, "bn_eps", cfg.bn_eps, "model");
    read_field(j, "bn_momentum", cfg.bn_momentum, "model");
    cfg.validate();
    return cfg;
}

Encoder::Encoder(ModelConfig cfg, std::string prefix, std::uint64_t seed)
    : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
    std::size_t in_c = cfg_.input_shape[0];
    for (std::size_t b = 0; b < cfg_.channels.size(); ++b) {
        const std::size_t out_c = cfg_.channels[b];
        const std::string base = prefix_ + ".block" + std::to_string(b);
        ConvBlock block;
        block.weight = Parameter(base + ".conv.weight",
                                 kaiming_normal(base + ".conv.weight", {out_c, in_c, kernel, kernel},
                                                in_c * kernel * kernel, seed));
        block.norm = bn::BatchNormLayer::fresh(base + ".norm", out_c, cfg_.bn_eps, cfg_.bn_momentum);
        blocks_.push_back(std::move(block));
        in_c = out_c;
    }
}

Encoder::Output Encoder::forward(const Var& x, Mode mode, bool capture) {
    if (x.value().rank() != 4 || x.value().dim(1) != cfg_.input_shape[0]) {
        throw DimensionError("encoder '" + prefix_ + "': input " + shape_str(x.shape()) + " does not have " +
                             std::to_string(cfg_.input_shape[0]) + " channels on axis 1");
    }
    Output out;
    Var h = x;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        auto& block = blocks_[b];
        Var z = ops::conv2d(h, Var::bind(block.weight), block_geometry);
        z = bn::norm_forward(z, block.norm, mode);
        Var a = ops::relu(z);
        if (capture) out.activations.push_back(a);
        if (cfg_.residual_connections) a = ops::add(a, ops::shortcut(h, cfg_.channels[b], block_geometry.stride));
        h = a;
    }
    out.features = ops::global_avg_pool(h);
    return out;
}

std::vector<Parameter*> Encoder::parameters() {
    std::vector<Parameter*> out;
    for (auto& block : blocks_) {
        out.push_back(&block.weight);
        if (auto* plain = std::get_if<bn::BatchNormLayer>(&block.norm)) {
            out.push_back(&plain->gamma);
            out.push_back(&plain->beta);
        } else {
            auto& w = std::get<bn::ABRiLayer>(block.norm);
            out.insert(out.end(), {&w.ori.gamma, &w.ori.beta, &w.add.gamma, &w.add.beta, &w.alpha});
        }
    }
    return out;
}

std::vector<NormSite> Encoder::norm_sites() {
    std::vector<NormSite> out;
    for (auto& block : blocks_) out.push_back({bn::original_of(block.norm).name, &block.norm});
    return out;
}

std::vector<StateEntry> Encoder::state() {
    std::vector<StateEntry> out;
    for (auto& block : blocks_) {
        out.push_back({block.weight.name, "conv", &block.weight.value});
        if (auto* plain = std::get_if<bn::BatchNormLayer>(&block.norm)) {
            append_bn_state(out, *plain, "bn");
        } else {
            auto& w = std::get<bn::ABRiLayer>(block.norm);
            append_bn_state(out, w.ori, "abri.ori");
            append_bn_state(out, w.add, "abri.add");
            out.push_back({w.alpha.name, "abri.alpha", &w.alpha.value});
        }
    }
    return out;
}

void Encoder::wrap_abri(double init_alpha) {
    for (auto& block : blocks_) {
        if (bn::is_abri(block.norm)) {
            throw ContractError("wrap_abri: '" + bn::original_of(block.norm).name + "' is already wrapped");
        }
    }
    for (auto& block : blocks_) block.norm = bn::abri_wrap(block.norm, init_alpha);
}

bool Encoder::has_abri() const {
    for (const auto& block : blocks_) {
        if (bn::is_abri(block.norm)) return true;
    }
    return false;
}

nlohmann::json Encoder::describe() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& block : blocks_) {
        const auto& ori = bn::original_of(block.norm);
        layers.push_back({{"name", ori.name},
                          {"kind", bn::is_abri(block.norm) ? "abri" : "bn"},
                          {"channels", ori.channels()},
                          {"eps", ori.eps},
                          {"momentum", ori.momentum}});
    }
    return {{"prefix", prefix_}, {"config", to_json(cfg_)}, {"norm_layers", layers}};
}

Encoder encoder_from_description(const nlohmann::json& j) {
    Encoder enc(model_config_from_json(j.at("config")), j.at("prefix").get<std::string>(), 0);
    const auto& layers = j.at("norm_layers");
    if (layers.size() != enc.blocks().size()) throw ContractError("encoder description: norm_layers count mismatch");
    for (std::size_t b = 0; b < layers.size(); ++b) {
        auto& plain = std::get<bn::BatchNormLayer>(enc.blocks()[b].norm);
        plain.eps = layers[b].at("eps").get<double>();
        plain.momentum = layers[b].at("momentum").get<double>();
        const auto kind = layers[b].at("kind").get<std::string>();
        if (kind == "abri") {
            enc.blocks()[b].norm = bn::abri_wrap(plain);
        } else if (kind != "bn") {
            throw ContractError("encoder description: unknown norm kind '" + kind + "'");
        }
    }
    return enc;
}

LinearHead LinearHead::init(const std::string& name, std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
    LinearHead head;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    Rng rng = keyed_rng({seed, tag(Stream::init), fnv1a(name + ".weight")});
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w({out_dim, in_dim}, 0.0);
    for (auto& v : w.storage()) v = dist(rng);
    head.weight = Parameter(name + ".weight", std::move(w));
    head.bias = Parameter(name + ".bias", Tensor({out_dim}, 0.0));
    return head;
}

Var LinearHead::forward(const Var& x) {
    return ops::linear(x, Var::bind(weight), Var::bind(bias));
}

UniModalModel UniModalModel::init(const ModelConfig& cfg, const std::string& prefix, std::uint64_t seed) {
    UniModalModel m;
    m.encoder = Encoder(cfg, prefix, seed);
    m.head = LinearHead::init(prefix + ".head", cfg.channels.back(), cfg.n_classes, seed);
    return m;
}

Var UniModalModel::logits(const Var& x, Mode mode) {
    return head.forward(encoder.features(x, mode));
}

std::vector<Parameter*> UniModalModel::parameters() {
    auto out = encoder.parameters();
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    return out;
}

std::vector<StateEntry> UniModalModel::state() {
    auto out = encoder.state();
    out.push_back({head.weight.name, "linear", &head.weight.value});
    out.push_back({head.bias.name, "linear", &head.bias.value});
    return out;
}

nlohmann::json UniModalModel::describe() const {
    return {{"kind", "unimodal"}, {"encoder", encoder.describe()}, {"head", head_description(head)}};
}

UniModalModel unimodal_from_description(const nlohmann::json& j) {
    if (j.at("kind") != "unimodal") throw ContractError("checkpoint does not hold a uni-modal model");
    UniModalModel m;
    m.encoder = encoder_from_description(j.at("encoder"));
    m.head = head_from_description(j.at("head"));
    return m;
}

MultiModalModel MultiModalModel::assemble(Encoder a, Encoder v, std::size_t n_classes, std::uint64_t seed) {
    MultiModalModel m;
    const std::size_t dim = a.feature_dim() + v.feature_dim();
    m.encoder_a = std::move(a);
    m.encoder_v = std::move(v);
    m.head = LinearHead::init("joint.head", dim, n_classes, seed);
    return m;
}

Var MultiModalModel::logits(const Var& xa, const Var& xv, Mode mode) {
    return head.forward(ops::concat_features(encoder_a.features(xa, mode), encoder_v.features(xv, mode)));
}

std::vector<Parameter*> MultiModalModel::parameters() {
    auto out = encoder_a.parameters();
    auto v = encoder_v.parameters();
    out.insert(out.end(), v.begin(), v.end());
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    return out;
}

std::vector<StateEntry> MultiModalModel::state() {
    auto out = encoder_a.state();
    auto v = encoder_v.state();
    out.insert(out.end(), v.begin(), v.end());
    out.push_back({head.weight.name, "linear", &head.weight.value});
    out.push_back({head.bias.name, "linear", &head.bias.value});
    return out;
}

nlohmann::json MultiModalModel::describe() const {
    return {{"kind", "multimodal"},
            {"encoder_a", encoder_a.describe()},
            {"encoder_v", encoder_v.describe()},
            {"head", head_description(head)}};
}

MultiModalModel multimodal_from_description(const nlohmann::json& j) {
    if (j.at("kind") != "multimodal") throw ContractError("checkpoint does not hold a multi-modal model");
    MultiModalModel m;
    m.encoder_a = encoder_from_description(j.at("encoder_a"));
    m.encoder_v = encoder_from_description(j.at("encoder_v"));
    m.head = head_from_description(j.at("head"));
    return m;
}

} // namespace fust::model
