#include "fust/cli/config.hpp"

#include <fstream>
#include <sstream>

#include "fust/common/json_fields.hpp"

namespace fust::cli {

namespace {

const char* modality_str(data::Modality m) { return data::modality_name(m); }

data::Modality read_modality(const nlohmann::json& j, const char* key, data::Modality fallback,
                             const std::string& path) {
    std::string s = modality_str(fallback);
    read_field(j, key, s, path);
    if (s == "a") return data::Modality::a;
    if (s == "v") return data::Modality::v;
    throw ConfigError(path + "." + key, "expected 'a' or 'v', got '" + s + "'");
}

nlohmann::json to_json(const DiagnosticsConfig& d) {
    return {{"threshold", d.threshold},
            {"sample_fraction", d.sample_fraction},
            {"zero_tolerance", d.zero_tolerance},
            {"probe_samples", d.probe_samples},
            {"probe_modality", modality_str(d.probe_modality)},
            {"layer_selector", d.layer_selector}};
}

DiagnosticsConfig diagnostics_from_json(const nlohmann::json& j) {
    const std::string path = "diagnostics";
    require_known_keys(j,
                       {"threshold", "sample_fraction", "zero_tolerance", "probe_samples", "probe_modality",
                        "layer_selector"},
                       path);
    DiagnosticsConfig d;
    read_field(j, "threshold", d.threshold, path);
    read_field(j, "sample_fraction", d.sample_fraction, path);
    read_field(j, "zero_tolerance", d.zero_tolerance, path);
    read_field(j, "probe_samples", d.probe_samples, path);
    d.probe_modality = read_modality(j, "probe_modality", d.probe_modality, path);
    read_field(j, "layer_selector", d.layer_selector, path);
    if (!(d.threshold > 0.0)) throw ConfigError(path + ".threshold", "must be > 0");
    if (!(d.sample_fraction > 0.0 && d.sample_fraction <= 1.0))
        throw ConfigError(path + ".sample_fraction", "must lie in (0, 1]");
    if (!(d.zero_tolerance >= 0.0)) throw ConfigError(path + ".zero_tolerance", "must be >= 0");
    if (d.probe_samples == 0) throw ConfigError(path + ".probe_samples", "must be >= 1");
    return d;
}

nlohmann::json to_json(const TrainSection& t, bool finetune) {
    nlohmann::json j = {{"modality", modality_str(t.modality)},
                        {"epochs", t.epochs},
                        {"batch_size", t.batch_size},
                        {"learning_rate", t.learning_rate},
                        {"momentum", t.momentum},
                        {"weight_decay", t.weight_decay},
                        {"train_per_class", t.train_per_class}};
    if (finetune) j["abri_init_alpha"] = t.abri_init_alpha;
    return j;
}

TrainSection train_section_from_json(const nlohmann::json& j, TrainSection t, const std::string& path,
                                     bool finetune) {
    if (finetune) {
        require_known_keys(j,
                           {"modality", "epochs", "batch_size", "learning_rate", "momentum", "weight_decay",
                            "train_per_class", "abri_init_alpha"},
                           path);
    } else {
        require_known_keys(
            j, {"modality", "epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "train_per_class"},
            path);
    }
    t.modality = read_modality(j, "modality", t.modality, path);
    read_field(j, "epochs", t.epochs, path);
    read_field(j, "batch_size", t.batch_size, path);
    read_field(j, "learning_rate", t.learning_rate, path);
    read_field(j, "momentum", t.momentum, path);
    read_field(j, "weight_decay", t.weight_decay, path);
    read_field(j, "train_per_class", t.train_per_class, path);
    if (finetune) read_field(j, "abri_init_alpha", t.abri_init_alpha, path);
    if (t.epochs == 0) throw ConfigError(path + ".epochs", "must be >= 1");
    if (t.batch_size == 0) throw ConfigError(path + ".batch_size", "must be >= 1");
    if (!(t.learning_rate > 0.0)) throw ConfigError(path + ".learning_rate", "must be > 0");
    if (!(t.momentum >= 0.0 && t.momentum < 1.0)) throw ConfigError(path + ".momentum", "must lie in [0, 1)");
    if (!(t.weight_decay >= 0.0)) throw ConfigError(path + ".weight_decay", "must be >= 0");
    if (!(t.abri_init_alpha >= 0.0 && t.abri_init_alpha <= 1.0))
        throw ConfigError(path + ".abri_init_alpha", "must lie in [0, 1]");
    return t;
}

nlohmann::json to_json(const InjectConfig& c) {
    return {{"fraction", c.fraction}, {"magnitude", c.magnitude}, {"beta_sign", c.beta_sign}};
}

InjectConfig inject_from_json(const nlohmann::json& j) {
    const std::string path = "inject";
    require_known_keys(j, {"fraction", "magnitude", "beta_sign"}, path);
    InjectConfig c;
    read_field(j, "fraction", c.fraction, path);
    read_field(j, "magnitude", c.magnitude, path);
    read_field(j, "beta_sign", c.beta_sign, path);
    if (!(c.fraction >= 0.0 && c.fraction <= 1.0)) throw ConfigError(path + ".fraction", "must lie in [0, 1]");
    if (!(c.magnitude >= 0.0)) throw ConfigError(path + ".magnitude", "must be >= 0");
    if (c.beta_sign != 1 && c.beta_sign != -1) throw ConfigError(path + ".beta_sign", "must be 1 or -1");
    return c;
}

nlohmann::json to_json(const ProbeSection& p) {
    return {{"modality", modality_str(p.modality)},
            {"epochs", p.epochs},
            {"batch_size", p.batch_size},
            {"learning_rate", p.learning_rate},
            {"momentum", p.momentum},
            {"weight_decay", p.weight_decay}};
}

ProbeSection probe_from_json(const nlohmann::json& j) {
    const std::string path = "probe";
    require_known_keys(j, {"modality", "epochs", "batch_size", "learning_rate", "momentum", "weight_decay"}, path);
    ProbeSection p;
    p.modality = read_modality(j, "modality", p.modality, path);
    read_field(j, "epochs", p.epochs, path);
    read_field(j, "batch_size", p.batch_size, path);
    read_field(j, "learning_rate", p.learning_rate, path);
    read_field(j, "momentum", p.momentum, path);
    read_field(j, "weight_decay", p.weight_decay, path);
    if (p.epochs == 0) throw ConfigError(path + ".epochs", "must be >= 1");
    if (p.batch_size == 0) throw ConfigError(path + ".batch_size", "must be >= 1");
    if (!(p.learning_rate > 0.0)) throw ConfigError(path + ".learning_rate", "must be > 0");
    return p;
}

// Model sections default their input shape and class count to the data's.
model::ModelConfig model_from_json(nlohmann::json j, const data::SyntheticSpec& spec, data::Modality m,
                                   const std::string& path) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    const Shape& shape = m == data::Modality::a ? spec.shape_a : spec.shape_v;
    if (!j.contains("input_shape")) j["input_shape"] = shape;
    if (!j.contains("n_classes")) j["n_classes"] = spec.n_classes;
    model::ModelConfig cfg;
    try {
        cfg = model::model_config_from_json(j);
    } catch (const ConfigError& e) {
        std::string field = e.path();
        if (field.rfind("model", 0) == 0) field = path + field.substr(5);
        std::string msg = e.what();
        if (auto pos = msg.find(": "); pos != std::string::npos) msg = msg.substr(pos + 2);
        throw ConfigError(field, msg);
    } catch (const ContractError& e) {
        throw ConfigError(path, e.what());
    }
    if (cfg.input_shape != shape)
        throw ConfigError(path + ".input_shape", "must equal synthetic.shape_" + std::string(modality_str(m)));
    if (cfg.n_classes != spec.n_classes) throw ConfigError(path + ".n_classes", "must equal synthetic.n_classes");
    return cfg;
}

// An explicit section seed must agree with the global one.
void inherit_seed(nlohmann::json& section, std::uint64_t seed, const std::string& path) {
    if (!section.is_object()) return;
    if (auto it = section.find("seed"); it != section.end()) {
        std::uint64_t s = 0;
        read_field(section, "seed", s, path);
        if (s != seed) throw ConfigError(path + ".seed", "must equal the global seed (" + std::to_string(seed) + ")");
    }
    section["seed"] = seed;
}

} // namespace

nlohmann::json to_json(const ExperimentConfig& c) {
    return {{"seed", c.seed},
            {"run_id", c.run_id},
            {"output_dir", c.output_dir.generic_string()},
            {"synthetic", data::to_json(c.synthetic)},
            {"model_a", model::to_json(c.model_a)},
            {"model_v", model::to_json(c.model_v)},
            {"plan", fusion::to_json(c.plan)},
            {"policy", fusion::to_json(c.policy)},
            {"diagnostics", to_json(c.diagnostics)},
            {"pretrain", to_json(c.pretrain, false)},
            {"finetune", to_json(c.finetune, true)},
            {"inject", to_json(c.inject)},
            {"probe", to_json(c.probe)}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    require_known_keys(j,
                       {"seed", "run_id", "output_dir", "synthetic", "model_a", "model_v", "plan", "policy",
                        "diagnostics", "pretrain", "finetune", "inject", "probe"},
                       "");
    ExperimentConfig c;
    read_field(j, "seed", c.seed, "");
    read_field(j, "run_id", c.run_id, "");
    if (c.run_id.empty() || c.run_id.find_first_of(",\"\n") != std::string::npos)
        throw ConfigError("run_id", "must be non-empty and free of commas, quotes and newlines");
    std::string out = c.output_dir.string();
    read_field(j, "output_dir", out, "");
    if (out.empty()) throw ConfigError("output_dir", "must not be empty");
    c.output_dir = out;

    auto section = [&](const char* key) {
        auto it = j.find(key);
        return it == j.end() ? nlohmann::json::object() : *it;
    };

    nlohmann::json syn = section("synthetic");
    inherit_seed(syn, c.seed, "synthetic");
    try {
        c.synthetic = data::synthetic_spec_from_json(syn);
    } catch (const ConfigError&) {
        throw;
    } catch (const ContractError& e) {
        throw ConfigError("synthetic", e.what());
    }
    c.model_a = model_from_json(section("model_a"), c.synthetic, data::Modality::a, "model_a");
    c.model_v = model_from_json(section("model_v"), c.synthetic, data::Modality::v, "model_v");

    nlohmann::json plan = section("plan");
    inherit_seed(plan, c.seed, "plan");
    c.plan = fusion::stage_plan_from_json(plan);
    try {
        c.policy = fusion::masking_policy_from_json(section("policy"));
    } catch (const ConfigError&) {
        throw;
    } catch (const ContractError& e) {
        throw ConfigError("policy", e.what());
    }
    c.diagnostics = diagnostics_from_json(section("diagnostics"));
    c.pretrain = train_section_from_json(section("pretrain"), c.pretrain, "pretrain", false);
    c.finetune = train_section_from_json(section("finetune"), c.finetune, "finetune", true);
    c.inject = inject_from_json(section("inject"));
    c.probe = probe_from_json(section("probe"));
    return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError(assignment, "override must have the form section.key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);

    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    nlohmann::json* node = &doc;
    std::string path;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(key, "empty path component in override");
        path += path.empty() ? part : "." + part;
        if (!node->is_object()) throw ConfigError(path, "cannot descend into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = nlohmann::json::object();
        start = dot + 1;
    }
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open file");
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j = nlohmann::json::parse(ss.str(), nullptr, false);
    if (j.is_discarded()) throw ConfigError(path.string(), "not valid JSON");
    return j;
}

} // namespace fust::cli
