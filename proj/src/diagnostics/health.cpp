#include "fust/diagnostics/health.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include "fust/common/json_fields.hpp"
#include "fust/fusion/training.hpp"
#include "fust/numerics/rng.hpp"

namespace fust::diag {

double overall_abnormal_ratio(const ChannelHealthReport& r) {
    std::size_t abnormal = 0, channels = 0;
    for (const auto& l : r.layers) {
        abnormal += l.abnormal_ids.size();
        channels += l.channels;
    }
    return channels ? static_cast<double>(abnormal) / static_cast<double>(channels) : 0.0;
}

nlohmann::json to_json(const ChannelHealthReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.layers) {
        layers.push_back({{"name", l.name},
                          {"channels", l.channels},
                          {"abnormal_ratio", l.abnormal_ratio},
                          {"abnormal_ids", l.abnormal_ids},
                          {"dead_ids", l.dead_ids}});
    }
    nlohmann::json j{{"model", r.model}, {"threshold", r.threshold}, {"layers", layers}};
    if (!r.warnings.empty()) j["warnings"] = r.warnings;
    return j;
}

ChannelHealthReport report_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"model", "threshold", "layers", "warnings"}, "report");
    ChannelHealthReport r;
    read_field(j, "model", r.model, "report");
    read_field(j, "threshold", r.threshold, "report");
    read_field(j, "warnings", r.warnings, "report");
    for (const auto& l : j.at("layers")) {
        require_known_keys(l, {"name", "channels", "abnormal_ratio", "abnormal_ids", "dead_ids"}, "report.layers");
        LayerHealth h;
        read_field(l, "name", h.name, "report.layers");
        read_field(l, "channels", h.channels, "report.layers");
        read_field(l, "abnormal_ratio", h.abnormal_ratio, "report.layers");
        read_field(l, "abnormal_ids", h.abnormal_ids, "report.layers");
        read_field(l, "dead_ids", h.dead_ids, "report.layers");
        r.layers.push_back(std::move(h));
    }
    return r;
}

namespace {

void scan_into(ChannelHealthReport& r, model::Encoder& encoder) {
    for (const auto& site : encoder.norm_sites()) {
        const bn::BatchNormLayer& layer = bn::original_of(*site.layer);
        LayerHealth h;
        h.name = site.name;
        h.channels = layer.channels();
        for (std::size_t k = 0; k < h.channels; ++k) {
            const double m = std::max(std::abs(layer.gamma.value[k]), std::abs(layer.beta.value[k]));
            if (m < r.threshold) h.abnormal_ids.push_back(k);
        }
        h.abnormal_ratio = static_cast<double>(h.abnormal_ids.size()) / static_cast<double>(h.channels);
        r.layers.push_back(std::move(h));
    }
}

void check_threshold(double threshold) {
    if (!(threshold > 0.0)) throw ContractError("scan_abnormal_bn: threshold must be positive");
}

} // namespace

ChannelHealthReport scan_abnormal_bn(model::Encoder& encoder, double threshold) {
    check_threshold(threshold);
    ChannelHealthReport r;
    r.model = encoder.prefix();
    r.threshold = threshold;
    scan_into(r, encoder);
    if (r.layers.empty()) r.warnings.push_back("model has no BatchNorm layers");
    return r;
}

ChannelHealthReport scan_abnormal_bn(model::MultiModalModel& m, double threshold) {
    check_threshold(threshold);
    ChannelHealthReport r;
    r.model = m.encoder_a.prefix() + "+" + m.encoder_v.prefix();
    r.threshold = threshold;
    scan_into(r, m.encoder_a);
    scan_into(r, m.encoder_v);
    if (r.layers.empty()) r.warnings.push_back("model has no BatchNorm layers");
    return r;
}

std::vector<LayerDead> detect_dead_channels(model::Encoder& encoder, const Tensor& probe_inputs,
                                            const std::string& layer_selector, const DeadChannelOptions& opts) {
    if (probe_inputs.rank() != 4 || probe_inputs.dim(0) == 0) {
        throw ContractError("detect_dead_channels: probe set must be a nonempty N x C x H x W batch");
    }
    if (!(opts.sample_fraction > 0.0 && opts.sample_fraction <= 1.0)) {
        throw ContractError("detect_dead_channels: sample_fraction must be in (0, 1]");
    }
    if (opts.zero_tolerance < 0.0) throw ContractError("detect_dead_channels: zero_tolerance must be >= 0");
    const std::regex pattern(layer_selector);
    const auto sites = encoder.norm_sites();
    std::vector<std::size_t> selected;
    for (std::size_t b = 0; b < sites.size(); ++b) {
        if (std::regex_search(sites[b].name, pattern)) selected.push_back(b);
    }
    if (selected.empty()) {
        throw ContractError("detect_dead_channels: selector '" + layer_selector + "' matches no layer");
    }

    const std::size_t n = probe_inputs.dim(0);
    const std::size_t per = probe_inputs.size() / n;
    // zero_maps[b][k]: probe samples on which channel k of block b is all zero
    std::vector<std::vector<std::size_t>> zero_maps(sites.size());
    for (std::size_t b : selected) zero_maps[b].assign(bn::norm_channels(*sites[b].layer), 0);
    const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
    for (std::size_t start = 0; start < n; start += bs) {
        const std::size_t end = std::min(n, start + bs);
        Shape shape = probe_inputs.shape();
        shape[0] = end - start;
        Tensor batch(shape, std::vector<double>(probe_inputs.storage().begin() + static_cast<std::ptrdiff_t>(start * per),
                                                probe_inputs.storage().begin() + static_cast<std::ptrdiff_t>(end * per)));
        auto out = encoder.forward(Var::constant(std::move(batch)), model::Mode::eval, true);
        for (std::size_t b : selected) {
            const Tensor& act = out.activations[b].value();
            const std::size_t c = act.dim(1), hw = act.dim(2) * act.dim(3);
            for (std::size_t i = 0; i < act.dim(0); ++i)
                for (std::size_t k = 0; k < c; ++k) {
                    const double* p = act.data() + (i * c + k) * hw;
                    const bool zero = std::all_of(p, p + hw, [&](double v) { return std::abs(v) <= opts.zero_tolerance; });
                    zero_maps[b][k] += zero ? 1 : 0;
                }
        }
    }
    std::vector<LayerDead> result;
    for (std::size_t b : selected) {
        LayerDead d{sites[b].name, {}};
        for (std::size_t k = 0; k < zero_maps[b].size(); ++k) {
            if (static_cast<double>(zero_maps[b][k]) >= opts.sample_fraction * static_cast<double>(n)) d.ids.push_back(k);
        }
        result.push_back(std::move(d));
    }
    return result;
}

std::size_t dead_count(const std::vector<LayerDead>& dead) {
    std::size_t total = 0;
    for (const auto& d : dead) total += d.ids.size();
    return total;
}

void attach_dead(ChannelHealthReport& report, const std::vector<LayerDead>& dead) {
    for (const auto& d : dead) {
        auto it = std::find_if(report.layers.begin(), report.layers.end(), [&](const auto& l) { return l.name == d.name; });
        if (it == report.layers.end()) throw ContractError("attach_dead: report has no layer '" + d.name + "'");
        it->dead_ids = d.ids;
    }
}

std::size_t Provenance::total() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.ids.size();
    return n;
}

nlohmann::json to_json(const Provenance& p) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : p.layers) layers.push_back({{"layer", l.layer}, {"ids", l.ids}});
    return {{"fraction", p.fraction}, {"magnitude", p.magnitude}, {"beta_sign", p.beta_sign},
            {"seed", p.seed},         {"layers", layers}};
}

Provenance provenance_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"fraction", "magnitude", "beta_sign", "seed", "layers"}, "provenance");
    Provenance p;
    read_field(j, "fraction", p.fraction, "provenance");
    read_field(j, "magnitude", p.magnitude, "provenance");
    read_field(j, "beta_sign", p.beta_sign, "provenance");
    read_field(j, "seed", p.seed, "provenance");
    for (const auto& l : j.at("layers")) {
        p.layers.push_back({l.at("layer").get<std::string>(), l.at("ids").get<std::vector<std::size_t>>()});
    }
    return p;
}

Provenance inject_abnormal(model::Encoder& encoder, double fraction, double magnitude, int beta_sign,
                           std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ContractError("inject_abnormal: fraction must be in [0, 1]");
    if (!(magnitude > 0.0)) throw ContractError("inject_abnormal: magnitude must be positive");
    if (beta_sign != 1 && beta_sign != -1) throw ContractError("inject_abnormal: beta sign must be +1 or -1");
    Provenance p{fraction, magnitude, beta_sign, seed, {}};
    for (const auto& site : encoder.norm_sites()) {
        bn::BatchNormLayer& layer = bn::original_of(*site.layer);
        const std::size_t c = layer.channels();
        const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(c) - 1e-9));
        std::vector<std::size_t> ids(c);
        std::iota(ids.begin(), ids.end(), 0);
        Rng rng = keyed_rng({seed, tag(Stream::inject), fnv1a(site.name)});
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(std::min(count, c));
        std::sort(ids.begin(), ids.end());
        for (std::size_t k : ids) {
            layer.gamma.value[k] = magnitude;
            layer.beta.value[k] = beta_sign * magnitude;
        }
        if (!ids.empty()) p.layers.push_back({site.name, std::move(ids)});
    }
    return p;
}

std::string render_report(const ChannelHealthReport& r, ReportFormat format) {
    if (format == ReportFormat::json) return to_json(r).dump(2) + "\n";
    std::ostringstream os;
    os << "name,channels,abnormal_ratio,n_dead\n";
    for (const auto& l : r.layers) {
        os << l.name << ',' << l.channels << ',' << fusion::format_double(l.abnormal_ratio) << ',' << l.dead_ids.size()
           << '\n';
    }
    return os.str();
}

void export_report(const ChannelHealthReport& r, const std::filesystem::path& path, ReportFormat format) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("export_report: cannot write '" + path.string() + "'");
    out << render_report(r, format);
    if (!out) throw std::runtime_error("export_report: write failed for '" + path.string() + "'");
}

ChannelHealthReport import_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("import_report: cannot read '" + path.string() + "'");
    return report_from_json(nlohmann::json::parse(in));
}

} // namespace fust::diag
