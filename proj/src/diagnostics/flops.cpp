#include "fust/diagnostics/flops.hpp"

#include <fstream>
#include <sstream>

#include "fust/common/json_fields.hpp"
#include "fust/fusion/training.hpp"

namespace fust::diag {

namespace {

double sum_phases(const std::vector<FlopsPhase>& phases, const char* side) {
    double total = 0.0;
    for (const auto& p : phases) {
        if (!(p.flops_per_epoch > 0.0) || !(p.epochs > 0.0)) {
            throw ContractError(std::string("count_flops: ") + side + " phase '" + p.phase +
                                "' needs positive flops_per_epoch and epochs");
        }
        total += p.total();
    }
    return total;
}

std::vector<FlopsPhase> phases_from_json(const nlohmann::json& j, const std::string& path) {
    std::vector<FlopsPhase> out;
    if (!j.is_array()) throw ConfigError(path, "expected an array of phases");
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string p = path + "[" + std::to_string(i) + "]";
        require_known_keys(j[i], {"phase", "flops_per_epoch", "epochs"}, p);
        FlopsPhase ph;
        ph.phase = "phase" + std::to_string(i);
        read_field(j[i], "phase", ph.phase, p);
        read_field(j[i], "flops_per_epoch", ph.flops_per_epoch, p);
        read_field(j[i], "epochs", ph.epochs, p);
        out.push_back(ph);
    }
    return out;
}

std::size_t conv_out(std::size_t n) {
    return (n + 2 - 3) / 2 + 1;
}

} // namespace

FlopsLedger count_flops(const std::vector<FlopsPhase>& reference, const std::vector<FlopsPhase>& comparison) {
    FlopsLedger l{reference, comparison, sum_phases(reference, "reference"), sum_phases(comparison, "comparison"), 0.0};
    if (!(l.reference_total > 0.0)) throw ContractError("count_flops: reference total is zero");
    if (!(l.comparison_total > 0.0)) throw ContractError("count_flops: comparison total is zero");
    l.ratio = l.comparison_total / l.reference_total;
    return l;
}

FlopsLedger count_flops(const nlohmann::json& ledger_input) {
    require_known_keys(ledger_input, {"reference", "comparison"}, "flops");
    if (!ledger_input.contains("reference") || !ledger_input.contains("comparison")) {
        throw ConfigError("flops", "both 'reference' and 'comparison' phase lists are required");
    }
    return count_flops(phases_from_json(ledger_input.at("reference"), "flops.reference"),
                       phases_from_json(ledger_input.at("comparison"), "flops.comparison"));
}

std::string flops_csv(const FlopsLedger& ledger) {
    using fusion::format_double;
    std::ostringstream os;
    os << "phase,flops_per_epoch,epochs,total\n";
    for (const auto& p : ledger.reference) {
        os << "reference/" << p.phase << ',' << format_double(p.flops_per_epoch) << ',' << format_double(p.epochs) << ','
           << format_double(p.total()) << '\n';
    }
    for (const auto& p : ledger.comparison) {
        os << "comparison/" << p.phase << ',' << format_double(p.flops_per_epoch) << ',' << format_double(p.epochs)
           << ',' << format_double(p.total()) << '\n';
    }
    os << "reference_total,,," << format_double(ledger.reference_total) << '\n';
    os << "comparison_total,,," << format_double(ledger.comparison_total) << '\n';
    os << "ratio,,," << format_double(ledger.ratio) << '\n';
    return os.str();
}

void write_flops_csv(const FlopsLedger& ledger, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("flops: cannot write '" + path.string() + "'");
    out << flops_csv(ledger);
}

double conv_flops(std::size_t kernel, std::size_t c_in, std::size_t c_out, std::size_t h_out, std::size_t w_out) {
    return 2.0 * static_cast<double>(kernel * kernel) * static_cast<double>(c_in) * static_cast<double>(c_out) *
           static_cast<double>(h_out * w_out);
}

double forward_flops_per_sample(const model::ModelConfig& cfg) {
    cfg.validate();
    double total = 0.0;
    std::size_t cin = cfg.input_shape[0], h = cfg.input_shape[1], w = cfg.input_shape[2];
    for (std::size_t cout : cfg.channels) {
        h = conv_out(h);
        w = conv_out(w);
        const double maps = static_cast<double>(cout * h * w);
        total += conv_flops(3, cin, cout, h, w);
        total += 4.0 * maps; // BN
        total += maps;       // ReLU
        if (cfg.residual_connections) total += maps;
        cin = cout;
    }
    total += static_cast<double>(cin * h * w); // global average pool
    const double d = static_cast<double>(cin), k = static_cast<double>(cfg.n_classes);
    total += 2.0 * d * k + k;
    return total;
}

double estimate_epoch_flops(const model::ModelConfig& cfg, std::size_t dataset_size, std::size_t batch_size) {
    if (dataset_size == 0 || batch_size == 0) throw ContractError("estimate_epoch_flops: sizes must be positive");
    return 3.0 * forward_flops_per_sample(cfg) * static_cast<double>(dataset_size);
}

} // namespace fust::diag
