#include "fust/fusion/ledger.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace fust::fusion {

void ConfidenceLedger::record(std::uint64_t sample_id, Modality m, double confidence) {
    if (finalized_) throw ContractError("ledger: finalized ledger is read-only");
    if (!std::isfinite(confidence)) throw NonFiniteError("ledger: non-finite confidence for sample " + std::to_string(sample_id));
    confidence = std::clamp(confidence, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
    auto& e = entries_[sample_id];
    (m == Modality::a ? e.conf_a : e.conf_v).push_back(confidence);
}

void ConfidenceLedger::finalize(const std::vector<std::uint64_t>& expected_ids) {
    std::string gaps;
    std::size_t n_gaps = 0;
    for (std::uint64_t id : expected_ids) {
        auto it = entries_.find(id);
        for (Modality m : {Modality::a, Modality::v}) {
            const bool missing = it == entries_.end() || (m == Modality::a ? it->second.conf_a : it->second.conf_v).empty();
            if (missing) {
                if (n_gaps < 20) gaps += " " + std::to_string(id) + "/" + data::modality_name(m);
                ++n_gaps;
            }
        }
    }
    if (n_gaps) {
        throw ContractError("ledger: " + std::to_string(n_gaps) + " missing sample/modality entries:" + gaps +
                            (n_gaps > 20 ? " ..." : ""));
    }
    for (auto& [id, e] : entries_) {
        auto avg = [](const std::vector<double>& v) {
            double s = 0.0;
            for (double c : v) s += c;
            return v.empty() ? 0.0 : s / static_cast<double>(v.size());
        };
        e.mean_a = avg(e.conf_a);
        e.mean_v = avg(e.conf_v);
    }
    finalized_ = true;
}

const ConfidenceLedger::Entry& ConfidenceLedger::entry(std::uint64_t sample_id) const {
    auto it = entries_.find(sample_id);
    if (it == entries_.end()) throw ContractError("ledger: no entry for sample " + std::to_string(sample_id));
    return it->second;
}

double ConfidenceLedger::mean(std::uint64_t sample_id, Modality m) const {
    if (!finalized_) throw ContractError("ledger: means are available only after finalize()");
    const auto& e = entry(sample_id);
    return m == Modality::a ? e.mean_a : e.mean_v;
}

const std::vector<double>& ConfidenceLedger::history(std::uint64_t sample_id, Modality m) const {
    const auto& e = entry(sample_id);
    return m == Modality::a ? e.conf_a : e.conf_v;
}

std::vector<std::uint64_t> ConfidenceLedger::ids() const {
    std::vector<std::uint64_t> out;
    out.reserve(entries_.size());
    for (const auto& [id, e] : entries_) out.push_back(id);
    return out;
}

std::size_t ConfidenceLedger::recorded(Modality m) const {
    std::size_t n = 0;
    for (const auto& [id, e] : entries_) n += (m == Modality::a ? e.conf_a : e.conf_v).size();
    return n;
}

double ConfidenceLedger::modality_mean(Modality m) const {
    if (!finalized_) throw ContractError("ledger: means are available only after finalize()");
    if (entries_.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [id, e] : entries_) s += m == Modality::a ? e.mean_a : e.mean_v;
    return s / static_cast<double>(entries_.size());
}

nlohmann::json ConfidenceLedger::to_json() const {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& [id, e] : entries_) {
        nlohmann::json s{{"id", id}, {"conf_a", e.conf_a}, {"conf_v", e.conf_v}};
        if (finalized_) {
            s["mean_a"] = e.mean_a;
            s["mean_v"] = e.mean_v;
        }
        samples.push_back(std::move(s));
    }
    return {{"samples", std::move(samples)}};
}

ConfidenceLedger ConfidenceLedger::from_json(const nlohmann::json& j) {
    ConfidenceLedger ledger;
    bool has_means = true;
    std::vector<std::uint64_t> ids;
    for (const auto& s : j.at("samples")) {
        const auto id = s.at("id").get<std::uint64_t>();
        ids.push_back(id);
        auto& e = ledger.entries_[id];
        e.conf_a = s.at("conf_a").get<std::vector<double>>();
        e.conf_v = s.at("conf_v").get<std::vector<double>>();
        has_means = has_means && s.contains("mean_a") && s.contains("mean_v");
    }
    if (has_means && !ids.empty()) ledger.finalize(ids);
    return ledger;
}

void ConfidenceLedger::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("ledger: cannot write '" + path.string() + "'");
    out << to_json().dump() << '\n';
}

ConfidenceLedger ConfidenceLedger::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ledger: cannot read '" + path.string() + "'");
    return from_json(nlohmann::json::parse(in));
}

} // namespace fust::fusion
