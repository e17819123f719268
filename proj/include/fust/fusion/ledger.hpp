#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "fust/data/synthetic.hpp"

namespace fust::fusion {

using data::Modality;

// Per-sample, per-modality confidence history from stage 1, reduced to one
// mean per (sample, modality) by finalize(). Read-only once finalized.
class ConfidenceLedger {
public:
    // Values are clamped into (0, 1): a saturated softmax can round to exactly 1.
    void record(std::uint64_t sample_id, Modality m, double confidence);

    // Arithmetic mean over recorded epochs. Throws ContractError listing every
    // expected sample/modality pair without a record.
    void finalize(const std::vector<std::uint64_t>& expected_ids);

    bool finalized() const { return finalized_; }
    bool contains(std::uint64_t sample_id) const { return entries_.count(sample_id) != 0; }
    double mean(std::uint64_t sample_id, Modality m) const;
    const std::vector<double>& history(std::uint64_t sample_id, Modality m) const;
    std::size_t size() const { return entries_.size(); }
    std::vector<std::uint64_t> ids() const;
    std::size_t recorded(Modality m) const;
    // Mean over samples of the per-sample means.
    double modality_mean(Modality m) const;

    nlohmann::json to_json() const;
    static ConfidenceLedger from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static ConfidenceLedger load(const std::filesystem::path& path);

private:
    struct Entry {
        std::vector<double> conf_a;
        std::vector<double> conf_v;
        double mean_a = 0.0;
        double mean_v = 0.0;
    };
    const Entry& entry(std::uint64_t sample_id) const;

    std::map<std::uint64_t, Entry> entries_;
    bool finalized_ = false;
};

} // namespace fust::fusion
