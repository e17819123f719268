#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fust/model/small_convnet.hpp"

namespace fust::diag {

struct FlopsPhase {
    std::string phase;
    double flops_per_epoch = 0.0;
    double epochs = 0.0;

    double total() const { return flops_per_epoch * epochs; }
};

struct FlopsLedger {
    std::vector<FlopsPhase> reference;
    std::vector<FlopsPhase> comparison;
    double reference_total = 0.0;
    double comparison_total = 0.0;
    double ratio = 0.0; // comparison_total / reference_total
};

FlopsLedger count_flops(const std::vector<FlopsPhase>& reference, const std::vector<FlopsPhase>& comparison);

// Input: {"reference": [{"phase", "flops_per_epoch", "epochs"}], "comparison": [...]}.
FlopsLedger count_flops(const nlohmann::json& ledger_input);

// Columns phase,flops_per_epoch,epochs,total. One row per phase (named
// "reference/<phase>" or "comparison/<phase>"), then the two totals and the
// ratio in the total column.
std::string flops_csv(const FlopsLedger& ledger);
void write_flops_csv(const FlopsLedger& ledger, const std::filesystem::path& path);

// 2 * K^2 * C_in * C_out * H' * W'
double conv_flops(std::size_t kernel, std::size_t c_in, std::size_t c_out, std::size_t h_out, std::size_t w_out);

// Per-sample forward FLOPs of the encoder plus a linear head:
//   conv   2 * K^2 * C_in * C_out * H' * W'
//   BN     4 * C * H' * W'   (normalize, scale, shift; statistics excluded)
//   ReLU   C * H' * W'
//   add    C * H' * W'       (residual blocks only)
//   pool   C * H' * W'
//   linear 2 * D * n_classes + n_classes
double forward_flops_per_sample(const model::ModelConfig& cfg);

// Training epoch: 3 x forward (backward counted as twice the forward) over
// every sample. The batch size does not change the count.
double estimate_epoch_flops(const model::ModelConfig& cfg, std::size_t dataset_size, std::size_t batch_size);

} // namespace fust::diag
