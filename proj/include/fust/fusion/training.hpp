#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fust/data/synthetic.hpp"
#include "fust/fusion/ledger.hpp"
#include "fust/fusion/masking.hpp"
#include "fust/model/small_convnet.hpp"
#include "fust/numerics/metrics.hpp"
#include "fust/numerics/optim.hpp"

namespace fust::fusion {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    SgdConfig sgd;
};

struct MetricsRow {
    std::string run_id;
    std::string strategy;
    std::string stage;
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    double map = 0.0;
};

// Rows of the metrics CSV: run_id,strategy,stage,epoch,split,loss,accuracy,map.
// Doubles are written with 17 significant digits so files compare bitwise.
class MetricsLog {
public:
    void add(MetricsRow row) { rows_.push_back(std::move(row)); }
    void append(const MetricsLog& other);
    const std::vector<MetricsRow>& rows() const { return rows_; }

    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
    static MetricsLog read_csv(const std::filesystem::path& path);
    static MetricsLog parse_csv(const std::string& text);

private:
    std::vector<MetricsRow> rows_;
};

std::string format_double(double v);

struct RunContext {
    std::string run_id = "run";
    std::string strategy;
    std::uint64_t seed = 0;
    MetricsLog* log = nullptr;
};

struct EvalResult {
    double loss = 0.0;
    Metrics metrics;
    Tensor probabilities;
};

// Eval-mode passes; BN running statistics are left untouched.
EvalResult evaluate(model::UniModalModel& m, const data::Dataset& ds, data::Modality modality,
                    std::size_t batch_size = 128);
EvalResult evaluate(model::MultiModalModel& m, const data::Dataset& ds, std::size_t batch_size = 128);
EvalResult evaluate_probabilities(const Tensor& probabilities, const std::vector<int>& labels);

enum class ConfidenceSource { train_pass, eval_sweep };

// Supervised uni-modal training. After each epoch's passes, every training
// sample's true-class confidence is recorded into `ledger` (when given).
void stage1_train(model::UniModalModel& m, data::Modality modality, const data::Dataset& train,
                  const data::Dataset* val, const TrainConfig& cfg, ConfidenceLedger* ledger,
                  ConfidenceSource source, RunContext& ctx, const std::string& stage_name);

enum class MaskMode { none, sample_wise, uniform_mean };

// Per-sample masking ratios for stage 2.
struct MaskPlan {
    std::map<std::uint64_t, MaskRatios> ratios;
    MaskRatios uniform; // populated for uniform_mean

    MaskRatios at(std::uint64_t sample_id) const;
};

MaskPlan plan_masks(const ConfidenceLedger& ledger, const data::Dataset& train, const MaskingPolicy& policy,
                    MaskMode mode);

struct Stage2Options {
    TrainConfig train;
    MaskingPolicy policy;
    double lr_scale_a = 1.0;
    double lr_scale_v = 1.0;
};

// Joint training of both encoders and the head. Masks from `plan` are applied
// to training inputs only.
void stage2_train(model::MultiModalModel& m, const data::Dataset& train, const data::Dataset* val,
                  const MaskPlan& plan, const Stage2Options& opts, RunContext& ctx, const std::string& stage_name);

// Training-mode inputs of one batch for stage 2, masks applied.
Tensor masked_batch(const data::Dataset& ds, const std::vector<std::size_t>& indices, data::Modality m,
                    const MaskPlan& plan, const MaskingPolicy& policy, std::uint64_t seed, std::size_t epoch);

} // namespace fust::fusion
