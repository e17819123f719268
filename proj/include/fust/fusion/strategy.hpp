#pragma once

#include <optional>
#include <string>

#include "fust/fusion/training.hpp"

namespace fust::fusion {

enum class Strategy { fust, fust_star, fust_star_lr, fust_mean, jt, df };
enum class AbriTarget { none, a, v, both };

const char* strategy_name(Strategy s);
Strategy strategy_from_string(const std::string& s); // FusT, FusT*, FusT*-lr, FusT-mean, JT, DF
const char* abri_target_name(AbriTarget t);
AbriTarget abri_target_from_string(const std::string& s); // none, a, v, both

struct StagePlan {
    Strategy strategy = Strategy::fust;
    std::size_t stage1_epochs_a = 10;
    std::size_t stage1_epochs_v = 10;
    std::size_t stage2_epochs = 5;
    std::size_t jt_epochs = 15;
    std::size_t batch_size = 32;
    double lr_stage1 = 0.05;
    double lr_stage2 = 0.02;
    double lr_jt = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lr_scale = 0.5; // FusT*-lr: stronger modality's encoder in stage 2
    AbriTarget abri_target = AbriTarget::none;
    double abri_init_alpha = 0.5;
    ConfidenceSource confidence_source = ConfidenceSource::train_pass;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const StagePlan& p);
StagePlan stage_plan_from_json(const nlohmann::json& j);

// Encoders every strategy starts from. When absent, fresh encoders are built
// from the model configs and the plan seed.
struct Initialization {
    model::ModelConfig config_a;
    model::ModelConfig config_v;
    std::optional<model::Encoder> encoder_a;
    std::optional<model::Encoder> encoder_v;
};

// Stage-1 products shared by the two-stage strategies and DF.
struct Stage1Outcome {
    model::UniModalModel model_a;
    model::UniModalModel model_v;
    ConfidenceLedger ledger;
    MetricsLog log;
    Modality stronger = Modality::a;
};

// Higher mean final-epoch stage-1 confidence; ties go to modality a.
Modality stronger_modality(const ConfidenceLedger& ledger);

Stage1Outcome run_stage1(const StagePlan& plan, const data::SplitDataset& data, const Initialization& init,
                         const std::string& run_id = "run");

struct StrategyResult {
    MetricsLog log;
    EvalResult test;
    std::optional<model::MultiModalModel> joint;
    std::optional<Stage1Outcome> stage1;
    MaskPlan masks;
};

// Runs one strategy end to end. `reuse` may carry the stage-1 outcome of an
// identical plan to skip retraining it; it must come from the same seed,
// data and initialization.
StrategyResult run_strategy(const StagePlan& plan, const data::SplitDataset& data, const MaskingPolicy& policy,
                            const Initialization& init, const std::string& run_id = "run",
                            const Stage1Outcome* reuse = nullptr);

} // namespace fust::fusion
