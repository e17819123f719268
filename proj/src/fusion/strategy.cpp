#include "fust/fusion/strategy.hpp"

#include <cmath>
#include <numeric>

#include "fust/common/json_fields.hpp"
#include "fust/numerics/loss.hpp"

namespace fust::fusion {

namespace {

constexpr std::pair<Strategy, const char*> strategy_names[] = {
    {Strategy::fust, "FusT"},       {Strategy::fust_star, "FusT*"}, {Strategy::fust_star_lr, "FusT*-lr"},
    {Strategy::fust_mean, "FusT-mean"}, {Strategy::jt, "JT"},      {Strategy::df, "DF"}};

constexpr std::pair<AbriTarget, const char*> target_names[] = {
    {AbriTarget::none, "none"}, {AbriTarget::a, "a"}, {AbriTarget::v, "v"}, {AbriTarget::both, "both"}};

bool targets(AbriTarget t, Modality m) {
    return t == AbriTarget::both || (t == AbriTarget::a && m == Modality::a) || (t == AbriTarget::v && m == Modality::v);
}

model::Encoder initial_encoder(const StagePlan& plan, const Initialization& init, Modality m) {
    const auto& given = m == Modality::a ? init.encoder_a : init.encoder_v;
    model::Encoder enc = given ? *given
                               : model::Encoder(m == Modality::a ? init.config_a : init.config_v,
                                                m == Modality::a ? "enc_a" : "enc_v", plan.seed);
    if (targets(plan.abri_target, m) && !enc.has_abri()) enc.wrap_abri(plan.abri_init_alpha);
    return enc;
}

model::UniModalModel with_head(model::Encoder enc, std::size_t n_classes, std::uint64_t seed) {
    model::UniModalModel m;
    const std::size_t dim = enc.feature_dim();
    m.head = model::LinearHead::init(enc.prefix() + ".head", dim, n_classes, seed);
    m.encoder = std::move(enc);
    return m;
}

SgdConfig sgd(const StagePlan& plan, double lr) {
    return {lr, plan.momentum, plan.weight_decay};
}

void log_test(RunContext& ctx, const std::string& stage, std::size_t epoch, const EvalResult& r) {
    ctx.log->add({ctx.run_id, ctx.strategy, stage, epoch, "test", r.loss, r.metrics.accuracy, r.metrics.map});
}

} // namespace

const char* strategy_name(Strategy s) {
    for (auto [k, n] : strategy_names)
        if (k == s) return n;
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    for (auto [k, n] : strategy_names)
        if (s == n) return k;
    throw ContractError("unknown strategy '" + s + "' (expected FusT, FusT*, FusT*-lr, FusT-mean, JT or DF)");
}

const char* abri_target_name(AbriTarget t) {
    for (auto [k, n] : target_names)
        if (k == t) return n;
    return "?";
}

AbriTarget abri_target_from_string(const std::string& s) {
    for (auto [k, n] : target_names)
        if (s == n) return k;
    throw ContractError("unknown abri target '" + s + "' (expected none, a, v or both)");
}

void StagePlan::validate() const {
    const bool two_stage = strategy != Strategy::jt;
    if (two_stage && (stage1_epochs_a == 0 || stage1_epochs_v == 0)) {
        throw ContractError("plan.stage1_epochs: must be >= 1 for " + std::string(strategy_name(strategy)));
    }
    if (two_stage && strategy != Strategy::df && stage2_epochs == 0) {
        throw ContractError("plan.stage2_epochs: must be >= 1 for " + std::string(strategy_name(strategy)));
    }
    if (strategy == Strategy::jt && jt_epochs == 0) throw ContractError("plan.jt_epochs: must be >= 1 for JT");
    if (batch_size == 0) throw ContractError("plan.batch_size: must be >= 1");
    for (auto [v, n] : {std::pair{lr_stage1, "lr_stage1"}, std::pair{lr_stage2, "lr_stage2"}, std::pair{lr_jt, "lr_jt"}}) {
        if (!(v > 0.0)) throw ContractError(std::string("plan.") + n + ": must be > 0");
    }
    if (momentum < 0.0 || momentum >= 1.0) throw ContractError("plan.momentum: outside [0, 1)");
    if (weight_decay < 0.0) throw ContractError("plan.weight_decay: must be >= 0");
    if (!(lr_scale > 0.0)) throw ContractError("plan.lr_scale: must be > 0");
    if (abri_init_alpha < 0.0 || abri_init_alpha > 1.0) throw ContractError("plan.abri_init_alpha: outside [0, 1]");
}

nlohmann::json to_json(const StagePlan& p) {
    return {{"strategy", strategy_name(p.strategy)},
            {"stage1_epochs_a", p.stage1_epochs_a},
            {"stage1_epochs_v", p.stage1_epochs_v},
            {"stage2_epochs", p.stage2_epochs},
            {"jt_epochs", p.jt_epochs},
            {"batch_size", p.batch_size},
            {"lr_stage1", p.lr_stage1},
            {"lr_stage2", p.lr_stage2},
            {"lr_jt", p.lr_jt},
            {"momentum", p.momentum},
            {"weight_decay", p.weight_decay},
            {"lr_scale", p.lr_scale},
            {"abri_target", abri_target_name(p.abri_target)},
            {"abri_init_alpha", p.abri_init_alpha},
            {"confidence_source", p.confidence_source == ConfidenceSource::train_pass ? "train_pass" : "eval_sweep"},
            {"seed", p.seed}};
}

StagePlan stage_plan_from_json(const nlohmann::json& j) {
    require_known_keys(j,
                       {"strategy", "stage1_epochs_a", "stage1_epochs_v", "stage2_epochs", "jt_epochs", "batch_size",
                        "lr_stage1", "lr_stage2", "lr_jt", "momentum", "weight_decay", "lr_scale", "abri_target",
                        "abri_init_alpha", "confidence_source", "seed"},
                       "plan");
    StagePlan p;
    std::string s;
    if (j.contains("strategy")) {
        read_field(j, "strategy", s, "plan");
        try {
            p.strategy = strategy_from_string(s);
        } catch (const ContractError& e) {
            throw ConfigError("plan.strategy", e.what());
        }
    }
    read_field(j, "stage1_epochs_a", p.stage1_epochs_a, "plan");
    read_field(j, "stage1_epochs_v", p.stage1_epochs_v, "plan");
    read_field(j, "stage2_epochs", p.stage2_epochs, "plan");
    read_field(j, "jt_epochs", p.jt_epochs, "plan");
    read_field(j, "batch_size", p.batch_size, "plan");
    read_field(j, "lr_stage1", p.lr_stage1, "plan");
    read_field(j, "lr_stage2", p.lr_stage2, "plan");
    read_field(j, "lr_jt", p.lr_jt, "plan");
    read_field(j, "momentum", p.momentum, "plan");
    read_field(j, "weight_decay", p.weight_decay, "plan");
    read_field(j, "lr_scale", p.lr_scale, "plan");
    if (j.contains("abri_target")) {
        read_field(j, "abri_target", s, "plan");
        try {
            p.abri_target = abri_target_from_string(s);
        } catch (const ContractError& e) {
            throw ConfigError("plan.abri_target", e.what());
        }
    }
    read_field(j, "abri_init_alpha", p.abri_init_alpha, "plan");
    if (j.contains("confidence_source")) {
        read_field(j, "confidence_source", s, "plan");
        if (s == "train_pass") p.confidence_source = ConfidenceSource::train_pass;
        else if (s == "eval_sweep") p.confidence_source = ConfidenceSource::eval_sweep;
        else throw ConfigError("plan.confidence_source", "expected train_pass or eval_sweep, got '" + s + "'");
    }
    read_field(j, "seed", p.seed, "plan");
    try {
        p.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const ContractError& e) {
        const std::string msg = e.what();
        throw ConfigError(msg.substr(0, msg.find(':')), msg);
    }
    return p;
}

Modality stronger_modality(const ConfidenceLedger& ledger) {
    double sa = 0.0, sv = 0.0;
    std::size_t n = 0;
    for (std::uint64_t id : ledger.ids()) {
        sa += ledger.history(id, Modality::a).back();
        sv += ledger.history(id, Modality::v).back();
        ++n;
    }
    if (n == 0) throw ContractError("stronger_modality: empty ledger");
    return sv > sa ? Modality::v : Modality::a;
}

Stage1Outcome run_stage1(const StagePlan& plan, const data::SplitDataset& data, const Initialization& init,
                         const std::string& run_id) {
    Stage1Outcome out;
    RunContext ctx{run_id, strategy_name(plan.strategy), plan.seed, &out.log};
    const std::size_t k = data.train.n_classes;
    out.model_a = with_head(initial_encoder(plan, init, Modality::a), k, plan.seed);
    out.model_v = with_head(initial_encoder(plan, init, Modality::v), k, plan.seed);
    TrainConfig cfg_a{plan.stage1_epochs_a, plan.batch_size, sgd(plan, plan.lr_stage1)};
    TrainConfig cfg_v{plan.stage1_epochs_v, plan.batch_size, sgd(plan, plan.lr_stage1)};
    stage1_train(out.model_a, Modality::a, data.train, &data.val, cfg_a, &out.ledger, plan.confidence_source, ctx,
                 "stage1_a");
    stage1_train(out.model_v, Modality::v, data.train, &data.val, cfg_v, &out.ledger, plan.confidence_source, ctx,
                 "stage1_v");
    out.ledger.finalize(data.train.ids());
    out.stronger = stronger_modality(out.ledger);
    return out;
}

StrategyResult run_strategy(const StagePlan& plan, const data::SplitDataset& data, const MaskingPolicy& policy,
                            const Initialization& init, const std::string& run_id, const Stage1Outcome* reuse) {
    plan.validate();
    policy.validate();
    StrategyResult result;
    RunContext ctx{run_id, strategy_name(plan.strategy), plan.seed, &result.log};
    const std::size_t k = data.train.n_classes;

    if (plan.strategy == Strategy::jt) {
        auto joint = model::MultiModalModel::assemble(initial_encoder(plan, init, Modality::a),
                                                      initial_encoder(plan, init, Modality::v), k, plan.seed);
        Stage2Options opts{{plan.jt_epochs, plan.batch_size, sgd(plan, plan.lr_jt)}, policy, 1.0, 1.0};
        stage2_train(joint, data.train, &data.val, MaskPlan{}, opts, ctx, "joint");
        result.test = evaluate(joint, data.test);
        log_test(ctx, "joint", plan.jt_epochs - 1, result.test);
        result.joint = std::move(joint);
        return result;
    }

    Stage1Outcome s1 = reuse ? *reuse : run_stage1(plan, data, init, run_id);
    for (auto row : s1.log.rows()) {
        row.run_id = ctx.run_id;
        row.strategy = ctx.strategy;
        result.log.add(row);
    }

    if (plan.strategy == Strategy::df) {
        auto ra = evaluate(s1.model_a, data.test, Modality::a);
        auto rv = evaluate(s1.model_v, data.test, Modality::v);
        Tensor fused = ra.probabilities;
        for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = 0.5 * (ra.probabilities[i] + rv.probabilities[i]);
        result.test = evaluate_probabilities(fused, data.test.labels());
        log_test(ctx, "fusion", 0, result.test);
        result.stage1 = std::move(s1);
        return result;
    }

    MaskMode mode = MaskMode::none;
    if (plan.strategy == Strategy::fust) mode = MaskMode::sample_wise;
    if (plan.strategy == Strategy::fust_mean) mode = MaskMode::uniform_mean;
    result.masks = plan_masks(s1.ledger, data.train, policy, mode);

    Stage2Options opts{{plan.stage2_epochs, plan.batch_size, sgd(plan, plan.lr_stage2)}, policy, 1.0, 1.0};
    if (plan.strategy == Strategy::fust_star_lr) {
        (s1.stronger == Modality::a ? opts.lr_scale_a : opts.lr_scale_v) = plan.lr_scale;
    }
    auto joint = model::MultiModalModel::assemble(s1.model_a.encoder, s1.model_v.encoder, k, plan.seed);
    stage2_train(joint, data.train, &data.val, result.masks, opts, ctx, "stage2");
    result.test = evaluate(joint, data.test);
    log_test(ctx, "stage2", plan.stage2_epochs - 1, result.test);
    result.joint = std::move(joint);
    result.stage1 = std::move(s1);
    return result;
}

} // namespace fust::fusion
