#include "fust/fusion/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fust/numerics/loss.hpp"
#include "fust/numerics/rng.hpp"

namespace fust::fusion {

using data::Modality;
using model::Mode;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void MetricsLog::append(const MetricsLog& other) {
    rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
}

std::string MetricsLog::to_csv() const {
    std::ostringstream os;
    os << "run_id,strategy,stage,epoch,split,loss,accuracy,map\n";
    for (const auto& r : rows_) {
        os << r.run_id << ',' << r.strategy << ',' << r.stage << ',' << r.epoch << ',' << r.split << ','
           << format_double(r.loss) << ',' << format_double(r.accuracy) << ',' << format_double(r.map) << '\n';
    }
    return os.str();
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("metrics: cannot write '" + path.string() + "'");
    out << to_csv();
}

MetricsLog MetricsLog::parse_csv(const std::string& text) {
    MetricsLog log;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != "run_id,strategy,stage,epoch,split,loss,accuracy,map") {
        throw ContractError("metrics: unexpected CSV header '" + line + "'");
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 8) throw ContractError("metrics: malformed row '" + line + "'");
        log.add({f[0], f[1], f[2], std::stoull(f[3]), f[4], std::stod(f[5]), std::stod(f[6]), std::stod(f[7])});
    }
    return log;
}

MetricsLog MetricsLog::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("metrics: cannot read '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str());
}

EvalResult evaluate_probabilities(const Tensor& probabilities, const std::vector<int>& labels) {
    EvalResult r;
    r.probabilities = probabilities;
    const std::size_t k = probabilities.dim(1);
    double loss = 0.0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        loss -= std::log(std::max(probabilities[n * k + static_cast<std::size_t>(labels[n])], 1e-300));
    }
    r.loss = loss / static_cast<double>(labels.size());
    r.metrics = compute_metrics(probabilities, labels);
    return r;
}

namespace {

template <typename LogitsFn>
EvalResult evaluate_batches(std::size_t n, std::size_t k, std::size_t batch_size, const std::vector<int>& labels,
                            LogitsFn&& logits_for) {
    Tensor probs({n, k}, 0.0);
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Tensor p = softmax_rows(logits_for(idx));
        std::copy(p.storage().begin(), p.storage().end(), probs.storage().begin() + static_cast<std::ptrdiff_t>(start * k));
    }
    return evaluate_probabilities(probs, labels);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, const std::string& stage, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = keyed_rng({seed, tag(Stream::shuffle), fnv1a(stage), epoch});
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

std::vector<int> labels_of(const data::Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(ds.samples[i].label);
    return out;
}

void check_finite(double loss, const std::string& stage, std::size_t epoch, std::size_t batch) {
    if (!std::isfinite(loss)) {
        throw NonFiniteError("non-finite loss in stage '" + stage + "' at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch));
    }
}

// Re-raise numeric failures of one training step with its coordinates.
template <typename F>
void guarded(const std::string& stage, std::size_t epoch, std::size_t batch, F&& step) {
    try {
        step();
    } catch (const NonFiniteError& e) {
        throw NonFiniteError("stage '" + stage + "' at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch) + ": " + e.what());
    }
}

void log_row(RunContext& ctx, const std::string& stage, std::size_t epoch, const std::string& split, double loss,
             const Metrics& m) {
    if (ctx.log) ctx.log->add({ctx.run_id, ctx.strategy, stage, epoch, split, loss, m.accuracy, m.map});
}

} // namespace

EvalResult evaluate(model::UniModalModel& m, const data::Dataset& ds, Modality modality, std::size_t batch_size) {
    return evaluate_batches(ds.size(), m.head.out_dim(), batch_size, ds.labels(), [&](const auto& idx) {
        Tensor x = data::adapt_input(data::stack_inputs(ds, idx, modality), m.encoder.config().input_shape);
        return m.logits(Var::constant(std::move(x)), Mode::eval).value();
    });
}

EvalResult evaluate(model::MultiModalModel& m, const data::Dataset& ds, std::size_t batch_size) {
    return evaluate_batches(ds.size(), m.head.out_dim(), batch_size, ds.labels(), [&](const auto& idx) {
        Var xa = Var::constant(data::stack_inputs(ds, idx, Modality::a));
        Var xv = Var::constant(data::stack_inputs(ds, idx, Modality::v));
        return m.logits(xa, xv, Mode::eval).value();
    });
}

void stage1_train(model::UniModalModel& m, Modality modality, const data::Dataset& train, const data::Dataset* val,
                  const TrainConfig& cfg, ConfidenceLedger* ledger, ConfidenceSource source, RunContext& ctx,
                  const std::string& stage_name) {
    if (cfg.epochs == 0) throw ContractError("stage1: epochs must be >= 1");
    if (train.n_classes != m.head.out_dim()) {
        throw ContractError("stage1: dataset has " + std::to_string(train.n_classes) + " classes, head width " +
                            std::to_string(m.head.out_dim()));
    }
    Sgd opt(cfg.sgd);
    auto params = m.parameters();
    const Shape& in_shape = m.encoder.config().input_shape;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(train.size(), ctx.seed, stage_name, epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
            const auto labels = labels_of(train, idx);
            Var x = Var::constant(data::adapt_input(data::stack_inputs(train, idx, modality), in_shape));
            Var logits;
            CrossEntropyResult ce;
            guarded(stage_name, epoch, batch, [&] {
                logits = m.logits(x, Mode::train);
                ce = cross_entropy_confidence(logits, labels);
            });
            const double loss = ce.loss.value().item();
            check_finite(loss, stage_name, epoch, batch);
            loss_sum += loss * static_cast<double>(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                correct += argmax_row(logits.value(), i) == labels[i] ? 1 : 0;
                if (ledger && source == ConfidenceSource::train_pass) {
                    ledger->record(train.samples[idx[i]].id, modality, ce.confidence[i]);
                }
            }
            guarded(stage_name, epoch, batch, [&] {
                backward(ce.loss);
                opt.step(params);
            });
        }
        if (ledger && source == ConfidenceSource::eval_sweep) {
            for (std::size_t start = 0; start < train.size(); start += 128) {
                std::vector<std::size_t> idx(std::min(train.size(), start + 128) - start);
                std::iota(idx.begin(), idx.end(), start);
                Var x = Var::constant(data::adapt_input(data::stack_inputs(train, idx, modality), in_shape));
                auto ce = cross_entropy_confidence(m.logits(x, Mode::eval), labels_of(train, idx));
                for (std::size_t i = 0; i < idx.size(); ++i) ledger->record(train.samples[idx[i]].id, modality, ce.confidence[i]);
            }
        }
        Metrics train_metrics;
        train_metrics.accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
        train_metrics.map = std::nan("");
        log_row(ctx, stage_name, epoch, "train", loss_sum / static_cast<double>(train.size()), train_metrics);
        if (val && val->size()) {
            auto r = evaluate(m, *val, modality);
            log_row(ctx, stage_name, epoch, "val", r.loss, r.metrics);
        }
    }
}

MaskRatios MaskPlan::at(std::uint64_t sample_id) const {
    auto it = ratios.find(sample_id);
    return it == ratios.end() ? MaskRatios{} : it->second;
}

MaskPlan plan_masks(const ConfidenceLedger& ledger, const data::Dataset& train, const MaskingPolicy& policy,
                    MaskMode mode) {
    MaskPlan plan;
    if (mode == MaskMode::none) return plan;
    if (!ledger.finalized()) throw ContractError("plan_masks: ledger must be finalized");
    for (const auto& s : train.samples) {
        if (!ledger.contains(s.id)) throw ContractError("plan_masks: ledger has no entry for training sample " + std::to_string(s.id));
        plan.ratios[s.id] = masking_ratio(ledger.mean(s.id, Modality::a), ledger.mean(s.id, Modality::v), policy);
    }
    if (mode == MaskMode::uniform_mean) {
        double sa = 0.0, sv = 0.0;
        for (const auto& [id, r] : plan.ratios) {
            sa += r.a;
            sv += r.v;
        }
        const double n = static_cast<double>(plan.ratios.size());
        plan.uniform = {sa / n, sv / n};
        for (auto& [id, r] : plan.ratios) r = plan.uniform;
    }
    return plan;
}

Tensor masked_batch(const data::Dataset& ds, const std::vector<std::size_t>& indices, Modality m, const MaskPlan& plan,
                    const MaskingPolicy& policy, std::uint64_t seed, std::size_t epoch) {
    Tensor batch = data::stack_inputs(ds, indices, m);
    const std::size_t per = batch.size() / indices.size();
    const MaskKind kind = mask_kind_of(m);
    const std::size_t geometry = kind == MaskKind::image ? policy.patch_size : policy.stripe_width;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& sample = ds.samples[indices[i]];
        const MaskRatios r = plan.at(sample.id);
        const double ratio = m == Modality::a ? r.a : r.v;
        if (ratio <= 0.0) continue;
        Rng rng = mask_stream(seed, sample.id, epoch, m, policy.resample_per_epoch);
        Tensor masked = apply_mask(sample.input(m), kind, ratio, rng, geometry);
        std::copy(masked.storage().begin(), masked.storage().end(), batch.storage().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return batch;
}

void stage2_train(model::MultiModalModel& m, const data::Dataset& train, const data::Dataset* val,
                  const MaskPlan& plan, const Stage2Options& opts, RunContext& ctx, const std::string& stage_name) {
    const auto& cfg = opts.train;
    if (cfg.epochs == 0) throw ContractError("stage2: epochs must be >= 1");
    if (!plan.ratios.empty()) {
        for (const auto& s : train.samples) {
            if (!plan.ratios.count(s.id)) {
                throw ContractError("stage2: mask plan has no entry for training sample " + std::to_string(s.id));
            }
        }
    }
    Sgd opt(cfg.sgd);
    auto params_a = m.encoder_a.parameters();
    auto params_v = m.encoder_v.parameters();
    std::vector<Parameter*> params_head{&m.head.weight, &m.head.bias};
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(train.size(), ctx.seed, stage_name, epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
            const auto labels = labels_of(train, idx);
            Var xa = Var::constant(masked_batch(train, idx, Modality::a, plan, opts.policy, ctx.seed, epoch));
            Var xv = Var::constant(masked_batch(train, idx, Modality::v, plan, opts.policy, ctx.seed, epoch));
            Var logits;
            CrossEntropyResult ce;
            guarded(stage_name, epoch, batch, [&] {
                logits = m.logits(xa, xv, Mode::train);
                ce = cross_entropy_confidence(logits, labels);
            });
            const double loss = ce.loss.value().item();
            check_finite(loss, stage_name, epoch, batch);
            loss_sum += loss * static_cast<double>(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) correct += argmax_row(logits.value(), i) == labels[i] ? 1 : 0;
            guarded(stage_name, epoch, batch, [&] {
                backward(ce.loss);
                opt.step(params_a, opts.lr_scale_a);
                opt.step(params_v, opts.lr_scale_v);
                opt.step(params_head);
            });
        }
        Metrics train_metrics;
        train_metrics.accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
        train_metrics.map = std::nan("");
        log_row(ctx, stage_name, epoch, "train", loss_sum / static_cast<double>(train.size()), train_metrics);
        if (val && val->size()) {
            auto r = evaluate(m, *val);
            log_row(ctx, stage_name, epoch, "val", r.loss, r.metrics);
        }
    }
}

} // namespace fust::fusion
