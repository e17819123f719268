#include "fust/cli/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "fust/common/json_fields.hpp"
#include "fust/data/checkpoint.hpp"
#include "fust/data/dataset_io.hpp"
#include "fust/diagnostics/flops.hpp"
#include "fust/diagnostics/health.hpp"
#include "fust/fusion/probe.hpp"
#include "fust/fusion/strategy.hpp"

namespace fust::cli {

namespace fs = std::filesystem;
using data::Modality;
using nlohmann::json;

namespace {

// What one invocation asked for, in a form that can be replayed.
struct Invocation {
    std::string command;
    json options = json::object(); // command flags; paths absolute
    json raw_config = json::object();
};

// Files a command has finished writing, relative to the output directory.
struct Outputs {
    fs::path dir;
    std::vector<std::string> files;

    fs::path path(const std::string& name) const { return dir / name; }
    void done(const std::string& name) { files.push_back(name); }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

Modality modality_from(const std::string& s) {
    if (s == "a") return Modality::a;
    if (s == "v") return Modality::v;
    throw ConfigError("modality", "expected 'a' or 'v', got '" + s + "'");
}

std::string model_kind(const fs::path& checkpoint) {
    return data::read_checkpoint(checkpoint).model.at("kind").get<std::string>();
}

fusion::TrainConfig train_config(const TrainSection& t) {
    fusion::TrainConfig tc;
    tc.epochs = t.epochs;
    tc.batch_size = t.batch_size;
    tc.sgd = {t.learning_rate, t.momentum, t.weight_decay};
    return tc;
}

void add_test_row(fusion::MetricsLog& log, const fusion::RunContext& ctx, const std::string& stage,
                  std::size_t epoch, const fusion::EvalResult& r) {
    log.add({ctx.run_id, ctx.strategy, stage, epoch, "test", r.loss, r.metrics.accuracy, r.metrics.map});
}

json eval_summary(const fusion::EvalResult& r) {
    return {{"test_loss", r.loss}, {"test_accuracy", r.metrics.accuracy}, {"test_map", r.metrics.map}};
}

// Uni-modal training shared by pretrain and finetune.
json train_unimodal(model::UniModalModel& m, const TrainSection& section, const ExperimentConfig& cfg,
                    const std::string& stage, Outputs& outputs, const std::string& checkpoint_name) {
    const data::SplitDataset ds = data::generate_synthetic(cfg.synthetic);
    const data::Dataset train = data::per_class_subset(ds.train, section.train_per_class);
    fusion::MetricsLog log;
    fusion::RunContext ctx{cfg.run_id, stage, cfg.seed, &log};
    fusion::stage1_train(m, section.modality, train, &ds.val, train_config(section), nullptr,
                         fusion::ConfidenceSource::train_pass, ctx, stage);
    const auto test = fusion::evaluate(m, ds.test, section.modality);
    add_test_row(log, ctx, stage, section.epochs - 1, test);
    log.write_csv(outputs.path("metrics.csv"));
    outputs.done("metrics.csv");
    data::save_checkpoint(m, outputs.path(checkpoint_name));
    outputs.done(checkpoint_name);
    json summary = eval_summary(test);
    summary["train_samples"] = train.samples.size();
    return summary;
}

json cmd_gen_data(const Invocation&, const ExperimentConfig& cfg, Outputs& outputs) {
    const auto ds = data::generate_synthetic(cfg.synthetic);
    data::export_dataset(ds, outputs.path("data"));
    outputs.done("data");
    return {{"train", ds.train.samples.size()}, {"val", ds.val.samples.size()}, {"test", ds.test.samples.size()}};
}

json cmd_pretrain(const Invocation&, const ExperimentConfig& cfg, Outputs& outputs) {
    const Modality m = cfg.pretrain.modality;
    auto model = model::UniModalModel::init(cfg.model(m), std::string("enc_") + data::modality_name(m), cfg.seed);
    return train_unimodal(model, cfg.pretrain, cfg, "pretrain", outputs, "model.ckpt");
}

json cmd_inject(const Invocation& inv, const ExperimentConfig& cfg, Outputs& outputs) {
    auto model = data::load_unimodal(inv.options.at("checkpoint").get<std::string>());
    const auto prov = diag::inject_abnormal(model.encoder, cfg.inject.fraction, cfg.inject.magnitude,
                                            cfg.inject.beta_sign, cfg.seed);
    data::save_checkpoint(model, outputs.path("injected.ckpt"));
    outputs.done("injected.ckpt");
    write_json(outputs.path("provenance.json"), diag::to_json(prov));
    outputs.done("provenance.json");
    return {{"injected_channels", prov.total()}};
}

json cmd_finetune(const Invocation& inv, const ExperimentConfig& cfg, Outputs& outputs) {
    auto model = data::load_unimodal(inv.options.at("checkpoint").get<std::string>());
    const bool abri = inv.options.at("abri").get<std::string>() == "on";
    const bool cross = inv.options.at("cross_modal").get<bool>();
    const Modality m = cfg.finetune.modality;
    const Shape& data_shape = m == Modality::a ? cfg.synthetic.shape_a : cfg.synthetic.shape_v;
    const auto& enc_cfg = model.encoder.config();
    if (!cross && enc_cfg.input_shape != data_shape) {
        throw ContractError("finetune: checkpoint input shape " + shape_str(enc_cfg.input_shape) +
                            " differs from modality " + data::modality_name(m) + " shape " + shape_str(data_shape) +
                            "; pass --cross-modal to resize inputs");
    }
    if (cross) {
        // The pre-trained head scores the other modality's task; start a new one.
        model.head = model::LinearHead::init(model.encoder.prefix() + ".head", model.encoder.feature_dim(),
                                             cfg.synthetic.n_classes, cfg.seed);
    }
    if (abri) model.encoder.wrap_abri(cfg.finetune.abri_init_alpha);
    json summary = train_unimodal(model, cfg.finetune, cfg, "finetune", outputs, "finetuned.ckpt");
    summary["abri"] = abri;
    summary["cross_modal"] = cross;
    return summary;
}

std::vector<diag::LayerDead> dead_of(model::Encoder& enc, const ExperimentConfig& cfg, Modality m) {
    const Tensor probes = data::adapt_input(data::probe_inputs(cfg.synthetic, cfg.diagnostics.probe_samples, m),
                                            enc.config().input_shape);
    diag::DeadChannelOptions opts;
    opts.sample_fraction = cfg.diagnostics.sample_fraction;
    opts.zero_tolerance = cfg.diagnostics.zero_tolerance;
    return diag::detect_dead_channels(enc, probes, cfg.diagnostics.layer_selector, opts);
}

json cmd_diagnose(const Invocation& inv, const ExperimentConfig& cfg, Outputs& outputs) {
    const fs::path ckpt = inv.options.at("checkpoint").get<std::string>();
    diag::ChannelHealthReport report;
    std::size_t dead = 0;
    if (model_kind(ckpt) == "multimodal") {
        auto mm = data::load_multimodal(ckpt);
        report = diag::scan_abnormal_bn(mm, cfg.diagnostics.threshold);
        for (auto [enc, m] : {std::pair{&mm.encoder_a, Modality::a}, std::pair{&mm.encoder_v, Modality::v}}) {
            const auto d = dead_of(*enc, cfg, m);
            dead += diag::dead_count(d);
            diag::attach_dead(report, d);
        }
    } else {
        auto um = data::load_unimodal(ckpt);
        report = diag::scan_abnormal_bn(um.encoder, cfg.diagnostics.threshold);
        const auto d = dead_of(um.encoder, cfg, cfg.diagnostics.probe_modality);
        dead = diag::dead_count(d);
        diag::attach_dead(report, d);
    }
    const std::string format = inv.options.at("format").get<std::string>();
    if (format == "json" || format == "both") {
        diag::export_report(report, outputs.path("report.json"), diag::ReportFormat::json);
        outputs.done("report.json");
    }
    if (format == "csv" || format == "both") {
        diag::export_report(report, outputs.path("report.csv"), diag::ReportFormat::csv);
        outputs.done("report.csv");
    }
    json summary = {{"abnormal_ratio", diag::overall_abnormal_ratio(report)}, {"dead_channels", dead}};
    if (auto it = inv.options.find("provenance"); it != inv.options.end() && !it->is_null()) {
        const auto prov = diag::provenance_from_json(read_json_file(it->get<std::string>()));
        bool match = true;
        for (const auto& rec : prov.layers) {
            auto layer = std::find_if(report.layers.begin(), report.layers.end(),
                                      [&](const diag::LayerHealth& l) { return l.name == rec.layer; });
            auto ids = rec.ids;
            std::sort(ids.begin(), ids.end());
            if (layer == report.layers.end() || layer->abnormal_ids != ids) match = false;
        }
        std::size_t abnormal = 0;
        for (const auto& l : report.layers) abnormal += l.abnormal_ids.size();
        if (abnormal != prov.total()) match = false;
        summary["provenance_match"] = match;
        if (!match) throw ContractError("diagnose: abnormal channels differ from the injection provenance");
    }
    return summary;
}

std::optional<model::Encoder> encoder_from(const json& options, const char* key) {
    auto it = options.find(key);
    if (it == options.end() || it->is_null()) return std::nullopt;
    const fs::path p = it->get<std::string>();
    if (model_kind(p) == "multimodal") {
        auto mm = data::load_multimodal(p);
        return std::string(key) == "init_a" ? mm.encoder_a : mm.encoder_v;
    }
    return data::load_unimodal(p).encoder;
}

json cmd_fusion_tune(const Invocation& inv, const ExperimentConfig& cfg, Outputs& outputs) {
    const auto ds = data::generate_synthetic(cfg.synthetic);
    fusion::Initialization init{cfg.model_a, cfg.model_v, encoder_from(inv.options, "init_a"),
                                encoder_from(inv.options, "init_v")};
    auto result = fusion::run_strategy(cfg.plan, ds, cfg.policy, init, cfg.run_id);
    result.log.write_csv(outputs.path("metrics.csv"));
    outputs.done("metrics.csv");
    json summary = eval_summary(result.test);
    summary["strategy"] = fusion::strategy_name(cfg.plan.strategy);
    if (result.stage1) {
        result.stage1->ledger.save(outputs.path("ledger.json"));
        outputs.done("ledger.json");
        data::save_checkpoint(result.stage1->model_a, outputs.path("stage1_a.ckpt"));
        outputs.done("stage1_a.ckpt");
        data::save_checkpoint(result.stage1->model_v, outputs.path("stage1_v.ckpt"));
        outputs.done("stage1_v.ckpt");
        summary["stronger"] = data::modality_name(result.stage1->stronger);
    }
    if (result.joint) {
        data::save_checkpoint(*result.joint, outputs.path("joint.ckpt"));
        outputs.done("joint.ckpt");
    }
    return summary;
}

json cmd_probe(const Invocation& inv, const ExperimentConfig& cfg, Outputs& outputs) {
    const fs::path ckpt = inv.options.at("checkpoint").get<std::string>();
    const auto ds = data::generate_synthetic(cfg.synthetic);
    fusion::ProbeConfig pc;
    pc.epochs = cfg.probe.epochs;
    pc.batch_size = cfg.probe.batch_size;
    pc.learning_rate = cfg.probe.learning_rate;
    pc.momentum = cfg.probe.momentum;
    pc.weight_decay = cfg.probe.weight_decay;
    pc.seed = cfg.seed;
    Modality m = cfg.probe.modality;
    double accuracy = 0.0;
    std::string encoder_name;
    if (model_kind(ckpt) == "multimodal") {
        auto mm = data::load_multimodal(ckpt);
        m = modality_from(inv.options.at("encoder").get<std::string>());
        auto& enc = m == Modality::a ? mm.encoder_a : mm.encoder_v;
        encoder_name = enc.prefix();
        accuracy = fusion::linear_probe(enc, ds.train, ds.test, m, pc);
    } else {
        auto um = data::load_unimodal(ckpt);
        encoder_name = um.encoder.prefix();
        accuracy = fusion::linear_probe(um.encoder, ds.train, ds.test, m, pc);
    }
    json summary = {{"checkpoint", ckpt.generic_string()},
                    {"encoder", encoder_name},
                    {"modality", data::modality_name(m)},
                    {"accuracy", accuracy}};
    write_json(outputs.path("probe.json"), summary);
    outputs.done("probe.json");
    return summary;
}

json cmd_flops(const Invocation& inv, const ExperimentConfig&, Outputs& outputs) {
    const auto ledger = diag::count_flops(read_json_file(inv.options.at("ledger").get<std::string>()));
    diag::write_flops_csv(ledger, outputs.path("flops.csv"));
    outputs.done("flops.csv");
    return {{"reference_total", ledger.reference_total},
            {"comparison_total", ledger.comparison_total},
            {"ratio", ledger.ratio}};
}

json cmd_report(const Invocation& inv, const ExperimentConfig&, Outputs& outputs) {
    std::vector<fusion::MetricsLog> logs;
    for (const auto& p : inv.options.at("metrics")) logs.push_back(fusion::MetricsLog::read_csv(p.get<std::string>()));
    write_text(outputs.path("summary.csv"), summarize_metrics(logs));
    outputs.done("summary.csv");
    return {{"files", logs.size()}};
}

using Command = json (*)(const Invocation&, const ExperimentConfig&, Outputs&);

Command command_of(const std::string& name) {
    static const std::map<std::string, Command> table = {
        {"gen-data", cmd_gen_data}, {"pretrain", cmd_pretrain},       {"inject-abnormal", cmd_inject},
        {"finetune", cmd_finetune}, {"diagnose", cmd_diagnose},       {"fusion-tune", cmd_fusion_tune},
        {"probe", cmd_probe},       {"flops", cmd_flops},             {"report", cmd_report}};
    auto it = table.find(name);
    if (it == table.end()) throw ConfigError("command", "unknown command '" + name + "'");
    return it->second;
}

// Flags that change the experiment itself are folded into the config so the
// manifest's resolved config is the whole story.
void fold_flags_into_config(const Invocation& inv, json& doc) {
    if (inv.command != "fusion-tune") return;
    if (auto it = inv.options.find("strategy"); it != inv.options.end() && !it->is_null())
        apply_override(doc, "plan.strategy=" + it->dump());
    if (auto it = inv.options.find("abri_target"); it != inv.options.end() && !it->is_null())
        apply_override(doc, "plan.abri_target=" + it->dump());
}

json manifest_of(const Invocation& inv, const json& resolved, std::uint64_t seed, const std::string& status,
                 const std::vector<std::string>& outputs, const std::string& error) {
    json m = {{"toolkit", "fustkit"},
              {"version", toolkit_version},
              {"command", inv.command},
              {"options", inv.options},
              {"config", resolved},
              {"seed", seed},
              {"status", status},
              {"outputs", outputs}};
    if (status == "failed") {
        m["error"] = error;
        m["partial_outputs"] = !outputs.empty();
    }
    return m;
}

struct RunResult {
    int code = exit_ok;
    std::string message;
};

// One deterministic run into its own directory.
RunResult run_single(const Invocation& inv, const ExperimentConfig& cfg, std::ostream& out) {
    const json resolved = to_json(cfg);
    Outputs outputs{cfg.output_dir, {}};
    fs::create_directories(cfg.output_dir);
    const fs::path manifest = cfg.output_dir / "manifest.json";
    write_json(manifest, manifest_of(inv, resolved, cfg.seed, "running", {}, ""));
    try {
        const json summary = command_of(inv.command)(inv, cfg, outputs);
        write_json(manifest, manifest_of(inv, resolved, cfg.seed, "completed", outputs.files, ""));
        out << inv.command << " [" << cfg.output_dir.generic_string() << "] " << summary.dump() << "\n";
        return {};
    } catch (const std::exception& e) {
        write_json(manifest, manifest_of(inv, resolved, cfg.seed, "failed", outputs.files, e.what()));
        return {exit_failed, inv.command + " [" + cfg.output_dir.generic_string() + "] failed: " + e.what()};
    }
}

ExperimentConfig resolve(const Invocation& inv) {
    json doc = inv.raw_config;
    fold_flags_into_config(inv, doc);
    return experiment_config_from_json(doc);
}

// Per-seed configs for replicas: the global seed changes and section seeds
// follow it; each replica writes under <output_dir>/seed_<s>.
ExperimentConfig replica_config(const Invocation& inv, const ExperimentConfig& base, std::uint64_t seed) {
    json doc = to_json(base);
    doc["seed"] = seed;
    doc["synthetic"].erase("seed");
    doc["plan"].erase("seed");
    doc["output_dir"] = (base.output_dir / ("seed_" + std::to_string(seed))).generic_string();
    Invocation single = inv;
    single.raw_config = doc;
    return resolve(single);
}

int execute(const Invocation& inv, std::size_t jobs, std::ostream& out, std::ostream& err) {
    const ExperimentConfig base = resolve(inv);
    const json seeds = inv.options.value("seeds", json::array());
    if (seeds.empty()) {
        const auto r = run_single(inv, base, out);
        if (r.code != exit_ok) err << r.message << "\n";
        return r.code;
    }

    Invocation single = inv;
    single.options.erase("seeds");
    std::vector<ExperimentConfig> configs;
    for (const auto& s : seeds) configs.push_back(replica_config(single, base, s.get<std::uint64_t>()));

    std::vector<RunResult> results(configs.size());
    std::vector<std::ostringstream> logs(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            results[i] = run_single(single, configs[i], logs[i]);
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(jobs, configs.size()); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    int code = exit_ok;
    std::vector<std::string> dirs;
    std::string error;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        out << logs[i].str();
        dirs.push_back(fs::relative(configs[i].output_dir, base.output_dir).generic_string());
        if (results[i].code != exit_ok) {
            code = exit_failed;
            err << results[i].message << "\n";
            if (error.empty()) error = results[i].message;
        }
    }
    fs::create_directories(base.output_dir);
    json m = manifest_of(inv, to_json(base), base.seed, code == exit_ok ? "completed" : "failed", dirs, error);
    m["replicas"] = dirs;
    write_json(base.output_dir / "manifest.json", m);
    return code;
}

fs::path absolute_path(const std::string& p) { return fs::absolute(p).lexically_normal(); }

} // namespace

std::string summarize_metrics(const std::vector<fusion::MetricsLog>& logs) {
    struct Group {
        std::string strategy, stage, split;
        std::size_t epoch = 0;
        std::vector<double> loss, accuracy, map;
    };
    std::vector<Group> groups;
    std::map<std::tuple<std::string, std::string, std::size_t, std::string>, std::size_t> index;
    for (const auto& log : logs) {
        for (const auto& r : log.rows()) {
            auto key = std::make_tuple(r.strategy, r.stage, r.epoch, r.split);
            auto [it, fresh] = index.try_emplace(key, groups.size());
            if (fresh) groups.push_back({r.strategy, r.stage, r.split, r.epoch, {}, {}, {}});
            auto& g = groups[it->second];
            g.loss.push_back(r.loss);
            g.accuracy.push_back(r.accuracy);
            g.map.push_back(r.map);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto sd = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double mu = mean(v);
        double s = 0.0;
        for (double x : v) s += (x - mu) * (x - mu);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    std::ostringstream os;
    os << "strategy,stage,epoch,split,n,loss_mean,loss_std,accuracy_mean,accuracy_std,map_mean,map_std\n";
    for (const auto& g : groups) {
        os << g.strategy << ',' << g.stage << ',' << g.epoch << ',' << g.split << ',' << g.loss.size() << ','
           << fusion::format_double(mean(g.loss)) << ',' << fusion::format_double(sd(g.loss)) << ','
           << fusion::format_double(mean(g.accuracy)) << ',' << fusion::format_double(sd(g.accuracy)) << ','
           << fusion::format_double(mean(g.map)) << ',' << fusion::format_double(sd(g.map)) << '\n';
    }
    return os.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"fustkit: batch-norm health diagnostics, ABRi fine-tuning and fusion-tuning experiments"};
    app.name("fustkit");
    app.require_subcommand(1);
    app.set_version_flag("--version", toolkit_version);

    std::string config_path;
    std::vector<std::string> sets;
    std::size_t jobs = 1;
    std::vector<std::uint64_t> seeds;
    std::string checkpoint, abri = "off", strategy, abri_target, init_a, init_v, format = "both", encoder = "a",
                            provenance, ledger, manifest;
    bool cross_modal = false;
    std::vector<std::string> metrics;

    auto common = [&](CLI::App* sub, bool replicas) {
        sub->add_option("--config", config_path, "Experiment config JSON")->check(CLI::ExistingFile);
        sub->add_option("--set", sets, "Override a config field: section.key=value (repeatable)");
        if (replicas) {
            sub->add_option("--seeds", seeds, "Run one replica per seed under <output_dir>/seed_<s>")->delimiter(',');
            sub->add_option("--jobs", jobs, "Replicas run in parallel")->check(CLI::PositiveNumber);
        }
    };
    auto needs_checkpoint = [&](CLI::App* sub) {
        sub->add_option("--checkpoint", checkpoint, "Input checkpoint")->required()->check(CLI::ExistingFile);
    };

    auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset to <output_dir>/data");
    common(gen, true);
    auto* pre = app.add_subcommand("pretrain", "Uni-modal training from scratch -> model.ckpt");
    common(pre, true);
    auto* inj = app.add_subcommand("inject-abnormal", "Force abnormal BN parameters -> injected.ckpt + provenance.json");
    common(inj, true);
    needs_checkpoint(inj);
    auto* fin = app.add_subcommand("finetune", "Fine-tune a uni-modal checkpoint -> finetuned.ckpt");
    common(fin, true);
    needs_checkpoint(fin);
    fin->add_option("--abri", abri, "Wrap BN layers with ABRi")->check(CLI::IsMember({"on", "off"}));
    fin->add_flag("--cross-modal", cross_modal, "Encoder was trained on the other modality; resize inputs");
    auto* dia = app.add_subcommand("diagnose", "Abnormal-BN scan and dead-channel report of a checkpoint");
    common(dia, false);
    needs_checkpoint(dia);
    dia->add_option("--format", format, "Report format")->check(CLI::IsMember({"json", "csv", "both"}));
    dia->add_option("--provenance", provenance, "Injection provenance the scan must reproduce")
        ->check(CLI::ExistingFile);
    auto* fus = app.add_subcommand("fusion-tune", "Train one multi-modal strategy -> metrics.csv");
    common(fus, true);
    fus->add_option("--strategy", strategy, "FusT|FusT*|FusT*-lr|FusT-mean|JT|DF");
    fus->add_option("--abri-target", abri_target, "none|a|v|both");
    fus->add_option("--init-a", init_a, "Checkpoint initializing encoder a")->check(CLI::ExistingFile);
    fus->add_option("--init-v", init_v, "Checkpoint initializing encoder v")->check(CLI::ExistingFile);
    auto* prb = app.add_subcommand("probe", "Linear-probe accuracy of a frozen encoder -> probe.json");
    common(prb, true);
    needs_checkpoint(prb);
    prb->add_option("--encoder", encoder, "Encoder of a multi-modal checkpoint")->check(CLI::IsMember({"a", "v"}));
    auto* flo = app.add_subcommand("flops", "FLOPs ledger JSON -> flops.csv with the total ratio");
    common(flo, false);
    flo->add_option("--ledger", ledger, "Ledger JSON")->required()->check(CLI::ExistingFile);
    auto* rep = app.add_subcommand("report", "Aggregate metrics CSVs across seeds -> summary.csv");
    common(rep, false);
    rep->add_option("--metrics", metrics, "Metrics CSV files")->required()->check(CLI::ExistingFile);
    auto* rer = app.add_subcommand("rerun", "Repeat a run from its manifest");
    rer->add_option("--manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
    rer->add_option("--set", sets, "Override a config field, e.g. output_dir=other");
    rer->add_option("--jobs", jobs, "Replicas run in parallel")->check(CLI::PositiveNumber);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? exit_ok : exit_bad_config;
    }

    Invocation inv;
    try {
        if (rer->parsed()) {
            const json m = read_json_file(manifest);
            if (!m.contains("command") || !m.contains("options") || !m.contains("config"))
                throw ConfigError(manifest, "not a run manifest");
            inv.command = m.at("command").get<std::string>();
            inv.options = m.at("options");
            inv.raw_config = m.at("config");
        } else {
            CLI::App* sub = app.get_subcommands().front();
            inv.command = sub->get_name();
            if (!config_path.empty()) inv.raw_config = read_json_file(config_path);
            if (!inv.raw_config.is_object()) throw ConfigError("<root>", "config must be a JSON object");
            auto& o = inv.options;
            if (!seeds.empty()) o["seeds"] = seeds;
            if (sub->get_option_no_throw("--checkpoint")) o["checkpoint"] = absolute_path(checkpoint).generic_string();
            if (sub == fin) {
                o["abri"] = abri;
                o["cross_modal"] = cross_modal;
            }
            if (sub == dia) {
                o["format"] = format;
                o["provenance"] = provenance.empty() ? json() : json(absolute_path(provenance).generic_string());
            }
            if (sub == fus) {
                o["strategy"] = strategy.empty() ? json() : json(strategy);
                o["abri_target"] = abri_target.empty() ? json() : json(abri_target);
                o["init_a"] = init_a.empty() ? json() : json(absolute_path(init_a).generic_string());
                o["init_v"] = init_v.empty() ? json() : json(absolute_path(init_v).generic_string());
            }
            if (sub == prb) o["encoder"] = encoder;
            if (sub == flo) o["ledger"] = absolute_path(ledger).generic_string();
            if (sub == rep) {
                json files = json::array();
                for (const auto& f : metrics) files.push_back(absolute_path(f).generic_string());
                o["metrics"] = files;
            }
        }
        for (const auto& s : sets) apply_override(inv.raw_config, s);
        return execute(inv, jobs, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_bad_config;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_failed;
    }
}

} // namespace fust::cli
