// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fust/batchnorm/abri.hpp"
#include "fust/cli/cli.hpp"
#include "fust/data/checkpoint.hpp"
#include "fust/diagnostics/flops.hpp"
#include "fust/fusion/probe.hpp"
#include "fust/fusion/strategy.hpp"
#include "fust/numerics/gradcheck.hpp"

using namespace fust;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

struct Verdict {
    bool pass = true;
    std::string detail;
};

// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(std::move(shape), 0.0);
    for (auto& v : t.storage()) v = d(rng);
    return t;
}

// ---------------------------------------------------------------------------

Verdict bn_gradients() {
    std::mt19937_64 rng(20240101);
    std::uniform_int_distribution<std::size_t> small(1, 4), batch(2, 6);
    double worst = 0.0, worst_linear = 0.0;
    for (int instance = 0; instance < 100; ++instance) {
        const std::size_t n = batch(rng), c = small(rng), h = small(rng), w = small(rng);
        auto layer = bn::BatchNormLayer::fresh("bn", c, std::uniform_real_distribution<double>(1e-5, 1e-2)(rng));
        layer.gamma.value = random_tensor({c}, rng, -2, 2);
        layer.beta.value = random_tensor({c}, rng, -2, 2);
        const Tensor x = random_tensor({n, c, h, w}, rng, -3, 3);
        const Tensor r = random_tensor(x.shape(), rng, -1, 1);
        auto objective = [&](const Tensor& xi, bn::BatchNormLayer l) {
            const Tensor y = bn::bn_forward(xi, l, bn::Mode::train).y;
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
            return s;
        };
        auto work = layer;
        const auto g = bn::bn_backward(r, *bn::bn_forward(x, work, bn::Mode::train).cache, layer);
        const Tensor ndx = finite_diff_check([&](const Tensor& t) { return objective(t, layer); }, x);
        const Tensor ndg = finite_diff_check(
            [&](const Tensor& t) {
                auto l = layer;
                l.gamma.value = t;
                return objective(x, l);
            },
            layer.gamma.value);
        const Tensor ndb = finite_diff_check(
            [&](const Tensor& t) {
                auto l = layer;
                l.beta.value = t;
                return objective(x, l);
            },
            layer.beta.value);
        worst = std::max({worst, max_relative_error(g.dx, ndx), max_relative_error(g.dgamma, ndg),
                          max_relative_error(g.dbeta, ndb)});

        // dx is linear in gamma: scaling gamma by s scales dx by s.
        const double s = std::uniform_real_distribution<double>(0.1, 10.0)(rng) * (instance % 2 ? -1.0 : 1.0);
        auto scaled = layer;
        for (auto& v : scaled.gamma.value.storage()) v *= s;
        auto ws = scaled;
        const auto gs = bn::bn_backward(r, *bn::bn_forward(x, ws, bn::Mode::train).cache, scaled);
        for (std::size_t i = 0; i < g.dx.size(); ++i) {
            const double want = s * g.dx[i];
            if (want != 0.0) worst_linear = std::max(worst_linear, std::abs(gs.dx[i] - want) / std::abs(want));
            else if (gs.dx[i] != 0.0) worst_linear = 1.0;
        }
    }
    return {worst < 1e-6 && worst_linear < 1e-12,
            fmt("100 instances, max rel err %.3g (< 1e-6), gamma-linearity rel err %.3g (< 1e-12)", worst,
                worst_linear)};
}

Verdict abri_algebra() {
    std::mt19937_64 rng(20240102);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        for (bn::Mode mode : {bn::Mode::train, bn::Mode::eval}) {
            auto layer = bn::BatchNormLayer::fresh("bn", 4);
            layer.gamma.value = random_tensor({4}, rng, -2, 2);
            layer.beta.value = random_tensor({4}, rng, -2, 2);
            layer.running_mean = random_tensor({4}, rng, -1, 1);
            layer.running_var = random_tensor({4}, rng, 0.5, 2);
            const Tensor x = random_tensor({5, 4, 3, 3}, rng, -3, 3);
            for (double alpha : {1.0, 0.0}) {
                auto w = bn::abri_wrap(layer, alpha);
                w.add.gamma.value = random_tensor({4}, rng, -2, 2);
                w.add.beta.value = random_tensor({4}, rng, -2, 2);
                auto inner = alpha == 1.0 ? w.ori : w.add;
                const Tensor y = bn::abri_forward(x, w, mode).y;
                const Tensor ref = bn::bn_forward(x, inner, mode).y;
                for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y[i] - ref[i]));
            }
        }
    }
    model::Encoder enc(model::ModelConfig{}, "enc", 3);
    enc.wrap_abri();
    bool ratios = enc.norm_sites().size() == 3;
    std::string per_layer;
    for (auto& site : enc.norm_sites()) {
        const auto pc = bn::abri_param_count(std::get<bn::ABRiLayer>(*site.layer));
        ratios = ratios && pc.ratio == 1.5 && pc.additional * 2 == pc.original * 3;
        per_layer += fmt(" %zu/%zu", pc.additional, pc.original);
    }
    return {worst <= 1e-12 && ratios,
            fmt("endpoint max abs diff %.3g (<= 1e-12); additional/original params%s = 1.5 each", worst,
                per_layer.c_str())};
}

// Pretrain on a, inject, cross-modal fine-tune on v with and without ABRi,
// then count dead channels; all through the command-line entry point.
Verdict dead_channel_reactivation(const fs::path& root) {
    struct Outcome {
        double dead[2] = {0, 0};
        double acc[2] = {0, 0};
        bool ok = true;
        std::string error;
    };
    std::vector<Outcome> outcomes(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t i) {
        const std::uint64_t seed = seeds[i];
        const fs::path dir = root / ("seed_" + std::to_string(seed));
        const std::vector<std::string> common = {
            "--set", "seed=" + std::to_string(seed), "--set", "synthetic.snr_a=3.0", "--set", "synthetic.snr_v=1.5",
            "--set", "pretrain.modality=a",          "--set", "pretrain.epochs=20",  "--set", "finetune.modality=v",
            "--set", "finetune.epochs=20",           "--set", "finetune.train_per_class=3",
            "--set", "inject.fraction=0.5",          "--set", "inject.magnitude=1e-12",
            "--set", "diagnostics.probe_samples=256", "--set", "diagnostics.sample_fraction=0.99",
            "--set", "diagnostics.probe_modality=v"};
        auto call = [&](std::vector<std::string> args, const fs::path& out) {
            args.insert(args.end(), common.begin(), common.end());
            args.push_back("--set");
            args.push_back("output_dir=" + out.string());
            std::ostringstream o, e;
            if (cli::run(args, o, e) != 0) {
                outcomes[i].ok = false;
                outcomes[i].error += e.str();
            }
            return o.str();
        };
        call({"pretrain"}, dir / "pretrain");
        call({"inject-abnormal", "--checkpoint", (dir / "pretrain" / "model.ckpt").string()}, dir / "inject");
        for (int abri = 0; abri < 2; ++abri) {
            const std::string tag = abri ? "abri" : "vanilla";
            call({"finetune", "--checkpoint", (dir / "inject" / "injected.ckpt").string(), "--cross-modal", "--abri",
                  abri ? "on" : "off"},
                 dir / ("finetune_" + tag));
            call({"diagnose", "--checkpoint", (dir / ("finetune_" + tag) / "finetuned.ckpt").string()},
                 dir / ("diagnose_" + tag));
            if (!outcomes[i].ok) return;
            const auto log = fusion::MetricsLog::read_csv(dir / ("finetune_" + tag) / "metrics.csv");
            outcomes[i].acc[abri] = log.rows().back().accuracy;
            const json report = json::parse(slurp(dir / ("diagnose_" + tag) / "report.json"));
            double dead = 0;
            for (const auto& layer : report["layers"]) dead += static_cast<double>(layer["dead_ids"].size());
            outcomes[i].dead[abri] = dead;
        }
    });
    std::vector<double> dv, da, av, aa;
    std::string per_seed;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (!outcomes[i].ok) return {false, "seed " + std::to_string(seeds[i]) + " failed: " + outcomes[i].error};
        dv.push_back(outcomes[i].dead[0]);
        da.push_back(outcomes[i].dead[1]);
        av.push_back(outcomes[i].acc[0]);
        aa.push_back(outcomes[i].acc[1]);
        per_seed += fmt(" [%g/%g %.1f/%.1f]", outcomes[i].dead[0], outcomes[i].dead[1], 100 * outcomes[i].acc[0],
                        100 * outcomes[i].acc[1]);
    }
    const bool dead_ok = mean(da) < 0.5 * mean(dv);
    const bool acc_ok = 100 * mean(aa) >= 100 * mean(av) + 0.5;
    return {dead_ok && acc_ok,
            fmt("mean dead vanilla %.1f, ABRi %.1f (need < 50%%); mean acc vanilla %.2f, ABRi %.2f (need +0.5); "
                "per seed dead/acc%s",
                mean(dv), mean(da), 100 * mean(av), 100 * mean(aa), per_seed.c_str())};
}

Verdict masking_schedule() {
    const fusion::MaskingPolicy p; // rho_a 1, rho_v 0.4, eta 1, t 0.2
    double worst = 0.0;
    bool exclusive = true, threshold = true;
    for (int i = 0; i <= 100; ++i) {
        for (int j = 0; j <= 100; ++j) {
            const double ca = i / 100.0, cv = j / 100.0;
            const auto m = fusion::masking_ratio(ca, cv, p);
            const double want_a = (ca > cv && cv > p.t) ? p.rho_a * std::tanh(p.eta_a * (ca - cv)) : 0.0;
            const double want_v = (cv > ca && ca > p.t) ? p.rho_v * std::tanh(p.eta_v * (cv - ca)) : 0.0;
            worst = std::max({worst, std::abs(m.a - want_a), std::abs(m.v - want_v)});
            if (m.a * m.v != 0.0) exclusive = false;
            if (cv <= p.t && m.a != 0.0) threshold = false;
            if (ca <= p.t && m.v != 0.0) threshold = false;
        }
    }
    const auto spot = fusion::masking_ratio(0.9, 0.5, p);
    const double tanh04 = 0.379948962255224885;
    const bool spot_ok = std::abs(spot.a - tanh04) <= 1e-12 && spot.v == 0.0;
    return {worst <= 1e-12 && exclusive && threshold && spot_ok,
            fmt("101x101 grid max err %.3g; m_a*m_v == 0: %s; t-branch: %s; (0.9, 0.5) -> (%.15f, %g)", worst,
                exclusive ? "yes" : "no", threshold ? "yes" : "no", spot.a, spot.v)};
}

// Per-seed products of the easy/hard preset shared by criteria 5 and 6.
struct PresetRun {
    double probe_stage1 = 0, probe_jt = 0;
    double fust = 0, fust_star = 0, jt = 0, df = 0;
    std::string hard;
};

std::vector<PresetRun> run_preset() {
    std::vector<PresetRun> runs(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t i) {
        data::SyntheticSpec spec; // 1x16x16, snr 0.3 / 0.3
        spec.seed = seeds[i];
        const auto data = data::generate_synthetic(spec);
        fusion::StagePlan plan;
        plan.seed = seeds[i];
        const fusion::MaskingPolicy policy;
        fusion::Initialization init{model::ModelConfig{}, model::ModelConfig{}, std::nullopt, std::nullopt};

        auto& r = runs[i];
        auto s1 = fusion::run_stage1(plan, data, init);
        const data::Modality hard = data::other(s1.stronger);
        r.hard = data::modality_name(hard);
        auto with = [&](fusion::Strategy s, const fusion::Stage1Outcome* reuse) {
            auto p = plan;
            p.strategy = s;
            return fusion::run_strategy(p, data, policy, init, "run", reuse);
        };
        r.fust = with(fusion::Strategy::fust, &s1).test.metrics.accuracy;
        r.fust_star = with(fusion::Strategy::fust_star, &s1).test.metrics.accuracy;
        r.df = with(fusion::Strategy::df, &s1).test.metrics.accuracy;
        auto jt = with(fusion::Strategy::jt, nullptr);
        r.jt = jt.test.metrics.accuracy;

        fusion::ProbeConfig pc;
        pc.seed = seeds[i];
        auto& enc_s1 = hard == data::Modality::a ? s1.model_a.encoder : s1.model_v.encoder;
        auto& enc_jt = hard == data::Modality::a ? jt.joint->encoder_a : jt.joint->encoder_v;
        r.probe_stage1 = fusion::linear_probe(enc_s1, data.train, data.test, hard, pc);
        r.probe_jt = fusion::linear_probe(enc_jt, data.train, data.test, hard, pc);
    });
    return runs;
}

Verdict representation_drop(const std::vector<PresetRun>& runs) {
    std::vector<double> s1, jt;
    std::string per_seed;
    for (const auto& r : runs) {
        s1.push_back(100 * r.probe_stage1);
        jt.push_back(100 * r.probe_jt);
        per_seed += fmt(" [%s %.1f->%.1f]", r.hard.c_str(), 100 * r.probe_stage1, 100 * r.probe_jt);
    }
    const double drop = mean(s1) - mean(jt);
    return {drop >= 2.0, fmt("hard-encoder probe: stage 1 %.2f, after JT %.2f, drop %.2f points (need >= 2);%s",
                             mean(s1), mean(jt), drop, per_seed.c_str())};
}

Verdict strategy_ordering(const std::vector<PresetRun>& runs) {
    std::vector<double> fust, star, jt, df;
    for (const auto& r : runs) {
        fust.push_back(100 * r.fust);
        star.push_back(100 * r.fust_star);
        jt.push_back(100 * r.jt);
        df.push_back(100 * r.df);
    }
    const bool ok = mean(fust) >= mean(jt) + 1.0 && mean(fust) >= mean(star) - 0.5;
    return {ok, fmt("mean test acc FusT %.2f, FusT* %.2f, JT %.2f, DF %.2f (need FusT >= JT + 1 and FusT >= FusT* - 0.5)",
                    mean(fust), mean(star), mean(jt), mean(df))};
}

Verdict flops_accounting() {
    using diag::count_flops;
    const double ks = count_flops({{"joint", 1.02e10, 60}},
                                  {{"stage1_audio", 4.77e9, 40}, {"stage1_visual", 5.48e9, 80}, {"stage2", 1.02e10, 20}})
                          .ratio;
    const double ave = count_flops({{"joint", 2.36e10, 50}},
                                   {{"stage1_audio", 5.17e9, 40}, {"stage1_visual", 1.85e10, 50}, {"stage2", 2.36e10, 30}})
                           .ratio;
    const double ucf = count_flops({{"joint", 1.10e10, 50}},
                                   {{"stage1_rgb", 5.48e9, 20}, {"stage1_flow", 5.48e9, 80}, {"stage2", 1.10e10, 20}})
                           .ratio;
    const bool ok = std::abs(ks - 1.36) <= 0.01 && std::abs(ave - 1.56) <= 0.01 && std::abs(ucf - 1.40) <= 0.01;
    return {ok, fmt("ratios %.4f, %.4f, %.4f (targets 1.36, 1.56, 1.40 +- 0.01)", ks, ave, ucf)};
}

Verdict determinism(const fs::path& root) {
    auto call = [](const std::vector<std::string>& args) {
        std::ostringstream o, e;
        return cli::run(args, o, e);
    };
    const std::vector<std::string> runs[] = {
        {"fusion-tune", "--strategy", "FusT", "--set", "seed=7", "--set", "output_dir=" + (root / "fust").string()},
        {"fusion-tune", "--strategy", "JT", "--set", "seed=7", "--set", "output_dir=" + (root / "jt").string()},
        {"pretrain", "--set", "seed=7", "--set", "output_dir=" + (root / "pretrain").string()}};
    bool csv_ok = true;
    std::size_t compared = 0;
    for (const auto& args : runs) {
        const fs::path dir = args.back().substr(std::string("output_dir=").size());
        if (call(args) != 0) return {false, "run failed: " + dir.string()};
        const fs::path again = dir.string() + "_rerun";
        if (call({"rerun", "--manifest", (dir / "manifest.json").string(), "--set", "output_dir=" + again.string()}) != 0)
            return {false, "rerun failed: " + dir.string()};
        csv_ok = csv_ok && slurp(dir / "metrics.csv") == slurp(again / "metrics.csv");
        ++compared;
    }

    // save -> load -> save, for a trained uni-modal, an ABRi and a multi-modal model.
    bool ckpt_ok = true;
    auto round_trip = [&](const fs::path& first, auto load) {
        auto m = load(first);
        const fs::path second = first.string() + ".again";
        data::save_checkpoint(m, second);
        ckpt_ok = ckpt_ok && slurp(first) == slurp(second);
    };
    round_trip(root / "pretrain" / "model.ckpt", [](const fs::path& p) { return data::load_unimodal(p); });
    round_trip(root / "fust" / "joint.ckpt", [](const fs::path& p) { return data::load_multimodal(p); });
    auto abri = data::load_unimodal(root / "pretrain" / "model.ckpt");
    abri.encoder.wrap_abri(0.3);
    data::save_checkpoint(abri, root / "abri.ckpt");
    round_trip(root / "abri.ckpt", [](const fs::path& p) { return data::load_unimodal(p); });

    return {csv_ok && ckpt_ok,
            fmt("%zu manifest reruns with byte-identical metrics CSVs: %s; checkpoint save->load->save identical: %s",
                compared, csv_ok ? "yes" : "no", ckpt_ok ? "yes" : "no")};
}

std::vector<std::string> numeric_rows(const fusion::MetricsLog& log) {
    std::vector<std::string> out;
    for (const auto& r : log.rows()) {
        out.push_back(r.run_id + "," + r.stage + "," + std::to_string(r.epoch) + "," + r.split + "," +
                      fusion::format_double(r.loss) + "," + fusion::format_double(r.accuracy) + "," +
                      fusion::format_double(r.map));
    }
    return out;
}

Verdict degeneracies() {
    data::SyntheticSpec spec;
    spec.seed = 11;
    const auto data = data::generate_synthetic(spec);
    fusion::StagePlan plan;
    plan.seed = 11;
    fusion::Initialization init{model::ModelConfig{}, model::ModelConfig{}, std::nullopt, std::nullopt};
    const auto s1 = fusion::run_stage1(plan, data, init);
    auto with = [&](fusion::Strategy s, const fusion::MaskingPolicy& policy, double lr_scale) {
        auto p = plan;
        p.strategy = s;
        p.lr_scale = lr_scale;
        return fusion::run_strategy(p, data, policy, init, "run", &s1);
    };
    const fusion::MaskingPolicy anchor;
    auto zero_rho = anchor;
    zero_rho.rho_a = zero_rho.rho_v = 0.0;

    auto star = with(fusion::Strategy::fust_star, anchor, 0.5);
    auto fust0 = with(fusion::Strategy::fust, zero_rho, 0.5);
    auto lr1 = with(fusion::Strategy::fust_star_lr, anchor, 1.0);
    const bool rho_ok = numeric_rows(fust0.log) == numeric_rows(star.log) &&
                        data::state_hash(fust0.joint->encoder_a) == data::state_hash(star.joint->encoder_a) &&
                        data::state_hash(fust0.joint->encoder_v) == data::state_hash(star.joint->encoder_v);
    const bool lr_ok = numeric_rows(lr1.log) == numeric_rows(star.log) &&
                       data::state_hash(lr1.joint->encoder_a) == data::state_hash(star.joint->encoder_a) &&
                       data::state_hash(lr1.joint->encoder_v) == data::state_hash(star.joint->encoder_v);

    const auto sample_wise = fusion::plan_masks(s1.ledger, data.train, anchor, fusion::MaskMode::sample_wise);
    const auto uniform = with(fusion::Strategy::fust_mean, anchor, 0.5).masks.uniform;
    double sa = 0.0, sv = 0.0;
    for (const auto& [id, r] : sample_wise.ratios) {
        sa += r.a;
        sv += r.v;
    }
    const double n = static_cast<double>(sample_wise.ratios.size());
    const double err = std::max(std::abs(uniform.a - sa / n), std::abs(uniform.v - sv / n));
    return {rho_ok && lr_ok && err <= 1e-12,
            fmt("rho = 0 FusT == FusT*: %s; lr_scale = 1 FusT*-lr == FusT*: %s; FusT-mean ratios (%.6f, %.6f) vs "
                "means, max err %.3g",
                rho_ok ? "yes" : "no", lr_ok ? "yes" : "no", uniform.a, uniform.v, err)};
}

} // namespace

int main(int argc, char** argv) {
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "fustkit_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);

    int failed = 0;
    auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!v.pass) ++failed;
        std::printf("%s criterion %d (%s): %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs);
        std::fflush(stdout);
    };

    report(1, "BN gradient fidelity", bn_gradients);
    report(2, "ABRi algebra", abri_algebra);
    report(3, "dead-channel reactivation", [&] { return dead_channel_reactivation(root / "dead_channels"); });
    report(4, "masking schedule", masking_schedule);
    std::vector<PresetRun> preset;
    std::string preset_error;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        preset = run_preset();
    } catch (const std::exception& e) {
        preset_error = e.what();
    }
    const double preset_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("(easy/hard preset, %zu seeds, trained in %.1fs)\n", seeds.size(), preset_secs);
    report(5, "joint-training representation drop", [&] {
        if (!preset_error.empty()) return Verdict{false, "preset failed: " + preset_error};
        return representation_drop(preset);
    });
    report(6, "strategy ordering", [&] {
        if (!preset_error.empty()) return Verdict{false, "preset failed: " + preset_error};
        return strategy_ordering(preset);
    });
    report(7, "FLOPs accounting", flops_accounting);
    report(8, "determinism and persistence", [&] { return determinism(root / "determinism"); });
    report(9, "variant degeneracies", degeneracies);

    std::printf("%d of 9 criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
