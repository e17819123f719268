#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fust/cli/cli.hpp"
#include "fust/common/json_fields.hpp"

using namespace fust;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("fustkit_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json manifest(const fs::path& dir) { return json::parse(slurp(dir / "manifest.json")); }

// Small budgets so the end-to-end cases stay fast.
std::vector<std::string> quick_plan(const fs::path& out) {
    return {"--set", "plan.stage1_epochs_a=1", "--set", "plan.stage1_epochs_v=1", "--set", "plan.stage2_epochs=1",
            "--set", "plan.jt_epochs=2",       "--set", "output_dir=" + out.string()};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

} // namespace

TEST_CASE("help exits zero and lists every subcommand") {
    auto r = invoke({"--help"});
    CHECK(r.code == 0);
    for (const char* sub : {"gen-data", "pretrain", "inject-abnormal", "finetune", "diagnose", "fusion-tune", "probe",
                            "flops", "report", "rerun"}) {
        CHECK(r.out.find(sub) != std::string::npos);
    }
    auto f = invoke({"finetune", "--help"});
    CHECK(f.code == 0);
    CHECK(f.out.find("--abri") != std::string::npos);
    CHECK(f.out.find("--cross-modal") != std::string::npos);
    CHECK(invoke({"fusion-tune", "--help"}).out.find("--abri-target") != std::string::npos);
}

TEST_CASE("config errors carry the field path and exit with the config code") {
    auto r = invoke({"pretrain", "--set", "plan.bogus=1"});
    CHECK(r.code == cli::exit_bad_config);
    CHECK(r.err.find("plan.bogus") != std::string::npos);

    r = invoke({"pretrain", "--set", "synthetic.samples_per_class.extra=1"});
    CHECK(r.code == cli::exit_bad_config);
    CHECK(r.err.find("synthetic.samples_per_class.extra") != std::string::npos);

    r = invoke({"pretrain", "--set", "unknown_section.x=1"});
    CHECK(r.code == cli::exit_bad_config);
    CHECK(r.err.find("unknown_section") != std::string::npos);

    r = invoke({"pretrain", "--set", "model_v.channels=\"wide\""});
    CHECK(r.code == cli::exit_bad_config);
    CHECK(r.err.find("model_v.channels") != std::string::npos);

    r = invoke({"pretrain", "--set", "seed=3", "--set", "plan.seed=4"});
    CHECK(r.code == cli::exit_bad_config);
    CHECK(r.err.find("plan.seed") != std::string::npos);

    CHECK(invoke({"pretrain", "--set", "novalue"}).code == cli::exit_bad_config);
    CHECK(invoke({"fusion-tune", "--strategy", "Bogus"}).code == cli::exit_bad_config);
    CHECK(invoke({"finetune", "--checkpoint", "/nonexistent.ckpt"}).code == cli::exit_bad_config);
}

TEST_CASE("overrides parse JSON values and fall back to strings") {
    json doc = json::object();
    cli::apply_override(doc, "synthetic.samples_per_class.train=7");
    cli::apply_override(doc, "plan.strategy=FusT*");
    cli::apply_override(doc, "synthetic.shape_a=[1,8,8]");
    cli::apply_override(doc, "seed=11");
    CHECK(doc["synthetic"]["samples_per_class"]["train"] == 7);
    CHECK(doc["plan"]["strategy"] == "FusT*");
    CHECK(doc["synthetic"]["shape_a"] == json::array({1, 8, 8}));
    CHECK(doc["seed"] == 11);
    CHECK_THROWS_AS(cli::apply_override(doc, "seed.x=1"), ConfigError);
    CHECK_THROWS_AS(cli::apply_override(doc, "plan..x=1"), ConfigError);
}

TEST_CASE("resolved config round-trips and seeds follow the global seed") {
    json doc = {{"seed", 9}, {"synthetic", {{"shape_a", {1, 8, 8}}}}};
    const auto cfg = cli::experiment_config_from_json(doc);
    CHECK(cfg.synthetic.seed == 9);
    CHECK(cfg.plan.seed == 9);
    CHECK(cfg.model_a.input_shape == Shape{1, 8, 8});
    const json resolved = cli::to_json(cfg);
    CHECK(cli::to_json(cli::experiment_config_from_json(resolved)) == resolved);
    CHECK_THROWS_AS(cli::experiment_config_from_json({{"synthetic", {{"shape_a", {1, 8, 8}}}},
                                                      {"model_a", {{"input_shape", {1, 16, 16}}}}}),
                    ConfigError);
}

TEST_CASE("diagnose on an injected checkpoint reproduces the provenance") {
    const fs::path root = scratch("inject");
    REQUIRE(invoke({"pretrain", "--set", "pretrain.epochs=1", "--set", "output_dir=" + (root / "pre").string()})
                .code == 0);
    REQUIRE(invoke({"inject-abnormal", "--checkpoint", (root / "pre" / "model.ckpt").string(), "--set",
                    "output_dir=" + (root / "inj").string()})
                .code == 0);
    auto r = invoke({"diagnose", "--checkpoint", (root / "inj" / "injected.ckpt").string(), "--provenance",
                     (root / "inj" / "provenance.json").string(), "--set", "output_dir=" + (root / "dia").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("\"provenance_match\":true") != std::string::npos);
    const json report = json::parse(slurp(root / "dia" / "report.json"));
    for (const auto& layer : report["layers"]) CHECK(layer["abnormal_ratio"].get<double>() == doctest::Approx(0.5));
    CHECK(fs::exists(root / "dia" / "report.csv"));

    // The clean checkpoint has no abnormal channels, so it cannot match.
    r = invoke({"diagnose", "--checkpoint", (root / "pre" / "model.ckpt").string(), "--provenance",
                (root / "inj" / "provenance.json").string(), "--set", "output_dir=" + (root / "dia2").string()});
    CHECK(r.code == cli::exit_failed);
    CHECK(manifest(root / "dia2")["status"] == "failed");
}

TEST_CASE("a failing run still writes a manifest that flags it") {
    const fs::path root = scratch("failing");
    REQUIRE(invoke({"pretrain", "--set", "pretrain.epochs=1", "--set", "output_dir=" + (root / "pre").string()})
                .code == 0);
    auto r = invoke({"finetune", "--checkpoint", (root / "pre" / "model.ckpt").string(), "--set",
                     "synthetic.shape_v=[1,8,8]", "--set", "output_dir=" + (root / "ft").string()});
    CHECK(r.code == cli::exit_failed);
    CHECK(r.err.find("--cross-modal") != std::string::npos);
    const json m = manifest(root / "ft");
    CHECK(m["status"] == "failed");
    CHECK(m["partial_outputs"] == false);
    CHECK(m["version"] == cli::toolkit_version);

    // The same request with the input adapter succeeds.
    r = invoke({"finetune", "--checkpoint", (root / "pre" / "model.ckpt").string(), "--cross-modal", "--abri", "on",
                "--set", "finetune.epochs=1", "--set", "synthetic.shape_v=[1,8,8]", "--set",
                "output_dir=" + (root / "ft2").string()});
    CHECK(r.code == 0);
    CHECK(manifest(root / "ft2")["status"] == "completed");
}

TEST_CASE("rerun from a manifest gives bit-identical metrics and checkpoints") {
    const fs::path root = scratch("rerun");
    auto r = invoke(concat({"fusion-tune", "--strategy", "FusT", "--set", "seed=4"}, quick_plan(root / "first")));
    REQUIRE(r.code == 0);
    r = invoke({"rerun", "--manifest", (root / "first" / "manifest.json").string(), "--set",
                "output_dir=" + (root / "second").string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(root / "first" / "metrics.csv") == slurp(root / "second" / "metrics.csv"));
    CHECK(slurp(root / "first" / "joint.ckpt") == slurp(root / "second" / "joint.ckpt"));
    CHECK(manifest(root / "first")["config"] ==
          [&] {
              json c = manifest(root / "second")["config"];
              c["output_dir"] = manifest(root / "first")["config"]["output_dir"];
              return c;
          }());
}

TEST_CASE("parallel replicas equal sequential ones") {
    const fs::path root = scratch("replicas");
    REQUIRE(invoke(concat({"fusion-tune", "--strategy", "JT", "--seeds", "1,2,3", "--jobs", "3"},
                          quick_plan(root / "par")))
                .code == 0);
    REQUIRE(invoke(concat({"fusion-tune", "--strategy", "JT", "--seeds", "1,2,3", "--jobs", "1"},
                          quick_plan(root / "seq")))
                .code == 0);
    for (const char* s : {"seed_1", "seed_2", "seed_3"}) {
        CHECK(slurp(root / "par" / s / "metrics.csv") == slurp(root / "seq" / s / "metrics.csv"));
        CHECK(manifest(root / "par" / s)["seed"] == std::stoi(std::string(s).substr(5)));
    }
    CHECK(slurp(root / "par" / "seed_1" / "metrics.csv") != slurp(root / "par" / "seed_2" / "metrics.csv"));
    CHECK(manifest(root / "par")["replicas"].size() == 3);
}

TEST_CASE("FusT and JT metrics files share the final test row layout") {
    const fs::path root = scratch("compare");
    REQUIRE(invoke(concat({"fusion-tune", "--strategy", "FusT"}, quick_plan(root / "fust"))).code == 0);
    REQUIRE(invoke(concat({"fusion-tune", "--strategy", "JT"}, quick_plan(root / "jt"))).code == 0);
    const auto a = fusion::MetricsLog::read_csv(root / "fust" / "metrics.csv");
    const auto b = fusion::MetricsLog::read_csv(root / "jt" / "metrics.csv");
    REQUIRE(!a.rows().empty());
    REQUIRE(!b.rows().empty());
    CHECK(a.rows().back().split == "test");
    CHECK(b.rows().back().split == "test");
    CHECK(a.rows().back().strategy == "FusT");
    CHECK(b.rows().back().strategy == "JT");
    CHECK(a.rows().back().run_id == b.rows().back().run_id);
}

TEST_CASE("report aggregates mean and sample deviation per row key") {
    fusion::MetricsLog x, y;
    x.add({"r", "FusT", "stage2", 0, "test", 1.0, 0.5, 0.25});
    y.add({"r", "FusT", "stage2", 0, "test", 3.0, 0.7, 0.75});
    y.add({"r", "FusT", "stage2", 0, "val", 2.0, 0.6, 0.5});
    const std::string csv = cli::summarize_metrics({x, y});
    std::istringstream in(csv);
    std::string header, first, second;
    std::getline(in, header);
    std::getline(in, first);
    std::getline(in, second);
    CHECK(header == "strategy,stage,epoch,split,n,loss_mean,loss_std,accuracy_mean,accuracy_std,map_mean,map_std");
    CHECK(first.rfind("FusT,stage2,0,test,2,2,1.4142135623730951,0.59999999999999998,", 0) == 0);
    CHECK(second == "FusT,stage2,0,val,1,2,0,0.59999999999999998,0,0.5,0");
}

TEST_CASE("flops subcommand writes the ratio") {
    const fs::path root = scratch("flops");
    std::ofstream(root / "ledger.json")
        << R"({"reference":[{"phase":"a","flops_per_epoch":10,"epochs":2}],)"
        << R"("comparison":[{"phase":"b","flops_per_epoch":3,"epochs":10}]})";
    auto r = invoke({"flops", "--ledger", (root / "ledger.json").string(), "--set",
                     "output_dir=" + (root / "out").string()});
    CHECK(r.code == 0);
    CHECK(slurp(root / "out" / "flops.csv").find("ratio,,,1.5\n") != std::string::npos);
}
