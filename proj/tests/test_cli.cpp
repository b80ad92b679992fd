#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "optima/cli.hpp"
#include "optima/report.hpp"

using namespace optima;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json tiny_regression_config(std::size_t epochs = 3, std::uint64_t seed = 5) {
    json j;
    j["data"] = {{"generator", "synthetic-regression"}, {"n_train", 12}, {"n_test", 30},
                 {"seed", 1}};
    j["model"] = {{"layers", {1, 6, 1}},
                  {"activation", "tanh"},
                  {"head", "gaussian-regression"},
                  {"noise_std", 0.2},
                  {"bayes_last_layer", true}};
    j["augmentation"] = {{"family", "additive-shift"}, {"init_sigma", 0.1}};
    j["train"] = {{"algorithm", "full-vi"}, {"lr_net", 1e-3}, {"lr_aug", 1e-2},
                  {"epochs", epochs},      {"batch_size", 12}, {"seed", seed},
                  {"log_every", 1},        {"mc", {{"s_gamma", 2}}}};
    j["eval"] = {{"n_mc_samples", 20}};
    j["baselines"] = {"no-aug", "fixed-aug", json{{"naive-aug", {{"k", 3}}}}};
    return j;
}

int run_binary(const std::string& args) {
#ifdef OPTIMA_BIN_PATH
    std::string cmd = std::string(OPTIMA_BIN_PATH) + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
#else
    (void)args;
    return -1;
#endif
}

}  // namespace

TEST_CASE("config validation: unknown keys are rejected with their path") {
    json j = tiny_regression_config();
    j["train"]["learning_rate"] = 0.1;  // wrong key name
    CHECK_THROWS_WITH_AS(parse_run_config(j), doctest::Contains("/train/learning_rate"),
                         ConfigError);

    json j2 = tiny_regression_config();
    j2["data"]["generator"] = "imagenet";
    CHECK_THROWS_AS(load_data(parse_run_config(j2).data), ConfigError);

    json j3 = tiny_regression_config();
    j3["model"]["head"] = "poisson";
    CHECK_THROWS_AS(parse_run_config(j3), ConfigError);
}

TEST_CASE("gen-data: default regression counts, determinism, directory creation") {
    TempDir dir("optima_cli_gen");
    json cfg;
    cfg["data"] = {{"generator", "synthetic-regression"}, {"seed", 3}};
    cfg["model"] = {{"layers", {1, 4, 1}}};
    cfg["augmentation"] = json::object();
    write_file(dir / "cfg.json", cfg.dump());

    std::string nested = dir / "a/b/c";  // created, not errored
    CHECK(cmd_gen_data(dir / "cfg.json", nested) == kExitOk);
    Dataset train = read_csv(nested + "/train.csv");
    Dataset test = read_csv(nested + "/test.csv");
    CHECK(train.size() == 50);
    CHECK(test.size() == 1000);

    std::string other = dir / "again";
    CHECK(cmd_gen_data(dir / "cfg.json", other) == kExitOk);
    CHECK(read_file(nested + "/train.csv") == read_file(other + "/train.csv"));
    CHECK(read_file(nested + "/test.csv") == read_file(other + "/test.csv"));
}

TEST_CASE("train: zero epochs yields an initial checkpoint and a header-only trace") {
    TempDir dir("optima_cli_train0");
    json cfg = tiny_regression_config(0);
    write_file(dir / "cfg.json", cfg.dump());
    CHECK(cmd_train(dir / "cfg.json", dir / "out") == kExitOk);

    std::string trace = read_file(dir / "out/optima/trace.csv");
    CHECK(trace.find("step,total,data_fit,kl_theta,kl_phi,dphi_mean,train_loss") == 0);
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 1);  // header only

    Checkpoint ckpt = load_checkpoint(dir / "out/optima/checkpoint.json");
    CHECK(ckpt.step == 0);
    CHECK(ckpt.task == Task::Regression);
}

TEST_CASE("train: trace carries one (mean, sigma) pair per augmentation coordinate") {
    TempDir dir("optima_cli_trace");
    json cfg = tiny_regression_config(2);
    write_file(dir / "cfg.json", cfg.dump());
    REQUIRE(cmd_train(dir / "cfg.json", dir / "out") == kExitOk);
    std::string header = read_file(dir / "out/optima/trace.csv");
    header = header.substr(0, header.find('\n'));
    CHECK(header.find("phi_shift0_mean") != std::string::npos);
    CHECK(header.find("phi_shift0_sigma") != std::string::npos);
}

TEST_CASE("train: byte-identical traces and checkpoints across reruns") {
    TempDir dir("optima_cli_det");
    json cfg = tiny_regression_config(4, 17);
    write_file(dir / "cfg.json", cfg.dump());
    REQUIRE(cmd_train(dir / "cfg.json", dir / "run1") == kExitOk);
    REQUIRE(cmd_train(dir / "cfg.json", dir / "run2") == kExitOk);
    for (const char* arm : {"optima", "no-aug", "fixed-aug", "naive-aug"}) {
        CAPTURE(arm);
        CHECK(read_file(dir / ("run1/" + std::string(arm) + "/trace.csv")) ==
              read_file(dir / ("run2/" + std::string(arm) + "/trace.csv")));
        CHECK(read_file(dir / ("run1/" + std::string(arm) + "/checkpoint.json")) ==
              read_file(dir / ("run2/" + std::string(arm) + "/checkpoint.json")));
    }
    // reports agree modulo measured wall clock
    json r1 = json::parse(read_file(dir / "run1/report.json"));
    json r2 = json::parse(read_file(dir / "run2/report.json"));
    r1["wall_clock_seconds"] = 0.0;
    r2["wall_clock_seconds"] = 0.0;
    CHECK(r1 == r2);
}

TEST_CASE("eval: defaults, train-set consistency, and OOD AUROC on near-identical sets") {
    TempDir dir("optima_cli_eval");
    json cfg;
    cfg["data"] = {{"generator", "glyph-classification"}, {"n_train", 24}, {"n_test", 24},
                   {"seed", 4},  {"size", 8},              {"pose_jitter", 0.15},
                   {"n_classes", 4}};
    cfg["model"] = {{"layers", {64, 8, 4}}, {"activation", "relu"}, {"head", "categorical"},
                    {"bayes_last_layer", true}};
    cfg["augmentation"] = {{"family", "affine-image"}, {"init_sigma", 0.05}};
    cfg["train"] = {{"lr_net", 1e-3}, {"epochs", 2},   {"batch_size", 12},
                    {"seed", 9},      {"log_every", 1}, {"mc", {{"s_gamma", 1}}}};
    cfg["eval"] = {{"n_mc_samples", 16}};
    write_file(dir / "cfg.json", cfg.dump());
    REQUIRE(cmd_train(dir / "cfg.json", dir / "out") == kExitOk);

    // default n_mc_samples is 100 when eval section is absent
    json probe;
    probe["data"] = cfg["data"];
    probe["model"] = cfg["model"];
    probe["augmentation"] = cfg["augmentation"];
    CHECK(parse_run_config(probe).eval.n_mc_samples == 100);

    // evaluating with severity-0 corruption: entropy scores differ only by MC
    // noise, so AUROC sits near one half
    json ecfg;
    ecfg["checkpoint"] = dir / "out/optima/checkpoint.json";
    ecfg["data"] = cfg["data"];
    ecfg["data"]["corrupt"] = {{"kind", "gaussian-noise"}, {"severity", 0.0}};
    ecfg["eval"] = {{"n_mc_samples", 40}};
    write_file(dir / "eval.json", ecfg.dump());
    REQUIRE(cmd_eval(dir / "eval.json", dir / "evalout") == kExitOk);
    json rep = json::parse(read_file(dir / "evalout/eval-report.json"));
    double auroc_v = rep["arms"]["checkpoint"]["metrics"]["ood_auroc"].get<double>();
    CHECK(auroc_v > 0.35);
    CHECK(auroc_v < 0.65);
    CHECK(rep["arms"]["checkpoint"]["metrics"].contains("accuracy"));
    CHECK(rep["arms"]["checkpoint"]["metrics"].contains("ece"));

    // task mismatch is a runtime failure
    json bad = ecfg;
    bad["data"] = {{"generator", "synthetic-regression"}, {"n_train", 10}, {"n_test", 10},
                   {"seed", 1}};
    write_file(dir / "bad_eval.json", bad.dump());
    CHECK_THROWS_WITH_AS(cmd_eval(dir / "bad_eval.json", dir / "evalbad"),
                         doctest::Contains("task mismatch"), std::runtime_error);
}

TEST_CASE("verify: default suite passes and writes the theory report") {
    TempDir dir("optima_cli_verify");
    CHECK(cmd_verify("", dir / "out", false, {}) == kExitOk);
    json rep = json::parse(read_file(dir / "out/theory-report.json"));
    CHECK(rep["checks"].size() >= 5);
    std::set<std::string> names;
    for (const auto& c : rep["checks"]) names.insert(c["check"].get<std::string>());
    for (const char* want : {"jensen-gap", "shrinkage", "invariance", "information-gain",
                             "dphi-nonneg"})
        CHECK(names.count(want) == 1);
    for (const auto& c : rep["checks"]) CHECK(c["pass"].get<bool>());
}

TEST_CASE("verify: list mode and unknown suites") {
    CHECK(cmd_verify("", "", true, {}) == kExitOk);
    CHECK_THROWS_AS(cmd_verify("", "", false, {"warp-speed"}), ConfigError);
}

TEST_CASE("report: emits well-formed figures and the arm table") {
    TempDir dir("optima_cli_report");
    json cfg;
    cfg["data"] = {{"generator", "glyph-classification"}, {"n_train", 16}, {"n_test", 16},
                   {"seed", 2},  {"size", 8},              {"n_classes", 4}};
    cfg["model"] = {{"layers", {64, 6, 4}}, {"activation", "relu"}, {"head", "categorical"},
                    {"bayes_last_layer", true}};
    cfg["augmentation"] = {{"family", "affine-image"}, {"init_sigma", 0.05}};
    cfg["train"] = {{"lr_net", 1e-3}, {"epochs", 2}, {"batch_size", 8}, {"seed", 3},
                    {"log_every", 1}, {"mc", {{"s_gamma", 1}}}};
    cfg["eval"] = {{"n_mc_samples", 8}};
    cfg["baselines"] = {"no-aug", "fixed-aug"};
    write_file(dir / "cfg.json", cfg.dump());
    REQUIRE(cmd_train(dir / "cfg.json", dir / "out") == kExitOk);
    REQUIRE(cmd_report(dir / "out/report.json", dir / "figs") == kExitOk);

    for (const char* f : {"reliability.svg", "phi_trajectory.svg", "curves.svg"}) {
        std::string svg = read_file(dir / ("figs/" + std::string(f)));
        CAPTURE(f);
        CHECK(svg.rfind("<?xml", 0) == 0);
        CHECK(svg.find("<svg") != std::string::npos);
        CHECK(svg.find("</svg>") != std::string::npos);
    }
    std::string md = read_file(dir / "figs/summary.md");
    CHECK(md.find("| OPTIMA |") != std::string::npos);
    CHECK(md.find("| No Aug |") != std::string::npos);
    CHECK(md.find("| Fixed Aug |") != std::string::npos);

    // identical inputs produce byte-identical figures
    REQUIRE(cmd_report(dir / "out/report.json", dir / "figs2") == kExitOk);
    CHECK(read_file(dir / "figs/reliability.svg") == read_file(dir / "figs2/reliability.svg"));
    CHECK(read_file(dir / "figs/summary.md") == read_file(dir / "figs2/summary.md"));

    CHECK_THROWS_AS(cmd_report(dir / "cfg.json", dir / "figs3"), ConfigError);
}

TEST_CASE("report: perfectly calibrated bins draw bars on the diagonal") {
    TempDir dir("optima_cli_diag");
    // synthetic report: bins at confidence = accuracy = bin midpoint
    json bins = json::array();
    for (int b = 0; b < 10; ++b) {
        double mid = (b + 0.5) / 10.0;
        bins.push_back({{"count", 10}, {"mean_confidence", mid}, {"accuracy", mid}});
    }
    json rep;
    rep["format"] = "optima-report-v1";
    rep["version"] = kArtifactVersion;
    rep["seeds"] = {0};
    rep["arms"]["optima"] = {{"metrics", {{"accuracy", 0.55}, {"ece", 0.0}}},
                             {"reliability", bins},
                             {"pac_bayes", {{"bound", 1.0}}}};
    write_file(dir / "rep.json", rep.dump());
    REQUIRE(cmd_report(dir / "rep.json", dir / "figs") == kExitOk);
    std::string svg = read_file(dir / "figs/reliability.svg");
    // panel is 220px: accuracy 0.05 -> 11px, 0.55 -> 121px, 0.95 -> 209px
    CHECK(svg.find("height=\"11.00\"") != std::string::npos);
    CHECK(svg.find("height=\"121.00\"") != std::string::npos);
    CHECK(svg.find("height=\"209.00\"") != std::string::npos);
}

TEST_CASE("binary exit codes") {
    if (run_binary("verify --list") == -1) return;  // binary not available
    CHECK(run_binary("verify --list") == 0);

    TempDir dir("optima_cli_bin");
    write_file(dir / "bad.json", "{\"data\": {\"generator\": \"synthetic-regression\"}, "
                                 "\"model\": {}, \"augmentation\": {}, \"oops\": 1}");
    CHECK(run_binary("train --config " + (dir / "bad.json") + " --out " + (dir / "out")) ==
          kExitConfig);
    CHECK(run_binary("train --config " + (dir / "missing.json") + " --out " + (dir / "out")) ==
          kExitConfig);

    json cfg = tiny_regression_config(1);
    write_file(dir / "ok.json", cfg.dump());
    CHECK(run_binary("train --config " + (dir / "ok.json") + " --out " + (dir / "out")) ==
          kExitOk);
}
