#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "optima/cli.hpp"
#include "optima/report.hpp"

int main(int argc, char** argv) {
    CLI::App app{"optima: learned data augmentation by variational model selection"};
    app.require_subcommand(1);

    std::string config, out = "out";
    std::optional<std::uint64_t> seed;
    bool list_flag = false;
    std::vector<std::string> suites;

    auto add_common = [&](CLI::App* sub, bool config_required) {
        sub->add_option("--config", config, "JSON config path")->required(config_required);
        sub->add_option("--out", out, "output directory");
        sub->add_option("--seed", seed, "override the training seed");
        return sub;
    };

    auto* gen = add_common(app.add_subcommand("gen-data", "generate datasets to CSV"), true);
    auto* train =
        add_common(app.add_subcommand("train", "train all configured arms and report"), true);
    auto* eval = add_common(app.add_subcommand("eval", "evaluate a checkpoint"), true);
    auto* verify = add_common(
        app.add_subcommand("verify", "run the theory verification suites"), false);
    verify->add_flag("--list", list_flag, "list available checks without running");
    verify->add_option("--suite", suites, "suite selection (repeatable)");
    auto* report =
        add_common(app.add_subcommand("report", "emit figures and summary from a report"), true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return optima::cmd_gen_data(config, out);
        if (train->parsed()) return optima::cmd_train(config, out, seed);
        if (eval->parsed()) return optima::cmd_eval(config, out);
        if (verify->parsed()) return optima::cmd_verify(config, out, list_flag, suites);
        if (report->parsed()) return optima::cmd_report(config, out);
    } catch (const optima::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return optima::kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return optima::kExitRuntime;
    }
    return optima::kExitConfig;
}
