#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "magflow/cli.hpp"
#include "magflow/common.hpp"
#include "magflow/config.hpp"

int main(int argc, char** argv) {
    CLI::App app{"magflow: time-conditioned phase encoding and rotation-decay sequence model "
                 "for next-POI prediction"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string ablation_flag;
    int threads_flag = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "flat key = value config file")->required();
        sub->add_option("--set", overrides, "override a config key (key=value), repeatable");
        sub->add_option("--ablation", ablation_flag, "none|no_phase|no_tc|real_mamba");
        sub->add_option("--threads", threads_flag, "cap module-level parallelism");
    };

    auto* precompute = app.add_subcommand("precompute", "build graph, basis and token bank caches");
    auto* train = app.add_subcommand("train", "train a checkpoint on the cached pipeline");
    auto* eval = app.add_subcommand("eval", "evaluate the checkpoint on the test split");
    auto* bench = app.add_subcommand("bench", "latency/throughput protocol over L in {25,50,75,100}");
    auto* generate = app.add_subcommand("generate", "emit a synthetic tidal-mobility corpus");
    for (auto* sub : {precompute, train, eval, bench, generate}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        magflow::RunConfig cfg = magflow::load_config(config_path, overrides);
        if (!ablation_flag.empty()) cfg.ablation = magflow::ablation_from_string(ablation_flag);
        if (threads_flag > 0) cfg.threads = threads_flag;
        cfg.validate();

        if (precompute->parsed()) return magflow::cmd_precompute(cfg);
        if (train->parsed()) return magflow::cmd_train(cfg);
        if (eval->parsed()) return magflow::cmd_eval(cfg);
        if (bench->parsed()) return magflow::cmd_bench(cfg);
        if (generate->parsed()) return magflow::cmd_generate(cfg);
        return 3;
    } catch (const magflow::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const magflow::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 3;
    } catch (const magflow::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
