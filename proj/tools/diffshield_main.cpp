// CLI entry point. Exit codes: 0 success, 1 usage/config error, 2 runtime
// failure.
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "diffshield/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"diffusion-denoised text classification: data, training, attacks, evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    int workers = 0;
    auto* opt_config = app.add_option("--config", config_path, "ini config file");
    auto* opt_seed = app.add_option("--seed", seed, "run seed override");
    auto* opt_workers = app.add_option("--workers", workers, "worker thread override");
    app.add_option("--out", out_dir, "output directory (default: out)");

    app.add_subcommand("gen-data", "generate the synthetic corpus and synonym pools");
    auto* sub_train = app.add_subcommand("train", "train the encoder and classifier");
    int train_epochs = -1;
    sub_train->add_option("--epochs", train_epochs, "training epoch override");
    auto* sub_diffuse = app.add_subcommand("diffuse-train", "train the denoiser on frozen hidden states");
    int diffuse_epochs = -1;
    sub_diffuse->add_option("--epochs", diffuse_epochs, "denoiser epoch override");
    auto* sub_attack = app.add_subcommand("attack", "run attack suites against base and defended victims");
    int attack_subset = -1;
    sub_attack->add_option("--subset", attack_subset, "attacked subset size override");
    app.add_subcommand("eval", "aggregate attack records into the report");
    auto* sub_ablate = app.add_subcommand("ablate", "attack the defense with components toggled off");
    int ablate_subset = -1;
    sub_ablate->add_option("--subset", ablate_subset, "ablation subset size override");
    auto* sub_sweep = app.add_subcommand("sweep", "attack across reverse-step counts and ensemble sizes");
    int sweep_subset = -1;
    sub_sweep->add_option("--subset", sweep_subset, "sweep subset size override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    using namespace diffshield;
    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
        if (opt_seed->count()) cfg.seed = seed;
        if (opt_workers->count()) cfg.workers = workers;
        if (train_epochs > 0) cfg.train.epochs = train_epochs;
        if (diffuse_epochs > 0) cfg.diffusion.epochs = diffuse_epochs;
        if (attack_subset > 0) cfg.attack.subset = attack_subset;
        if (ablate_subset > 0) cfg.eval.ablate_subset = ablate_subset;
        if (sweep_subset > 0) cfg.eval.sweep_subset = sweep_subset;
        cfg.validate();

        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "gen-data")
            commands::cmd_gen_data(cfg, out_dir);
        else if (name == "train")
            commands::cmd_train(cfg, out_dir);
        else if (name == "diffuse-train")
            commands::cmd_diffuse_train(cfg, out_dir);
        else if (name == "attack")
            commands::cmd_attack(cfg, out_dir);
        else if (name == "eval")
            commands::cmd_eval(cfg, out_dir);
        else if (name == "ablate")
            commands::cmd_ablate(cfg, out_dir);
        else if (name == "sweep")
            commands::cmd_sweep(cfg, out_dir);
        (void)opt_config;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
