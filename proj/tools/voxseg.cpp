#include <optional>
#include <string>

#include <CLI11.hpp>

#include "voxseg/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"voxseg: volumetric segmentation training engine"};
    app.require_subcommand(1);

    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out, "override the output directory");

    std::string synth_config;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", synth_config, "synth config file")->required();

    std::string train_config;
    std::optional<std::string> resume;
    bool quiet = false;
    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", train_config, "experiment config file")->required();
    train->add_option("--resume", resume, "checkpoint to resume from");
    train->add_flag("--quiet", quiet, "suppress per-epoch progress lines");

    std::string eval_ckpt, eval_split = "test";
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--split", eval_split, "split name (train|val|test)");

    std::optional<std::string> gc_config;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--config", gc_config, "optional experiment config");

    std::string info_ckpt;
    auto* info = app.add_subcommand("info", "describe a checkpoint");
    info->add_option("--ckpt", info_ckpt, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : voxseg::cli::kExitConfigError;
    }

    const voxseg::cli::Overrides ov{seed, out};
    if (synth->parsed()) return voxseg::cli::cmd_synth(synth_config, ov);
    if (train->parsed()) return voxseg::cli::cmd_train(train_config, resume, ov, quiet);
    if (eval->parsed()) return voxseg::cli::cmd_eval(eval_ckpt, eval_split, ov);
    if (gradcheck->parsed()) return voxseg::cli::cmd_gradcheck(gc_config);
    if (info->parsed()) return voxseg::cli::cmd_info(info_ckpt);
    return voxseg::cli::kExitConfigError;
}
