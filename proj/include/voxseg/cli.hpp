#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "voxseg/config.hpp"
#include "voxseg/gradcheck.hpp"
#include "voxseg/synthetic.hpp"
#include "voxseg/trainer.hpp"

// Command implementations behind the CLI. Exit codes: 0 success, 1 check or
// metric failure, 2 configuration/data error.

namespace voxseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfigError = 2;

struct Overrides {
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
};

inline int guard(const std::function<int()>& body) {
    try {
        return body();
    } catch (const config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfigError;
    } catch (const data_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfigError;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitCheckFailed;
    }
}

inline int cmd_synth(const std::string& config_path, const Overrides& ov) {
    return guard([&] {
        SynthRun run = load_synth_config(config_path);
        if (ov.seed) run.synth.seed = *ov.seed;
        if (ov.out) run.out_dir = *ov.out;
        const DatasetSplit split = gen_synthetic(run.synth, run.out_dir);
        std::printf("wrote %lld volumes to %s (train %zu / val %zu / test %zu)\n",
                    static_cast<long long>(run.synth.count), run.out_dir.c_str(),
                    split.train.size(), split.val.size(), split.test.size());
        return kExitOk;
    });
}

inline int cmd_train(const std::string& config_path, const std::optional<std::string>& resume,
                     const Overrides& ov, bool quiet = false) {
    return guard([&] {
        LoadedConfig lc = load_experiment_config(config_path);
        if (ov.seed) lc.config.seed = *ov.seed;
        if (ov.out) lc.config.out_dir = *ov.out;
        std::optional<std::filesystem::path> resume_path;
        if (resume) resume_path = *resume;
        const TrainResult r = train_experiment(lc, resume_path, quiet);
        std::printf("trained %lld epochs; best val DSC %.4f\nlog: %s\nbest: %s\nlast: %s\n",
                    static_cast<long long>(r.epochs_run), r.best_val_dsc,
                    r.csv_path.string().c_str(), r.best_path.string().c_str(),
                    r.last_path.string().c_str());
        return kExitOk;
    });
}

inline void print_eval_table(const EvalReport& rep) {
    std::printf("%-12s %8s %8s %8s %8s %8s\n", "volume", "DSC", "F2", "Sens.", "Spec.", "Prec.");
    const auto row = [](const std::string& id, const Metrics& m) {
        std::printf("%-12s %8.4f %8.4f %8.4f %8.4f %8.4f\n", id.c_str(), m.dsc, m.f2,
                    m.sensitivity, m.specificity, m.precision);
    };
    for (const auto& v : rep.per_volume) row(v.id, v.metrics);
    row("mean", rep.mean);
    row("pooled", rep.pooled);
}

inline void write_eval_csv(const EvalReport& rep, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw data_error("cannot open " + path.string() + " for writing");
    f << "volume,dsc,f2,sens,spec,prec\n";
    const auto row = [&](const std::string& id, const Metrics& m) {
        f << id << ',' << fmt_g9(m.dsc) << ',' << fmt_g9(m.f2) << ',' << fmt_g9(m.sensitivity)
          << ',' << fmt_g9(m.specificity) << ',' << fmt_g9(m.precision) << "\n";
    };
    for (const auto& v : rep.per_volume) row(v.id, v.metrics);
    row("mean", rep.mean);
    row("pooled", rep.pooled);
}

inline int cmd_eval(const std::string& ckpt_path, const std::string& split_name,
                    const Overrides& ov) {
    return guard([&] {
        const Checkpoint ck = load_checkpoint(ckpt_path);
        const ExperimentConfig ec = parse_experiment_config(ck.config_text, "<checkpoint config>");
        const Model model = model_from_checkpoint(ck);
        const DatasetSplit split =
            read_manifest(std::filesystem::path(ec.data.dataset_dir) / "manifest.json");
        const auto& ids = split.split(split_name);
        if (ids.empty()) throw config_error("split \"" + split_name + "\" is empty");

        std::vector<PreparedVolume> vols;
        for (const auto& id : ids)
            vols.push_back(prepare_volume(ec.data.dataset_dir, id, ec.data.hu_window_lo,
                                          ec.data.hu_window_hi));
        AdaptiveWeights w{ck.state.at("w_tversky").get<double>(),
                          ck.state.at("w_bce").get<double>(),
                          ck.state.at("w_epoch").get<int64_t>()};
        const EvalReport rep = evaluate_volumes(model, vols, ec.data.patch_extent, w, ec.tversky);

        print_eval_table(rep);
        const std::filesystem::path out_dir =
            ov.out ? std::filesystem::path(*ov.out) : std::filesystem::path(ckpt_path).parent_path();
        std::filesystem::create_directories(out_dir);
        const auto csv = out_dir / ("eval_" + split_name + ".csv");
        write_eval_csv(rep, csv);
        std::printf("report: %s\n", csv.string().c_str());
        return kExitOk;
    });
}

inline int cmd_gradcheck(const std::optional<std::string>& config_path) {
    return guard([&] {
        // the loss-level suite plus end-to-end passes over both downsampling modes
        std::vector<GradCheckReport> reports;
        reports.push_back(check_tversky_gradients());
        ModelConfig e2e = gradcheck_model_config(Downsample::StridedConv);
        ModelConfig e2e_pool = gradcheck_model_config(Downsample::MaxPool);
        if (config_path) {
            const LoadedConfig lc = load_experiment_config(*config_path, false);
            e2e.base_channels = lc.config.model.base_channels > 4 ? 2 : lc.config.model.base_channels;
            e2e.downsample_mode = lc.config.model.downsample_mode;
        }
        reports.push_back(check_end_to_end(e2e));
        reports.push_back(check_end_to_end(e2e_pool));

        bool all_pass = true;
        for (const auto& r : reports) {
            std::printf("%s %s\n", r.pass ? "[PASS]" : "[FAIL]", r.summary().c_str());
            all_pass = all_pass && r.pass;
        }
        return all_pass ? kExitOk : kExitCheckFailed;
    });
}

inline int cmd_info(const std::string& ckpt_path) {
    return guard([&] {
        const Checkpoint ck = load_checkpoint(ckpt_path);
        std::printf("checkpoint: %s\n", ckpt_path.c_str());
        std::printf("format version: %u\n", ck.version);
        std::printf("epoch: %lld\n", ck.state.at("epoch").get<long long>());
        std::printf("weights (next epoch): w_tversky=%.6f w_bce=%.6f\n",
                    ck.state.at("w_tversky").get<double>(), ck.state.at("w_bce").get<double>());
        std::printf("lr: %.6g  best val DSC: %.4f\n", ck.state.at("lr_current").get<double>(),
                    ck.state.at("best_val_dsc").get<double>());
        int64_t total = 0, count = 0;
        for (size_t i = 0; i < ck.names.size(); ++i) {
            if (ck.names[i].rfind("adam.", 0) == 0) continue;
            std::printf("  %-24s %s\n", ck.names[i].c_str(), shape_string(ck.tensors[i].shape).c_str());
            total += ck.tensors[i].numel();
            ++count;
        }
        std::printf("%lld parameters in %lld tensors\n", static_cast<long long>(total),
                    static_cast<long long>(count));
        std::printf("--- config echo ---\n%s", ck.config_text.c_str());
        return kExitOk;
    });
}

}  // namespace voxseg::cli
