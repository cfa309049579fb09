#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "voxseg/checkpoint.hpp"
#include "voxseg/config.hpp"
#include "voxseg/dataset.hpp"
#include "voxseg/losses.hpp"
#include "voxseg/metrics.hpp"
#include "voxseg/optim.hpp"
#include "voxseg/unet3d.hpp"

// The experiment loop: per epoch, train over patch batches under the epoch's
// frozen loss weights, validate with stitched full-volume inference, step the
// lr schedule, append a CSV row and checkpoint last/best. All randomness goes
// through one engine whose state rides along in the checkpoint, so a resumed
// run retraces the uninterrupted trajectory.

namespace voxseg {

inline std::string fmt_g9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline const char* kCsvHeader =
    "epoch,lr,w_tversky,w_bce,train_l_tversky,train_l_bce,train_l_total,"
    "val_dsc,val_f2,val_sens,val_spec,val_prec";

struct PreparedVolume {
    std::string id;
    TensorT<float> image;    // HU-windowed to [0, 1]
    TensorT<uint8_t> label;
};

// Loads <id>.vol/.seg/.json, or falls back to a NIfTI pair
// <id>.img.nii + <id>.lbl.nii when the raw triplet is absent.
inline VolumeSample load_volume(const std::filesystem::path& dataset_dir, const std::string& id) {
    if (std::filesystem::exists(dataset_dir / (id + ".json")))
        return read_raw_volume(dataset_dir / id);
    const auto img_path = dataset_dir / (id + ".img.nii");
    const auto lbl_path = dataset_dir / (id + ".lbl.nii");
    if (!std::filesystem::exists(img_path))
        throw data_error("no volume files for id \"" + id + "\" in " + dataset_dir.string() +
                         " (expected " + id + ".json or " + id + ".img.nii)");
    NiftiVolume img = read_nifti(img_path);
    const NiftiVolume lbl = read_nifti(lbl_path);
    if (img.grid.shape != lbl.grid.shape)
        throw data_error("NIfTI image/label shape mismatch for id \"" + id + "\"");
    VolumeSample s;
    s.id = id;
    s.image = std::move(img.grid);
    s.spacing_mm = img.spacing_mm;
    s.label = TensorT<uint8_t>(s.image.shape);
    for (size_t i = 0; i < s.label.data.size(); ++i) {
        const float v = lbl.grid.data[i];
        if (v != 0.0f && v != 1.0f)
            throw data_error("NIfTI label for \"" + id + "\" contains value " + std::to_string(v) +
                             "; labels must be binary");
        s.label.data[i] = static_cast<uint8_t>(v);
    }
    return s;
}

inline PreparedVolume prepare_volume(const std::filesystem::path& dataset_dir,
                                     const std::string& id, double hu_lo, double hu_hi) {
    VolumeSample s = load_volume(dataset_dir, id);
    PreparedVolume pv;
    pv.id = id;
    pv.image = normalize_hu(s, hu_lo, hu_hi);
    pv.label = std::move(s.label);
    return pv;
}

// Grid-tiled full-volume inference; overlapping tile probabilities are
// averaged, which keeps per-voxel channel sums at 1.
inline SoftmaxField stitched_inference(const Model& m, const TensorT<float>& image,
                                       int64_t patch_extent) {
    const int64_t div = int64_t(1) << m.config.depth;
    if (patch_extent % div != 0)
        throw config_error("inference patch extent " + std::to_string(patch_extent) +
                           " is not divisible by 2^depth = " + std::to_string(div) +
                           "; pick a multiple");
    for (int i = 0; i < 3; ++i)
        if (image.dim(i) < patch_extent)
            throw config_error("volume extent " + std::to_string(image.dim(i)) +
                               " is smaller than the patch extent " + std::to_string(patch_extent) +
                               "; shrink data.patch_extent");

    const int64_t D = image.dim(0), H = image.dim(1), W = image.dim(2);
    TensorT<double> acc({2, D, H, W});
    TensorT<double> cnt({D, H, W});
    TensorT<float> batch({1, 1, patch_extent, patch_extent, patch_extent});

    for (const PatchCoord& c : grid_patch_coords(image.shape, patch_extent)) {
        for (int64_t z = 0; z < patch_extent; ++z)
            for (int64_t y = 0; y < patch_extent; ++y)
                std::copy_n(image.data.data() + image.idx3(c.z + z, c.y + y, c.x), patch_extent,
                            batch.data.data() + (z * patch_extent + y) * patch_extent);
        const SoftmaxField f = forward(m, batch);
        const int64_t S = patch_extent * patch_extent * patch_extent;
        for (int64_t ch = 0; ch < 2; ++ch)
            for (int64_t z = 0; z < patch_extent; ++z)
                for (int64_t y = 0; y < patch_extent; ++y) {
                    const float* src = f.p.data.data() + ch * S + (z * patch_extent + y) * patch_extent;
                    double* dst = acc.data.data() +
                                  static_cast<size_t>(((ch * D + c.z + z) * H + c.y + y) * W + c.x);
                    for (int64_t x = 0; x < patch_extent; ++x) dst[x] += src[x];
                }
        for (int64_t z = 0; z < patch_extent; ++z)
            for (int64_t y = 0; y < patch_extent; ++y) {
                double* dst = cnt.data.data() + static_cast<size_t>(cnt.idx3(c.z + z, c.y + y, c.x));
                for (int64_t x = 0; x < patch_extent; ++x) dst[x] += 1.0;
            }
    }

    TensorT<float> p({1, 2, D, H, W});
    for (int64_t ch = 0; ch < 2; ++ch)
        for (int64_t i = 0; i < D * H * W; ++i)
            p.data[static_cast<size_t>(ch * D * H * W + i)] = static_cast<float>(
                acc.data[static_cast<size_t>(ch * D * H * W + i)] / cnt.data[static_cast<size_t>(i)]);
    return make_softmax_field(std::move(p));
}

struct VolumeEval {
    std::string id;
    ConfusionCounts counts;
    Metrics metrics;
    double loss_total = 0;
};

struct EvalReport {
    std::vector<VolumeEval> per_volume;
    Metrics mean;     // per-volume mean (primary aggregate)
    Metrics pooled;   // metrics over summed confusion counts
    double mean_loss = 0;
};

inline Metrics metrics_mean(const std::vector<VolumeEval>& rows) {
    Metrics m;
    if (rows.empty()) return m;
    for (const auto& r : rows) {
        m.dsc += r.metrics.dsc;
        m.f2 += r.metrics.f2;
        m.sensitivity += r.metrics.sensitivity;
        m.specificity += r.metrics.specificity;
        m.precision += r.metrics.precision;
    }
    const double n = static_cast<double>(rows.size());
    m.dsc /= n;
    m.f2 /= n;
    m.sensitivity /= n;
    m.specificity /= n;
    m.precision /= n;
    return m;
}

inline EvalReport evaluate_volumes(const Model& m, const std::vector<PreparedVolume>& volumes,
                                   int64_t patch_extent, const AdaptiveWeights& w,
                                   const TverskyParams& tversky) {
    EvalReport rep;
    ConfusionCounts pooled;
    for (const auto& vol : volumes) {
        VolumeEval row;
        row.id = vol.id;
        const SoftmaxField field = stitched_inference(m, vol.image, patch_extent);
        TensorT<uint8_t> truth;
        truth.shape = {1, 1, vol.label.dim(0), vol.label.dim(1), vol.label.dim(2)};
        truth.data = vol.label.data;
        row.counts = confusion(binarize(field), truth);
        row.metrics = metrics_from_confusion(row.counts);
        TensorT<float> gf;
        gf.shape = truth.shape;
        gf.data.assign(vol.label.data.begin(), vol.label.data.end());
        row.loss_total = total_loss(field, gf, w, tversky).l_total;
        pooled += row.counts;
        rep.mean_loss += row.loss_total;
        rep.per_volume.push_back(std::move(row));
    }
    if (!rep.per_volume.empty()) rep.mean_loss /= static_cast<double>(rep.per_volume.size());
    rep.mean = metrics_mean(rep.per_volume);
    rep.pooled = metrics_from_confusion(pooled);
    return rep;
}

// ---------------------------------------------------------------------------
// Checkpoint packing.
// ---------------------------------------------------------------------------

namespace detail {

inline Checkpoint pack_checkpoint(const std::string& config_text, int64_t epoch,
                                  const AdaptiveWeights& next_w, const LrSchedule& lr,
                                  double best_val_dsc, bool has_prev, double prev_lt,
                                  double prev_lb, const Rng& rng, const ParamStore<float>& params,
                                  const AdamState& adam) {
    Checkpoint ck;
    ck.config_text = config_text;
    ck.state["epoch"] = epoch;
    ck.state["w_tversky"] = next_w.w_tversky;
    ck.state["w_bce"] = next_w.w_bce;
    ck.state["w_epoch"] = next_w.epoch;
    ck.state["lr_current"] = lr.current_lr;
    ck.state["lr_initial"] = lr.initial_lr;
    ck.state["lr_decay_factor"] = lr.decay_factor;
    ck.state["lr_patience"] = lr.patience;
    ck.state["lr_best_val_loss"] = lr.best_val_loss;
    ck.state["lr_stale_epochs"] = lr.epochs_since_improvement;
    ck.state["lr_floor"] = lr.floor_lr;
    ck.state["best_val_dsc"] = best_val_dsc;
    ck.state["has_prev_losses"] = has_prev;
    ck.state["prev_l_tversky"] = prev_lt;
    ck.state["prev_l_bce"] = prev_lb;
    ck.state["adam_step"] = adam.step;
    ck.state["rng"] = rng.serialize();
    for (size_t i = 0; i < params.tensors.size(); ++i) ck.add(params.names[i], params.tensors[i]);
    for (size_t i = 0; i < params.tensors.size(); ++i) ck.add("adam.m/" + params.names[i], adam.m[i]);
    for (size_t i = 0; i < params.tensors.size(); ++i) ck.add("adam.v/" + params.names[i], adam.v[i]);
    return ck;
}

}  // namespace detail

// Rebuilds a model from the config echoed in a checkpoint and loads its
// parameters.
inline Model model_from_checkpoint(const Checkpoint& ck) {
    const ExperimentConfig ec = parse_experiment_config(ck.config_text, "<checkpoint config>", false);
    Model m = build_model<float>(ec.model);
    for (size_t i = 0; i < m.params.tensors.size(); ++i) {
        const TensorT<float>& stored = ck.tensor(m.params.names[i]);
        if (stored.shape != m.params.tensors[i].shape)
            throw data_error("checkpoint tensor " + m.params.names[i] + " has shape " +
                             shape_string(stored.shape) + ", model expects " +
                             shape_string(m.params.tensors[i].shape));
        m.params.tensors[i] = stored;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainResult {
    std::filesystem::path csv_path;
    std::filesystem::path best_path;
    std::filesystem::path last_path;
    int64_t epochs_run = 0;
    double best_val_dsc = 0;
};

inline TrainResult train_experiment(const LoadedConfig& lc,
                                    std::optional<std::filesystem::path> resume = std::nullopt,
                                    bool quiet = false) {
    const ExperimentConfig& ec = lc.config;
    const std::filesystem::path out_dir = ec.out_dir;
    std::filesystem::create_directories(out_dir);

    const DatasetSplit split = read_manifest(std::filesystem::path(ec.data.dataset_dir) / "manifest.json");
    if (split.train.empty()) throw config_error("dataset has an empty training split");
    if (split.val.empty()) throw config_error("dataset has an empty validation split");

    std::vector<PreparedVolume> train_vols, val_vols;
    for (const auto& id : split.train)
        train_vols.push_back(prepare_volume(ec.data.dataset_dir, id, ec.data.hu_window_lo, ec.data.hu_window_hi));
    for (const auto& id : split.val)
        val_vols.push_back(prepare_volume(ec.data.dataset_dir, id, ec.data.hu_window_lo, ec.data.hu_window_hi));

    Model model = build_model<float>(ec.model);
    AdamState adam = AdamState::zeros_like(model.params);
    LrSchedule lr;
    lr.initial_lr = lr.current_lr = ec.optim.initial_lr;
    lr.decay_factor = ec.optim.lr_decay_factor;
    lr.patience = ec.optim.lr_patience;
    lr.floor_lr = ec.optim.lr_floor;
    Rng rng(ec.seed);
    AdaptiveWeights weights =
        ec.loss_mode == LossMode::Tversky ? tversky_only_weights(0) : initial_weights();
    double best_val_dsc = -1.0;
    bool has_prev = false;
    double prev_lt = 0, prev_lb = 0;
    int64_t start_epoch = 0;

    if (resume) {
        const Checkpoint ck = load_checkpoint(*resume);
        Model restored = model_from_checkpoint(ck);
        if (restored.params.names != model.params.names)
            throw config_error("resume checkpoint was trained with a different model configuration");
        for (size_t i = 0; i < model.params.tensors.size(); ++i)
            if (restored.params.tensors[i].shape != model.params.tensors[i].shape)
                throw config_error("resume checkpoint parameter " + model.params.names[i] +
                                   " has shape " + shape_string(restored.params.tensors[i].shape) +
                                   ", the configured model expects " +
                                   shape_string(model.params.tensors[i].shape));
        model.params = std::move(restored.params);
        for (size_t i = 0; i < model.params.tensors.size(); ++i) {
            adam.m[i] = ck.tensor("adam.m/" + model.params.names[i]);
            adam.v[i] = ck.tensor("adam.v/" + model.params.names[i]);
        }
        adam.step = ck.state.at("adam_step").get<int64_t>();
        lr.current_lr = ck.state.at("lr_current").get<double>();
        lr.initial_lr = ck.state.at("lr_initial").get<double>();
        lr.decay_factor = ck.state.at("lr_decay_factor").get<double>();
        lr.patience = ck.state.at("lr_patience").get<int>();
        lr.best_val_loss = ck.state.at("lr_best_val_loss").get<double>();
        lr.epochs_since_improvement = ck.state.at("lr_stale_epochs").get<int>();
        lr.floor_lr = ck.state.at("lr_floor").get<double>();
        weights.w_tversky = ck.state.at("w_tversky").get<double>();
        weights.w_bce = ck.state.at("w_bce").get<double>();
        weights.epoch = ck.state.at("w_epoch").get<int64_t>();
        best_val_dsc = ck.state.at("best_val_dsc").get<double>();
        has_prev = ck.state.at("has_prev_losses").get<bool>();
        prev_lt = ck.state.at("prev_l_tversky").get<double>();
        prev_lb = ck.state.at("prev_l_bce").get<double>();
        rng.deserialize(ck.state.at("rng").get<std::string>());
        start_epoch = ck.state.at("epoch").get<int64_t>() + 1;
    } else {
        init_params(model, ec.seed);
    }

    TrainResult result;
    result.csv_path = out_dir / "train_log.csv";
    result.best_path = out_dir / "best.ckpt";
    result.last_path = out_dir / "last.ckpt";
    std::ofstream csv(result.csv_path, std::ios::trunc);
    if (!csv) throw data_error("cannot open " + result.csv_path.string() + " for writing");
    csv << kCsvHeader << "\n";
    csv.flush();

    const int64_t E = ec.data.patch_extent;

    for (int64_t epoch = start_epoch; epoch < ec.optim.epochs; ++epoch) {
        const double lr_used = lr.current_lr;

        std::vector<size_t> order(train_vols.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order.begin(), order.end());

        std::vector<TensorT<float>> pool_images;
        std::vector<TensorT<uint8_t>> pool_labels;
        for (size_t vi : order) {
            PatchSet ps = extract_patches(train_vols[vi].image, train_vols[vi].label, E,
                                          ec.data.patch_mode, ec.data.patches_per_volume, rng);
            for (size_t i = 0; i < ps.images.size(); ++i) {
                pool_images.push_back(std::move(ps.images[i]));
                pool_labels.push_back(std::move(ps.labels[i]));
            }
        }
        std::vector<size_t> pool_order(pool_images.size());
        for (size_t i = 0; i < pool_order.size(); ++i) pool_order[i] = i;
        rng.shuffle(pool_order.begin(), pool_order.end());

        double sum_lt = 0, sum_lb = 0;
        int64_t n_batches = 0;
        for (size_t at = 0; at < pool_order.size(); at += static_cast<size_t>(ec.optim.batch_size)) {
            const size_t n = std::min(static_cast<size_t>(ec.optim.batch_size), pool_order.size() - at);
            TensorT<float> batch({static_cast<int64_t>(n), 1, E, E, E});
            TensorT<float> gbatch({static_cast<int64_t>(n), 1, E, E, E});
            for (size_t b = 0; b < n; ++b) {
                const size_t pi = pool_order[at + b];
                std::copy_n(pool_images[pi].data.data(), pool_images[pi].data.size(),
                            batch.data.data() + b * pool_images[pi].data.size());
                for (size_t i = 0; i < pool_labels[pi].data.size(); ++i)
                    gbatch.data[b * pool_labels[pi].data.size() + i] =
                        static_cast<float>(pool_labels[pi].data[i]);
            }

            auto [field, trace] = forward_traced(model, batch);
            const LossReport rep = total_loss(field, gbatch, weights, ec.tversky);
            if (!std::isfinite(rep.l_total))
                throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(n_batches));
            sum_lt += rep.l_tversky;
            sum_lb += rep.l_bce;
            ++n_batches;

            // gradients are seeded at the logits node so the cross-entropy
            // term keeps its fused (p - t) form under softmax saturation
            const TensorT<float> lg = total_loss_logit_grad(field, gbatch, weights, ec.tversky);
            const std::vector<TensorT<float>> grads =
                graph_backward(model.graph, model.params, trace, lg, model.graph.find_tag("logits"));
            adam_step(model.params, grads, adam, lr_used);
        }
        pool_images.clear();
        pool_labels.clear();

        const double lt_mean = sum_lt / static_cast<double>(n_batches);
        const double lb_mean = sum_lb / static_cast<double>(n_batches);
        const double ltotal_mean = weights.w_tversky * lt_mean + weights.w_bce * lb_mean;

        const EvalReport val = evaluate_volumes(model, val_vols, E, weights, ec.tversky);
        lr_update(lr, val.mean_loss);

        csv << epoch << ',' << fmt_g9(lr_used) << ',' << fmt_g9(weights.w_tversky) << ','
            << fmt_g9(weights.w_bce) << ',' << fmt_g9(lt_mean) << ',' << fmt_g9(lb_mean) << ','
            << fmt_g9(ltotal_mean) << ',' << fmt_g9(val.mean.dsc) << ',' << fmt_g9(val.mean.f2)
            << ',' << fmt_g9(val.mean.sensitivity) << ',' << fmt_g9(val.mean.specificity) << ','
            << fmt_g9(val.mean.precision) << "\n";
        csv.flush();
        if (!csv) throw data_error("failed writing " + result.csv_path.string());
        if (!quiet)
            std::printf("epoch %3lld  lr %.2e  w_t %.3f  l_t %.4f  l_bce %.4f  val_dsc %.4f\n",
                        static_cast<long long>(epoch), lr_used, weights.w_tversky, lt_mean, lb_mean,
                        val.mean.dsc);

        prev_lt = lt_mean;
        prev_lb = lb_mean;
        has_prev = true;
        LossReport epoch_rep;
        epoch_rep.l_tversky = lt_mean;
        epoch_rep.l_bce = lb_mean;
        epoch_rep.weights = weights;
        weights = ec.loss_mode == LossMode::Tversky ? tversky_only_weights(epoch + 1)
                                                    : adaptive_weights(epoch_rep);

        const bool improved = val.mean.dsc > best_val_dsc;
        if (improved) best_val_dsc = val.mean.dsc;
        const Checkpoint ck = detail::pack_checkpoint(lc.text, epoch, weights, lr, best_val_dsc,
                                                      has_prev, prev_lt, prev_lb, rng, model.params,
                                                      adam);
        save_checkpoint(ck, result.last_path);
        if (improved) save_checkpoint(ck, result.best_path);
        result.epochs_run = epoch + 1;
    }
    result.best_val_dsc = best_val_dsc;
    return result;
}

}  // namespace voxseg
