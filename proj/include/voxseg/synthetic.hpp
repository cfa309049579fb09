#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/dataset.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/volume_io.hpp"

// Desk-scale stand-in data: noisy soft-tissue background with a handful of
// soft-edged bright ellipsoids; labels are the ellipsoid supports, so the
// foreground stays a small fraction of the volume.

namespace voxseg {

struct SynthConfig {
    int64_t count = 30;         // total volumes; the manifest applies the split rule
    int64_t extent = 32;        // cubic volume edge
    double fg_frac_lo = 0.005;  // admissible foreground-fraction range
    double fg_frac_hi = 0.03;
    int64_t ellipsoids_min = 1;
    int64_t ellipsoids_max = 3;
    double background_hu = 30.0;
    double contrast_hu = 160.0;  // foreground elevation over background
    double noise_hu = 15.0;      // additive Gaussian sigma
    uint64_t seed = 7;

    void validate() const {
        if (count < 3) throw std::invalid_argument("SynthConfig: count must be >= 3");
        if (extent < 8) throw std::invalid_argument("SynthConfig: extent must be >= 8");
        if (!(fg_frac_lo > 0 && fg_frac_lo < fg_frac_hi && fg_frac_hi <= 0.05))
            throw std::invalid_argument(
                "SynthConfig: foreground fraction range must satisfy 0 < lo < hi <= 0.05");
        if (ellipsoids_min < 1 || ellipsoids_max < ellipsoids_min)
            throw std::invalid_argument("SynthConfig: need 1 <= ellipsoids_min <= ellipsoids_max");
        if (contrast_hu <= 0 || noise_hu < 0)
            throw std::invalid_argument("SynthConfig: contrast must be positive, noise non-negative");
    }
};

namespace detail {

constexpr double kMinEllipsoidVoxels = 12.0;  // below this a blob degenerates to noise
constexpr int64_t kEdgeMargin = 2;

// Checks that the requested fraction range is realizable with the given
// ellipsoid counts inside the extent.
inline void check_feasible(const SynthConfig& c) {
    const double v = static_cast<double>(c.extent) * c.extent * c.extent;
    const double min_blob = c.fg_frac_lo * v / static_cast<double>(c.ellipsoids_max);
    if (min_blob < kMinEllipsoidVoxels)
        throw std::invalid_argument("gen_synthetic: fraction " + std::to_string(c.fg_frac_lo) +
                                    " over " + std::to_string(c.ellipsoids_max) +
                                    " ellipsoids yields blobs under " +
                                    std::to_string(static_cast<int64_t>(kMinEllipsoidVoxels)) +
                                    " voxels; raise the fraction or lower the count");
    const double max_r = static_cast<double>(c.extent) / 2.0 - kEdgeMargin;
    const double need_r =
        std::cbrt(3.0 * c.fg_frac_hi * v / (4.0 * M_PI * static_cast<double>(c.ellipsoids_min)));
    if (need_r > max_r)
        throw std::invalid_argument(
            "gen_synthetic: fraction " + std::to_string(c.fg_frac_hi) + " needs radius " +
            std::to_string(need_r) + " which does not fit extent " + std::to_string(c.extent));
}

struct Ellipsoid {
    double cz, cy, cx;
    double rz, ry, rx;
};

}  // namespace detail

// Deterministic in the seed: regenerating with the same config reproduces the
// dataset byte for byte.
inline VolumeSample make_synthetic_volume(const SynthConfig& cfg, const std::string& id, Rng& rng) {
    const int64_t e = cfg.extent;
    const double total = static_cast<double>(e) * e * e;

    VolumeSample s;
    s.id = id;
    s.spacing_mm = {2.0, 1.0, 1.0};
    s.image = TensorT<float>({e, e, e});
    s.label = TensorT<uint8_t>({e, e, e});

    for (int attempt = 0; attempt < 32; ++attempt) {
        std::fill(s.label.data.begin(), s.label.data.end(), uint8_t(0));
        std::vector<float> fg_weight(static_cast<size_t>(e * e * e), 0.0f);

        const double width = cfg.fg_frac_hi - cfg.fg_frac_lo;
        const double target = rng.uniform(cfg.fg_frac_lo + 0.15 * width, cfg.fg_frac_hi - 0.15 * width);
        const int64_t k = cfg.ellipsoids_min + rng.index(cfg.ellipsoids_max - cfg.ellipsoids_min + 1);

        for (int64_t b = 0; b < k; ++b) {
            const double blob_vox = target * total / static_cast<double>(k);
            const double r0 = std::cbrt(3.0 * blob_vox / (4.0 * M_PI));
            detail::Ellipsoid el;
            const double az = std::exp(rng.uniform(-0.3, 0.3));
            const double ay = std::exp(rng.uniform(-0.3, 0.3));
            el.rz = r0 * az;
            el.ry = r0 * ay;
            el.rx = r0 / (az * ay);  // keep the product, hence the volume
            const auto center = [&](double r) {
                const double lo = r + detail::kEdgeMargin;
                const double hi = static_cast<double>(e) - r - detail::kEdgeMargin;
                return hi > lo ? rng.uniform(lo, hi) : static_cast<double>(e) / 2.0;
            };
            el.cz = center(el.rz);
            el.cy = center(el.ry);
            el.cx = center(el.rx);

            const int64_t z0 = std::max<int64_t>(0, static_cast<int64_t>(el.cz - el.rz - 2));
            const int64_t z1 = std::min<int64_t>(e - 1, static_cast<int64_t>(el.cz + el.rz + 2));
            const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(el.cy - el.ry - 2));
            const int64_t y1 = std::min<int64_t>(e - 1, static_cast<int64_t>(el.cy + el.ry + 2));
            const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(el.cx - el.rx - 2));
            const int64_t x1 = std::min<int64_t>(e - 1, static_cast<int64_t>(el.cx + el.rx + 2));
            for (int64_t z = z0; z <= z1; ++z)
                for (int64_t y = y0; y <= y1; ++y)
                    for (int64_t x = x0; x <= x1; ++x) {
                        const double dz = (static_cast<double>(z) - el.cz) / el.rz;
                        const double dy = (static_cast<double>(y) - el.cy) / el.ry;
                        const double dx = (static_cast<double>(x) - el.cx) / el.rx;
                        const double r = std::sqrt(dz * dz + dy * dy + dx * dx);
                        // sigmoid edge centered on the label boundary r = 1
                        const float w = static_cast<float>(1.0 / (1.0 + std::exp((r - 1.0) / 0.08)));
                        const size_t i = static_cast<size_t>(s.label.idx3(z, y, x));
                        fg_weight[i] = std::max(fg_weight[i], w);
                        if (r <= 1.0) s.label.data[i] = 1;
                    }
        }

        int64_t fg = 0;
        for (uint8_t v : s.label.data) fg += v;
        const double frac = static_cast<double>(fg) / total;
        if (frac < cfg.fg_frac_lo || frac > cfg.fg_frac_hi) continue;  // redraw

        for (size_t i = 0; i < s.image.data.size(); ++i)
            s.image.data[i] = static_cast<float>(cfg.background_hu +
                                                 cfg.contrast_hu * fg_weight[i] +
                                                 cfg.noise_hu * rng.gaussian());
        return s;
    }
    throw std::runtime_error("gen_synthetic: could not hit the foreground-fraction range for " + id +
                             " after 32 draws");
}

// Writes <id>.vol/.seg/.json per volume plus manifest.json assigning ids to
// train/val/test by the split rule. Nothing is written until the config
// passes the feasibility check.
inline DatasetSplit gen_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    detail::check_feasible(cfg);
    std::filesystem::create_directories(out_dir);

    Rng rng(cfg.seed);
    std::vector<std::string> ids;
    for (int64_t i = 0; i < cfg.count; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "vol%03d", static_cast<int>(i));
        ids.emplace_back(buf);
    }
    for (const auto& id : ids) write_raw_volume(make_synthetic_volume(cfg, id, rng), out_dir);
    const DatasetSplit split = split_dataset(ids, cfg.seed);
    write_manifest(split, out_dir / "manifest.json");
    return split;
}

}  // namespace voxseg
