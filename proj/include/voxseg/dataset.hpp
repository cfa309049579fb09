#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume_io.hpp"

namespace voxseg {

struct DatasetSplit {
    std::vector<std::string> train, val, test;

    std::vector<std::string> all() const {
        std::vector<std::string> out = train;
        out.insert(out.end(), val.begin(), val.end());
        out.insert(out.end(), test.begin(), test.end());
        return out;
    }

    const std::vector<std::string>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw std::invalid_argument("unknown split \"" + name + "\" (train|val|test)");
    }
};

// Deterministic shuffle then carve off test = round(0.2 n) and val =
// round(0.1 n), both rounded half up; the remainder trains. At n = 80 this
// produces 56/8/16.
inline DatasetSplit split_dataset(std::vector<std::string> ids, uint64_t seed) {
    const int64_t n = static_cast<int64_t>(ids.size());
    if (n < 3) throw std::invalid_argument("split_dataset: need at least 3 ids, got " + std::to_string(n));
    Rng rng(seed);
    rng.shuffle(ids.begin(), ids.end());
    const auto round_half_up = [](double x) { return static_cast<int64_t>(std::floor(x + 0.5)); };
    const int64_t n_test = round_half_up(0.2 * static_cast<double>(n));
    const int64_t n_val = round_half_up(0.1 * static_cast<double>(n));
    DatasetSplit s;
    s.test.assign(ids.begin(), ids.begin() + n_test);
    s.val.assign(ids.begin() + n_test, ids.begin() + n_test + n_val);
    s.train.assign(ids.begin() + n_test + n_val, ids.end());
    return s;
}

inline void write_manifest(const DatasetSplit& s, const std::filesystem::path& path) {
    nlohmann::json j;
    j["train"] = s.train;
    j["val"] = s.val;
    j["test"] = s.test;
    const std::string text = j.dump(2) + "\n";
    detail::write_file_bytes(path, text.data(), text.size());
}

inline DatasetSplit read_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file_bytes(path));
    } catch (const nlohmann::json::exception& e) {
        throw data_error("malformed manifest " + path.string() + ": " + e.what());
    }
    DatasetSplit s;
    for (const char* key : {"train", "val", "test"})
        if (!j.contains(key)) throw data_error("manifest " + path.string() + " missing \"" + std::string(key) + "\"");
    s.train = j["train"].get<std::vector<std::string>>();
    s.val = j["val"].get<std::vector<std::string>>();
    s.test = j["test"].get<std::vector<std::string>>();
    return s;
}

// ---------------------------------------------------------------------------
// Patch extraction.
// ---------------------------------------------------------------------------

enum class PatchMode { RandomBalanced, Grid };

struct PatchCoord {
    int64_t z = 0, y = 0, x = 0;
};

struct PatchSet {
    std::vector<TensorT<float>> images;   // (1, E, E, E) channel-less grids
    std::vector<TensorT<uint8_t>> labels;
    std::vector<PatchCoord> coords;
};

namespace detail {

// Tile starts covering [0, extent) with stride = patch; a final overlapping
// tile is appended whenever the extent is not an exact multiple.
inline std::vector<int64_t> tile_starts(int64_t extent, int64_t patch) {
    std::vector<int64_t> out;
    for (int64_t p = 0; p + patch <= extent; p += patch) out.push_back(p);
    if (out.empty() || out.back() + patch < extent) out.push_back(extent - patch);
    return out;
}

template <typename T>
TensorT<T> crop3(const TensorT<T>& vol, const PatchCoord& c, int64_t e) {
    TensorT<T> out({e, e, e});
    for (int64_t z = 0; z < e; ++z)
        for (int64_t y = 0; y < e; ++y)
            std::copy_n(vol.data.data() + vol.idx3(c.z + z, c.y + y, c.x), e,
                        out.data.data() + out.idx3(z, y, 0));
    return out;
}

}  // namespace detail

inline std::vector<PatchCoord> grid_patch_coords(const std::vector<int64_t>& dims, int64_t patch) {
    const auto zs = detail::tile_starts(dims[0], patch);
    const auto ys = detail::tile_starts(dims[1], patch);
    const auto xs = detail::tile_starts(dims[2], patch);
    std::vector<PatchCoord> out;
    for (int64_t z : zs)
        for (int64_t y : ys)
            for (int64_t x : xs) out.push_back({z, y, x});
    return out;
}

// Grid mode tiles the volume (with overlap at the far edges when needed).
// RandomBalanced draws `count` patches; at least half are centered on a
// foreground voxel whenever foreground exists, the rest are uniform. An
// all-background volume falls back to uniform sampling.
inline PatchSet extract_patches(const TensorT<float>& image, const TensorT<uint8_t>& label,
                                int64_t patch_extent, PatchMode mode, int64_t count, Rng& rng) {
    if (image.rank() != 3 || image.shape != label.shape)
        throw std::invalid_argument("extract_patches: image and label must share a (D, H, W) shape");
    for (int i = 0; i < 3; ++i)
        if (patch_extent > image.dim(i))
            throw std::invalid_argument("extract_patches: patch extent " +
                                        std::to_string(patch_extent) + " exceeds volume extent " +
                                        std::to_string(image.dim(i)));

    PatchSet out;
    if (mode == PatchMode::Grid) {
        out.coords = grid_patch_coords(image.shape, patch_extent);
    } else {
        std::vector<int64_t> fg;
        for (int64_t i = 0; i < label.numel(); ++i)
            if (label.data[static_cast<size_t>(i)]) fg.push_back(i);
        const int64_t want_fg = fg.empty() ? 0 : (count + 1) / 2;
        const int64_t H = image.dim(1), W = image.dim(2);
        for (int64_t i = 0; i < count; ++i) {
            PatchCoord c;
            if (i < want_fg) {
                const int64_t flat = fg[static_cast<size_t>(rng.index(static_cast<int64_t>(fg.size())))];
                const int64_t cz = flat / (H * W), cy = (flat / W) % H, cx = flat % W;
                c.z = std::clamp<int64_t>(cz - patch_extent / 2, 0, image.dim(0) - patch_extent);
                c.y = std::clamp<int64_t>(cy - patch_extent / 2, 0, image.dim(1) - patch_extent);
                c.x = std::clamp<int64_t>(cx - patch_extent / 2, 0, image.dim(2) - patch_extent);
            } else {
                c.z = rng.index(image.dim(0) - patch_extent + 1);
                c.y = rng.index(image.dim(1) - patch_extent + 1);
                c.x = rng.index(image.dim(2) - patch_extent + 1);
            }
            out.coords.push_back(c);
        }
    }
    out.images.reserve(out.coords.size());
    out.labels.reserve(out.coords.size());
    for (const auto& c : out.coords) {
        out.images.push_back(detail::crop3(image, c, patch_extent));
        out.labels.push_back(detail::crop3(label, c, patch_extent));
    }
    return out;
}

}  // namespace voxseg
