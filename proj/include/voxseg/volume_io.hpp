#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxseg/tensor.hpp"

// Volume ingestion: the raw .vol/.seg/.json sidecar format (lossless round
// trip) and a minimal uncompressed NIfTI-1 reader. All multi-byte payloads
// are little-endian.

namespace voxseg {

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One CT volume: Hounsfield intensities, binary labels (1 = foreground) and
// per-axis voxel spacing in mm, ordered (z, y, x) like the DHW grid.
struct VolumeSample {
    TensorT<float> image;    // (D, H, W)
    TensorT<uint8_t> label;  // (D, H, W), values in {0, 1}
    std::array<double, 3> spacing_mm = {1.0, 1.0, 1.0};
    std::string id;
};

namespace detail {

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open " + path.string());
    f.seekg(0, std::ios::end);
    const std::streamoff n = f.tellg();
    f.seekg(0);
    std::vector<char> bytes(static_cast<size_t>(n));
    if (n > 0) f.read(bytes.data(), n);
    if (!f) throw data_error("short read on " + path.string());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const void* data, size_t n) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw data_error("cannot open " + path.string() + " for writing");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw data_error("short write on " + path.string());
}

template <typename T>
T read_le(const std::vector<char>& buf, size_t off) {
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Raw volume format: <id>.vol (flat little-endian f32, row-major D,H,W),
// <id>.seg (flat u8 labels), <id>.json sidecar with dims, spacing and the
// .vol payload dtype.
// ---------------------------------------------------------------------------

inline void write_raw_volume(const VolumeSample& s, const std::filesystem::path& dir) {
    if (s.image.shape != s.label.shape || s.image.rank() != 3)
        throw data_error("write_raw_volume: image/label must share a (D, H, W) shape for " + s.id);
    std::filesystem::create_directories(dir);
    nlohmann::json side;
    side["dims"] = {s.image.dim(0), s.image.dim(1), s.image.dim(2)};
    side["spacing_mm"] = {s.spacing_mm[0], s.spacing_mm[1], s.spacing_mm[2]};
    side["dtype"] = "f32";
    const std::string text = side.dump(2) + "\n";
    detail::write_file_bytes(dir / (s.id + ".json"), text.data(), text.size());
    detail::write_file_bytes(dir / (s.id + ".vol"), s.image.data.data(),
                             s.image.data.size() * sizeof(float));
    detail::write_file_bytes(dir / (s.id + ".seg"), s.label.data.data(), s.label.data.size());
}

// Accepts the sidecar path, any of the three component paths, or the
// extension-less stem.
inline VolumeSample read_raw_volume(const std::filesystem::path& path) {
    std::filesystem::path stem = path;
    const std::string ext = stem.extension().string();
    if (ext == ".vol" || ext == ".seg" || ext == ".json") stem.replace_extension();
    const std::string id = stem.filename().string();
    const std::filesystem::path side_path = stem.string() + ".json";

    nlohmann::json side;
    try {
        side = nlohmann::json::parse(detail::read_file_bytes(side_path));
    } catch (const nlohmann::json::exception& e) {
        throw data_error("malformed sidecar " + side_path.string() + ": " + e.what());
    }
    if (!side.contains("dims") || !side.contains("spacing_mm") || !side.contains("dtype"))
        throw data_error("malformed sidecar " + side_path.string() +
                         ": needs dims, spacing_mm and dtype");
    const auto dims = side["dims"].get<std::vector<int64_t>>();
    const auto spacing = side["spacing_mm"].get<std::vector<double>>();
    const std::string dtype = side["dtype"].get<std::string>();
    if (dims.size() != 3 || spacing.size() != 3)
        throw data_error("malformed sidecar " + side_path.string() + ": dims/spacing_mm must have 3 entries");
    for (int64_t d : dims)
        if (d <= 0) throw data_error("malformed sidecar " + side_path.string() + ": non-positive dim");
    for (double sp : spacing)
        if (sp <= 0) throw data_error("malformed sidecar " + side_path.string() + ": non-positive spacing");
    if (dtype != "f32" && dtype != "u8")
        throw data_error("unknown dtype \"" + dtype + "\" in " + side_path.string());

    const int64_t nvox = dims[0] * dims[1] * dims[2];
    VolumeSample s;
    s.id = id;
    s.spacing_mm = {spacing[0], spacing[1], spacing[2]};

    const auto vol = detail::read_file_bytes(stem.string() + ".vol");
    const size_t expect_vol = static_cast<size_t>(nvox) * (dtype == "f32" ? 4 : 1);
    if (vol.size() != expect_vol)
        throw data_error("volume payload size mismatch for " + id + ": expected " +
                         std::to_string(expect_vol) + " bytes, got " + std::to_string(vol.size()));
    s.image = TensorT<float>({dims[0], dims[1], dims[2]});
    if (dtype == "f32") {
        std::memcpy(s.image.data.data(), vol.data(), vol.size());
    } else {
        for (int64_t i = 0; i < nvox; ++i)
            s.image.data[static_cast<size_t>(i)] =
                static_cast<float>(static_cast<uint8_t>(vol[static_cast<size_t>(i)]));
    }

    const auto seg = detail::read_file_bytes(stem.string() + ".seg");
    if (seg.size() != static_cast<size_t>(nvox))
        throw data_error("label payload size mismatch for " + id + ": expected " +
                         std::to_string(nvox) + " bytes, got " + std::to_string(seg.size()));
    s.label = TensorT<uint8_t>({dims[0], dims[1], dims[2]});
    for (int64_t i = 0; i < nvox; ++i) {
        const uint8_t v = static_cast<uint8_t>(seg[static_cast<size_t>(i)]);
        if (v > 1)
            throw data_error("label for " + id + " contains value " + std::to_string(int(v)) +
                             "; labels must be binary");
        s.label.data[static_cast<size_t>(i)] = v;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Minimal NIfTI-1 reader: single uncompressed .nii, 348-byte header, magic
// "n+1", datatypes u8 (2), i16 (4), f32 (16); scl_slope/scl_inter applied
// when the slope is nonzero.
// ---------------------------------------------------------------------------

struct NiftiVolume {
    TensorT<float> grid;  // (D, H, W) = (nz, ny, nx); x remains the fastest axis
    std::array<double, 3> spacing_mm = {1.0, 1.0, 1.0};
};

inline NiftiVolume read_nifti(const std::filesystem::path& path) {
    const auto buf = detail::read_file_bytes(path);
    if (buf.size() >= 2 && static_cast<uint8_t>(buf[0]) == 0x1f &&
        static_cast<uint8_t>(buf[1]) == 0x8b)
        throw data_error(path.string() +
                         " is gzip-compressed; decompress externally and retry with the .nii file");
    if (buf.size() < 348) throw data_error(path.string() + ": shorter than the 348-byte header");
    if (detail::read_le<int32_t>(buf, 0) != 348)
        throw data_error(path.string() + ": header field sizeof_hdr is not 348 (byte-swapped or not NIfTI-1)");
    const char* magic = buf.data() + 344;
    if (!(magic[0] == 'n' && magic[1] == '+' && magic[2] == '1' && magic[3] == '\0'))
        throw data_error(path.string() + ": wrong magic, expected \"n+1\" single-file NIfTI-1");

    int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = detail::read_le<int16_t>(buf, 40 + 2 * static_cast<size_t>(i));
    if (dim[0] < 3 || dim[0] > 7)
        throw data_error(path.string() + ": need a 3-D volume, header declares " +
                         std::to_string(dim[0]) + " dimensions");
    for (int i = 4; i <= dim[0]; ++i)
        if (dim[i] > 1)
            throw data_error(path.string() + ": non-singleton dimension " + std::to_string(i) +
                             " (extent " + std::to_string(dim[i]) + ") is unsupported");
    const int64_t nx = dim[1], ny = dim[2], nz = dim[3];
    if (nx <= 0 || ny <= 0 || nz <= 0) throw data_error(path.string() + ": non-positive extent");

    const int16_t datatype = detail::read_le<int16_t>(buf, 70);
    int bytes_per = 0;
    switch (datatype) {
        case 2: bytes_per = 1; break;   // unsigned char
        case 4: bytes_per = 2; break;   // signed short
        case 16: bytes_per = 4; break;  // float32
        default:
            throw data_error(path.string() + ": unsupported datatype code " +
                             std::to_string(datatype) + " (supported: 2, 4, 16)");
    }

    float pixdim[4];
    for (int i = 0; i < 4; ++i)
        pixdim[i] = detail::read_le<float>(buf, 76 + 4 * static_cast<size_t>(i));
    const float vox_offset = detail::read_le<float>(buf, 108);
    const float scl_slope = detail::read_le<float>(buf, 112);
    const float scl_inter = detail::read_le<float>(buf, 116);
    if (vox_offset < 348.0f || static_cast<size_t>(vox_offset) > buf.size())
        throw data_error(path.string() + ": bad vox_offset " + std::to_string(vox_offset));

    const int64_t nvox = nx * ny * nz;
    const size_t need = static_cast<size_t>(nvox) * static_cast<size_t>(bytes_per);
    const size_t have = buf.size() - static_cast<size_t>(vox_offset);
    if (have < need)
        throw data_error(path.string() + ": truncated payload, expected " + std::to_string(need) +
                         " bytes after vox_offset, got " + std::to_string(have));

    NiftiVolume out;
    out.grid = TensorT<float>({nz, ny, nx});
    const size_t base = static_cast<size_t>(vox_offset);
    for (int64_t i = 0; i < nvox; ++i) {
        float v = 0;
        switch (datatype) {
            case 2: v = static_cast<float>(detail::read_le<uint8_t>(buf, base + static_cast<size_t>(i))); break;
            case 4: v = static_cast<float>(detail::read_le<int16_t>(buf, base + 2 * static_cast<size_t>(i))); break;
            case 16: v = detail::read_le<float>(buf, base + 4 * static_cast<size_t>(i)); break;
        }
        if (scl_slope != 0.0f) v = scl_slope * v + scl_inter;
        out.grid.data[static_cast<size_t>(i)] = v;  // x fastest in both layouts
    }
    out.spacing_mm = {pixdim[3] > 0 ? pixdim[3] : 1.0, pixdim[2] > 0 ? pixdim[2] : 1.0,
                      pixdim[1] > 0 ? pixdim[1] : 1.0};
    return out;
}

// ---------------------------------------------------------------------------
// Hounsfield windowing: clamp to [lo, hi], then map affinely onto [0, 1].
// ---------------------------------------------------------------------------

inline constexpr double kDefaultHuWindowLo = -100.0;  // abdominal soft tissue
inline constexpr double kDefaultHuWindowHi = 240.0;

inline TensorT<float> normalize_hu(const VolumeSample& s, double window_lo = kDefaultHuWindowLo,
                                   double window_hi = kDefaultHuWindowHi) {
    if (!(window_lo < window_hi))
        throw std::invalid_argument("normalize_hu: window_lo must be below window_hi");
    TensorT<float> out;
    out.shape = s.image.shape;
    out.data.resize(s.image.data.size());
    const float lo = static_cast<float>(window_lo);
    const float inv = static_cast<float>(1.0 / (window_hi - window_lo));
    for (size_t i = 0; i < out.data.size(); ++i) {
        const float v = (s.image.data[i] - lo) * inv;
        out.data[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
    return out;
}

}  // namespace voxseg
