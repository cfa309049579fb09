#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxseg/tensor.hpp"
#include "voxseg/volume_io.hpp"

// Versioned binary checkpoint: magic, format version, a JSON header carrying
// the config echo and scalar training state, named float32 tensor records,
// and a trailing FNV-1a 64 checksum. save(load(x)) is byte-identical.

namespace voxseg {

inline constexpr char kCheckpointMagic[8] = {'V', 'O', 'X', 'S', 'E', 'G', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    uint32_t version = kCheckpointVersion;
    std::string config_text;     // experiment config echo
    nlohmann::json state;        // trainer scalar state (epoch, rng, schedule, ...)
    std::vector<std::string> names;
    std::vector<TensorT<float>> tensors;

    void add(const std::string& name, const TensorT<float>& t) {
        names.push_back(name);
        tensors.push_back(t);
    }

    const TensorT<float>& tensor(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return tensors[i];
        throw data_error("checkpoint has no tensor named " + name);
    }

    bool has_tensor(const std::string& name) const {
        for (const auto& n : names)
            if (n == name) return true;
        return false;
    }
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 14695981039346656037ull) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

template <typename T>
void put(std::vector<char>& buf, const T& v) {
    const size_t at = buf.size();
    buf.resize(at + sizeof(T));
    std::memcpy(buf.data() + at, &v, sizeof(T));
}

inline void put_bytes(std::vector<char>& buf, const void* data, size_t n) {
    const size_t at = buf.size();
    buf.resize(at + n);
    std::memcpy(buf.data() + at, data, n);
}

template <typename T>
T take(const std::vector<char>& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw data_error("checkpoint: unexpected end of file");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::vector<char> buf;
    detail::put_bytes(buf, kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put<uint32_t>(buf, ck.version);

    nlohmann::json header;
    header["config"] = ck.config_text;
    header["state"] = ck.state;
    const std::string htext = header.dump();
    detail::put<uint64_t>(buf, htext.size());
    detail::put_bytes(buf, htext.data(), htext.size());

    detail::put<uint32_t>(buf, static_cast<uint32_t>(ck.tensors.size()));
    for (size_t i = 0; i < ck.tensors.size(); ++i) {
        const auto& name = ck.names[i];
        const auto& t = ck.tensors[i];
        detail::put<uint32_t>(buf, static_cast<uint32_t>(name.size()));
        detail::put_bytes(buf, name.data(), name.size());
        detail::put<uint32_t>(buf, static_cast<uint32_t>(t.rank()));
        for (int64_t e : t.shape) detail::put<uint64_t>(buf, static_cast<uint64_t>(e));
        detail::put_bytes(buf, t.data.data(), t.data.size() * sizeof(float));
    }

    detail::put<uint64_t>(buf, fnv1a64(buf.data(), buf.size()));
    detail::write_file_bytes(path, buf.data(), buf.size());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto buf = detail::read_file_bytes(path);
    if (buf.size() < sizeof(kCheckpointMagic) + sizeof(uint32_t) + sizeof(uint64_t))
        throw data_error("checkpoint " + path.string() + " is too short");
    if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw data_error("checkpoint " + path.string() + " has the wrong magic string");

    const size_t body = buf.size() - sizeof(uint64_t);
    uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + body, sizeof(uint64_t));
    if (fnv1a64(buf.data(), body) != stored)
        throw data_error("checkpoint " + path.string() + " fails its checksum (truncated or corrupted)");

    size_t off = sizeof(kCheckpointMagic);
    Checkpoint ck;
    ck.version = detail::take<uint32_t>(buf, off);
    if (ck.version != kCheckpointVersion)
        throw data_error("checkpoint " + path.string() + " has format version " +
                         std::to_string(ck.version) + ", expected " +
                         std::to_string(kCheckpointVersion));

    const uint64_t hlen = detail::take<uint64_t>(buf, off);
    if (off + hlen > body) throw data_error("checkpoint: header overruns file");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.begin() + static_cast<std::ptrdiff_t>(off),
                                       buf.begin() + static_cast<std::ptrdiff_t>(off + hlen));
    } catch (const nlohmann::json::exception& e) {
        throw data_error("checkpoint: malformed header: " + std::string(e.what()));
    }
    off += hlen;
    ck.config_text = header.at("config").get<std::string>();
    ck.state = header.at("state");

    const uint32_t count = detail::take<uint32_t>(buf, off);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t nlen = detail::take<uint32_t>(buf, off);
        if (off + nlen > body) throw data_error("checkpoint: tensor name overruns file");
        std::string name(buf.data() + off, nlen);
        off += nlen;
        const uint32_t rank = detail::take<uint32_t>(buf, off);
        if (rank == 0 || rank > 8) throw data_error("checkpoint: bad tensor rank for " + name);
        std::vector<int64_t> shape;
        int64_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            const int64_t e = static_cast<int64_t>(detail::take<uint64_t>(buf, off));
            if (e <= 0) throw data_error("checkpoint: bad extent for " + name);
            shape.push_back(e);
            numel *= e;
        }
        const size_t bytes = static_cast<size_t>(numel) * sizeof(float);
        if (off + bytes > body) throw data_error("checkpoint: tensor payload overruns file");
        TensorT<float> t;
        t.shape = std::move(shape);
        t.data.resize(static_cast<size_t>(numel));
        std::memcpy(t.data.data(), buf.data() + off, bytes);
        off += bytes;
        ck.names.push_back(std::move(name));
        ck.tensors.push_back(std::move(t));
    }
    if (off != body) throw data_error("checkpoint: trailing bytes before checksum");
    return ck;
}

}  // namespace voxseg
