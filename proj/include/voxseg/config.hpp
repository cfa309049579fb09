#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/dataset.hpp"
#include "voxseg/losses.hpp"
#include "voxseg/synthetic.hpp"
#include "voxseg/unet3d.hpp"
#include "voxseg/volume_io.hpp"

// Flat "key = value" config files with [model]/[loss]/[optim]/[data]/[run]
// sections (and [synth] for dataset generation). Unknown sections or keys are
// errors, as are missing required keys.

namespace voxseg {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

class ConfigFile {
public:
    static ConfigFile parse(const std::string& text, const std::string& origin = "<config>") {
        ConfigFile cf;
        cf.origin_ = origin;
        std::string section;
        size_t lineno = 0, pos = 0;
        while (pos <= text.size()) {
            const size_t eol = text.find('\n', pos);
            std::string line = detail::trim(
                text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos));
            pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
            ++lineno;
            if (line.empty() || line[0] == '#' || line[0] == ';') continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw config_error(origin + ":" + std::to_string(lineno) + ": unterminated section header");
                section = detail::trim(line.substr(1, line.size() - 2));
                cf.values_[section];
                continue;
            }
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error(origin + ":" + std::to_string(lineno) + ": expected key = value, got \"" + line + "\"");
            if (section.empty())
                throw config_error(origin + ":" + std::to_string(lineno) + ": key before any [section]");
            const std::string key = detail::trim(line.substr(0, eq));
            if (key.empty())
                throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
            if (cf.values_[section].count(key))
                throw config_error(origin + ": duplicate key " + section + "." + key);
            cf.values_[section][key] = detail::trim(line.substr(eq + 1));
        }
        return cf;
    }

    bool has(const std::string& section, const std::string& key) const {
        auto s = values_.find(section);
        return s != values_.end() && s->second.count(key) > 0;
    }

    std::string get(const std::string& section, const std::string& key) {
        consumed_[section].insert(key);
        auto s = values_.find(section);
        if (s == values_.end() || !s->second.count(key))
            throw config_error(origin_ + ": missing required key " + section + "." + key);
        return s->second.at(key);
    }

    std::string get_or(const std::string& section, const std::string& key, const std::string& dflt) {
        consumed_[section].insert(key);
        auto s = values_.find(section);
        if (s == values_.end() || !s->second.count(key)) return dflt;
        return s->second.at(key);
    }

    int64_t get_int(const std::string& section, const std::string& key, int64_t dflt) {
        return parse_int(section, key, get_or(section, key, std::to_string(dflt)));
    }
    int64_t get_int(const std::string& section, const std::string& key) {
        return parse_int(section, key, get(section, key));
    }
    double get_double(const std::string& section, const std::string& key, double dflt) {
        if (!has(section, key)) {
            consumed_[section].insert(key);
            return dflt;
        }
        return parse_double(section, key, get(section, key));
    }
    bool get_bool(const std::string& section, const std::string& key, bool dflt) {
        const std::string v = get_or(section, key, dflt ? "true" : "false");
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw config_error(origin_ + ": " + section + "." + key + " must be a boolean, got \"" + v + "\"");
    }
    std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                  const std::vector<int>& dflt) {
        if (!has(section, key)) {
            consumed_[section].insert(key);
            return dflt;
        }
        const std::string v = get(section, key);
        std::vector<int> out;
        size_t pos = 0;
        while (pos < v.size()) {
            size_t comma = v.find(',', pos);
            if (comma == std::string::npos) comma = v.size();
            out.push_back(static_cast<int>(parse_int(section, key, detail::trim(v.substr(pos, comma - pos)))));
            pos = comma + 1;
        }
        if (out.empty())
            throw config_error(origin_ + ": " + section + "." + key + " must list at least one integer");
        return out;
    }

    // After typed extraction, every present key must have been consumed.
    void reject_unknown(const std::set<std::string>& known_sections) const {
        for (const auto& [section, keys] : values_) {
            if (!known_sections.count(section))
                throw config_error(origin_ + ": unknown section [" + section + "]");
            auto c = consumed_.find(section);
            for (const auto& [key, value] : keys)
                if (c == consumed_.end() || !c->second.count(key))
                    throw config_error(origin_ + ": unknown key " + section + "." + key);
        }
    }

private:
    int64_t parse_int(const std::string& section, const std::string& key, const std::string& v) {
        int64_t out = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || p != v.data() + v.size())
            throw config_error(origin_ + ": " + section + "." + key + " must be an integer, got \"" + v + "\"");
        return out;
    }
    double parse_double(const std::string& section, const std::string& key, const std::string& v) {
        try {
            size_t used = 0;
            const double out = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw config_error(origin_ + ": " + section + "." + key + " must be a number, got \"" + v + "\"");
        }
    }

    std::string origin_;
    std::map<std::string, std::map<std::string, std::string>> values_;
    std::map<std::string, std::set<std::string>> consumed_;
};

// ---------------------------------------------------------------------------
// Experiment configuration.
// ---------------------------------------------------------------------------

enum class LossMode { Tversky, AdaptiveTverskyCE };

struct OptimSettings {
    double initial_lr = 0.005;
    int64_t batch_size = 10;
    int64_t epochs = 150;
    double lr_decay_factor = 0.5;
    int lr_patience = 10;
    double lr_floor = 1e-5;
};

struct DataSettings {
    std::string dataset_dir;
    int64_t patch_extent = 32;
    int64_t patches_per_volume = 1;
    PatchMode patch_mode = PatchMode::RandomBalanced;
    double hu_window_lo = kDefaultHuWindowLo;
    double hu_window_hi = kDefaultHuWindowHi;
};

struct ExperimentConfig {
    ModelConfig model;
    LossMode loss_mode = LossMode::AdaptiveTverskyCE;
    TverskyParams tversky = TverskyParams::recall_weighted();
    OptimSettings optim;
    DataSettings data;
    uint64_t seed = 0;
    std::string out_dir;
};

struct LoadedConfig {
    ExperimentConfig config;
    std::string text;  // original file contents, echoed into checkpoints
};

inline ExperimentConfig parse_experiment_config(const std::string& text, const std::string& origin,
                                                bool check_paths = true) {
    ConfigFile cf = ConfigFile::parse(text, origin);
    ExperimentConfig ec;

    ec.model.depth = static_cast<int>(cf.get_int("model", "depth", ec.model.depth));
    ec.model.base_channels = static_cast<int>(cf.get_int("model", "base_channels", ec.model.base_channels));
    ec.model.in_channels = static_cast<int>(cf.get_int("model", "in_channels", ec.model.in_channels));
    ec.model.out_classes = static_cast<int>(cf.get_int("model", "out_classes", ec.model.out_classes));
    const std::string down = cf.get_or("model", "downsample", "strided_conv");
    if (down == "strided_conv") ec.model.downsample_mode = Downsample::StridedConv;
    else if (down == "max_pool") ec.model.downsample_mode = Downsample::MaxPool;
    else throw config_error(origin + ": model.downsample must be strided_conv or max_pool");
    ec.model.dilated_bottleneck = cf.get_bool("model", "dilated_bottleneck", false);
    ec.model.bottleneck_dilations = cf.get_int_list("model", "bottleneck_dilations", {1, 2, 4});
    ec.model.validate();

    const std::string mode = cf.get_or("loss", "mode", "adaptive_tverskyce");
    if (mode == "tversky") ec.loss_mode = LossMode::Tversky;
    else if (mode == "adaptive_tverskyce") ec.loss_mode = LossMode::AdaptiveTverskyCE;
    else throw config_error(origin + ": loss.mode must be tversky or adaptive_tverskyce");
    ec.tversky.alpha = cf.get_double("loss", "alpha", ec.tversky.alpha);
    ec.tversky.beta = cf.get_double("loss", "beta", ec.tversky.beta);
    ec.tversky.smooth = cf.get_double("loss", "smooth", ec.tversky.smooth);
    ec.tversky.validate();

    ec.optim.initial_lr = cf.get_double("optim", "initial_lr", ec.optim.initial_lr);
    ec.optim.batch_size = cf.get_int("optim", "batch_size", ec.optim.batch_size);
    ec.optim.epochs = cf.get_int("optim", "epochs", ec.optim.epochs);
    ec.optim.lr_decay_factor = cf.get_double("optim", "lr_decay_factor", ec.optim.lr_decay_factor);
    ec.optim.lr_patience = static_cast<int>(cf.get_int("optim", "lr_patience", ec.optim.lr_patience));
    ec.optim.lr_floor = cf.get_double("optim", "lr_floor", ec.optim.lr_floor);
    if (ec.optim.initial_lr <= 0 || ec.optim.batch_size < 1 || ec.optim.epochs < 1)
        throw config_error(origin + ": optim values out of range");

    ec.data.dataset_dir = cf.get("data", "dataset_dir");
    ec.data.patch_extent = cf.get_int("data", "patch_extent", ec.data.patch_extent);
    ec.data.patches_per_volume = cf.get_int("data", "patches_per_volume", ec.data.patches_per_volume);
    const std::string pm = cf.get_or("data", "patch_mode", "random_balanced");
    if (pm == "random_balanced") ec.data.patch_mode = PatchMode::RandomBalanced;
    else if (pm == "grid") ec.data.patch_mode = PatchMode::Grid;
    else throw config_error(origin + ": data.patch_mode must be random_balanced or grid");
    ec.data.hu_window_lo = cf.get_double("data", "hu_window_lo", ec.data.hu_window_lo);
    ec.data.hu_window_hi = cf.get_double("data", "hu_window_hi", ec.data.hu_window_hi);
    if (!(ec.data.hu_window_lo < ec.data.hu_window_hi))
        throw config_error(origin + ": data.hu_window_lo must be below data.hu_window_hi");

    ec.seed = static_cast<uint64_t>(cf.get_int("run", "seed"));
    ec.out_dir = cf.get("run", "out_dir");

    cf.reject_unknown({"model", "loss", "optim", "data", "run"});

    const int64_t div = int64_t(1) << ec.model.depth;
    if (ec.data.patch_extent % div != 0)
        throw config_error(origin + ": data.patch_extent " + std::to_string(ec.data.patch_extent) +
                           " must be divisible by 2^depth = " + std::to_string(div));
    if (check_paths && !std::filesystem::exists(ec.data.dataset_dir))
        throw config_error(origin + ": data.dataset_dir \"" + ec.data.dataset_dir + "\" does not exist");
    return ec;
}

inline LoadedConfig load_experiment_config(const std::filesystem::path& path, bool check_paths = true) {
    std::string text;
    {
        const auto bytes = detail::read_file_bytes(path);
        text.assign(bytes.begin(), bytes.end());
    }
    return LoadedConfig{parse_experiment_config(text, path.string(), check_paths), text};
}

// ---------------------------------------------------------------------------
// Synthetic dataset configuration: a [synth] section plus out_dir.
// ---------------------------------------------------------------------------

struct SynthRun {
    SynthConfig synth;
    std::string out_dir;
};

inline SynthRun parse_synth_config(const std::string& text, const std::string& origin) {
    ConfigFile cf = ConfigFile::parse(text, origin);
    SynthRun r;
    r.synth.count = cf.get_int("synth", "count", r.synth.count);
    r.synth.extent = cf.get_int("synth", "extent", r.synth.extent);
    r.synth.fg_frac_lo = cf.get_double("synth", "fg_frac_lo", r.synth.fg_frac_lo);
    r.synth.fg_frac_hi = cf.get_double("synth", "fg_frac_hi", r.synth.fg_frac_hi);
    r.synth.ellipsoids_min = cf.get_int("synth", "ellipsoids_min", r.synth.ellipsoids_min);
    r.synth.ellipsoids_max = cf.get_int("synth", "ellipsoids_max", r.synth.ellipsoids_max);
    r.synth.background_hu = cf.get_double("synth", "background_hu", r.synth.background_hu);
    r.synth.contrast_hu = cf.get_double("synth", "contrast_hu", r.synth.contrast_hu);
    r.synth.noise_hu = cf.get_double("synth", "noise_hu", r.synth.noise_hu);
    r.synth.seed = static_cast<uint64_t>(cf.get_int("synth", "seed"));
    r.out_dir = cf.get("synth", "out_dir");
    cf.reject_unknown({"synth"});
    r.synth.validate();
    return r;
}

inline SynthRun load_synth_config(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    return parse_synth_config(std::string(bytes.begin(), bytes.end()), path.string());
}

}  // namespace voxseg
