#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "voxseg/config.hpp"

using namespace voxseg;

namespace {

std::string base_config(const std::string& dataset_dir) {
    return "[model]\n"
           "depth = 2\n"
           "base_channels = 8\n"
           "downsample = strided_conv\n"
           "\n"
           "[loss]\n"
           "mode = adaptive_tverskyce\n"
           "alpha = 0.5\n"
           "beta = 0.5\n"
           "\n"
           "[optim]\n"
           "initial_lr = 0.005\n"
           "batch_size = 4\n"
           "epochs = 10\n"
           "\n"
           "[data]\n"
           "dataset_dir = " + dataset_dir + "\n"
           "patch_extent = 32\n"
           "\n"
           "[run]\n"
           "seed = 42\n"
           "out_dir = /tmp/voxseg_cfg_out\n";
}

}  // namespace

TEST_CASE("experiment config parses with defaults", "[config]") {
    const auto dir = std::filesystem::temp_directory_path() / "voxseg_cfg_data";
    std::filesystem::create_directories(dir);
    const auto ec = parse_experiment_config(base_config(dir.string()), "<test>");
    REQUIRE(ec.model.depth == 2);
    REQUIRE(ec.model.base_channels == 8);
    REQUIRE(ec.model.downsample_mode == Downsample::StridedConv);
    REQUIRE_FALSE(ec.model.dilated_bottleneck);
    REQUIRE(ec.loss_mode == LossMode::AdaptiveTverskyCE);
    REQUIRE(ec.tversky.alpha == 0.5);
    REQUIRE(ec.tversky.smooth == 1e-6);  // default
    REQUIRE(ec.optim.batch_size == 4);
    REQUIRE(ec.optim.lr_patience == 10);  // default
    REQUIRE(ec.data.patch_extent == 32);
    REQUIRE(ec.data.hu_window_lo == -100.0);
    REQUIRE(ec.seed == 42);
}

TEST_CASE("unknown keys and sections are errors", "[config]") {
    const auto dir = std::filesystem::temp_directory_path() / "voxseg_cfg_data";
    std::filesystem::create_directories(dir);

    SECTION("unknown key") {
        const auto text = base_config(dir.string()) + "typo_key = 3\n";
        REQUIRE_THROWS_WITH(parse_experiment_config(text, "<test>"),
                            Catch::Matchers::ContainsSubstring("unknown key run.typo_key"));
    }
    SECTION("unknown section") {
        const auto text = base_config(dir.string()) + "[extra]\nx = 1\n";
        REQUIRE_THROWS_WITH(parse_experiment_config(text, "<test>"),
                            Catch::Matchers::ContainsSubstring("unknown section [extra]"));
    }
    SECTION("missing mandatory seed") {
        std::string text = base_config(dir.string());
        const auto at = text.find("seed = 42\n");
        text.erase(at, 10);
        REQUIRE_THROWS_WITH(parse_experiment_config(text, "<test>"),
                            Catch::Matchers::ContainsSubstring("run.seed"));
    }
    SECTION("missing dataset directory") {
        const auto text = base_config("/nonexistent/voxseg/data");
        REQUIRE_THROWS_WITH(parse_experiment_config(text, "<test>"),
                            Catch::Matchers::ContainsSubstring("does not exist"));
    }
    SECTION("patch extent must match the model depth") {
        auto text = base_config(dir.string());
        const auto at = text.find("patch_extent = 32");
        text.replace(at, 17, "patch_extent = 30");
        REQUIRE_THROWS_WITH(parse_experiment_config(text, "<test>"),
                            Catch::Matchers::ContainsSubstring("divisible by 2^depth"));
    }
    SECTION("malformed numbers carry the key name") {
        auto text = base_config(dir.string());
        const auto at = text.find("alpha = 0.5");
        text.replace(at, 11, "alpha = abc");
        REQUIRE_THROWS_WITH(parse_experiment_config(text, "<test>"),
                            Catch::Matchers::ContainsSubstring("loss.alpha"));
    }
}

TEST_CASE("synth config parses and validates", "[config]") {
    const std::string good =
        "[synth]\n"
        "count = 12\n"
        "extent = 24\n"
        "fg_frac_lo = 0.005\n"
        "fg_frac_hi = 0.03\n"
        "seed = 9\n"
        "out_dir = /tmp/voxseg_synth_cfg\n";
    const auto run = parse_synth_config(good, "<test>");
    REQUIRE(run.synth.count == 12);
    REQUIRE(run.synth.extent == 24);
    REQUIRE(run.out_dir == "/tmp/voxseg_synth_cfg");

    SECTION("invalid fraction is rejected") {
        std::string bad = good;
        const auto at = bad.find("fg_frac_hi = 0.03");
        bad.replace(at, 17, "fg_frac_hi = 0.50");
        REQUIRE_THROWS_AS(parse_synth_config(bad, "<test>"), std::invalid_argument);
    }
}

TEST_CASE("config file syntax errors name the line", "[config]") {
    REQUIRE_THROWS_WITH(ConfigFile::parse("[model]\ndepth\n", "<t>"),
                        Catch::Matchers::ContainsSubstring("<t>:2"));
    REQUIRE_THROWS_WITH(ConfigFile::parse("depth = 1\n", "<t>"),
                        Catch::Matchers::ContainsSubstring("before any [section]"));
    REQUIRE_THROWS_WITH(ConfigFile::parse("[model]\ndepth = 1\ndepth = 2\n", "<t>"),
                        Catch::Matchers::ContainsSubstring("duplicate key"));
}
