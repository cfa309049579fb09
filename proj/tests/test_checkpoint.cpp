#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "voxseg/checkpoint.hpp"
#include "voxseg/rng.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint ck;
    ck.config_text = "[run]\nseed = 1\nout_dir = /tmp/x\n";
    ck.state["epoch"] = 7;
    ck.state["lr_current"] = 0.00125;
    ck.state["best_val_dsc"] = 0.8731239182312;
    Rng rng(99);
    rng.gaussian();  // advance so the state is non-trivial
    ck.state["rng"] = rng.serialize();
    TensorT<float> w({2, 1, 3, 3, 3});
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    ck.add("enc0.conv1.w", w);
    ck.add("enc0.conv1.b", TensorT<float>({2}, 0.5f));
    return ck;
}

}  // namespace

TEST_CASE("checkpoint save/load/save is byte-identical", "[checkpoint]") {
    const fs::path dir = fs::temp_directory_path() / "voxseg_ckpt";
    fs::create_directories(dir);
    const auto ck = sample_checkpoint();
    save_checkpoint(ck, dir / "a.ckpt");
    const auto loaded = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(loaded, dir / "b.ckpt");

    const auto a = detail::read_file_bytes(dir / "a.ckpt");
    const auto b = detail::read_file_bytes(dir / "b.ckpt");
    REQUIRE(a == b);

    REQUIRE(loaded.config_text == ck.config_text);
    REQUIRE(loaded.state.at("epoch").get<int>() == 7);
    REQUIRE(loaded.state.at("lr_current").get<double>() == 0.00125);
    REQUIRE(loaded.state.at("best_val_dsc").get<double>() == 0.8731239182312);
    REQUIRE(loaded.tensor("enc0.conv1.w").data == ck.tensor("enc0.conv1.w").data);
    REQUIRE(loaded.tensor("enc0.conv1.b").data[0] == 0.5f);
}

TEST_CASE("rng state round-trips through a checkpoint", "[checkpoint]") {
    Rng a(123);
    for (int i = 0; i < 17; ++i) a.gaussian();
    Checkpoint ck = sample_checkpoint();
    ck.state["rng"] = a.serialize();
    const fs::path p = fs::temp_directory_path() / "voxseg_ckpt" / "rng.ckpt";
    save_checkpoint(ck, p);
    Rng b(0);
    b.deserialize(load_checkpoint(p).state.at("rng").get<std::string>());
    for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());
}

TEST_CASE("corruption and version gates", "[checkpoint]") {
    const fs::path dir = fs::temp_directory_path() / "voxseg_ckpt";
    fs::create_directories(dir);
    const auto ck = sample_checkpoint();
    const fs::path p = dir / "guard.ckpt";
    save_checkpoint(ck, p);

    SECTION("a corrupted tail fails the checksum") {
        auto bytes = detail::read_file_bytes(p);
        bytes[bytes.size() - 12] ^= 0x5a;
        detail::write_file_bytes(p, bytes.data(), bytes.size());
        REQUIRE_THROWS_WITH(load_checkpoint(p), Catch::Matchers::ContainsSubstring("checksum"));
    }
    SECTION("truncation fails the checksum") {
        auto bytes = detail::read_file_bytes(p);
        bytes.resize(bytes.size() - 25);
        detail::write_file_bytes(p, bytes.data(), bytes.size());
        REQUIRE_THROWS_WITH(load_checkpoint(p), Catch::Matchers::ContainsSubstring("checksum"));
    }
    SECTION("a wrong magic string is rejected") {
        auto bytes = detail::read_file_bytes(p);
        bytes[0] = 'X';
        detail::write_file_bytes(p, bytes.data(), bytes.size());
        REQUIRE_THROWS_WITH(load_checkpoint(p), Catch::Matchers::ContainsSubstring("magic"));
    }
    SECTION("a future format version is rejected") {
        // bump the version field and fix up the checksum so only the version gate fires
        auto bytes = detail::read_file_bytes(p);
        bytes[8] = 9;
        const size_t body = bytes.size() - sizeof(uint64_t);
        const uint64_t sum = fnv1a64(bytes.data(), body);
        std::memcpy(bytes.data() + body, &sum, sizeof(sum));
        detail::write_file_bytes(p, bytes.data(), bytes.size());
        REQUIRE_THROWS_WITH(load_checkpoint(p), Catch::Matchers::ContainsSubstring("version"));
    }
}
