#include "sparsegate/tensor_io.hpp"

#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <random>

using namespace sparsegate;
using test_support::TempDir;

TEST_CASE("manifest parses and checks declared sizes", "[tensor_io]") {
    TempDir dir;
    test_support::write_file(dir.path / "gate.bin", std::string(4 * 3 * 8, '\x01'));
    test_support::write_file(dir.path / "manifest.json", R"({"entries":[
        {"name":"gate","dtype":"f64","shape":[4,3],"file":"gate.bin",
         "layout":"row-major","endianness":"little"}]})");

    const TensorManifest manifest = load_manifest(dir.path);
    REQUIRE(manifest.entries.size() == 1);
    CHECK(manifest.entries[0].name == "gate");
    CHECK(manifest.entries[0].dtype == Dtype::F64);
    CHECK(manifest.entries[0].elements() == 12);
}

TEST_CASE("manifest size mismatch is rejected", "[tensor_io]") {
    TempDir dir;
    test_support::write_file(dir.path / "t.bin", std::string(12, '\0'));
    test_support::write_file(dir.path / "manifest.json", R"({"entries":[
        {"name":"t","dtype":"f32","shape":[2,2],"file":"t.bin",
         "layout":"row-major","endianness":"little"}]})");
    REQUIRE_THROWS_AS(load_manifest(dir.path), IoError);
}

TEST_CASE("empty manifest is valid", "[tensor_io]") {
    TempDir dir;
    test_support::write_file(dir.path / "manifest.json", R"({"entries":[]})");
    CHECK(load_manifest(dir.path).entries.empty());
}

TEST_CASE("manifest failure modes", "[tensor_io]") {
    TempDir dir;
    SECTION("missing manifest") {
        REQUIRE_THROWS_AS(load_manifest(dir.path / "nope"), IoError);
    }
    SECTION("malformed json") {
        test_support::write_file(dir.path / "manifest.json", "{not json");
        REQUIRE_THROWS_AS(load_manifest(dir.path), IoError);
    }
    SECTION("unknown dtype") {
        test_support::write_file(dir.path / "t.bin", std::string(8, '\0'));
        test_support::write_file(dir.path / "manifest.json", R"({"entries":[
            {"name":"t","dtype":"f16","shape":[2],"file":"t.bin",
             "layout":"row-major","endianness":"little"}]})");
        REQUIRE_THROWS_AS(load_manifest(dir.path), IoError);
    }
    SECTION("duplicate names") {
        test_support::write_file(dir.path / "t.bin", std::string(8, '\0'));
        test_support::write_file(dir.path / "manifest.json", R"({"entries":[
            {"name":"t","dtype":"f64","shape":[1],"file":"t.bin",
             "layout":"row-major","endianness":"little"},
            {"name":"t","dtype":"f64","shape":[1],"file":"t.bin",
             "layout":"row-major","endianness":"little"}]})");
        REQUIRE_THROWS_AS(load_manifest(dir.path), IoError);
    }
    SECTION("missing referenced binary") {
        test_support::write_file(dir.path / "manifest.json", R"({"entries":[
            {"name":"t","dtype":"f64","shape":[1],"file":"absent.bin",
             "layout":"row-major","endianness":"little"}]})");
        REQUIRE_THROWS_AS(load_manifest(dir.path), IoError);
    }
}

TEST_CASE("f32 payload declared f64 fails by size check", "[tensor_io]") {
    TempDir dir;
    ContainerWriter writer(dir.path);
    Mat m(2, 2);
    m << 1, 2, 3, 4;
    writer.add_matrix("t", m, Dtype::F32);
    writer.finish();

    // Rewrite the dtype only; the 16-byte f32 payload no longer matches.
    auto text = test_support::read_file(dir.path / "manifest.json");
    const auto pos = text.find("\"f32\"");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 5, "\"f64\"");
    test_support::write_file(dir.path / "manifest.json", text);
    REQUIRE_THROWS_AS(load_manifest(dir.path), IoError);
}

TEST_CASE("ffn weight container round trip and shape checks", "[tensor_io]") {
    TempDir dir;
    FfnWeights w;
    w.gate = Mat::Zero(2, 3);
    w.gate << 1, 2, 3, 4, 5, 6;
    w.up = Mat::Ones(2, 3);
    w.down = Mat::Ones(3, 2);
    save_ffn_weights(w, dir.path);

    const FfnWeights loaded = load_ffn_weights(load_manifest(dir.path), Activation::ReGLU);
    CHECK(loaded.hidden_size() == 3);
    CHECK(loaded.inter_size() == 2);
    CHECK(loaded.gate == w.gate);

    SECTION("up dimension mismatch") {
        TempDir other;
        ContainerWriter writer(other.path);
        writer.add_matrix("gate", Mat::Ones(2, 3));
        writer.add_matrix("up", Mat::Ones(2, 4));
        writer.add_matrix("down", Mat::Ones(3, 2));
        writer.finish();
        REQUIRE_THROWS_AS(load_ffn_weights(load_manifest(other.path), Activation::ReGLU),
                          DataError);
    }
    SECTION("transposed down is rejected") {
        FfnWeights bad = w;
        bad.down = Mat::Ones(2, 3);
        REQUIRE_THROWS_AS(save_ffn_weights(bad, dir.path), DataError);
    }
    SECTION("missing entry") {
        std::filesystem::remove(dir.path / "down.bin");
        REQUIRE_THROWS_AS(load_manifest(dir.path), IoError);
    }
}

TEST_CASE("predictor round trip is byte exact", "[tensor_io]") {
    TempDir dir;
    std::mt19937_64 rng(7);
    Predictor p;
    p.A = test_support::random_matrix(rng, 6, 3);
    p.B = test_support::random_matrix(rng, 3, 4);
    p.bias = test_support::random_vector(rng, 6);
    p.rank = 3;

    save_predictor(p, dir.path / "pred");
    const Predictor loaded = load_predictor(dir.path / "pred");
    CHECK(std::memcmp(loaded.A.data(), p.A.data(), sizeof(double) * 18) == 0);
    CHECK(std::memcmp(loaded.B.data(), p.B.data(), sizeof(double) * 12) == 0);
    CHECK(std::memcmp(loaded.bias.data(), p.bias.data(), sizeof(double) * 6) == 0);
    CHECK(loaded.rank == 3);
}

TEST_CASE("predictor container error cases", "[tensor_io]") {
    TempDir dir;
    SECTION("missing bias entry") {
        ContainerWriter writer(dir.path);
        writer.add_matrix("A", Mat::Ones(4, 2));
        writer.add_matrix("B", Mat::Ones(2, 5));
        writer.finish();
        REQUIRE_THROWS_AS(load_predictor(dir.path), IoError);
    }
    SECTION("rank mismatch between A and B") {
        ContainerWriter writer(dir.path);
        writer.add_matrix("A", Mat::Ones(4, 2));
        writer.add_matrix("B", Mat::Ones(3, 5));
        writer.add_vector("bias", Vec::Zero(4));
        writer.finish();
        REQUIRE_THROWS_MATCHES(load_predictor(dir.path), DataError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("rank mismatch")));
    }
}

TEST_CASE("container round trip is byte identical for random tensors", "[tensor_io]") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> dim(1, 9);
    for (int trial = 0; trial < 20; ++trial) {
        TempDir dir;
        const Dtype dtype = trial % 2 == 0 ? Dtype::F64 : Dtype::F32;
        const Mat m = test_support::random_matrix(rng, dim(rng), dim(rng));
        const Vec v = test_support::random_vector(rng, dim(rng));

        ContainerWriter first(dir.path / "a");
        first.add_matrix("m", m, dtype);
        first.add_vector("v", v, dtype);
        first.finish();

        const TensorManifest manifest = load_manifest(dir.path / "a");
        ContainerWriter second(dir.path / "b");
        second.add_matrix("m", load_matrix(manifest, "m"), dtype);
        second.add_vector("v", load_vector(manifest, "v"), dtype);
        second.finish();

        for (const char* file : {"m.bin", "v.bin", "manifest.json"}) {
            CHECK(test_support::read_file(dir.path / "a" / file) ==
                  test_support::read_file(dir.path / "b" / file));
        }
    }
}

TEST_CASE("zero-token batch is representable", "[tensor_io]") {
    TempDir dir;
    ActivationBatch batch;
    batch.x_cols = Mat(4, 0);
    save_activation_batch(batch, dir.path);
    const ActivationBatch loaded = load_activation_batch(load_manifest(dir.path));
    CHECK(loaded.hidden_size() == 4);
    CHECK(loaded.tokens() == 0);
}
