#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <unistd.h>

#include "dsla/checkpoint.hpp"
#include "dsla/io.hpp"
#include "test_util.hpp"

using namespace dsla;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("dsla_ckpt_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ToyModel sample_model(unsigned seed) {
    std::mt19937_64 rng(seed);
    ToyModel m = make_teacher_model(rng, 2, 4, 2);
    m.conversion_order = {1, 0};
    m.committed = 1;
    FinetuneConfig cfg;
    m.replacement[1] = init_dsla_from_teacher(m.teacher[1], cfg, rng);
    return m;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves outputs and header") {
    TempDir tmp;
    ToyModel m = sample_model(1);
    CheckpointHeader hdr;
    hdr.stage = 1;
    hdr.conversion_mask = {0, 1};
    hdr.config_hash = "deadbeef00000000";
    hdr.seed = 42;

    const fs::path file = tmp.path / "stage1.json";
    save_checkpoint(file, m, hdr);
    LoadedCheckpoint lc = load_checkpoint(file);

    CHECK(lc.header.stage == 1);
    CHECK(lc.header.conversion_mask == std::vector<int>{0, 1});
    CHECK(lc.header.config_hash == "deadbeef00000000");
    CHECK(lc.header.seed == 42);
    CHECK(lc.model.committed == 1);
    CHECK(lc.model.conversion_order == std::vector<int>{1, 0});

    std::mt19937_64 rng(9);
    Matrix X = testutil::random_matrix(rng, 6, 4);
    CHECK((model_forward(lc.model, X) - model_forward(m, X)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((model_forward(lc.model, X, 0) - model_forward(m, X, 0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(lc.model.replacement[1]->gamma_raw == m.replacement[1]->gamma_raw);
}

TEST_CASE("load rejects malformed files") {
    TempDir tmp;
    const fs::path file = tmp.path / "bad.json";
    atomic_write(file, "{\"format\": \"something-else\"}");
    CHECK_THROWS(load_checkpoint(file));
    CHECK_THROWS(load_checkpoint(tmp.path / "missing.json"));
}

TEST_CASE("atomic_write leaves no temp file behind") {
    TempDir tmp;
    const fs::path file = tmp.path / "out.txt";
    atomic_write(file, "hello");
    CHECK(read_file(file) == "hello");
    CHECK(!fs::exists(file.string() + ".tmp"));
}

TEST_CASE("fnv1a hash is stable") {
    CHECK(hex64(fnv1a("")) == "cbf29ce484222325");
    CHECK(fnv1a("a") != fnv1a("b"));
}
