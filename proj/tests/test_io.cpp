// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/io.hpp"

#include "fleg/fit.hpp"
#include "fleg/synth.hpp"

#include <doctest.h>

#include <fstream>
#include <random>

using namespace fleg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("fleg_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

} // namespace

TEST_SUITE("io") {

TEST_CASE("scene files round-trip bit for bit") {
    TempDir dir;
    SynthScene synth = make_preset("two-objects", 5);
    // quantize to f32 storage first so the comparison is exact
    write_scene(synth.scene, dir.path / "a.geo.ply");
    const Scene once = read_scene(dir.path / "a.geo.ply");
    write_scene(once, dir.path / "b.geo.ply");
    CHECK(slurp(dir.path / "a.geo.ply") == slurp(dir.path / "b.geo.ply"));

    const Scene twice = read_scene(dir.path / "b.geo.ply");
    REQUIRE(twice.geo.size() == once.geo.size());
    CHECK(twice.sh_degree == once.sh_degree);
    CHECK(twice.feat_dim == once.feat_dim);
    for (size_t i = 0; i < once.geo.size(); ++i) {
        CHECK(twice.geo[i].mu == once.geo[i].mu);
        CHECK(twice.geo[i].rot == once.geo[i].rot);
        CHECK(twice.geo[i].opacity == once.geo[i].opacity);
        CHECK(twice.geo[i].conf == once.geo[i].conf);
        CHECK(twice.geo[i].feat == once.geo[i].feat);
    }
}

TEST_CASE("semantic pair round-trips and checks feat_dim consistency") {
    TempDir dir;
    Scene scene;
    scene.sh_degree = 0;
    scene.feat_dim = 3;
    Gaussian3D g;
    g.sh = {Vec3(0.1, 0.2, 0.3)};
    g.feat = {0.5, -0.5, 0.25};
    scene.geo.push_back(g);
    SemanticGaussian s;
    s.mu = Vec3(1.0, 2.0, 3.0);
    s.scale_iso = 0.5;
    s.opacity = 0.9;
    s.feat = {1.0, 0.0, -1.0};
    scene.sem = std::vector<SemanticGaussian>{s};

    write_scene(scene, dir.path / "s.geo.ply", fs::path(dir.path / "s.sem.ply"));
    const Scene back = read_scene(dir.path / "s.geo.ply", fs::path(dir.path / "s.sem.ply"));
    REQUIRE(back.sem.has_value());
    CHECK((*back.sem)[0].mu == s.mu);
    CHECK((*back.sem)[0].feat == s.feat);

    // a sem file with a different feature width must be rejected
    Scene wide = scene;
    wide.feat_dim = 5;
    wide.geo[0].feat = {1, 2, 3, 4, 5};
    (*wide.sem)[0].feat = {1, 2, 3, 4, 5};
    write_scene(wide, dir.path / "w.geo.ply", fs::path(dir.path / "w.sem.ply"));
    CHECK_THROWS_AS(read_scene(dir.path / "s.geo.ply", fs::path(dir.path / "w.sem.ply")), DataError);
}

TEST_CASE("truncated and corrupt scene files are rejected with positions") {
    TempDir dir;
    const SynthScene synth = make_preset("two-objects", 6);
    write_scene(synth.scene, dir.path / "ok.geo.ply");
    std::string bytes = slurp(dir.path / "ok.geo.ply");

    SUBCASE("truncated payload names the expected length") {
        spit(dir.path / "cut.geo.ply", bytes.substr(0, bytes.size() - 7));
        CHECK_THROWS_WITH_AS(read_scene(dir.path / "cut.geo.ply"), doctest::Contains("truncated"),
                             DataError);
    }
    SUBCASE("bad magic") {
        bytes[0] = 'q';
        spit(dir.path / "bad.geo.ply", bytes);
        CHECK_THROWS_WITH_AS(read_scene(dir.path / "bad.geo.ply"), doctest::Contains("byte 0"), DataError);
    }
    SUBCASE("non-finite payload") {
        // patch a float with a NaN
        const size_t payload = bytes.find("end_header\n") + 11;
        const uint32_t nan_bits = 0x7fc00000u;
        std::memcpy(bytes.data() + payload, &nan_bits, 4);
        spit(dir.path / "nan.geo.ply", bytes);
        CHECK_THROWS_WITH_AS(read_scene(dir.path / "nan.geo.ply"), doctest::Contains("non-finite"),
                             DataError);
    }
}

TEST_CASE("tensor files round-trip and reject corruption") {
    TempDir dir;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 2.0);

    FeatureMap fm = FeatureMap::zeros(5, 7, 3);
    for (double& v : fm.data)
        v = double(float(u(rng)));
    write_fmap(fm, dir.path / "t.fmap");
    const FeatureMap fm2 = read_fmap(dir.path / "t.fmap");
    CHECK(fm2.data == fm.data);
    write_fmap(fm2, dir.path / "t2.fmap");
    CHECK(slurp(dir.path / "t.fmap") == slurp(dir.path / "t2.fmap"));

    PointMap pm = PointMap::zeros(4, 6);
    for (double& v : pm.xyz)
        v = double(float(u(rng)));
    for (size_t i = 0; i < pm.valid.size(); i += 2)
        pm.valid[i] = 1;
    write_pmap(pm, dir.path / "t.pmap");
    const PointMap pm2 = read_pmap(dir.path / "t.pmap");
    CHECK(pm2.xyz == pm.xyz);
    CHECK(pm2.valid == pm.valid);

    InstanceMask im = InstanceMask::zeros(3, 3);
    for (size_t i = 0; i < im.data.size(); ++i)
        im.data[i] = uint32_t(i * 7 % 5);
    write_imsk(im, dir.path / "t.imsk");
    CHECK(read_imsk(dir.path / "t.imsk").data == im.data);

    SUBCASE("wrong magic is rejected at byte 0") {
        std::string bytes = slurp(dir.path / "t.fmap");
        bytes[0] = 'X';
        spit(dir.path / "x.fmap", bytes);
        CHECK_THROWS_WITH_AS(read_fmap(dir.path / "x.fmap"), doctest::Contains("byte 0"), DataError);
    }
    SUBCASE("truncation is rejected with offsets") {
        std::string bytes = slurp(dir.path / "t.pmap");
        spit(dir.path / "x.pmap", bytes.substr(0, bytes.size() - 3));
        CHECK_THROWS_WITH_AS(read_pmap(dir.path / "x.pmap"), doctest::Contains("truncated"), DataError);
    }
    SUBCASE("bad version is rejected") {
        std::string bytes = slurp(dir.path / "t.imsk");
        bytes[4] = 9;
        spit(dir.path / "x.imsk", bytes);
        CHECK_THROWS_WITH_AS(read_imsk(dir.path / "x.imsk"), doctest::Contains("version"), DataError);
    }
}

TEST_CASE("camera json round-trips and validates") {
    TempDir dir;
    const SynthScene synth = make_preset("lattice", 8);
    write_cameras(synth.cameras, dir.path / "cams.json");
    const std::vector<Camera> back = read_cameras(dir.path / "cams.json");
    REQUIRE(back.size() == synth.cameras.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].fx == synth.cameras[i].fx);
        CHECK((back[i].world_to_cam - synth.cameras[i].world_to_cam).norm() <= 1e-15);
        CHECK(back[i].width == synth.cameras[i].width);
    }

    SUBCASE("negative focal length is rejected") {
        std::string text = slurp(dir.path / "cams.json");
        spit(dir.path / "bad.json", text);
        std::vector<Camera> cams = synth.cameras;
        cams[0].fx = -1.0;
        write_cameras(cams, dir.path / "bad.json");
        CHECK_THROWS_AS(read_cameras(dir.path / "bad.json"), DataError);
    }
    SUBCASE("non-orthonormal rotation is rejected") {
        std::vector<Camera> cams = synth.cameras;
        cams[0].world_to_cam(0, 0) += 0.2;
        write_cameras(cams, dir.path / "skew.json");
        CHECK_THROWS_AS(read_cameras(dir.path / "skew.json"), DataError);
    }
}

TEST_CASE("raw vectors round-trip") {
    TempDir dir;
    write_vec({0.5, -1.25, 3.0, 0.0625}, dir.path / "q.vec");
    const std::vector<double> back = read_vec(dir.path / "q.vec");
    CHECK(back == std::vector<double>{0.5, -1.25, 3.0, 0.0625});

    spit(dir.path / "odd.vec", std::string(7, 'x'));
    CHECK_THROWS_AS(read_vec(dir.path / "odd.vec"), DataError);
}

TEST_CASE("png color and gray16 round-trips") {
    TempDir dir;
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img = Image::zeros(9, 13);
    for (double& v : img.data)
        v = u(rng);
    write_png_rgb8(img, dir.path / "c.png");
    const Image back = read_png_rgb8(dir.path / "c.png");
    for (size_t i = 0; i < img.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1.0 / 255.0));

    ScalarMap depth = ScalarMap::zeros(6, 6);
    for (double& v : depth.data)
        v = 0.5 + 3.0 * u(rng);
    write_png_gray16(depth, dir.path / "d.png", 10000.0);
    const ScalarMap dback = read_png_gray16(dir.path / "d.png");
    for (size_t i = 0; i < depth.data.size(); ++i)
        CHECK(dback.data[i] == doctest::Approx(depth.data[i]).epsilon(1e-3));
}

TEST_CASE("fit config round-trips with range checks") {
    TempDir dir;
    FitConfig cfg;
    cfg.iterations = 250;
    cfg.lr_mu = 0.002;
    cfg.seed = 99;
    write_fit_config(cfg, dir.path / "fit.json");
    const FitConfig back = read_fit_config(dir.path / "fit.json");
    CHECK(back.iterations == 250);
    CHECK(back.lr_mu == 0.002);
    CHECK(back.seed == 99);
    CHECK(back.beta1 == cfg.beta1);

    spit(dir.path / "bad.json", "{\"iterations\": 0}");
    CHECK_THROWS_AS(read_fit_config(dir.path / "bad.json"), DataError);
}

TEST_CASE("loss config round-trips with range checks") {
    TempDir dir;
    LossConfig cfg;
    cfg.eta = 0.5;
    cfg.tau = 0.25;
    write_loss_config(cfg, dir.path / "loss.json");
    const LossConfig back = read_loss_config(dir.path / "loss.json");
    CHECK(back.eta == 0.5);
    CHECK(back.tau == 0.25);
    CHECK(back.lambda_pose == cfg.lambda_pose);

    spit(dir.path / "bad.json", "{\"eta\": 3.0}");
    CHECK_THROWS_AS(read_loss_config(dir.path / "bad.json"), DataError);
    spit(dir.path / "broken.json", "{nope");
    CHECK_THROWS_AS(read_loss_config(dir.path / "broken.json"), DataError);
}

} // TEST_SUITE
