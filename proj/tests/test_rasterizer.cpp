// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/rasterizer.hpp"

#include "fleg/fit.hpp"
#include "fleg/sh.hpp"
#include "fleg/sparsify.hpp"
#include "fleg/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace fleg;

namespace {

constexpr double kShDc = 0.28209479177387814;

Camera centered_camera(int size, double focal) {
    Camera cam;
    cam.fx = cam.fy = focal;
    cam.width = cam.height = size;
    cam.cx = cam.cy = (size - 1) / 2.0;  // odd sizes put an integer pixel on the axis
    cam.world_to_cam = Mat4::Identity();
    return cam;
}

Gaussian3D axis_gaussian(double z, double scale, const Vec3& color, double opacity) {
    Gaussian3D g;
    g.mu = Vec3(0.0, 0.0, z);
    g.scale = Vec3::Constant(scale);
    g.opacity = opacity;
    g.sh = {(color - Vec3::Constant(0.5)) / kShDc};
    return g;
}

} // namespace

TEST_SUITE("rasterizer") {

TEST_CASE("empty scene renders the background") {
    Scene scene;
    scene.sh_degree = 0;
    Camera cam = centered_camera(16, 40.0);
    RenderOptions opts;
    opts.background = Vec3(0.0, 0.0, 0.0);
    const RenderOutput out = render(scene, cam, opts);
    for (double v : out.color.data)
        CHECK(v == 0.0);
    for (double a : out.alpha.data)
        CHECK(a == 0.0);

    opts.background = Vec3(0.2, 0.4, 0.6);
    const RenderOutput tinted = render(scene, cam, opts);
    CHECK(tinted.color.at(3, 5, 0) == doctest::Approx(0.2));
    CHECK(tinted.color.at(3, 5, 2) == doctest::Approx(0.6));
}

TEST_CASE("single saturated gaussian covers the center pixel") {
    Scene scene;
    scene.sh_degree = 0;
    scene.geo.push_back(axis_gaussian(2.0, 5.0, Vec3(1.0, 0.0, 0.0), 1.0));
    Camera cam = centered_camera(33, 100.0);
    const RenderOutput out = render(scene, cam);
    const int c = 16;
    CHECK(out.color.at(c, c, 0) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(out.color.at(c, c, 1) == doctest::Approx(0.0).epsilon(1e-3));
    CHECK(out.alpha.at(c, c) >= 0.99);
}

TEST_CASE("two stacked gaussians composite front to back") {
    Scene scene;
    scene.sh_degree = 0;
    scene.geo.push_back(axis_gaussian(2.0, 5.0, Vec3(1.0, 0.0, 0.0), 0.5));  // front, red
    scene.geo.push_back(axis_gaussian(4.0, 10.0, Vec3(0.0, 0.0, 1.0), 1.0)); // back, blue
    Camera cam = centered_camera(33, 100.0);
    const RenderOutput out = render(scene, cam);
    const int c = 16;
    CHECK(out.color.at(c, c, 0) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(out.color.at(c, c, 1) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(out.color.at(c, c, 2) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(out.alpha.at(c, c) == doctest::Approx(1.0));

    SUBCASE("input order does not matter") {
        Scene swapped = scene;
        std::swap(swapped.geo[0], swapped.geo[1]);
        const RenderOutput out2 = render(swapped, cam);
        for (size_t i = 0; i < out.color.data.size(); ++i)
            CHECK(out.color.data[i] == doctest::Approx(out2.color.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("expected depth reads the surface depth") {
    Scene scene;
    scene.sh_degree = 0;
    scene.geo.push_back(axis_gaussian(2.5, 5.0, Vec3(0.5, 0.5, 0.5), 1.0));
    Camera cam = centered_camera(33, 100.0);
    RenderOptions opts;
    opts.depth = true;
    const RenderOutput out = render(scene, cam, opts);
    CHECK(out.depth.at(16, 16) == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("zero opacity yields the background exactly") {
    SynthScene synth = make_preset("two-objects", 11);
    for (Gaussian3D& g : synth.scene.geo)
        g.opacity = 0.0;
    RenderOptions opts;
    opts.background = Vec3(0.3, 0.1, 0.9);
    const RenderOutput out = render(synth.scene, synth.cameras[0], opts);
    for (int y = 0; y < out.color.height; ++y)
        for (int x = 0; x < out.color.width; ++x) {
            CHECK(out.color.at(y, x, 0) == 0.3);
            CHECK(out.color.at(y, x, 2) == 0.9);
        }
}

TEST_CASE("compositing weights sum to the alpha channel") {
    // alpha = sum of weights is structural; cross-check against a one-channel
    // composite of ones rendered through the feature path
    SynthScene synth = make_preset("two-objects", 3);
    Scene scene = synth.scene;
    for (Gaussian3D& g : scene.geo)
        g.feat.assign(scene.feat_dim, 1.0);
    RenderOptions opts;
    opts.feature = true;
    opts.use_sem_features = false;
    const RenderOutput out = render(scene, synth.cameras[1], opts);
    for (int y = 0; y < out.alpha.height; ++y)
        for (int x = 0; x < out.alpha.width; ++x) {
            CHECK(out.feature.px(y, x)[0] == doctest::Approx(out.alpha.at(y, x)).epsilon(1e-12));
            CHECK(out.alpha.at(y, x) <= 1.0 + 1e-12);
        }
}

TEST_CASE("feature render without any feature source errors") {
    Scene scene;
    scene.sh_degree = 0;
    scene.feat_dim = 4;
    scene.geo.push_back(axis_gaussian(2.0, 0.2, Vec3(0.5, 0.5, 0.5), 0.8));
    Camera cam = centered_camera(17, 40.0);
    RenderOptions opts;
    opts.feature = true;
    CHECK_THROWS_AS(render(scene, cam, opts), DataError);
}

TEST_CASE("frustum culling zeroes gradients and behind-camera splats render nothing") {
    Scene scene;
    scene.sh_degree = 0;
    scene.geo.push_back(axis_gaussian(-1.0, 1.0, Vec3(1.0, 1.0, 1.0), 1.0));  // behind
    scene.geo.push_back(axis_gaussian(2.0, 0.05, Vec3(0.8, 0.2, 0.2), 0.8));
    Camera cam = centered_camera(33, 100.0);
    PixelGrad pg;
    pg.d_color.assign(size_t(cam.width) * cam.height * 3, 1.0);
    const auto [out, grad] = render_with_grad(scene, cam, RenderOptions{}, pg);
    CHECK(grad.d_mu[0].norm() == 0.0);
    CHECK(grad.d_opacity[0] == 0.0);
    CHECK(grad.d_mu[1].norm() > 0.0);
}

TEST_CASE("covariance_3d matches the spec cases") {
    Gaussian3D g;
    g.scale = Vec3(1.0, 1.0, 1.0);
    g.rot = Vec4(0.3, -0.4, 0.5, 0.2).normalized();
    CHECK((covariance_3d(g) - Mat3::Identity()).norm() == doctest::Approx(0.0).epsilon(1e-12));

    g.scale = Vec3(2.0, 1.0, 1.0);
    g.rot = Vec4(1.0, 0.0, 0.0, 0.0);
    CHECK((covariance_3d(g) - Vec3(4.0, 1.0, 1.0).asDiagonal().toDenseMatrix()).norm() ==
          doctest::Approx(0.0).epsilon(1e-12));

    // 90 degrees about z maps the x-axis variance onto y
    const double s = std::sqrt(0.5);
    g.rot = Vec4(s, 0.0, 0.0, s);
    CHECK((covariance_3d(g) - Vec3(1.0, 4.0, 1.0).asDiagonal().toDenseMatrix()).norm() ==
          doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("sh basis derivatives match finite differences") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vec3 dir(u(rng), u(rng), u(rng));
        dir.normalize();
        double b[16];
        Vec3 db[16];
        sh_basis(3, dir, b, db);
        const double h = 1e-6;
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 plus = dir, minus = dir;
            plus[axis] += h;
            minus[axis] -= h;
            double bp[16], bm[16];
            Vec3 scratch[16];
            sh_basis(3, plus, bp, scratch);
            sh_basis(3, minus, bm, scratch);
            for (int i = 0; i < 16; ++i)
                CHECK(db[i][axis] == doctest::Approx((bp[i] - bm[i]) / (2 * h)).epsilon(1e-4));
        }
    }
}

TEST_CASE("zero pixel gradient produces zero attribute gradients") {
    const GradcheckFixture fx = make_gradcheck_fixture(5, 6, 0, true, false);
    PixelGrad pg;
    pg.d_color.assign(size_t(fx.cam.width) * fx.cam.height * 3, 0.0);
    const auto [out, grad] = render_with_grad(fx.scene, fx.cam, RenderOptions{}, pg);
    for (const Vec3& v : grad.d_mu)
        CHECK(v.norm() == 0.0);
    for (double v : grad.d_opacity)
        CHECK(v == 0.0);
}

TEST_CASE("gradcheck: photometric loss through the renderer") {
    for (uint64_t seed : {1, 2, 3}) {
        const GradcheckFixture fx = make_gradcheck_fixture(seed, 5, 0, false, false);
        const GradcheckReport report = gradcheck(fx.scene, fx.cam, GradcheckLoss::Photometric, 40, seed);
        INFO("seed ", seed, " max_rel_err ", report.max_rel_err(), " fd_invalid ", report.fd_invalid());
        CHECK(report.failures() == 0);
        CHECK(report.samples() > 20);
    }
}

TEST_CASE("gradcheck: depth loss through the renderer") {
    const GradcheckFixture fx = make_gradcheck_fixture(11, 5, 0, false, false);
    const GradcheckReport report = gradcheck(fx.scene, fx.cam, GradcheckLoss::Depth, 40, 11);
    INFO("max_rel_err ", report.max_rel_err(), " fd_invalid ", report.fd_invalid());
    CHECK(report.failures() == 0);
}

TEST_CASE("gradcheck: feature loss through geometry and semantic renders") {
    const GradcheckFixture fx_geo = make_gradcheck_fixture(21, 5, 0, true, false);
    const GradcheckReport geo = gradcheck(fx_geo.scene, fx_geo.cam, GradcheckLoss::FeatureCosine, 40, 21);
    INFO("geo max_rel_err ", geo.max_rel_err(), " fd_invalid ", geo.fd_invalid());
    CHECK(geo.failures() == 0);

    const GradcheckFixture fx_sem = make_gradcheck_fixture(22, 4, 0, true, true);
    const GradcheckReport sem = gradcheck(fx_sem.scene, fx_sem.cam, GradcheckLoss::FeatureCosine, 40, 22);
    INFO("sem max_rel_err ", sem.max_rel_err(), " fd_invalid ", sem.fd_invalid());
    CHECK(sem.failures() == 0);
}

TEST_CASE("gradcheck: view-dependent color (degree 1)") {
    const GradcheckFixture fx = make_gradcheck_fixture(31, 4, 1, false, false);
    const GradcheckReport report = gradcheck(fx.scene, fx.cam, GradcheckLoss::Photometric, 40, 31);
    INFO("max_rel_err ", report.max_rel_err(), " fd_invalid ", report.fd_invalid());
    CHECK(report.failures() == 0);
}

TEST_CASE("gradcheck: constant loss passes trivially") {
    const GradcheckFixture fx = make_gradcheck_fixture(41, 3, 0, false, false);
    const GradcheckReport report = gradcheck(fx.scene, fx.cam, GradcheckLoss::Constant, 10, 41);
    CHECK(report.failures() == 0);
    CHECK(report.max_rel_err() == 0.0);
}

TEST_CASE("semantic render preserves per-instance feature directions") {
    // the sparsified semantic set must reproduce the pre-sparsification
    // feature render up to high per-instance cosine similarity
    const SynthScene synth = make_preset("two-objects", 51);
    const Scene sparse = hierarchical_sparsify(synth.scene, 0.02, 0.09);
    for (const Camera& cam : synth.cameras) {
        RenderOptions geo_opts;
        geo_opts.feature = true;
        geo_opts.use_sem_features = false;
        const RenderOutput geo_out = render(synth.scene, cam, geo_opts);

        RenderOptions sem_opts;
        sem_opts.feature = true;
        const RenderOutput sem_out = render(sparse, cam, sem_opts);
        REQUIRE(sem_out.feature_from_sem);

        // instance regions from the per-object ground-truth masks
        for (uint32_t id : {1u, 2u}) {
            Scene object;
            object.sh_degree = synth.scene.sh_degree;
            object.feat_dim = synth.scene.feat_dim;
            for (size_t i = 0; i < synth.scene.geo.size(); ++i)
                if (synth.object_of_gaussian[i] == id)
                    object.geo.push_back(synth.scene.geo[i]);
            const ScalarMap alpha = render(object, cam).alpha;
            double cos_sum = 0.0;
            int count = 0;
            const int d = synth.scene.feat_dim;
            for (size_t p = 0; p < alpha.data.size(); ++p) {
                if (alpha.data[p] < 0.6)
                    continue;
                const double* a = geo_out.feature.data.data() + p * d;
                const double* b = sem_out.feature.data.data() + p * d;
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (int k = 0; k < d; ++k) {
                    dot += a[k] * b[k];
                    na += a[k] * a[k];
                    nb += b[k] * b[k];
                }
                if (na == 0.0 || nb == 0.0)
                    continue;
                cos_sum += dot / std::sqrt(na * nb);
                ++count;
            }
            REQUIRE(count > 0);
            CHECK(cos_sum / count >= 0.95);
        }
    }
}

} // TEST_SUITE
