// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/synth.hpp"

#include "fleg/geometry.hpp"
#include "fleg/io.hpp"
#include "fleg/kernels.hpp"
#include "fleg/rasterizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace fleg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kShDc = 0.28209479177387814;
constexpr int kFeatDim = 16;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

Vec4 random_unit_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec4 q(normal(rng), normal(rng), normal(rng), normal(rng));
    return canonical_quat(q);
}

std::vector<double> random_unit_feat(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> f(dim);
    double norm = 0.0;
    for (double& v : f) {
        v = normal(rng);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : f)
        v /= norm;
    return f;
}

std::vector<Vec3> color_sh(const Vec3& color) { return {(color - Vec3::Constant(0.5)) / kShDc}; }

Camera look_at_camera(const Vec3& eye, const Vec3& target, double focal, int width, int height) {
    const Vec3 up(0.0, 0.0, 1.0);
    Vec3 z = (target - eye).normalized();
    Vec3 x = up.cross(z);
    if (x.norm() < 1e-9)
        x = Vec3(1.0, 0.0, 0.0);
    x.normalize();
    const Vec3 y = z.cross(x);
    Camera cam;
    cam.fx = cam.fy = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = (width - 1) / 2.0;
    cam.cy = (height - 1) / 2.0;
    Mat3 rot;
    rot.row(0) = x;
    rot.row(1) = y;
    rot.row(2) = z;
    cam.world_to_cam = Mat4::Identity();
    cam.world_to_cam.topLeftCorner<3, 3>() = rot;
    cam.world_to_cam.topRightCorner<3, 1>() = -rot * eye;
    return cam;
}

SynthScene make_lattice(uint64_t seed) {
    SynthScene out;
    out.preset = "lattice";
    out.seed = seed;
    out.lattice_pitch = 0.25;
    std::mt19937_64 rng(seed ^ 0x17ace5cellu);
    Scene& scene = out.scene;
    scene.sh_degree = 0;
    scene.feat_dim = kFeatDim;
    const double p = out.lattice_pitch;
    for (int i = 1; i <= 8; ++i)
        for (int j = 1; j <= 8; ++j)
            for (int k = 1; k <= 8; ++k) {
                Gaussian3D g;
                g.mu = Vec3(i * p, j * p, k * p);
                for (int a = 0; a < 3; ++a)
                    g.scale[a] = p * uniform(rng, 0.14, 0.22);
                g.rot = random_unit_quat(rng);
                g.opacity = uniform(rng, 0.6, 0.9);
                g.conf = uniform(rng, -1.0, 1.0);
                g.sh = color_sh(Vec3(uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)));
                g.feat = random_unit_feat(rng, kFeatDim);
                scene.geo.push_back(std::move(g));
                out.object_of_gaussian.push_back(1);
            }
    out.instance_features[1] = random_unit_feat(rng, kFeatDim);
    const Vec3 center = Vec3::Constant(4.5 * p);
    out.cameras = make_ring_cameras(center, 2.8, 0.9, 8, 60.0, 64, 64);
    return out;
}

SynthScene make_two_objects(uint64_t seed) {
    SynthScene out;
    out.preset = "two-objects";
    out.seed = seed;
    std::mt19937_64 rng(seed ^ 0x2b1ec75llu);
    Scene& scene = out.scene;
    scene.sh_degree = 0;
    scene.feat_dim = kFeatDim;

    std::vector<double> feat_a(kFeatDim, 0.0), feat_b(kFeatDim, 0.0);
    feat_a[0] = 1.0;
    feat_b[1] = 1.0;
    out.instance_features[1] = feat_a;
    out.instance_features[2] = feat_b;

    std::normal_distribution<double> spread(0.0, 0.16);
    for (int obj = 0; obj < 2; ++obj) {
        const Vec3 center(obj == 0 ? -0.5 : 0.5, 0.0, 0.0);
        for (int i = 0; i < 25; ++i) {
            Gaussian3D g;
            g.mu = center + Vec3(spread(rng), spread(rng), spread(rng));
            for (int a = 0; a < 3; ++a)
                g.scale[a] = uniform(rng, 0.05, 0.12);
            g.rot = random_unit_quat(rng);
            g.opacity = uniform(rng, 0.65, 0.95);
            g.conf = uniform(rng, -0.5, 1.5);
            const Vec3 color = obj == 0
                                   ? Vec3(uniform(rng, 0.65, 0.9), uniform(rng, 0.15, 0.35), uniform(rng, 0.1, 0.3))
                                   : Vec3(uniform(rng, 0.1, 0.3), uniform(rng, 0.2, 0.4), uniform(rng, 0.65, 0.9));
            g.sh = color_sh(color);
            g.feat = obj == 0 ? feat_a : feat_b;
            scene.geo.push_back(std::move(g));
            out.object_of_gaussian.push_back(obj + 1);
        }
    }
    out.cameras = make_ring_cameras(Vec3::Zero(), 2.2, 0.6, 4, 75.0, 64, 64);
    return out;
}

SynthScene make_textured_room(uint64_t seed) {
    SynthScene out;
    out.preset = "textured-room";
    out.seed = seed;
    std::mt19937_64 rng(seed ^ 0x400731bllu);
    Scene& scene = out.scene;
    scene.sh_degree = 0;
    scene.feat_dim = kFeatDim;

    // orthonormal instance features for the six walls
    std::vector<std::vector<double>> wall_feats;
    for (int f = 0; f < 6; ++f) {
        std::vector<double> v = random_unit_feat(rng, kFeatDim);
        for (const std::vector<double>& prev : wall_feats) {
            const double d = kernels::dot(v.data(), prev.data(), kFeatDim);
            for (int k = 0; k < kFeatDim; ++k)
                v[k] -= d * prev[k];
        }
        const double n = std::sqrt(kernels::sumsq(v.data(), kFeatDim));
        for (double& x : v)
            x /= n;
        wall_feats.push_back(v);
        out.instance_features[uint32_t(f + 1)] = v;
    }

    const int grid = 8;
    const double room = 1.0;
    for (int face = 0; face < 6; ++face) {
        const int axis = face / 2;
        const double side = face % 2 == 0 ? -room : room;
        const Vec3 base_color(uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8));
        for (int i = 0; i < grid; ++i)
            for (int j = 0; j < grid; ++j) {
                Gaussian3D g;
                const double u = -room + (i + 0.5) * 2.0 * room / grid;
                const double v = -room + (j + 0.5) * 2.0 * room / grid;
                Vec3 mu;
                mu[axis] = side;
                mu[(axis + 1) % 3] = u;
                mu[(axis + 2) % 3] = v;
                g.mu = mu;
                Vec3 scale;
                scale[axis] = 0.02;
                scale[(axis + 1) % 3] = uniform(rng, 0.16, 0.24);
                scale[(axis + 2) % 3] = uniform(rng, 0.16, 0.24);
                g.scale = scale;
                g.rot = Vec4(1.0, 0.0, 0.0, 0.0);
                g.opacity = uniform(rng, 0.85, 0.98);
                g.conf = uniform(rng, -1.0, 1.0);
                const double checker = ((i + j) % 2 == 0) ? 0.18 : -0.18;
                Vec3 color = base_color + Vec3::Constant(checker) +
                             Vec3(uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05));
                color = color.cwiseMax(0.05).cwiseMin(0.95);
                g.sh = color_sh(color);
                g.feat = wall_feats[face];
                scene.geo.push_back(std::move(g));
                out.object_of_gaussian.push_back(uint32_t(face + 1));
            }
    }

    for (int vcam = 0; vcam < 8; ++vcam) {
        const double yaw = vcam * (2.0 * M_PI / 8.0);
        const Vec3 eye(uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08));
        const Vec3 target = eye + Vec3(std::cos(yaw), std::sin(yaw), uniform(rng, -0.15, 0.15));
        out.cameras.push_back(look_at_camera(eye, target, 40.0, 64, 64));
    }
    return out;
}

} // namespace

std::vector<Camera> make_ring_cameras(const Vec3& target, double radius, double height, int count,
                                      double focal, int width, int height_px) {
    std::vector<Camera> cams;
    for (int i = 0; i < count; ++i) {
        const double angle = i * (2.0 * M_PI / count);
        const Vec3 eye = target + Vec3(radius * std::cos(angle), radius * std::sin(angle), height);
        cams.push_back(look_at_camera(eye, target, focal, width, height_px));
    }
    return cams;
}

SynthScene make_preset(const std::string& name, uint64_t seed) {
    if (name == "lattice")
        return make_lattice(seed);
    if (name == "two-objects")
        return make_two_objects(seed);
    if (name == "textured-room")
        return make_textured_room(seed);
    throw DataError("unknown preset '" + name + "' (expected lattice | two-objects | textured-room)");
}

void write_synth_dir(const SynthScene& synth, const fs::path& dir) {
    fs::create_directories(dir);
    write_scene(synth.scene, dir / "scene.geo.ply");
    write_cameras(synth.cameras, dir / "cameras.json");

    // per-object alpha renders drive the instance masks
    std::vector<uint32_t> ids;
    for (const auto& [id, feat] : synth.instance_features)
        ids.push_back(id);
    std::vector<Scene> object_scenes;
    for (uint32_t id : ids) {
        Scene sub;
        sub.sh_degree = synth.scene.sh_degree;
        sub.feat_dim = synth.scene.feat_dim;
        for (size_t i = 0; i < synth.scene.geo.size(); ++i)
            if (synth.object_of_gaussian[i] == id)
                sub.geo.push_back(synth.scene.geo[i]);
        object_scenes.push_back(std::move(sub));
    }

    json manifest;
    manifest["preset"] = synth.preset;
    manifest["seed"] = synth.seed;
    manifest["views"] = synth.cameras.size();
    manifest["gaussians"] = synth.scene.geo.size();
    manifest["feat_dim"] = synth.scene.feat_dim;
    if (synth.lattice_pitch > 0.0)
        manifest["lattice_pitch"] = synth.lattice_pitch;
    json inst = json::array();
    for (uint32_t id : ids)
        inst.push_back(id);
    manifest["instances"] = inst;

    for (size_t v = 0; v < synth.cameras.size(); ++v) {
        const Camera& cam = synth.cameras[v];
        RenderOptions opts;
        opts.depth = true;
        const RenderOutput out = render(synth.scene, cam, opts);
        const std::string tag = std::to_string(v);
        write_png_rgb8(out.color, dir / ("render_" + tag + ".png"));

        double max_depth = 0.0;
        for (double d : out.depth.data)
            max_depth = std::max(max_depth, d);
        const double depth_scale = max_depth > 0.0 ? 60000.0 / max_depth : 1.0;
        write_png_gray16(out.depth, dir / ("depth_" + tag + ".png"), depth_scale);

        std::vector<uint8_t> valid(out.alpha.data.size());
        for (size_t p = 0; p < valid.size(); ++p)
            valid[p] = out.alpha.data[p] > 0.5 ? 1 : 0;
        const PointMap pm = backproject_depth(out.depth, cam, &valid);
        write_pmap(pm, dir / ("points_" + tag + ".pmap"));

        InstanceMask mask = InstanceMask::zeros(cam.height, cam.width);
        std::vector<ScalarMap> alphas;
        for (const Scene& sub : object_scenes)
            alphas.push_back(render(sub, cam, RenderOptions{}).alpha);
        for (size_t p = 0; p < mask.data.size(); ++p) {
            double best = 0.5;  // background below this coverage
            uint32_t best_id = 0;
            for (size_t o = 0; o < ids.size(); ++o)
                if (alphas[o].data[p] > best) {
                    best = alphas[o].data[p];
                    best_id = ids[o];
                }
            mask.data[p] = best_id;
        }
        write_imsk(mask, dir / ("mask_" + tag + ".imsk"));

        FeatureMap fmap = FeatureMap::zeros(cam.height, cam.width, synth.scene.feat_dim);
        for (size_t p = 0; p < mask.data.size(); ++p)
            if (mask.data[p] != 0) {
                const std::vector<double>& f = synth.instance_features.at(mask.data[p]);
                std::copy(f.begin(), f.end(), fmap.data.begin() + p * synth.scene.feat_dim);
            }
        write_fmap(fmap, dir / ("features_" + tag + ".fmap"));
    }

    for (uint32_t id : ids)
        write_vec(synth.instance_features.at(id), dir / ("instance_" + std::to_string(id) + ".vec"));

    atomic_write(dir / "manifest.json", [&](const fs::path& tmp) {
        std::ofstream out(tmp);
        out << manifest.dump(2) << "\n";
    });
}

GradcheckFixture make_gradcheck_fixture(uint64_t seed, int n_gaussians, int sh_degree, bool with_feat,
                                        bool with_sem) {
    std::mt19937_64 rng(seed ^ 0x6badc0deULL);
    GradcheckFixture fx;
    Camera& cam = fx.cam;
    cam.fx = cam.fy = 30.0;
    cam.width = cam.height = 24;
    cam.cx = cam.cy = 11.5;
    cam.world_to_cam = Mat4::Identity();

    Scene& scene = fx.scene;
    scene.sh_degree = sh_degree;
    scene.feat_dim = 8;
    const int n_sh = scene.sh_coeff_count();

    std::vector<double> depths(n_gaussians);
    for (double& z : depths)
        z = uniform(rng, 1.2, 3.0);
    std::sort(depths.begin(), depths.end());
    for (int i = 1; i < n_gaussians; ++i)
        depths[i] = std::max(depths[i], depths[i - 1] + 0.07);

    for (int i = 0; i < n_gaussians; ++i) {
        Gaussian3D g;
        const double z = depths[i];
        const double u = uniform(rng, 5.0, 18.0);
        const double v = uniform(rng, 5.0, 18.0);
        g.mu = Vec3((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
        for (int a = 0; a < 3; ++a) {
            const double sigma_px = uniform(rng, 1.4, 3.2);
            g.scale[a] = sigma_px * z / cam.fx;
        }
        g.rot = random_unit_quat(rng);
        g.opacity = uniform(rng, 0.25, 0.85);
        g.conf = uniform(rng, -1.0, 1.0);
        g.sh.assign(n_sh, Vec3::Zero());
        g.sh[0] = (Vec3(uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8)) -
                   Vec3::Constant(0.5)) /
                  kShDc;
        for (int b = 1; b < n_sh; ++b)
            g.sh[b] = Vec3(uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05));
        if (with_feat)
            g.feat = random_unit_feat(rng, scene.feat_dim);
        scene.geo.push_back(std::move(g));
    }

    if (with_sem) {
        std::vector<SemanticGaussian> sem;
        for (int i = 0; i < n_gaussians; ++i) {
            SemanticGaussian s;
            const double z = depths[i] + 0.03;
            const double u = uniform(rng, 6.0, 17.0);
            const double v = uniform(rng, 6.0, 17.0);
            s.mu = Vec3((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
            s.scale_iso = uniform(rng, 1.6, 3.0) * z / cam.fx;
            s.opacity = uniform(rng, 0.3, 0.85);
            s.feat = random_unit_feat(rng, scene.feat_dim);
            sem.push_back(std::move(s));
        }
        scene.sem = std::move(sem);
    }
    return fx;
}

} // namespace fleg
