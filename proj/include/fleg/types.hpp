// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fleg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Malformed data (files, scenes, argument values). The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One anisotropic splat. Opacity and scale are stored in linear space;
/// `rot` is a unit quaternion stored w-first with w >= 0 after canonicalization.
struct Gaussian3D {
    Vec3 mu = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Vec4 rot{1.0, 0.0, 0.0, 0.0};
    double opacity = 1.0;
    std::vector<Vec3> sh;        // (k+1)^2 coefficients, sh[0] is the DC term
    double conf = 0.0;
    std::vector<double> feat;    // empty when the splat carries no feature
};

/// Isotropic splat of the semantic set. Rotation is implicitly identity.
struct SemanticGaussian {
    Vec3 mu = Vec3::Zero();
    double scale_iso = 1.0;
    double opacity = 1.0;
    std::vector<double> feat;
};

struct Scene {
    std::vector<Gaussian3D> geo;
    std::optional<std::vector<SemanticGaussian>> sem;
    int sh_degree = 0;
    int feat_dim = 16;

    int sh_coeff_count() const { return (sh_degree + 1) * (sh_degree + 1); }
};

/// Pinhole camera. `world_to_cam` is a rigid 4x4 transform whose rotation
/// block must be orthonormal with det +1.
struct Camera {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    Mat4 world_to_cam = Mat4::Identity();
    int width = 0, height = 0;

    Mat3 rotation() const { return world_to_cam.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_cam.topRightCorner<3, 1>(); }
    Vec3 center() const { return -rotation().transpose() * translation(); }
    Vec3 to_camera(const Vec3& world) const { return rotation() * world + translation(); }
    Vec3 to_world(const Vec3& cam) const { return rotation().transpose() * (cam - translation()); }
};

/// H x W x 3 color image, values in [0,1], row-major.
struct Image {
    int height = 0, width = 0;
    std::vector<double> data;

    static Image zeros(int h, int w) { return Image{h, w, std::vector<double>(size_t(h) * w * 3, 0.0)}; }
    static Image constant(int h, int w, const Vec3& c) {
        Image img = zeros(h, w);
        for (size_t i = 0; i < img.data.size(); i += 3) {
            img.data[i] = c.x();
            img.data[i + 1] = c.y();
            img.data[i + 2] = c.z();
        }
        return img;
    }
    double& at(int y, int x, int c) { return data[(size_t(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return data[(size_t(y) * width + x) * 3 + c]; }
    size_t values() const { return data.size(); }
};

/// H x W single-channel map (depth, alpha, relevance).
struct ScalarMap {
    int height = 0, width = 0;
    std::vector<double> data;

    static ScalarMap zeros(int h, int w) { return ScalarMap{h, w, std::vector<double>(size_t(h) * w, 0.0)}; }
    static ScalarMap constant(int h, int w, double v) { return ScalarMap{h, w, std::vector<double>(size_t(h) * w, v)}; }
    double& at(int y, int x) { return data[size_t(y) * width + x]; }
    double at(int y, int x) const { return data[size_t(y) * width + x]; }
};

using DepthMap = ScalarMap;

/// H x W x D feature image, row-major with D contiguous per pixel.
struct FeatureMap {
    int height = 0, width = 0, dim = 0;
    std::vector<double> data;

    static FeatureMap zeros(int h, int w, int d) {
        return FeatureMap{h, w, d, std::vector<double>(size_t(h) * w * d, 0.0)};
    }
    double* px(int y, int x) { return data.data() + (size_t(y) * width + x) * dim; }
    const double* px(int y, int x) const { return data.data() + (size_t(y) * width + x) * dim; }
};

/// H x W instance-id image; id 0 is background.
struct InstanceMask {
    int height = 0, width = 0;
    std::vector<uint32_t> data;

    static InstanceMask zeros(int h, int w) { return InstanceMask{h, w, std::vector<uint32_t>(size_t(h) * w, 0)}; }
    uint32_t& at(int y, int x) { return data[size_t(y) * width + x]; }
    uint32_t at(int y, int x) const { return data[size_t(y) * width + x]; }
};

struct CoverageMask {
    int height = 0, width = 0;
    std::vector<uint8_t> data;

    static CoverageMask zeros(int h, int w) { return CoverageMask{h, w, std::vector<uint8_t>(size_t(h) * w, 0)}; }
    uint8_t& at(int y, int x) { return data[size_t(y) * width + x]; }
    uint8_t at(int y, int x) const { return data[size_t(y) * width + x]; }
};

/// H x W per-pixel world points with a validity plane.
struct PointMap {
    int height = 0, width = 0;
    std::vector<double> xyz;      // h*w*3
    std::vector<uint8_t> valid;   // h*w

    static PointMap zeros(int h, int w) {
        return PointMap{h, w, std::vector<double>(size_t(h) * w * 3, 0.0), std::vector<uint8_t>(size_t(h) * w, 0)};
    }
    Vec3 point(int y, int x) const {
        const double* p = xyz.data() + (size_t(y) * width + x) * 3;
        return Vec3(p[0], p[1], p[2]);
    }
    void set_point(int y, int x, const Vec3& p) {
        double* d = xyz.data() + (size_t(y) * width + x) * 3;
        d[0] = p.x();
        d[1] = p.y();
        d[2] = p.z();
    }
    bool is_valid(int y, int x) const { return valid[size_t(y) * width + x] != 0; }
};

/// Weights and knobs of the training objective.
struct LossConfig {
    double eta = 0.85;          // SSIM/L1 mix
    double lambda_depth = 0.1;  // depth distillation weight
    double lambda_pose = 10.0;  // pose distillation weight
    double lambda_inst = 0.05;  // contrastive weight
    double alpha = 0.07;        // contrastive temperature
    double tau = 0.7;           // coverage threshold
};

struct Violation {
    std::string where;    // e.g. "geo[3].opacity"
    std::string message;
};

/// Checks every model invariant; never throws. Empty result means the scene is valid.
std::vector<Violation> validate_scene(const Scene& scene);

/// Renormalizes the rotation to unit length with canonical sign; other fields unchanged.
/// Throws DataError on a zero quaternion.
Gaussian3D canonicalize(const Gaussian3D& g);

/// Unit quaternion with canonical sign (first nonzero component positive).
Vec4 canonical_quat(const Vec4& q);

/// Rotation matrix of a unit quaternion (w, x, y, z).
Mat3 quat_to_mat(const Vec4& q);

} // namespace fleg
