// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/rasterizer.hpp"

#include "fleg/geometry.hpp"
#include "fleg/sh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <thread>

namespace fleg {

namespace {

constexpr int kTile = 16;
constexpr double kAlphaCut = 1.0 / 255.0;
constexpr double kCovReg = 0.3;     // px^2 added to the 2D covariance diagonal
constexpr double kDepthEps = 1e-8;  // expected-depth normalization floor

// Footprint cut in mahalanobis distance. The splat weight is tapered as
// opacity*(g - 1/255)/(1 - 1/255), so it reaches exactly zero on this ellipse
// and the bounding-box clip introduces no jump in the composited image.
const double kFootprintMaha = 2.0 * std::log(255.0);

int resolve_threads(int requested) {
    if (const char* env = std::getenv("FLEG_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0)
            requested = n;
    }
    if (requested <= 0)
        requested = int(std::thread::hardware_concurrency());
    return std::max(1, requested);
}

struct PassChannels {
    int count = 0;
    int color = -1;   // 3 channels
    int z = -1;       // 1 channel
    int feat = -1;    // feat_dim channels
    int feat_dim = 0;
    int scalar = -1;  // 1 channel
    std::vector<double> background;
};

struct Splat {
    int source = 0;
    int row = 0;  // payload row (append order, unaffected by the depth sort)
    double z = 0.0;
    double u = 0.0, v = 0.0;
    double ia = 0.0, ib = 0.0, ic = 0.0;  // inverse 2D covariance
    double opacity = 0.0;
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    // cached for the adjoint chains
    Vec3 p_cam = Vec3::Zero();
    Mat2 cov2 = Mat2::Zero();
    Vec3 dir = Vec3::Zero();
    double dir_norm = 1.0;
    Vec3 raw_color = Vec3::Zero();
};

struct SplatSet {
    PassChannels ch;
    std::vector<Splat> splats;          // depth-sorted, ties broken by source index
    std::vector<double> payload;        // one row per splat, indexed by Splat::row
    std::vector<std::vector<int>> tiles;
    int tiles_x = 0, tiles_y = 0;
};

// Projects one gaussian footprint; returns false when culled.
bool project_splat(const Vec3& mu, const Mat3& cov3, double opacity, const Camera& cam, Splat& s) {
    const Vec3 p = cam.to_camera(mu);
    if (!(p.z() > kZNear))
        return false;
    const double z = p.z();
    const double inv_z = 1.0 / z;
    s.p_cam = p;
    s.z = z;
    s.u = cam.fx * p.x() * inv_z + cam.cx;
    s.v = cam.fy * p.y() * inv_z + cam.cy;

    Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
    jac(0, 0) = cam.fx * inv_z;
    jac(0, 2) = -cam.fx * p.x() * inv_z * inv_z;
    jac(1, 1) = cam.fy * inv_z;
    jac(1, 2) = -cam.fy * p.y() * inv_z * inv_z;
    const Eigen::Matrix<double, 2, 3> m = jac * cam.rotation();
    Mat2 cov2 = m * cov3 * m.transpose();
    cov2(0, 0) += kCovReg;
    cov2(1, 1) += kCovReg;
    s.cov2 = cov2;

    const double det = cov2(0, 0) * cov2(1, 1) - cov2(0, 1) * cov2(0, 1);
    if (!(det > 0.0) || !std::isfinite(det))
        return false;
    const double inv_det = 1.0 / det;
    s.ia = cov2(1, 1) * inv_det;
    s.ib = -cov2(0, 1) * inv_det;
    s.ic = cov2(0, 0) * inv_det;
    s.opacity = opacity;

    const double rx = std::sqrt(kFootprintMaha * cov2(0, 0));
    const double ry = std::sqrt(kFootprintMaha * cov2(1, 1));
    s.x0 = std::max(0, int(std::ceil(s.u - rx)));
    s.x1 = std::min(cam.width, int(std::floor(s.u + rx)) + 1);
    s.y0 = std::max(0, int(std::ceil(s.v - ry)));
    s.y1 = std::min(cam.height, int(std::floor(s.v + ry)) + 1);
    return s.x1 > s.x0 && s.y1 > s.y0;
}

void finalize_set(SplatSet& set, int width, int height) {
    std::sort(set.splats.begin(), set.splats.end(), [](const Splat& a, const Splat& b) {
        return a.z != b.z ? a.z < b.z : a.source < b.source;
    });
    set.tiles_x = (width + kTile - 1) / kTile;
    set.tiles_y = (height + kTile - 1) / kTile;
    set.tiles.assign(size_t(set.tiles_x) * set.tiles_y, {});
    for (size_t i = 0; i < set.splats.size(); ++i) {
        const Splat& s = set.splats[i];
        const int tx0 = s.x0 / kTile, tx1 = (s.x1 - 1) / kTile;
        const int ty0 = s.y0 / kTile, ty1 = (s.y1 - 1) / kTile;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                set.tiles[size_t(ty) * set.tiles_x + tx].push_back(int(i));
    }
}

void check_geo(const Scene& scene) {
    const int n_sh = scene.sh_coeff_count();
    for (const Gaussian3D& g : scene.geo) {
        if (!g.mu.allFinite() || !g.scale.allFinite() || g.scale.minCoeff() <= 0.0)
            throw DataError("render: invalid gaussian position/scale");
        if (!(g.rot.norm() > 0.0) || !g.rot.allFinite())
            throw DataError("render: degenerate rotation");
        if (!std::isfinite(g.opacity) || g.opacity < 0.0 || g.opacity > 1.0)
            throw DataError("render: opacity outside [0,1]");
        if (int(g.sh.size()) != n_sh)
            throw DataError("render: SH coefficient count mismatch");
        if (!g.feat.empty() && int(g.feat.size()) != scene.feat_dim)
            throw DataError("render: feature dimension mismatch");
    }
    if (scene.sem)
        for (const SemanticGaussian& s : *scene.sem) {
            if (!s.mu.allFinite() || !(s.scale_iso > 0.0))
                throw DataError("render: invalid semantic gaussian");
            if (!std::isfinite(s.opacity) || s.opacity < 0.0 || s.opacity > 1.0)
                throw DataError("render: semantic opacity outside [0,1]");
            if (int(s.feat.size()) != scene.feat_dim)
                throw DataError("render: semantic feature dimension mismatch");
        }
}

SplatSet build_geo_pass(const Scene& scene, const Camera& cam, const RenderOptions& options,
                        bool include_feature, bool include_scalar) {
    SplatSet set;
    PassChannels& ch = set.ch;
    int c = 0;
    if (options.color) {
        ch.color = c;
        c += 3;
    }
    if (options.depth) {
        ch.z = c;
        c += 1;
    }
    if (include_feature) {
        ch.feat = c;
        ch.feat_dim = scene.feat_dim;
        c += scene.feat_dim;
    }
    if (include_scalar) {
        ch.scalar = c;
        c += 1;
    }
    ch.count = c;
    ch.background.assign(c, 0.0);
    if (ch.color >= 0)
        for (int k = 0; k < 3; ++k)
            ch.background[ch.color + k] = options.background[k];

    const Vec3 cam_center = cam.center();
    set.splats.reserve(scene.geo.size());
    for (size_t i = 0; i < scene.geo.size(); ++i) {
        const Gaussian3D& g = scene.geo[i];
        Splat s;
        s.source = int(i);
        const Vec4 q = g.rot / g.rot.norm();
        const Mat3 rot = quat_to_mat(q);
        const Mat3 cov3 = rot * g.scale.array().square().matrix().asDiagonal() * rot.transpose();
        if (!project_splat(g.mu, cov3, g.opacity, cam, s))
            continue;
        s.row = int(set.splats.size());
        const size_t base = set.payload.size();
        set.payload.resize(base + c, 0.0);
        if (ch.color >= 0) {
            const Vec3 delta = g.mu - cam_center;
            s.dir_norm = delta.norm();
            s.dir = s.dir_norm > 0.0 ? Vec3(delta / s.dir_norm) : Vec3(0, 0, 1);
            s.raw_color = sh_eval(scene.sh_degree, g.sh, s.dir);
            for (int k = 0; k < 3; ++k)
                set.payload[base + ch.color + k] = std::clamp(s.raw_color[k], 0.0, 1.0);
        }
        if (ch.z >= 0)
            set.payload[base + ch.z] = s.z;
        if (ch.feat >= 0 && !g.feat.empty())
            std::copy(g.feat.begin(), g.feat.end(), set.payload.begin() + base + ch.feat);
        if (ch.scalar >= 0)
            set.payload[base + ch.scalar] = (*options.splat_scalar)[i];
        set.splats.push_back(s);
    }
    finalize_set(set, cam.width, cam.height);
    return set;
}

SplatSet build_sem_pass(const Scene& scene, const Camera& cam, const RenderOptions& options,
                        bool include_feature, bool include_scalar) {
    SplatSet set;
    PassChannels& ch = set.ch;
    int c = 0;
    if (include_feature) {
        ch.feat = c;
        ch.feat_dim = scene.feat_dim;
        c += scene.feat_dim;
    }
    if (include_scalar) {
        ch.scalar = c;
        c += 1;
    }
    ch.count = c;
    ch.background.assign(c, 0.0);

    const std::vector<SemanticGaussian>& sem = *scene.sem;
    for (size_t j = 0; j < sem.size(); ++j) {
        Splat s;
        s.source = int(j);
        const double s2 = sem[j].scale_iso * sem[j].scale_iso;
        if (!project_splat(sem[j].mu, Mat3::Identity() * s2, sem[j].opacity, cam, s))
            continue;
        s.row = int(set.splats.size());
        const size_t base = set.payload.size();
        set.payload.resize(base + c, 0.0);
        if (ch.feat >= 0)
            std::copy(sem[j].feat.begin(), sem[j].feat.end(), set.payload.begin() + base + ch.feat);
        if (ch.scalar >= 0)
            set.payload[base + ch.scalar] = (*options.splat_scalar)[j];
        set.splats.push_back(s);
    }
    finalize_set(set, cam.width, cam.height);
    return set;
}

void run_tiled(int tile_count, int threads, const std::function<void(int)>& body) {
    if (threads <= 1) {
        for (int t = 0; t < tile_count; ++t)
            body(t);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w)
        pool.emplace_back([&, w]() {
            for (int t = w; t < tile_count; t += threads)
                body(t);
        });
    for (std::thread& th : pool)
        th.join();
}

/// Front-to-back compositing over tiles. values: H*W*C; alpha: H*W.
void composite(const SplatSet& set, int width, int height, int threads,
               std::vector<double>& values, std::vector<double>& alpha) {
    const int c_count = set.ch.count;
    values.assign(size_t(height) * width * c_count, 0.0);
    alpha.assign(size_t(height) * width, 0.0);
    const int tile_count = set.tiles_x * set.tiles_y;

    run_tiled(tile_count, threads, [&](int t) {
        const int tx = t % set.tiles_x, ty = t / set.tiles_x;
        const int px0 = tx * kTile, px1 = std::min(width, px0 + kTile);
        const int py0 = ty * kTile, py1 = std::min(height, py0 + kTile);
        const std::vector<int>& list = set.tiles[t];
        for (int y = py0; y < py1; ++y)
            for (int x = px0; x < px1; ++x) {
                double* val = values.data() + (size_t(y) * width + x) * c_count;
                double transmittance = 1.0;
                for (int si : list) {
                    const Splat& s = set.splats[si];
                    if (x < s.x0 || x >= s.x1 || y < s.y0 || y >= s.y1)
                        continue;
                    const double dx = x - s.u, dy = y - s.v;
                    const double maha = s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy;
                    const double g = std::exp(-0.5 * maha);
                    if (g <= kAlphaCut)
                        continue;
                    const double a = s.opacity * (g - kAlphaCut) / (1.0 - kAlphaCut);
                    const double w = a * transmittance;
                    const double* row = set.payload.data() + size_t(s.row) * c_count;
                    for (int k = 0; k < c_count; ++k)
                        val[k] += w * row[k];
                    transmittance *= 1.0 - a;
                }
                for (int k = 0; k < c_count; ++k)
                    val[k] += transmittance * set.ch.background[k];
                alpha[size_t(y) * width + x] = 1.0 - transmittance;
            }
    });
}

// Pixel-space partials per splat: [du, dv, d_ia, d_ib, d_ic, d_opacity, d_payload...].
// d_ib is accumulated per off-diagonal matrix entry (i.e. d_maha * dx*dy).
constexpr int kGradFixed = 6;

std::vector<double> adjoint(const SplatSet& set, int width, int height, int threads,
                            const std::vector<double>& d_values, const std::vector<double>& d_alpha) {
    const int c_count = set.ch.count;
    const int stride = kGradFixed + c_count;
    const int tile_count = set.tiles_x * set.tiles_y;
    std::vector<std::vector<double>> tile_grads(tile_count);

    run_tiled(tile_count, threads, [&](int t) {
        const std::vector<int>& list = set.tiles[t];
        if (list.empty())
            return;
        std::vector<double>& grads = tile_grads[t];
        grads.assign(list.size() * size_t(stride), 0.0);
        const int tx = t % set.tiles_x, ty = t / set.tiles_x;
        const int px0 = tx * kTile, px1 = std::min(width, px0 + kTile);
        const int py0 = ty * kTile, py1 = std::min(height, py0 + kTile);

        struct Entry {
            int pos;       // position in the tile list
            double a, g, transmittance;
        };
        std::vector<Entry> entries;
        std::vector<double> tail(c_count);
        for (int y = py0; y < py1; ++y)
            for (int x = px0; x < px1; ++x) {
                const double* dval = d_values.data() + (size_t(y) * width + x) * c_count;
                const double dA = d_alpha.empty() ? 0.0 : d_alpha[size_t(y) * width + x];
                entries.clear();
                double transmittance = 1.0;
                for (size_t li = 0; li < list.size(); ++li) {
                    const Splat& s = set.splats[list[li]];
                    if (x < s.x0 || x >= s.x1 || y < s.y0 || y >= s.y1)
                        continue;
                    const double dx = x - s.u, dy = y - s.v;
                    const double maha = s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy;
                    const double g = std::exp(-0.5 * maha);
                    if (g <= kAlphaCut)
                        continue;
                    const double a = s.opacity * (g - kAlphaCut) / (1.0 - kAlphaCut);
                    entries.push_back({int(li), a, g, transmittance});
                    transmittance *= 1.0 - a;
                }
                if (entries.empty())
                    continue;
                // tail composites, folded front-to-back in reverse
                std::copy(set.ch.background.begin(), set.ch.background.end(), tail.begin());
                double tail_ones = 0.0;
                for (int k = int(entries.size()) - 1; k >= 0; --k) {
                    const Entry& e = entries[k];
                    const int si = list[e.pos];
                    const Splat& s = set.splats[si];
                    const double* row = set.payload.data() + size_t(s.row) * c_count;
                    double d_a = 0.0;
                    double* gslot = grads.data() + size_t(e.pos) * stride;
                    for (int cch = 0; cch < c_count; ++cch) {
                        const double dv = dval[cch];
                        if (dv != 0.0) {
                            d_a += dv * e.transmittance * (row[cch] - tail[cch]);
                            gslot[kGradFixed + cch] += dv * e.a * e.transmittance;
                        }
                    }
                    if (dA != 0.0)
                        d_a += dA * e.transmittance * (1.0 - tail_ones);
                    if (d_a != 0.0) {
                        const double dx = x - s.u, dy = y - s.v;
                        gslot[5] += d_a * (e.g - kAlphaCut) / (1.0 - kAlphaCut);
                        const double d_g = d_a * s.opacity / (1.0 - kAlphaCut);
                        const double d_maha = -0.5 * e.g * d_g;
                        const double d_dx = d_maha * 2.0 * (s.ia * dx + s.ib * dy);
                        const double d_dy = d_maha * 2.0 * (s.ib * dx + s.ic * dy);
                        gslot[0] -= d_dx;
                        gslot[1] -= d_dy;
                        gslot[2] += d_maha * dx * dx;
                        gslot[3] += d_maha * dx * dy;
                        gslot[4] += d_maha * dy * dy;
                    }
                    // fold this entry into the tails for the entry in front of it
                    for (int cch = 0; cch < c_count; ++cch)
                        tail[cch] = e.a * row[cch] + (1.0 - e.a) * tail[cch];
                    tail_ones = e.a + (1.0 - e.a) * tail_ones;
                }
            }
    });

    // deterministic reduction in tile order
    std::vector<double> out(set.splats.size() * size_t(stride), 0.0);
    for (int t = 0; t < tile_count; ++t) {
        if (tile_grads[t].empty())
            continue;
        const std::vector<int>& list = set.tiles[t];
        for (size_t li = 0; li < list.size(); ++li) {
            const double* src = tile_grads[t].data() + li * size_t(stride);
            double* dst = out.data() + size_t(list[li]) * stride;
            for (int k = 0; k < stride; ++k)
                dst[k] += src[k];
        }
    }
    return out;
}

// dR/dq entries of quat_to_mat at a unit quaternion.
void quat_rotation_partials(const Vec4& q, Mat3 dr[4]) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    dr[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    dr[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dr[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dr[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    for (int i = 0; i < 4; ++i)
        dr[i] *= 2.0;
}

// Shared part of the per-splat chain: pixel-space partials -> camera point and
// 3D covariance gradients.
struct ChainResult {
    Vec3 d_mu_world = Vec3::Zero();
    Mat3 d_cov3 = Mat3::Zero();
};

ChainResult chain_common(const Splat& s, const Camera& cam, double d_u, double d_v,
                         const Mat2& d_inv2_mat, double d_z_extra) {
    // inverse: K = cov2^-1, dS = -K dK K
    Mat2 inv2;
    inv2 << s.ia, s.ib, s.ib, s.ic;
    const Mat2 d_cov2 = -inv2 * d_inv2_mat * inv2;

    const Mat3 w_rot = cam.rotation();
    const double z = s.p_cam.z();
    const double inv_z = 1.0 / z;
    Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
    jac(0, 0) = cam.fx * inv_z;
    jac(0, 2) = -cam.fx * s.p_cam.x() * inv_z * inv_z;
    jac(1, 1) = cam.fy * inv_z;
    jac(1, 2) = -cam.fy * s.p_cam.y() * inv_z * inv_z;
    const Eigen::Matrix<double, 2, 3> m = jac * w_rot;

    ChainResult res;
    res.d_cov3 = m.transpose() * d_cov2 * m;

    // The jacobian's own dependence on p_cam needs cov3 and is handled by
    // chain_jacobian_position; only cov3-independent terms live here.
    Vec3 d_pcam = Vec3::Zero();
    // center projection
    d_pcam.x() += d_u * cam.fx * inv_z;
    d_pcam.z() -= d_u * cam.fx * s.p_cam.x() * inv_z * inv_z;
    d_pcam.y() += d_v * cam.fy * inv_z;
    d_pcam.z() -= d_v * cam.fy * s.p_cam.y() * inv_z * inv_z;
    // depth payload
    d_pcam.z() += d_z_extra;
    res.d_mu_world = w_rot.transpose() * d_pcam;
    return res;
}

// Jacobian-position coupling: dJ = 2 dS M cov3 W^T contributes to p_cam.
Vec3 chain_jacobian_position(const Splat& s, const Camera& cam, const Mat3& cov3, const Mat2& d_inv2_mat) {
    Mat2 inv2;
    inv2 << s.ia, s.ib, s.ib, s.ic;
    const Mat2 d_cov2 = -inv2 * d_inv2_mat * inv2;

    const Mat3 w_rot = cam.rotation();
    const double z = s.p_cam.z();
    const double inv_z = 1.0 / z;
    Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
    jac(0, 0) = cam.fx * inv_z;
    jac(0, 2) = -cam.fx * s.p_cam.x() * inv_z * inv_z;
    jac(1, 1) = cam.fy * inv_z;
    jac(1, 2) = -cam.fy * s.p_cam.y() * inv_z * inv_z;
    const Eigen::Matrix<double, 2, 3> m = jac * w_rot;

    const Eigen::Matrix<double, 2, 3> d_m = 2.0 * d_cov2 * m * cov3;
    const Eigen::Matrix<double, 2, 3> d_jac = d_m * w_rot.transpose();

    Vec3 d_pcam = Vec3::Zero();
    const double inv_z2 = inv_z * inv_z;
    const double inv_z3 = inv_z2 * inv_z;
    d_pcam.z() += d_jac(0, 0) * (-cam.fx * inv_z2);
    d_pcam.x() += d_jac(0, 2) * (-cam.fx * inv_z2);
    d_pcam.z() += d_jac(0, 2) * (2.0 * cam.fx * s.p_cam.x() * inv_z3);
    d_pcam.z() += d_jac(1, 1) * (-cam.fy * inv_z2);
    d_pcam.y() += d_jac(1, 2) * (-cam.fy * inv_z2);
    d_pcam.z() += d_jac(1, 2) * (2.0 * cam.fy * s.p_cam.y() * inv_z3);
    return cam.rotation().transpose() * d_pcam;
}

} // namespace

Mat3 covariance_3d(const Gaussian3D& g) {
    const Vec4 q = g.rot / g.rot.norm();
    const Mat3 rot = quat_to_mat(q);
    return rot * g.scale.array().square().matrix().asDiagonal() * rot.transpose();
}

void check_feature_source(const Scene& scene, bool geo_feature) {
    if (!geo_feature)
        return;
    for (const Gaussian3D& g : scene.geo)
        if (!g.feat.empty())
            return;
    throw DataError("render: feature channel requested but the scene has neither semantic gaussians nor "
                    "geometry features");
}

RenderOutput render(const Scene& scene, const Camera& cam, const RenderOptions& options) {
    check_geo(scene);
    const bool sem_pass_wanted =
        options.use_sem_features && scene.sem.has_value() && (options.feature || options.splat_scalar);
    const bool geo_feature = options.feature && !sem_pass_wanted;
    const bool geo_scalar = options.splat_scalar && !sem_pass_wanted;
    check_feature_source(scene, geo_feature && !scene.geo.empty());
    if (geo_scalar && options.splat_scalar->size() != scene.geo.size())
        throw DataError("render: splat_scalar length mismatch");
    if (sem_pass_wanted && options.splat_scalar && options.splat_scalar->size() != scene.sem->size())
        throw DataError("render: splat_scalar length mismatch");

    const int threads = resolve_threads(options.threads);
    RenderOutput out;
    out.feature_from_sem = sem_pass_wanted;

    SplatSet geo = build_geo_pass(scene, cam, options, geo_feature, geo_scalar);
    std::vector<double> values, alpha;
    composite(geo, cam.width, cam.height, threads, values, alpha);

    const int w = cam.width, h = cam.height;
    out.alpha = ScalarMap{h, w, alpha};
    if (geo.ch.color >= 0) {
        out.color = Image::zeros(h, w);
        for (size_t p = 0; p < size_t(h) * w; ++p)
            for (int k = 0; k < 3; ++k)
                out.color.data[p * 3 + k] = values[p * geo.ch.count + geo.ch.color + k];
    }
    if (geo.ch.z >= 0) {
        out.depth = DepthMap::zeros(h, w);
        for (size_t p = 0; p < size_t(h) * w; ++p)
            out.depth.data[p] = values[p * geo.ch.count + geo.ch.z] / std::max(alpha[p], kDepthEps);
    }
    if (geo.ch.feat >= 0) {
        out.feature = FeatureMap::zeros(h, w, scene.feat_dim);
        for (size_t p = 0; p < size_t(h) * w; ++p)
            for (int k = 0; k < scene.feat_dim; ++k)
                out.feature.data[p * scene.feat_dim + k] = values[p * geo.ch.count + geo.ch.feat + k];
    }
    if (geo.ch.scalar >= 0) {
        out.scalar = ScalarMap::zeros(h, w);
        for (size_t p = 0; p < size_t(h) * w; ++p)
            out.scalar.data[p] = values[p * geo.ch.count + geo.ch.scalar];
    }

    if (sem_pass_wanted) {
        SplatSet sem = build_sem_pass(scene, cam, options, options.feature, options.splat_scalar != nullptr);
        std::vector<double> sem_values, sem_alpha;
        composite(sem, cam.width, cam.height, threads, sem_values, sem_alpha);
        if (sem.ch.feat >= 0) {
            out.feature = FeatureMap::zeros(h, w, scene.feat_dim);
            for (size_t p = 0; p < size_t(h) * w; ++p)
                for (int k = 0; k < scene.feat_dim; ++k)
                    out.feature.data[p * scene.feat_dim + k] = sem_values[p * sem.ch.count + sem.ch.feat + k];
        }
        if (sem.ch.scalar >= 0) {
            out.scalar = ScalarMap::zeros(h, w);
            for (size_t p = 0; p < size_t(h) * w; ++p)
                out.scalar.data[p] = sem_values[p * sem.ch.count + sem.ch.scalar];
        }
    }
    return out;
}

std::pair<RenderOutput, RenderGrad> render_with_grad(const Scene& scene, const Camera& cam,
                                                     const RenderOptions& options, const PixelGrad& pixel_grad) {
    check_geo(scene);
    const int w = cam.width, h = cam.height;
    const size_t n_px = size_t(h) * w;
    if (!pixel_grad.d_color.empty() && pixel_grad.d_color.size() != n_px * 3)
        throw DataError("render_with_grad: d_color size mismatch");
    if (!pixel_grad.d_depth.empty() && pixel_grad.d_depth.size() != n_px)
        throw DataError("render_with_grad: d_depth size mismatch");
    if (!pixel_grad.d_feature.empty() && pixel_grad.d_feature.size() != n_px * size_t(scene.feat_dim))
        throw DataError("render_with_grad: d_feature size mismatch");
    for (double v : pixel_grad.d_color)
        if (!std::isfinite(v))
            throw DataError("render_with_grad: non-finite pixel gradient");
    for (double v : pixel_grad.d_depth)
        if (!std::isfinite(v))
            throw DataError("render_with_grad: non-finite pixel gradient");
    for (double v : pixel_grad.d_feature)
        if (!std::isfinite(v))
            throw DataError("render_with_grad: non-finite pixel gradient");

    const bool sem_pass_wanted =
        options.use_sem_features && scene.sem.has_value() && (options.feature || options.splat_scalar);
    const bool geo_feature = options.feature && !sem_pass_wanted;
    const bool geo_scalar = options.splat_scalar && !sem_pass_wanted;
    check_feature_source(scene, geo_feature && !scene.geo.empty());
    const int threads = resolve_threads(options.threads);

    RenderOutput out;
    out.feature_from_sem = sem_pass_wanted;
    RenderGrad grad;
    const int n_sh = scene.sh_coeff_count();
    grad.d_mu.assign(scene.geo.size(), Vec3::Zero());
    grad.d_scale.assign(scene.geo.size(), Vec3::Zero());
    grad.d_rot.assign(scene.geo.size(), Vec4::Zero());
    grad.d_opacity.assign(scene.geo.size(), 0.0);
    grad.d_sh.assign(scene.geo.size(), std::vector<Vec3>(n_sh, Vec3::Zero()));
    grad.d_feat.assign(scene.geo.size(), std::vector<double>(geo_feature ? scene.feat_dim : 0, 0.0));

    // ---- geometry pass
    SplatSet geo = build_geo_pass(scene, cam, options, geo_feature, geo_scalar);
    std::vector<double> values, alpha;
    composite(geo, w, h, threads, values, alpha);

    out.alpha = ScalarMap{h, w, alpha};
    if (geo.ch.color >= 0) {
        out.color = Image::zeros(h, w);
        for (size_t p = 0; p < n_px; ++p)
            for (int k = 0; k < 3; ++k)
                out.color.data[p * 3 + k] = values[p * geo.ch.count + geo.ch.color + k];
    }
    if (geo.ch.z >= 0) {
        out.depth = DepthMap::zeros(h, w);
        for (size_t p = 0; p < n_px; ++p)
            out.depth.data[p] = values[p * geo.ch.count + geo.ch.z] / std::max(alpha[p], kDepthEps);
    }
    if (geo.ch.feat >= 0) {
        out.feature = FeatureMap::zeros(h, w, scene.feat_dim);
        for (size_t p = 0; p < n_px; ++p)
            for (int k = 0; k < scene.feat_dim; ++k)
                out.feature.data[p * scene.feat_dim + k] = values[p * geo.ch.count + geo.ch.feat + k];
    }

    // pixel-space gradients for the geo pass
    std::vector<double> d_values(n_px * size_t(geo.ch.count), 0.0);
    std::vector<double> d_alpha;
    if (geo.ch.color >= 0 && !pixel_grad.d_color.empty())
        for (size_t p = 0; p < n_px; ++p)
            for (int k = 0; k < 3; ++k)
                d_values[p * geo.ch.count + geo.ch.color + k] = pixel_grad.d_color[p * 3 + k];
    if (geo.ch.z >= 0 && !pixel_grad.d_depth.empty()) {
        d_alpha.assign(n_px, 0.0);
        for (size_t p = 0; p < n_px; ++p) {
            const double denom = std::max(alpha[p], kDepthEps);
            const double dd = pixel_grad.d_depth[p];
            d_values[p * geo.ch.count + geo.ch.z] = dd / denom;
            if (alpha[p] > kDepthEps)
                d_alpha[p] = -dd * values[p * geo.ch.count + geo.ch.z] / (denom * denom);
        }
    }
    if (geo.ch.feat >= 0 && !pixel_grad.d_feature.empty())
        for (size_t p = 0; p < n_px; ++p)
            for (int k = 0; k < scene.feat_dim; ++k)
                d_values[p * geo.ch.count + geo.ch.feat + k] = pixel_grad.d_feature[p * scene.feat_dim + k];

    const std::vector<double> partials = adjoint(geo, w, h, threads, d_values, d_alpha);
    const int stride = kGradFixed + geo.ch.count;
    for (size_t i = 0; i < geo.splats.size(); ++i) {
        const Splat& s = geo.splats[i];
        const Gaussian3D& g = scene.geo[s.source];
        const double* gs = partials.data() + i * size_t(stride);
        const double d_u = gs[0], d_v = gs[1];
        Mat2 d_inv2;
        d_inv2 << gs[2], gs[3], gs[3], gs[4];
        grad.d_opacity[s.source] += gs[5];

        const Vec4 q = g.rot / g.rot.norm();
        const Mat3 rot = quat_to_mat(q);
        const Mat3 cov3 = rot * g.scale.array().square().matrix().asDiagonal() * rot.transpose();

        const double d_z_extra = geo.ch.z >= 0 ? gs[kGradFixed + geo.ch.z] : 0.0;
        ChainResult cr = chain_common(s, cam, d_u, d_v, d_inv2, d_z_extra);
        Vec3 d_mu = cr.d_mu_world + chain_jacobian_position(s, cam, cov3, d_inv2);

        // cov3 = R diag(s^2) R^T
        const Mat3 d_cov3 = cr.d_cov3;
        const Mat3 rds = rot * g.scale.array().square().matrix().asDiagonal();
        const Mat3 d_rot_mat = 2.0 * d_cov3 * rds;
        const Mat3 rt_dcov_r = rot.transpose() * d_cov3 * rot;
        for (int k = 0; k < 3; ++k)
            grad.d_scale[s.source][k] += 2.0 * g.scale[k] * rt_dcov_r(k, k);
        Mat3 dr[4];
        quat_rotation_partials(q, dr);
        Vec4 d_qhat;
        for (int k = 0; k < 4; ++k)
            d_qhat[k] = (d_rot_mat.array() * dr[k].array()).sum();
        const double qn = g.rot.norm();
        grad.d_rot[s.source] += (Mat4::Identity() - q * q.transpose()) / qn * d_qhat;

        // color payload -> SH
        if (geo.ch.color >= 0) {
            Vec3 d_raw = Vec3::Zero();
            for (int k = 0; k < 3; ++k) {
                const double dv = gs[kGradFixed + geo.ch.color + k];
                if (s.raw_color[k] > 0.0 && s.raw_color[k] < 1.0)
                    d_raw[k] = dv;
            }
            if (!d_raw.isZero()) {
                Vec3 d_dir = Vec3::Zero();
                sh_eval_backward(scene.sh_degree, g.sh, s.dir, d_raw, grad.d_sh[s.source], d_dir);
                if (scene.sh_degree > 0 && s.dir_norm > 0.0)
                    d_mu += (Mat3::Identity() - s.dir * s.dir.transpose()) / s.dir_norm * d_dir;
            }
        }
        if (geo.ch.feat >= 0)
            for (int k = 0; k < scene.feat_dim; ++k)
                grad.d_feat[s.source][k] += gs[kGradFixed + geo.ch.feat + k];
        grad.d_mu[s.source] += d_mu;
    }

    // ---- semantic pass
    if (sem_pass_wanted) {
        const std::vector<SemanticGaussian>& sem = *scene.sem;
        grad.sem_d_mu.assign(sem.size(), Vec3::Zero());
        grad.sem_d_scale_iso.assign(sem.size(), 0.0);
        grad.sem_d_opacity.assign(sem.size(), 0.0);
        grad.sem_d_feat.assign(sem.size(), std::vector<double>(scene.feat_dim, 0.0));

        SplatSet sp = build_sem_pass(scene, cam, options, options.feature, options.splat_scalar != nullptr);
        std::vector<double> sem_values, sem_alpha;
        composite(sp, w, h, threads, sem_values, sem_alpha);
        if (sp.ch.feat >= 0) {
            out.feature = FeatureMap::zeros(h, w, scene.feat_dim);
            for (size_t p = 0; p < n_px; ++p)
                for (int k = 0; k < scene.feat_dim; ++k)
                    out.feature.data[p * scene.feat_dim + k] = sem_values[p * sp.ch.count + sp.ch.feat + k];
        }
        if (sp.ch.scalar >= 0) {
            out.scalar = ScalarMap::zeros(h, w);
            for (size_t p = 0; p < n_px; ++p)
                out.scalar.data[p] = sem_values[p * sp.ch.count + sp.ch.scalar];
        }

        std::vector<double> sem_dvalues(n_px * size_t(sp.ch.count), 0.0);
        if (sp.ch.feat >= 0 && !pixel_grad.d_feature.empty())
            for (size_t p = 0; p < n_px; ++p)
                for (int k = 0; k < scene.feat_dim; ++k)
                    sem_dvalues[p * sp.ch.count + sp.ch.feat + k] = pixel_grad.d_feature[p * scene.feat_dim + k];
        const std::vector<double> sem_partials = adjoint(sp, w, h, threads, sem_dvalues, {});
        const int sem_stride = kGradFixed + sp.ch.count;
        for (size_t i = 0; i < sp.splats.size(); ++i) {
            const Splat& s = sp.splats[i];
            const SemanticGaussian& sg = sem[s.source];
            const double* gs = sem_partials.data() + i * size_t(sem_stride);
            Mat2 d_inv2;
            d_inv2 << gs[2], gs[3], gs[3], gs[4];
            grad.sem_d_opacity[s.source] += gs[5];
            const Mat3 cov3 = Mat3::Identity() * (sg.scale_iso * sg.scale_iso);
            ChainResult cr = chain_common(s, cam, gs[0], gs[1], d_inv2, 0.0);
            grad.sem_d_mu[s.source] += cr.d_mu_world + chain_jacobian_position(s, cam, cov3, d_inv2);
            grad.sem_d_scale_iso[s.source] += 2.0 * sg.scale_iso * cr.d_cov3.trace();
            if (sp.ch.feat >= 0)
                for (int k = 0; k < scene.feat_dim; ++k)
                    grad.sem_d_feat[s.source][k] += gs[kGradFixed + sp.ch.feat + k];
        }
    }
    return {std::move(out), std::move(grad)};
}

} // namespace fleg
