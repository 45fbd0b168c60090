// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/types.hpp"

#include <cmath>

namespace fleg {

namespace {

bool finite(const Vec3& v) { return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z()); }

void check_feat(const std::vector<double>& feat, int feat_dim, const std::string& where,
                std::vector<Violation>& out) {
    if (feat.empty())
        return;
    if (int(feat.size()) != feat_dim)
        out.push_back({where + ".feat", "length " + std::to_string(feat.size()) + " != scene feat_dim " +
                                            std::to_string(feat_dim)});
    for (double v : feat)
        if (!std::isfinite(v)) {
            out.push_back({where + ".feat", "non-finite value"});
            break;
        }
}

} // namespace

std::vector<Violation> validate_scene(const Scene& scene) {
    std::vector<Violation> out;
    const int n_sh = scene.sh_coeff_count();
    for (size_t i = 0; i < scene.geo.size(); ++i) {
        const Gaussian3D& g = scene.geo[i];
        const std::string where = "geo[" + std::to_string(i) + "]";
        if (!finite(g.mu))
            out.push_back({where + ".mu", "non-finite"});
        if (!finite(g.scale) || g.scale.minCoeff() <= 0.0)
            out.push_back({where + ".scale", "components must be positive and finite"});
        const double n = g.rot.norm();
        if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6)
            out.push_back({where + ".rot", "norm " + std::to_string(n) + " not unit within 1e-6"});
        else if (g.rot[0] < 0.0)
            out.push_back({where + ".rot", "w component negative (non-canonical sign)"});
        if (!std::isfinite(g.opacity) || g.opacity < 0.0 || g.opacity > 1.0)
            out.push_back({where + ".opacity", "outside [0,1]"});
        if (!std::isfinite(g.conf))
            out.push_back({where + ".conf", "non-finite"});
        if (int(g.sh.size()) != n_sh)
            out.push_back({where + ".sh", "coefficient count " + std::to_string(g.sh.size()) + " != (k+1)^2 = " +
                                              std::to_string(n_sh)});
        for (const Vec3& c : g.sh)
            if (!finite(c)) {
                out.push_back({where + ".sh", "non-finite coefficient"});
                break;
            }
        check_feat(g.feat, scene.feat_dim, where, out);
    }
    if (scene.sem) {
        for (size_t j = 0; j < scene.sem->size(); ++j) {
            const SemanticGaussian& s = (*scene.sem)[j];
            const std::string where = "sem[" + std::to_string(j) + "]";
            if (!finite(s.mu))
                out.push_back({where + ".mu", "non-finite"});
            if (!std::isfinite(s.scale_iso) || s.scale_iso <= 0.0)
                out.push_back({where + ".scale_iso", "must be positive and finite"});
            if (!std::isfinite(s.opacity) || s.opacity < 0.0 || s.opacity > 1.0)
                out.push_back({where + ".opacity", "outside [0,1]"});
            if (s.feat.empty() || int(s.feat.size()) != scene.feat_dim)
                out.push_back({where + ".feat", "length " + std::to_string(s.feat.size()) + " != scene feat_dim " +
                                                    std::to_string(scene.feat_dim)});
        }
    }
    return out;
}

Vec4 canonical_quat(const Vec4& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n))
        throw DataError("degenerate rotation: zero quaternion");
    // dividing an already-unit quaternion by its norm perturbs the last ulp,
    // which would break bit-for-bit idempotence
    Vec4 u = std::abs(n - 1.0) <= 1e-12 ? q : Vec4(q / n);
    for (int i = 0; i < 4; ++i) {
        if (u[i] > 0.0)
            break;
        if (u[i] < 0.0) {
            u = -u;
            break;
        }
    }
    return u;
}

Gaussian3D canonicalize(const Gaussian3D& g) {
    Gaussian3D out = g;
    out.rot = canonical_quat(g.rot);
    return out;
}

Mat3 quat_to_mat(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
    return r;
}

} // namespace fleg
