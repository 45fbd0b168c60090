// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/sparsify.hpp"

#include "fleg/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fleg {

namespace {

// Content-based ordering so merged values do not depend on input order.
bool content_less(const Gaussian3D& a, const Gaussian3D& b) {
    for (int k = 0; k < 3; ++k)
        if (a.mu[k] != b.mu[k])
            return a.mu[k] < b.mu[k];
    if (a.conf != b.conf)
        return a.conf < b.conf;
    if (a.opacity != b.opacity)
        return a.opacity < b.opacity;
    for (int k = 0; k < 3; ++k)
        if (a.scale[k] != b.scale[k])
            return a.scale[k] < b.scale[k];
    for (int k = 0; k < 4; ++k)
        if (a.rot[k] != b.rot[k])
            return a.rot[k] < b.rot[k];
    return false;
}

std::vector<double> softmax_weights(const std::vector<const Gaussian3D*>& members) {
    double max_conf = members[0]->conf;
    for (const Gaussian3D* g : members)
        max_conf = std::max(max_conf, g->conf);
    std::vector<double> w(members.size());
    double total = 0.0;
    for (size_t i = 0; i < members.size(); ++i) {
        w[i] = std::exp(members[i]->conf - max_conf);
        total += w[i];
    }
    for (double& v : w)
        v /= total;
    return w;
}

Gaussian3D merge_cell(const std::vector<const Gaussian3D*>& members, int n_sh, int feat_dim) {
    const std::vector<double> w = softmax_weights(members);

    // hemisphere reference: highest confidence, first on ties
    size_t ref = 0;
    for (size_t i = 1; i < members.size(); ++i)
        if (members[i]->conf > members[ref]->conf)
            ref = i;
    const Vec4 ref_rot = members[ref]->rot;

    Gaussian3D out;
    out.mu = Vec3::Zero();
    out.scale = Vec3::Zero();
    out.opacity = 0.0;
    out.conf = 0.0;
    out.sh.assign(n_sh, Vec3::Zero());
    Vec4 rot_sum = Vec4::Zero();
    std::vector<double> feat_sum(feat_dim, 0.0);
    double feat_weight = 0.0;
    for (size_t i = 0; i < members.size(); ++i) {
        const Gaussian3D& g = *members[i];
        out.mu += w[i] * g.mu;
        out.scale += w[i] * g.scale;
        out.opacity += w[i] * g.opacity;
        out.conf += w[i] * g.conf;
        for (int b = 0; b < n_sh; ++b)
            out.sh[b] += w[i] * g.sh[b];
        const double sign = g.rot.dot(ref_rot) < 0.0 ? -1.0 : 1.0;
        rot_sum += w[i] * sign * g.rot;
        if (!g.feat.empty()) {
            for (int k = 0; k < feat_dim; ++k)
                feat_sum[k] += w[i] * g.feat[k];
            feat_weight += w[i];
        }
    }
    out.rot = canonical_quat(rot_sum);
    if (feat_weight > 0.0) {
        out.feat.resize(feat_dim);
        for (int k = 0; k < feat_dim; ++k)
            out.feat[k] = feat_sum[k] / feat_weight;
    }
    return out;
}

} // namespace

VoxelKey voxel_index(const Vec3& mu, double eps) {
    if (!(eps > 0.0))
        throw DataError("voxel_index: eps must be positive");
    return {int64_t(std::round(mu.x() / eps)), int64_t(std::round(mu.y() / eps)),
            int64_t(std::round(mu.z() / eps))};
}

VoxelGrid build_voxel_grid(const std::vector<Gaussian3D>& gaussians, double eps) {
    VoxelGrid grid;
    grid.eps = eps;
    for (size_t i = 0; i < gaussians.size(); ++i)
        grid.cells[voxel_index(gaussians[i].mu, eps)].push_back(int(i));
    return grid;
}

Scene softmax_merge(const Scene& scene, double eps_geo) {
    const VoxelGrid grid = build_voxel_grid(scene.geo, eps_geo);
    Scene out;
    out.sh_degree = scene.sh_degree;
    out.feat_dim = scene.feat_dim;
    out.geo.reserve(grid.cells.size());
    const int n_sh = scene.sh_coeff_count();
    for (const auto& [key, indices] : grid.cells) {
        std::vector<const Gaussian3D*> members;
        members.reserve(indices.size());
        for (int i : indices)
            members.push_back(&scene.geo[i]);
        std::sort(members.begin(), members.end(),
                  [](const Gaussian3D* a, const Gaussian3D* b) { return content_less(*a, *b); });
        out.geo.push_back(merge_cell(members, n_sh, scene.feat_dim));
    }
    return out;
}

Mat3 fuse_covariance(const std::vector<double>& weights, const std::vector<const Gaussian3D*>& members,
                     const Vec3& mu_fused) {
    if (weights.size() != members.size())
        throw DataError("fuse_covariance: weight/member count mismatch");
    double total = 0.0;
    for (double w : weights)
        total += w;
    if (std::abs(total - 1.0) > 1e-6)
        throw DataError("fuse_covariance: weights sum to " + std::to_string(total) + ", expected 1");
    Mat3 fused = Mat3::Zero();
    for (size_t i = 0; i < members.size(); ++i) {
        const Vec3 d = members[i]->mu - mu_fused;
        fused += weights[i] * (covariance_3d(*members[i]) + d * d.transpose());
    }
    return fused;
}

std::pair<double, Vec4> isotropize(const Mat3& cov) {
    double tr = cov.trace();
    if (tr < 0.0) {
        std::fprintf(stderr, "fleg: isotropize: negative trace %g clamped to 0\n", tr);
        tr = 0.0;
    }
    return {std::sqrt(tr / 3.0), Vec4(1.0, 0.0, 0.0, 0.0)};
}

Scene hierarchical_sparsify(const Scene& scene, double eps_geo, double eps_sem) {
    if (!(eps_geo > 0.0) || !(eps_sem > eps_geo))
        throw DataError("hierarchical_sparsify: requires eps_sem > eps_geo > 0");
    Scene merged = softmax_merge(scene, eps_geo);

    const VoxelGrid sem_grid = build_voxel_grid(merged.geo, eps_sem);
    std::vector<SemanticGaussian> sem;
    sem.reserve(sem_grid.cells.size());
    for (const auto& [key, indices] : sem_grid.cells) {
        std::vector<const Gaussian3D*> members;
        for (int i : indices)
            members.push_back(&merged.geo[i]);
        std::sort(members.begin(), members.end(),
                  [](const Gaussian3D* a, const Gaussian3D* b) { return content_less(*a, *b); });
        const std::vector<double> w = softmax_weights(members);

        SemanticGaussian sg;
        sg.mu = Vec3::Zero();
        sg.opacity = 0.0;
        sg.feat.assign(scene.feat_dim, 0.0);
        double feat_weight = 0.0;
        for (size_t i = 0; i < members.size(); ++i) {
            sg.mu += w[i] * members[i]->mu;
            sg.opacity += w[i] * members[i]->opacity;
            if (!members[i]->feat.empty()) {
                for (int k = 0; k < scene.feat_dim; ++k)
                    sg.feat[k] += w[i] * members[i]->feat[k];
                feat_weight += w[i];
            }
        }
        if (feat_weight > 0.0)
            for (double& v : sg.feat)
                v /= feat_weight;
        const Mat3 fused = fuse_covariance(w, members, sg.mu);
        sg.scale_iso = isotropize(fused).first;
        if (!(sg.scale_iso > 0.0))
            sg.scale_iso = eps_geo * 1e-6;  // degenerate single-point cell
        sem.push_back(std::move(sg));
    }

    Scene out;
    out.sh_degree = merged.sh_degree;
    out.feat_dim = merged.feat_dim;
    out.geo = std::move(merged.geo);
    for (Gaussian3D& g : out.geo)
        g.feat.clear();  // geometry set carries no semantics after the split
    out.sem = std::move(sem);
    return out;
}

} // namespace fleg
