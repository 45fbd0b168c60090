// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/types.hpp"

#include <array>
#include <map>
#include <vector>

namespace fleg {

using VoxelKey = std::array<int64_t, 3>;

/// Component-wise nearest integer of mu/eps, ties away from zero.
/// Throws DataError when eps <= 0.
VoxelKey voxel_index(const Vec3& mu, double eps);

struct VoxelGrid {
    double eps = 0.0;
    std::map<VoxelKey, std::vector<int>> cells;  // member indices, input order
};

VoxelGrid build_voxel_grid(const std::vector<Gaussian3D>& gaussians, double eps);

/// One gaussian per occupied voxel; every attribute (conf included) is the
/// confidence-softmax average of the cell members. Rotations are averaged
/// after hemisphere alignment with the highest-confidence member, then
/// renormalized. Member accumulation runs in content-sorted order so the
/// result is independent of input order.
Scene softmax_merge(const Scene& scene, double eps_geo);

/// Moment-matched fusion: sum_i w_i (Sigma_i + (mu_i - mu_fused)(mu_i - mu_fused)^T).
/// Throws DataError when the weights do not sum to 1 within 1e-6.
Mat3 fuse_covariance(const std::vector<double>& weights, const std::vector<const Gaussian3D*>& members,
                     const Vec3& mu_fused);

/// Trace-preserving isotropic approximation: scale = sqrt(Tr/3), identity rotation.
/// A (numerically) negative trace is clamped to zero with a warning on stderr.
std::pair<double, Vec4> isotropize(const Mat3& cov);

/// Geometry set merged at eps_geo with features stripped; semantic set built
/// per eps_sem voxel from the merged geometry with softmax-averaged mu,
/// opacity, feat and a moment-matched isotropic scale.
/// Requires eps_sem > eps_geo > 0.
Scene hierarchical_sparsify(const Scene& scene, double eps_geo, double eps_sem);

} // namespace fleg
