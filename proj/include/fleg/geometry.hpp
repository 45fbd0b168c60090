// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/types.hpp"

#include <vector>

namespace fleg {

inline constexpr double kZNear = 1e-4;

struct Projection {
    Vec2 pixel = Vec2::Zero();
    double depth = 0.0;
    bool in_frustum = false;
};

/// Pinhole projection of a world point. in_frustum requires depth > kZNear and
/// the continuous pixel coordinate inside [0,W) x [0,H).
Projection project_point(const Vec3& world, const Camera& cam);

/// Projection of every valid point of a point map (invalid pixels yield in_frustum=false).
std::vector<Projection> project_points(const PointMap& points, const Camera& cam);

/// Lifts a depth map to world points through the inverse camera transform.
/// Throws DataError on non-positive or non-finite depth at a valid pixel.
PointMap backproject_depth(const DepthMap& depth, const Camera& cam,
                           const std::vector<uint8_t>* valid = nullptr);

/// One binary mask per view: a pixel is covered when at least one valid
/// context point lands on it under nearest-pixel rounding. No z-test.
/// Throws DataError on an empty context set.
std::vector<CoverageMask> coverage_masks(const std::vector<PointMap>& context_pointmaps,
                                         const std::vector<Camera>& cams);

/// Fraction of covered pixels, exact rational before conversion.
double coverage_ratio(const CoverageMask& mask);

struct SelectionResult {
    std::vector<double> coverage;      // per view
    std::vector<int> selected;         // sorted indices with coverage > tau
    std::vector<CoverageMask> masks;   // per view
};

/// Aggregates context coverage and keeps the views whose ratio exceeds cfg.tau.
SelectionResult select_target_views(const std::vector<PointMap>& pointmaps,
                                    const std::vector<Camera>& cams,
                                    const std::vector<int>& context_indices,
                                    const LossConfig& cfg);

} // namespace fleg
