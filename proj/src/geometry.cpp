// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/geometry.hpp"

#include <cmath>

namespace fleg {

Projection project_point(const Vec3& world, const Camera& cam) {
    const Vec3 p = cam.to_camera(world);
    Projection out;
    out.depth = p.z();
    if (!(p.z() > kZNear))
        return out;
    out.pixel = Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    out.in_frustum = out.pixel.x() >= 0.0 && out.pixel.x() < cam.width &&
                     out.pixel.y() >= 0.0 && out.pixel.y() < cam.height;
    return out;
}

std::vector<Projection> project_points(const PointMap& points, const Camera& cam) {
    std::vector<Projection> out(size_t(points.height) * points.width);
    for (int y = 0; y < points.height; ++y)
        for (int x = 0; x < points.width; ++x) {
            const size_t i = size_t(y) * points.width + x;
            if (points.valid[i])
                out[i] = project_point(points.point(y, x), cam);
        }
    return out;
}

PointMap backproject_depth(const DepthMap& depth, const Camera& cam, const std::vector<uint8_t>* valid) {
    PointMap out = PointMap::zeros(depth.height, depth.width);
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            const size_t i = size_t(y) * depth.width + x;
            if (valid && !(*valid)[i])
                continue;
            const double d = depth.at(y, x);
            if (!(d > 0.0) || !std::isfinite(d))
                throw DataError("backproject_depth: non-positive depth at pixel (" + std::to_string(x) + "," +
                                std::to_string(y) + ")");
            const Vec3 p_cam(d * (x - cam.cx) / cam.fx, d * (y - cam.cy) / cam.fy, d);
            out.set_point(y, x, cam.to_world(p_cam));
            out.valid[i] = 1;
        }
    return out;
}

std::vector<CoverageMask> coverage_masks(const std::vector<PointMap>& context_pointmaps,
                                         const std::vector<Camera>& cams) {
    if (context_pointmaps.empty())
        throw DataError("coverage_masks: empty context set");
    std::vector<CoverageMask> masks;
    masks.reserve(cams.size());
    for (const Camera& cam : cams) {
        CoverageMask mask = CoverageMask::zeros(cam.height, cam.width);
        for (const PointMap& pm : context_pointmaps) {
            for (int y = 0; y < pm.height; ++y)
                for (int x = 0; x < pm.width; ++x) {
                    if (!pm.is_valid(y, x))
                        continue;
                    const Projection pr = project_point(pm.point(y, x), cam);
                    if (!(pr.depth > kZNear))
                        continue;
                    // rasterize as a single pixel: half-away-from-zero rounding,
                    // bounds checked on the rounded coordinate
                    const int px = int(std::round(pr.pixel.x()));
                    const int py = int(std::round(pr.pixel.y()));
                    if (px >= 0 && px < cam.width && py >= 0 && py < cam.height)
                        mask.at(py, px) = 1;
                }
        }
        masks.push_back(std::move(mask));
    }
    return masks;
}

double coverage_ratio(const CoverageMask& mask) {
    size_t covered = 0;
    for (uint8_t v : mask.data)
        covered += v != 0;
    return double(covered) / double(mask.data.size());
}

SelectionResult select_target_views(const std::vector<PointMap>& pointmaps,
                                    const std::vector<Camera>& cams,
                                    const std::vector<int>& context_indices,
                                    const LossConfig& cfg) {
    if (context_indices.empty())
        throw DataError("select_target_views: empty context set");
    std::vector<PointMap> context;
    context.reserve(context_indices.size());
    for (int idx : context_indices) {
        if (idx < 0 || size_t(idx) >= pointmaps.size())
            throw DataError("select_target_views: context index " + std::to_string(idx) + " out of range");
        context.push_back(pointmaps[idx]);
    }
    SelectionResult result;
    result.masks = coverage_masks(context, cams);
    result.coverage.reserve(result.masks.size());
    for (size_t j = 0; j < result.masks.size(); ++j) {
        result.coverage.push_back(coverage_ratio(result.masks[j]));
        if (result.coverage.back() > cfg.tau)
            result.selected.push_back(int(j));
    }
    return result;
}

} // namespace fleg
