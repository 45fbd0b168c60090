// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/aggregate.hpp"

#include "fleg/kernels.hpp"
#include "fleg/sparsify.hpp"

#include <map>

namespace fleg {

namespace {

std::vector<FeatureMap> aggregate_once(const std::vector<PointMap>& pointmaps,
                                       const std::vector<FeatureMap>& features,
                                       const std::vector<InstanceMask>& masks, double eps) {
    const int d = features[0].dim;

    // stage 1: joint voxel pooling across all views
    struct Cell {
        std::vector<double> sum;
        size_t count = 0;
    };
    std::map<VoxelKey, Cell> cells;
    for (size_t v = 0; v < pointmaps.size(); ++v) {
        const PointMap& pm = pointmaps[v];
        const FeatureMap& fm = features[v];
        for (int y = 0; y < pm.height; ++y)
            for (int x = 0; x < pm.width; ++x) {
                if (!pm.is_valid(y, x))
                    continue;
                Cell& cell = cells[voxel_index(pm.point(y, x), eps)];
                if (cell.sum.empty())
                    cell.sum.assign(d, 0.0);
                kernels::axpy(1.0, fm.px(y, x), cell.sum.data(), d);
                cell.count += 1;
            }
    }
    for (auto& [key, cell] : cells)
        for (double& s : cell.sum)
            s /= double(cell.count);

    // stage 2: project the voxel means back
    std::vector<FeatureMap> out = features;
    for (size_t v = 0; v < pointmaps.size(); ++v) {
        const PointMap& pm = pointmaps[v];
        for (int y = 0; y < pm.height; ++y)
            for (int x = 0; x < pm.width; ++x) {
                if (!pm.is_valid(y, x))
                    continue;
                const Cell& cell = cells.at(voxel_index(pm.point(y, x), eps));
                std::copy(cell.sum.begin(), cell.sum.end(), out[v].px(y, x));
            }
    }

    // stage 3: per (view, instance) region mean
    for (size_t v = 0; v < masks.size(); ++v) {
        const InstanceMask& mask = masks[v];
        std::map<uint32_t, Cell> regions;
        for (int y = 0; y < mask.height; ++y)
            for (int x = 0; x < mask.width; ++x) {
                const uint32_t id = mask.at(y, x);
                if (id == 0)
                    continue;
                Cell& r = regions[id];
                if (r.sum.empty())
                    r.sum.assign(d, 0.0);
                kernels::axpy(1.0, out[v].px(y, x), r.sum.data(), d);
                r.count += 1;
            }
        for (auto& [id, r] : regions)
            for (double& s : r.sum)
                s /= double(r.count);
        for (int y = 0; y < mask.height; ++y)
            for (int x = 0; x < mask.width; ++x) {
                const uint32_t id = mask.at(y, x);
                if (id == 0)
                    continue;
                const Cell& r = regions.at(id);
                std::copy(r.sum.begin(), r.sum.end(), out[v].px(y, x));
            }
    }
    return out;
}

} // namespace

std::vector<FeatureMap> aggregate_features(const std::vector<PointMap>& pointmaps,
                                           const std::vector<FeatureMap>& features,
                                           const std::vector<InstanceMask>& masks,
                                           const AggregationConfig& cfg) {
    if (pointmaps.size() != features.size() || features.size() != masks.size())
        throw DataError("aggregate_features: view lists are not aligned");
    if (pointmaps.empty())
        throw DataError("aggregate_features: no views");
    for (size_t v = 0; v < pointmaps.size(); ++v) {
        if (pointmaps[v].height != features[v].height || pointmaps[v].width != features[v].width ||
            masks[v].height != features[v].height || masks[v].width != features[v].width)
            throw DataError("aggregate_features: view " + std::to_string(v) + " dimensions differ");
        if (features[v].dim != features[0].dim)
            throw DataError("aggregate_features: feature dimension differs across views");
    }
    if (!(cfg.voxel_eps > 0.0))
        throw DataError("aggregate_features: voxel_eps must be positive");
    if (cfg.rounds < 1)
        throw DataError("aggregate_features: rounds must be >= 1");

    std::vector<FeatureMap> out = features;
    for (int r = 0; r < cfg.rounds; ++r)
        out = aggregate_once(pointmaps, out, masks, cfg.voxel_eps);
    return out;
}

FeatureMap masks_to_feature_map(const InstanceMask& mask,
                                const std::map<uint32_t, std::vector<double>>& instance_features) {
    int d = 0;
    for (const auto& [id, f] : instance_features) {
        d = int(f.size());
        break;
    }
    FeatureMap out = FeatureMap::zeros(mask.height, mask.width, d);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            const uint32_t id = mask.at(y, x);
            if (id == 0)
                continue;
            const auto it = instance_features.find(id);
            if (it == instance_features.end())
                throw DataError("masks_to_feature_map: no feature for instance id " + std::to_string(id));
            std::copy(it->second.begin(), it->second.end(), out.px(y, x));
        }
    return out;
}

} // namespace fleg
