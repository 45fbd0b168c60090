// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/types.hpp"

#include <map>
#include <vector>

namespace fleg {

struct AggregationConfig {
    double voxel_eps = 0.05;
    int rounds = 1;
};

/// Multi-view feature consistency pass: lift valid pixels into voxels, pool
/// features per voxel jointly across views, write the voxel means back, then
/// average within each (view, instance) region. Background (id 0) passes the
/// instance stage unchanged; invalid point-map pixels join only that stage.
std::vector<FeatureMap> aggregate_features(const std::vector<PointMap>& pointmaps,
                                           const std::vector<FeatureMap>& features,
                                           const std::vector<InstanceMask>& masks,
                                           const AggregationConfig& cfg);

/// Paints each instance's feature vector over its mask region; background
/// pixels get the zero vector. Throws when a nonzero id has no entry.
FeatureMap masks_to_feature_map(const InstanceMask& mask,
                                const std::map<uint32_t, std::vector<double>>& instance_features);

} // namespace fleg
