// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/types.hpp"

#include <map>
#include <optional>
#include <vector>

namespace fleg {

struct QueryResult {
    std::vector<double> relevance;         // cosine similarity per queried gaussian
    std::vector<int> selected;             // indices with relevance >= threshold
    bool over_sem = false;                 // semantic set queried (geo features otherwise)
    std::optional<ScalarMap> rendered;     // relevance composite when a camera was given
};

/// Cosine relevance of every semantic gaussian (geometry features when the
/// scene has no semantic set) against a query vector. Throws on a zero query.
QueryResult query_scene(const Scene& scene, const std::vector<double>& query_vec, double threshold,
                        const Camera* render_cam = nullptr);

enum class EditOp { Delete, Extract };

/// Removes (or keeps only) the geometry gaussians whose nearest semantic
/// gaussian is selected by the query; the semantic set is filtered
/// consistently. Extract with an empty selection throws "empty result".
Scene edit_scene(const Scene& scene, const std::vector<double>& query_vec, double threshold, EditOp op);

/// 10*log10(1/MSE) on [0,1] images; identical images report the 99.0 cap.
double psnr(const Image& a, const Image& b);

struct SegMetrics {
    double miou = 0.0;
    double macc = 0.0;
    std::map<uint32_t, double> per_class_iou;
};

/// Per-class IoU over the ground-truth classes plus localization accuracy.
/// With relevance maps, a class counts as localized when its argmax pixel
/// falls inside the ground-truth region; otherwise any predicted pixel of the
/// class intersecting ground truth counts.
SegMetrics segmentation_metrics(const InstanceMask& pred, const InstanceMask& gt,
                                const std::map<uint32_t, std::vector<double>>* relevance = nullptr);

} // namespace fleg
