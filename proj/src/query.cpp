// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/query.hpp"

#include "fleg/kernels.hpp"
#include "fleg/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace fleg {

QueryResult query_scene(const Scene& scene, const std::vector<double>& query_vec, double threshold,
                        const Camera* render_cam) {
    const int d = scene.feat_dim;
    if (int(query_vec.size()) != d)
        throw DataError("query_scene: query vector length " + std::to_string(query_vec.size()) +
                        " != feat_dim " + std::to_string(d));
    const double qnorm = std::sqrt(kernels::sumsq(query_vec.data(), d));
    if (qnorm == 0.0)
        throw DataError("query_scene: zero query vector");

    QueryResult result;
    result.over_sem = scene.sem.has_value();
    auto relevance_of = [&](const std::vector<double>& feat) {
        if (feat.empty())
            return 0.0;
        const double fnorm = std::sqrt(kernels::sumsq(feat.data(), d));
        if (fnorm == 0.0)
            return 0.0;
        return kernels::dot(feat.data(), query_vec.data(), d) / (fnorm * qnorm);
    };
    if (result.over_sem) {
        for (const SemanticGaussian& s : *scene.sem)
            result.relevance.push_back(relevance_of(s.feat));
    } else {
        bool any = false;
        for (const Gaussian3D& g : scene.geo)
            any = any || !g.feat.empty();
        if (!any)
            throw DataError("query_scene: scene has neither semantic gaussians nor geometry features");
        for (const Gaussian3D& g : scene.geo)
            result.relevance.push_back(relevance_of(g.feat));
    }
    for (size_t i = 0; i < result.relevance.size(); ++i)
        if (result.relevance[i] >= threshold)
            result.selected.push_back(int(i));

    if (render_cam) {
        RenderOptions opt;
        opt.color = false;
        opt.splat_scalar = &result.relevance;
        opt.use_sem_features = result.over_sem;
        result.rendered = render(scene, *render_cam, opt).scalar;
    }
    return result;
}

Scene edit_scene(const Scene& scene, const std::vector<double>& query_vec, double threshold, EditOp op) {
    const QueryResult q = query_scene(scene, query_vec, threshold);
    std::set<int> selected(q.selected.begin(), q.selected.end());

    Scene out;
    out.sh_degree = scene.sh_degree;
    out.feat_dim = scene.feat_dim;

    auto keep_geo = [&](size_t gi) {
        bool in_selection;
        if (q.over_sem) {
            // nearest semantic gaussian by center distance, lowest index on ties
            const std::vector<SemanticGaussian>& sem = *scene.sem;
            int nearest = 0;
            double best = std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < sem.size(); ++j) {
                const double dist = (scene.geo[gi].mu - sem[j].mu).squaredNorm();
                if (dist < best) {
                    best = dist;
                    nearest = int(j);
                }
            }
            in_selection = selected.count(nearest) != 0;
        } else {
            in_selection = selected.count(int(gi)) != 0;
        }
        return op == EditOp::Extract ? in_selection : !in_selection;
    };

    if (op == EditOp::Extract && selected.empty())
        throw DataError("edit_scene: empty result");
    for (size_t gi = 0; gi < scene.geo.size(); ++gi)
        if (keep_geo(gi))
            out.geo.push_back(scene.geo[gi]);
    if (scene.sem) {
        std::vector<SemanticGaussian> sem_out;
        for (size_t j = 0; j < scene.sem->size(); ++j) {
            const bool in_selection = selected.count(int(j)) != 0;
            if ((op == EditOp::Extract) == in_selection)
                sem_out.push_back((*scene.sem)[j]);
        }
        out.sem = std::move(sem_out);
    }
    return out;
}

double psnr(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width)
        throw DataError("psnr: image dimensions differ");
    const double mse = kernels::sq_diff_sum(a.data.data(), b.data.data(), a.data.size()) / double(a.data.size());
    if (mse == 0.0)
        return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

SegMetrics segmentation_metrics(const InstanceMask& pred, const InstanceMask& gt,
                                const std::map<uint32_t, std::vector<double>>* relevance) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw DataError("segmentation_metrics: dimension mismatch");
    std::set<uint32_t> classes;
    for (uint32_t id : gt.data)
        if (id != 0)
            classes.insert(id);
    if (classes.empty())
        throw DataError("segmentation_metrics: ground truth has no classes");

    SegMetrics metrics;
    const size_t n = pred.data.size();
    double iou_sum = 0.0;
    int localized = 0;
    for (uint32_t cls : classes) {
        size_t inter = 0, uni = 0;
        for (size_t p = 0; p < n; ++p) {
            const bool in_pred = pred.data[p] == cls;
            const bool in_gt = gt.data[p] == cls;
            inter += in_pred && in_gt;
            uni += in_pred || in_gt;
        }
        const double iou = uni == 0 ? 0.0 : double(inter) / double(uni);
        metrics.per_class_iou[cls] = iou;
        iou_sum += iou;

        bool hit = false;
        if (relevance && relevance->count(cls)) {
            const std::vector<double>& rel = relevance->at(cls);
            if (rel.size() != n)
                throw DataError("segmentation_metrics: relevance map size mismatch");
            size_t argmax = 0;
            for (size_t p = 1; p < n; ++p)
                if (rel[p] > rel[argmax])
                    argmax = p;
            hit = gt.data[argmax] == cls;
        } else {
            hit = inter > 0;  // any predicted pixel of the class inside gt
        }
        localized += hit;
    }
    metrics.miou = iou_sum / double(classes.size());
    metrics.macc = double(localized) / double(classes.size());
    return metrics;
}

} // namespace fleg
