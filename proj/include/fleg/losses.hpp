// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/types.hpp"

#include <optional>
#include <vector>

namespace fleg {

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), C1=0.01^2, C2=0.03^2,
/// valid windows only, per channel then averaged. Throws on dimension
/// mismatch or images smaller than the window.
double ssim(const Image& a, const Image& b);

/// SSIM value plus its gradient with respect to `a` (same layout as a.data).
double ssim_with_grad(const Image& a, const Image& b, std::vector<double>& d_a);

/// eta*(1-SSIM)/2 + (1-eta)*mean|I - I_hat|.
double photometric_loss(const Image& rendered, const Image& target, double eta);
double photometric_loss_grad(const Image& rendered, const Image& target, double eta,
                             std::vector<double>& d_rendered);

/// Mean over valid pixels of 1 - cos(pred, target). Pixels where either
/// feature has zero norm are skipped (the count is reported through
/// `skipped`). Throws when no valid pixel remains.
double feature_cosine_loss(const FeatureMap& pred, const FeatureMap& target,
                           const std::vector<uint8_t>* valid = nullptr, size_t* skipped = nullptr);
double feature_cosine_loss_grad(const FeatureMap& pred, const FeatureMap& target,
                                const std::vector<uint8_t>* valid, std::vector<double>& d_pred);

/// InfoNCE-style loss over instance anchors (Eq. with per-instance mean
/// anchors, cosine similarity, temperature alpha). Anchors average all
/// foreground pixels of their instance; the softmax sums run over the sampled
/// pixel set (all foreground pixels when `sample` is empty). Sampling is
/// proportional per instance with a seeded generator; instances that receive
/// no samples are dropped from K with a warning.
double instance_contrastive_loss(const FeatureMap& feat, const InstanceMask& mask, double alpha,
                                 std::optional<int> sample = std::nullopt, uint64_t seed = 0);

/// Full-sampling loss value plus gradient with respect to the feature map.
double instance_contrastive_loss_grad(const FeatureMap& feat, const InstanceMask& mask, double alpha,
                                      std::vector<double>& d_feat);

/// Mean squared error over valid pixels. Throws when no pixel is valid.
double depth_distill_loss(const DepthMap& rendered, const DepthMap& pseudo,
                          const std::vector<uint8_t>& valid);
double depth_distill_loss_grad(const DepthMap& rendered, const DepthMap& pseudo,
                               const std::vector<uint8_t>& valid, std::vector<double>& d_rendered);

struct PoseEncoding {
    Vec3 translation = Vec3::Zero();
    Vec4 rot{1.0, 0.0, 0.0, 0.0};
    Vec2 fov = Vec2::Zero();  // radians
};

/// Elementwise Huber over the 9-dim encoding (translation, quaternion with
/// hemisphere alignment, fov), mean-reduced.
double pose_distill_loss(const PoseEncoding& pred, const PoseEncoding& pseudo, double delta = 0.1);

struct LossReport {
    double photo = 0.0, feat = 0.0, depth_distill = 0.0, pose_distill = 0.0, inst = 0.0;
    double total = 0.0;
    double lambda_depth = 0.0, lambda_pose = 0.0, lambda_inst = 0.0;
};

/// total = photo + feat + lambda_depth*depth + lambda_pose*pose + lambda_inst*inst.
LossReport total_loss(double photo, double feat, double depth_distill, double pose_distill, double inst,
                      const LossConfig& cfg);

} // namespace fleg
