// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/losses.hpp"
#include "fleg/rasterizer.hpp"
#include "fleg/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fleg {

struct FitConfig {
    int iterations = 1000;
    double lr_mu = -1.0;  // < 0: resolved to 1e-3 * scene bounding-box diagonal
    double lr_log_scale = 5e-3;
    double lr_rot = 1e-3;
    double lr_logit_opacity = 5e-2;
    double lr_sh = 2.5e-3;
    double lr_feat = 1e-2;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    uint64_t seed = 0;
    int log_every = 0;  // 0 = silent
    int threads = 0;
};

struct FitTarget {
    Camera cam;
    Image image;
    std::optional<DepthMap> depth;
    std::vector<uint8_t> depth_valid;           // empty = all pixels
    std::optional<FeatureMap> feature;
    std::optional<InstanceMask> mask;           // enables the contrastive term
};

struct FitTrace {
    std::vector<LossReport> iterations;
    std::vector<double> final_psnr;  // per target view
};

/// Adaptive-moment optimization of the geometry attributes against rendered
/// targets. Scale is optimized in log domain, opacity in logit domain, and
/// rotations are renormalized after every step. Throws DataError on a NaN
/// loss (with the iteration index) and on iterations < 1.
std::pair<Scene, FitTrace> fit_scene(const Scene& init, const std::vector<FitTarget>& targets,
                                     const FitConfig& cfg, const LossConfig& loss_cfg);

enum class GradcheckLoss { Constant, Photometric, FeatureCosine, Depth };

struct GradcheckGroup {
    std::string name;
    int samples = 0;
    int failures = 0;
    int fd_invalid = 0;  // finite-difference oracle rejected (non-smooth interval)
    double max_rel_err = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckGroup> groups;
    int samples() const;
    int failures() const;
    int fd_invalid() const;
    double max_rel_err() const;
    bool passed() const { return failures() == 0 && samples() > 0; }
};

/// Compares the analytic adjoint against central differences (step 1e-4) on
/// `trials` randomly sampled attributes. Samples where two FD step sizes
/// disagree (the loss is not smooth across the probed interval) are excluded
/// and counted, never failed. Failures are reported, not thrown.
GradcheckReport gradcheck(const Scene& scene, const Camera& cam, GradcheckLoss loss, int trials,
                          uint64_t seed);

} // namespace fleg
