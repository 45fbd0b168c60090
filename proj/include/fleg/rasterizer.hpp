// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/types.hpp"

#include <vector>

namespace fleg {

struct RenderOptions {
    Vec3 background = Vec3::Zero();
    bool color = true;
    bool depth = false;
    bool feature = false;
    /// Feature channel source: semantic set when present, geometry features otherwise.
    bool use_sem_features = true;
    /// Optional per-splat scalar composited as a one-channel image (relevance
    /// renders). Length must match the set the feature channel renders from.
    const std::vector<double>* splat_scalar = nullptr;
    /// 0 = hardware concurrency (FLEG_THREADS env overrides).
    int threads = 0;
};

struct RenderOutput {
    Image color;
    DepthMap depth;           // alpha-normalized expected depth
    ScalarMap alpha;
    FeatureMap feature;       // dim 0 when not rendered
    ScalarMap scalar;         // splat_scalar composite, empty when not requested
    bool feature_from_sem = false;
};

/// dL/d(pixel outputs); empty vectors mean the channel carries no gradient.
struct PixelGrad {
    std::vector<double> d_color;    // H*W*3
    std::vector<double> d_depth;    // H*W
    std::vector<double> d_feature;  // H*W*D
};

struct RenderGrad {
    std::vector<Vec3> d_mu;
    std::vector<Vec3> d_scale;
    std::vector<Vec4> d_rot;
    std::vector<double> d_opacity;
    std::vector<std::vector<Vec3>> d_sh;
    std::vector<std::vector<double>> d_feat;
    // semantic set (sized only when the feature channel rendered from sem)
    std::vector<Vec3> sem_d_mu;
    std::vector<double> sem_d_scale_iso;
    std::vector<double> sem_d_opacity;
    std::vector<std::vector<double>> sem_d_feat;
};

/// Sigma = R diag(s^2) R^T of a canonical splat.
Mat3 covariance_3d(const Gaussian3D& g);

/// Forward EWA splatting: perspective-affine projection of each Gaussian to a
/// 2D footprint, front-to-back alpha compositing in camera-depth order.
RenderOutput render(const Scene& scene, const Camera& cam, const RenderOptions& options = {});

/// Forward render plus the exact adjoint of the implemented compositing for a
/// scalar loss with the given pixel-space gradient.
std::pair<RenderOutput, RenderGrad> render_with_grad(const Scene& scene, const Camera& cam,
                                                     const RenderOptions& options, const PixelGrad& pixel_grad);

} // namespace fleg
