// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/types.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fleg {

// Scene files: binary little-endian PLY, 32-bit float properties, with a
// `comment fleg_scene 1` header line marking the linear-space convention.
// Geometry: x y z, scale_0..2, rot_0..3 (w first), opacity, f_dc_0..2,
// f_rest_* for k>0 (coefficient-major), conf, and optional feat_0..D-1.
// Semantic: x y z, scale_iso, opacity, feat_0..D-1.

Scene read_scene(const std::filesystem::path& geo_path,
                 const std::optional<std::filesystem::path>& sem_path = std::nullopt);
void write_scene(const Scene& scene, const std::filesystem::path& geo_path,
                 const std::optional<std::filesystem::path>& sem_path = std::nullopt);

// Tensor files (magic + u32 version=1 + dims + payload, all little-endian):
//   FMAP: u32 h,w,d; f32 h*w*d
//   PMAP: u32 h,w;   f32 h*w*3, u8 h*w validity plane
//   IMSK: u32 h,w;   u16 h*w
FeatureMap read_fmap(const std::filesystem::path& path);
void write_fmap(const FeatureMap& map, const std::filesystem::path& path);
PointMap read_pmap(const std::filesystem::path& path);
void write_pmap(const PointMap& map, const std::filesystem::path& path);
InstanceMask read_imsk(const std::filesystem::path& path);
void write_imsk(const InstanceMask& mask, const std::filesystem::path& path);

/// {"views":[{"intrinsics":[fx,fy,cx,cy],"world_to_cam":[16 row-major],"width":W,"height":H}]}
std::vector<Camera> read_cameras(const std::filesystem::path& path);
void write_cameras(const std::vector<Camera>& cams, const std::filesystem::path& path);

/// Raw little-endian f32 vector (query vectors, instance features).
std::vector<double> read_vec(const std::filesystem::path& path);
void write_vec(const std::vector<double>& vec, const std::filesystem::path& path);

Image read_png_rgb8(const std::filesystem::path& path);
void write_png_rgb8(const Image& image, const std::filesystem::path& path);

/// 16-bit grayscale PNG; stored value = clamp(round((v - offset) * scale)).
/// The scale and offset land in a `<path>.json` sidecar.
ScalarMap read_png_gray16(const std::filesystem::path& path);
void write_png_gray16(const ScalarMap& map, const std::filesystem::path& path, double scale,
                      double offset = 0.0);

/// Runs `writer` against a temp file, then renames over `path`.
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(const std::filesystem::path&)>& writer);

LossConfig read_loss_config(const std::filesystem::path& path);
void write_loss_config(const LossConfig& cfg, const std::filesystem::path& path);

struct FitConfig;
FitConfig read_fit_config(const std::filesystem::path& path);
void write_fit_config(const FitConfig& cfg, const std::filesystem::path& path);

} // namespace fleg
