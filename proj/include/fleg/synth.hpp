// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fleg {

// Fixture generator standing in for the upstream reconstruction stack:
// scenes, cameras, pseudo-label renders, point maps, instance masks and
// per-instance feature vectors, all deterministic per seed.

struct SynthScene {
    std::string preset;
    uint64_t seed = 0;
    Scene scene;
    std::vector<Camera> cameras;
    double lattice_pitch = 0.0;                               // lattice preset only
    std::map<uint32_t, std::vector<double>> instance_features;
    std::vector<uint32_t> object_of_gaussian;                 // instance id per splat, 0 = none
};

/// Presets: "lattice" (8^3 splats on a regular grid, 8 ring cameras),
/// "two-objects" (two 25-splat blobs with orthogonal unit features, 4 ring
/// cameras), "textured-room" (box interior, 6 wall instances, 8 inside-out
/// cameras). Throws DataError on an unknown preset.
SynthScene make_preset(const std::string& name, uint64_t seed);

/// Ground-truth renders, depth/point maps, masks, feature maps and vectors
/// for every view, plus scene.geo.ply, cameras.json and a manifest.
void write_synth_dir(const SynthScene& synth, const std::filesystem::path& dir);

/// Camera ring around a target point (cameras look at the target).
std::vector<Camera> make_ring_cameras(const Vec3& target, double radius, double height, int count,
                                      double focal, int width, int height_px);

struct GradcheckFixture {
    Scene scene;
    Camera cam;
};

/// Small random scene shaped for finite-difference work: separated depths,
/// mid-range opacities, footprints of a few pixels, colors away from the
/// clamp bounds.
GradcheckFixture make_gradcheck_fixture(uint64_t seed, int n_gaussians, int sh_degree, bool with_feat,
                                        bool with_sem);

} // namespace fleg
