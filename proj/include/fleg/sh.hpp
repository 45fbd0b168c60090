// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fleg/types.hpp"

namespace fleg {

/// Real spherical-harmonic basis values at a unit direction, plus their
/// direction derivatives. `basis` and `dbasis` must hold (degree+1)^2 entries.
void sh_basis(int degree, const Vec3& dir, double* basis, Vec3* dbasis);

/// Color from SH coefficients viewed along `dir` (unit), before any clamping.
/// A 0.5 offset is applied to the DC band.
Vec3 sh_eval(int degree, const std::vector<Vec3>& coeffs, const Vec3& dir);

/// Adjoint of sh_eval: accumulates coefficient and direction gradients for a
/// given upstream color gradient.
void sh_eval_backward(int degree, const std::vector<Vec3>& coeffs, const Vec3& dir, const Vec3& d_color,
                      std::vector<Vec3>& d_coeffs, Vec3& d_dir);

} // namespace fleg
