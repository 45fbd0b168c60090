// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/sh.hpp"

namespace fleg {

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658, 0.3731763325901154,
                           -0.4570457994644658, 1.445305721320277,  -0.5900435899266435};

} // namespace

void sh_basis(int degree, const Vec3& dir, double* b, Vec3* db) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    b[0] = kC0;
    db[0] = Vec3::Zero();
    if (degree < 1)
        return;
    b[1] = -kC1 * y;
    b[2] = kC1 * z;
    b[3] = -kC1 * x;
    db[1] = Vec3(0, -kC1, 0);
    db[2] = Vec3(0, 0, kC1);
    db[3] = Vec3(-kC1, 0, 0);
    if (degree < 2)
        return;
    const double xx = x * x, yy = y * y, zz = z * z;
    b[4] = kC2[0] * x * y;
    b[5] = kC2[1] * y * z;
    b[6] = kC2[2] * (2 * zz - xx - yy);
    b[7] = kC2[3] * x * z;
    b[8] = kC2[4] * (xx - yy);
    db[4] = kC2[0] * Vec3(y, x, 0);
    db[5] = kC2[1] * Vec3(0, z, y);
    db[6] = kC2[2] * Vec3(-2 * x, -2 * y, 4 * z);
    db[7] = kC2[3] * Vec3(z, 0, x);
    db[8] = kC2[4] * Vec3(2 * x, -2 * y, 0);
    if (degree < 3)
        return;
    b[9] = kC3[0] * y * (3 * xx - yy);
    b[10] = kC3[1] * x * y * z;
    b[11] = kC3[2] * y * (4 * zz - xx - yy);
    b[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    b[13] = kC3[4] * x * (4 * zz - xx - yy);
    b[14] = kC3[5] * z * (xx - yy);
    b[15] = kC3[6] * x * (xx - 3 * yy);
    db[9] = kC3[0] * Vec3(6 * x * y, 3 * xx - 3 * yy, 0);
    db[10] = kC3[1] * Vec3(y * z, x * z, x * y);
    db[11] = kC3[2] * Vec3(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
    db[12] = kC3[3] * Vec3(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
    db[13] = kC3[4] * Vec3(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
    db[14] = kC3[5] * Vec3(2 * x * z, -2 * y * z, xx - yy);
    db[15] = kC3[6] * Vec3(3 * xx - 3 * yy, -6 * x * y, 0);
}

Vec3 sh_eval(int degree, const std::vector<Vec3>& coeffs, const Vec3& dir) {
    double b[16];
    Vec3 db[16];
    sh_basis(degree, dir, b, db);
    const int n = (degree + 1) * (degree + 1);
    Vec3 color = Vec3::Constant(0.5);
    for (int i = 0; i < n; ++i)
        color += b[i] * coeffs[i];
    return color;
}

void sh_eval_backward(int degree, const std::vector<Vec3>& coeffs, const Vec3& dir, const Vec3& d_color,
                      std::vector<Vec3>& d_coeffs, Vec3& d_dir) {
    double b[16];
    Vec3 db[16];
    sh_basis(degree, dir, b, db);
    const int n = (degree + 1) * (degree + 1);
    for (int i = 0; i < n; ++i) {
        d_coeffs[i] += b[i] * d_color;
        d_dir += db[i] * d_color.dot(coeffs[i]);
    }
}

} // namespace fleg
