#pragma once

#include <atomic>

#include "watersplat/sim3.hpp"

namespace watersplat {

inline constexpr int kShDim = 16;  // real SH, degrees 0..3

// Count of sh_encode calls that had to renormalize a non-unit direction.
inline std::atomic<long>& sh_nonunit_warnings() {
    static std::atomic<long> counter{0};
    return counter;
}

// Real spherical harmonics Y_l^m for l = 0..3, ordered l ascending with
// m = -l..l. Non-unit inputs are normalized first (counted as a warning).
inline Eigen::Matrix<double, kShDim, 1> sh_encode(const Vec3& dir) {
    const double n = dir.norm();
    if (std::abs(n - 1.0) > 1e-6) sh_nonunit_warnings()++;
    // Always divide: encoding stays smooth under tiny perturbations, matching
    // sh_encode_jacobian's normalization chain exactly.
    const Vec3 d = dir / n;
    const double x = d.x(), y = d.y(), z = d.z();
    const double xx = x * x, yy = y * y, zz = z * z;

    Eigen::Matrix<double, kShDim, 1> out;
    out[0] = 0.28209479177387814;
    out[1] = 0.4886025119029199 * y;
    out[2] = 0.4886025119029199 * z;
    out[3] = 0.4886025119029199 * x;
    out[4] = 1.0925484305920792 * x * y;
    out[5] = 1.0925484305920792 * y * z;
    out[6] = 0.31539156525252005 * (3.0 * zz - 1.0);
    out[7] = 1.0925484305920792 * x * z;
    out[8] = 0.5462742152960396 * (xx - yy);
    out[9] = 0.5900435899266435 * y * (3.0 * xx - yy);
    out[10] = 2.890611442640554 * x * y * z;
    out[11] = 0.4570457994644658 * y * (5.0 * zz - 1.0);
    out[12] = 0.3731763325901154 * z * (5.0 * zz - 3.0);
    out[13] = 0.4570457994644658 * x * (5.0 * zz - 1.0);
    out[14] = 1.445305721320277 * z * (xx - yy);
    out[15] = 0.5900435899266435 * x * (xx - 3.0 * yy);
    return out;
}

// Jacobian of sh_encode w.r.t. the raw input direction, chained through the
// internal normalization.
inline Eigen::Matrix<double, kShDim, 3> sh_encode_jacobian(const Vec3& dir) {
    const double n = dir.norm();
    const Vec3 d = dir / n;
    const double x = d.x(), y = d.y(), z = d.z();
    const double xx = x * x, yy = y * y, zz = z * z;

    Eigen::Matrix<double, kShDim, 3> J;  // w.r.t. the unit direction
    J.setZero();
    J(1, 1) = 0.4886025119029199;
    J(2, 2) = 0.4886025119029199;
    J(3, 0) = 0.4886025119029199;
    J(4, 0) = 1.0925484305920792 * y;
    J(4, 1) = 1.0925484305920792 * x;
    J(5, 1) = 1.0925484305920792 * z;
    J(5, 2) = 1.0925484305920792 * y;
    J(6, 2) = 0.31539156525252005 * 6.0 * z;
    J(7, 0) = 1.0925484305920792 * z;
    J(7, 2) = 1.0925484305920792 * x;
    J(8, 0) = 0.5462742152960396 * 2.0 * x;
    J(8, 1) = -0.5462742152960396 * 2.0 * y;
    J(9, 0) = 0.5900435899266435 * 6.0 * x * y;
    J(9, 1) = 0.5900435899266435 * (3.0 * xx - 3.0 * yy);
    J(10, 0) = 2.890611442640554 * y * z;
    J(10, 1) = 2.890611442640554 * x * z;
    J(10, 2) = 2.890611442640554 * x * y;
    J(11, 1) = 0.4570457994644658 * (5.0 * zz - 1.0);
    J(11, 2) = 0.4570457994644658 * 10.0 * y * z;
    J(12, 2) = 0.3731763325901154 * (15.0 * zz - 3.0);
    J(13, 0) = 0.4570457994644658 * (5.0 * zz - 1.0);
    J(13, 2) = 0.4570457994644658 * 10.0 * x * z;
    J(14, 0) = 1.445305721320277 * 2.0 * x * z;
    J(14, 1) = -1.445305721320277 * 2.0 * y * z;
    J(14, 2) = 1.445305721320277 * (xx - yy);
    J(15, 0) = 0.5900435899266435 * (3.0 * xx - 3.0 * yy);
    J(15, 1) = -0.5900435899266435 * 6.0 * x * y;

    const Mat3 dnorm = (Mat3::Identity() - d * d.transpose()) / n;
    return J * dnorm;
}

}  // namespace watersplat
