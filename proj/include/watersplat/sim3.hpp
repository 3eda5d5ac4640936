#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace watersplat {

namespace detail {
// The optimizer allocates and frees multi-megabyte Eigen buffers every
// iteration. glibc serves those from fresh mmaps by default, so every step
// pays mmap/munmap plus page-fault costs; raising the thresholds keeps the
// buffers in the reusable heap arena.
#ifdef __GLIBC__
inline const bool malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    return true;
}();
#endif
}  // namespace detail

using Vec2 = Eigen::Vector2d;
using Vec2i = Eigen::Vector2i;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

// Similarity transform: x -> s * R * x + t. Poses are world-from-camera.
struct Sim3Pose {
    double s = 1.0;
    Quat q = Quat::Identity();
    Vec3 t = Vec3::Zero();

    static Sim3Pose identity() { return {}; }

    Mat3 rotation() const { return q.toRotationMatrix(); }

    Mat4 matrix() const {
        Mat4 m = Mat4::Identity();
        m.block<3, 3>(0, 0) = s * rotation();
        m.block<3, 1>(0, 3) = t;
        return m;
    }

    Vec3 apply(const Vec3& p) const { return s * (q * p) + t; }

    Sim3Pose inverse() const {
        Sim3Pose out;
        out.s = 1.0 / s;
        out.q = q.conjugate();
        out.t = -(out.s * (out.q * t));
        return out;
    }

    // SE(3) part: same rotation/translation with the scale stripped.
    Sim3Pose se3() const {
        Sim3Pose out = *this;
        out.s = 1.0;
        return out;
    }

    void normalize() { q.normalize(); }
};

inline Sim3Pose sim3_compose(const Sim3Pose& a, const Sim3Pose& b) {
    Sim3Pose out;
    out.s = a.s * b.s;
    out.q = (a.q * b.q).normalized();
    out.t = a.s * (a.q * b.t) + a.t;
    return out;
}

// Rotation angle in degrees of the delta between two SE(3) poses, with the
// metric translation magnitude; scale components are deliberately ignored.
inline std::pair<double, double> pose_delta_metrics(const Sim3Pose& oldp, const Sim3Pose& newp) {
    const Sim3Pose delta = sim3_compose(oldp.se3().inverse(), newp.se3());
    const double d = delta.t.norm();
    const double w = std::min(1.0, std::abs(delta.q.normalized().w()));
    const double theta = 2.0 * std::acos(w) * 180.0 / M_PI;
    return {d, theta};
}

struct TrajectoryEntry {
    double timestamp = 0.0;
    Sim3Pose pose;
};

// One line per keyframe: timestamp tx ty tz qx qy qz qw s
// (TUM layout plus a trailing scale column; readers accept 8 columns, s = 1).
inline void write_trajectory(const std::vector<TrajectoryEntry>& traj, std::ostream& out) {
    const auto saved = out.precision(17);
    for (const auto& e : traj) {
        out << e.timestamp << " " << e.pose.t.x() << " " << e.pose.t.y() << " " << e.pose.t.z() << " "
            << e.pose.q.x() << " " << e.pose.q.y() << " " << e.pose.q.z() << " " << e.pose.q.w() << " "
            << e.pose.s << "\n";
    }
    out.precision(saved);
}

inline void write_trajectory(const std::vector<TrajectoryEntry>& traj, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    write_trajectory(traj, out);
}

inline std::vector<TrajectoryEntry> read_trajectory(std::istream& in, const std::string& origin = "<stream>") {
    std::vector<TrajectoryEntry> traj;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        TrajectoryEntry e;
        double qx, qy, qz, qw;
        if (!(ss >> e.timestamp >> e.pose.t.x() >> e.pose.t.y() >> e.pose.t.z() >> qx >> qy >> qz >> qw))
            throw std::runtime_error("malformed trajectory line in " + origin + ": " + line);
        double s;
        e.pose.s = (ss >> s) ? s : 1.0;
        Quat q(qw, qx, qy, qz);
        // Text rounding leaves a written unit quaternion within ~1e-16 of unit
        // norm; renormalizing those perturbs the last ulps and makes
        // save -> load -> save non-idempotent. Only rescale genuinely
        // off-unit input.
        if (std::abs(q.squaredNorm() - 1.0) > 1e-9) q.normalize();
        e.pose.q = q;
        traj.push_back(e);
    }
    return traj;
}

inline std::vector<TrajectoryEntry> read_trajectory(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return read_trajectory(in, path);
}

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
};

// Rotation matrix of a possibly non-unit quaternion (normalizes internally).
inline Mat3 quat_rotmat(const Eigen::Vector4d& wxyz) {
    Quat q(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
    return q.normalized().toRotationMatrix();
}

// Pullback of a gradient w.r.t. the rotation matrix onto the raw (w,x,y,z)
// quaternion components, chaining through the normalization.
inline Eigen::Vector4d quat_rotmat_backward(const Eigen::Vector4d& wxyz, const Mat3& grad_R) {
    const double n = wxyz.norm();
    const Eigen::Vector4d u = wxyz / n;
    const double w = u[0], x = u[1], y = u[2], z = u[3];

    Mat3 dR[4];
    dR[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    dR[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dR[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dR[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;

    Eigen::Vector4d g_unit;
    for (int k = 0; k < 4; ++k) g_unit[k] = 2.0 * (dR[k].cwiseProduct(grad_R)).sum();
    return (g_unit - u * u.dot(g_unit)) / n;
}

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

// Exponential of a 7-dim sim(3) tangent (rho, phi, lambda) used for
// left-multiplicative solver updates. Rotation via Rodrigues; the coupling
// between rho and phi is left first order, which the solvers tolerate.
inline Sim3Pose sim3_exp(const Eigen::Matrix<double, 7, 1>& xi) {
    Sim3Pose out;
    const Vec3 rho = xi.head<3>();
    const Vec3 phi = xi.segment<3>(3);
    const double lambda = xi[6];
    const double angle = phi.norm();
    if (angle < 1e-12) {
        out.q = Quat::Identity();
    } else {
        out.q = Quat(Eigen::AngleAxisd(angle, phi / angle));
    }
    out.s = std::exp(lambda);
    out.t = rho;
    return out;
}

}  // namespace watersplat
