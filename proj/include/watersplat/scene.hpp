#pragma once

#include "watersplat/image.hpp"
#include "watersplat/sim3.hpp"

namespace watersplat {

// One anisotropic splat. Scales live in log space and opacity as a logit so
// unconstrained gradient steps keep them in their valid ranges.
struct GaussianPrimitive {
    Vec3 mu = Vec3::Zero();
    Eigen::Vector4d rot = Eigen::Vector4d(1, 0, 0, 0);  // unit quaternion (w,x,y,z)
    Vec3 log_scale = Vec3::Zero();
    Vec3 color = Vec3::Zero();
    double opacity_logit = 0.0;
    int anchor = 0;  // keyframe this primitive entered the map through

    Vec3 scale() const { return log_scale.array().exp(); }
    double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
    Mat3 rotation() const { return quat_rotmat(rot); }
};

// Per-image inputs: color, water mask (1 = water), camera-frame pointmap and
// per-pixel confidence.
struct Frame {
    Image3 image;
    Image1 water_mask;
    Image3 pointmap;
    Image1 confidence;
    double timestamp = 0.0;
};

struct Keyframe {
    int id = 0;
    Frame frame;
    Sim3Pose pose;  // world-from-camera
    bool rerender_flag = false;
};

struct Match {
    Vec2i pixel_a = Vec2i::Zero();  // pixel in frame a (the reference / keyframe)
    Vec2i pixel_b = Vec2i::Zero();  // pixel in frame b (the query frame)
    double q = 0.0;                 // sqrt(Q_a * Q_b)
};

}  // namespace watersplat
