#pragma once

#include "watersplat/scene.hpp"

namespace watersplat {

struct RobustKernel {
    double huber_delta = 0.05;  // scene units
};

struct TrackResult {
    Sim3Pose pose;  // T_kf: frame-camera coordinates into keyframe-camera coordinates
    double inlier_fraction = 0.0;
    double mean_residual = 0.0;
    bool converged = false;
    int iterations = 0;
    std::string diagnostic;
};

inline constexpr double kTrackStepTol = 1e-8;
inline constexpr int kTrackMaxIters = 50;
inline constexpr int kTrackMaxHalvings = 8;

// Zero the pointmap confidence on water pixels: Q <- Q * (1 - M).
inline Frame mask_confidence(Frame frame) {
    for (size_t p = 0; p < frame.confidence.data.size(); ++p)
        if (frame.water_mask.data[p] > 0.5) frame.confidence.data[p] = 0.0;
    return frame;
}

namespace detail {

inline double huber_rho(double e, double delta) {
    return e <= delta ? 0.5 * e * e : delta * (e - 0.5 * delta);
}

// IRLS weight for the Huber norm on the residual magnitude.
inline double huber_weight(double e, double delta) {
    return e <= delta ? 1.0 : delta / e;
}

inline Vec3 pointmap_at(const Image3& pm, const Vec2i& px) {
    const double* p = pm.at(px.x(), px.y());
    return Vec3(p[0], p[1], p[2]);
}

}  // namespace detail

// Sim(3) Gauss-Newton alignment of frame points onto keyframe points:
//   min_T  sum_m q_m * huber(|| Xk(a_m) - T * Xf(b_m) ||).
// Zero-confidence matches are skipped entirely, so their pointmap content can
// never influence the estimate.
inline TrackResult estimate_pose(const std::vector<Match>& matches, const Image3& pointmap_k,
                                 const Image3& pointmap_f, const Sim3Pose& init,
                                 const RobustKernel& kernel = {}) {
    std::vector<Vec3> xk, xf;
    xk.reserve(matches.size());
    xf.reserve(matches.size());
    std::vector<double> qs;
    for (const Match& m : matches) {
        if (m.q <= 0.0) continue;
        xk.push_back(detail::pointmap_at(pointmap_k, m.pixel_a));
        xf.push_back(detail::pointmap_at(pointmap_f, m.pixel_b));
        qs.push_back(m.q);
    }
    if (xk.size() < 4) throw std::invalid_argument("estimate_pose: fewer than 4 usable matches");

    TrackResult out;
    out.pose = init;

    auto cost_of = [&](const Sim3Pose& T) {
        double c = 0;
        for (size_t m = 0; m < xk.size(); ++m)
            c += qs[m] * detail::huber_rho((xk[m] - T.apply(xf[m])).norm(), kernel.huber_delta);
        return c;
    };

    double cost = cost_of(out.pose);
    for (int it = 0; it < kTrackMaxIters; ++it) {
        out.iterations = it + 1;
        Eigen::Matrix<double, 7, 7> H = Eigen::Matrix<double, 7, 7>::Zero();
        Eigen::Matrix<double, 7, 1> g = Eigen::Matrix<double, 7, 1>::Zero();
        for (size_t m = 0; m < xk.size(); ++m) {
            const Vec3 y = out.pose.apply(xf[m]);
            const Vec3 r = xk[m] - y;
            const double w = qs[m] * detail::huber_weight(r.norm(), kernel.huber_delta);
            // d(T x)/d(delta) for a left-multiplicative Sim(3) perturbation
            Eigen::Matrix<double, 3, 7> Jt;
            Jt.block<3, 3>(0, 0) = Mat3::Identity();
            Jt.block<3, 3>(0, 3) = -skew(y);
            Jt.col(6) = y;
            const Eigen::Matrix<double, 3, 7> J = -Jt;  // residual is Xk - T Xf
            H.noalias() += w * J.transpose() * J;
            g.noalias() += w * J.transpose() * r;
        }

        const Eigen::FullPivLU<Eigen::Matrix<double, 7, 7>> lu(H);
        if (lu.rank() < 7) {
            out.diagnostic = "rank-deficient normal equations";
            break;
        }
        Eigen::Matrix<double, 7, 1> step = lu.solve(-g);

        bool accepted = false;
        for (int h = 0; h <= kTrackMaxHalvings; ++h) {
            const Sim3Pose trial = sim3_compose(sim3_exp(step), out.pose);
            const double trial_cost = cost_of(trial);
            if (trial_cost <= cost) {
                out.pose = trial;
                cost = trial_cost;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            out.diagnostic = "no descending step after max halvings";
            break;
        }
        if (step.norm() < kTrackStepTol) {
            out.converged = true;
            break;
        }
    }

    size_t inliers = 0;
    double resid_sum = 0;
    for (size_t m = 0; m < xk.size(); ++m) {
        const double e = (xk[m] - out.pose.apply(xf[m])).norm();
        resid_sum += e;
        if (e <= kernel.huber_delta) ++inliers;
    }
    out.inlier_fraction = static_cast<double>(inliers) / static_cast<double>(xk.size());
    out.mean_residual = resid_sum / static_cast<double>(xk.size());
    return out;
}

struct KeyframePolicy {
    double coverage_thresh = 0.7;
    double trans_depth_factor = 0.1;  // of the median scene depth
    double rot_thresh_deg = 5.0;
};

inline double median_depth(const Image3& pointmap) {
    std::vector<double> z;
    z.reserve(pointmap.pixels());
    for (size_t p = 0; p < pointmap.pixels(); ++p) {
        const double d = pointmap.data[3 * p + 2];
        if (d > 0) z.push_back(d);
    }
    if (z.empty()) return 0.0;
    std::nth_element(z.begin(), z.begin() + z.size() / 2, z.end());
    return z[z.size() / 2];
}

// Admit a new keyframe on low match coverage or large motion since the last one.
// result.pose composed onto the keyframe pose gives the frame's world pose.
inline bool keyframe_decision(const TrackResult& result, const Frame& frame, const Keyframe& last_kf,
                              const KeyframePolicy& policy = {}) {
    if (result.inlier_fraction < policy.coverage_thresh) return true;
    const Sim3Pose frame_pose = sim3_compose(last_kf.pose, result.pose);
    const auto [dist, deg] = pose_delta_metrics(last_kf.pose, frame_pose);
    const double med = median_depth(frame.pointmap);
    if (med > 0 && dist > policy.trans_depth_factor * med) return true;
    return deg > policy.rot_thresh_deg;
}

}  // namespace watersplat
