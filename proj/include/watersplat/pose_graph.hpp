#pragma once

#include <numeric>

#include "watersplat/renderer.hpp"
#include "watersplat/tracker.hpp"

namespace watersplat {

enum class EdgeKind { sequential, loop };

struct GraphEdge {
    int frame_i = 0;  // observing keyframe: residuals are pixel errors in this frame
    int frame_j = 0;  // point-source keyframe: matches index its pointmap
    std::vector<Match> matches;
    EdgeKind kind = EdgeKind::sequential;
};

inline constexpr double kLoopRadius = 1.0;  // scene units
inline constexpr int kLoopMinGap = 20;      // keyframe ids
inline constexpr double kBaStepTol = 1e-8;
inline constexpr int kBaMaxIters = 100;

// Geometric loop candidates: spatially close, temporally distant keyframes.
// Matches are left empty; the caller supplies correspondences before BA.
inline std::vector<GraphEdge> detect_loops(const std::vector<Keyframe>& keyframes, const Keyframe& current,
                                           double r_loop = kLoopRadius, int min_gap = kLoopMinGap) {
    std::vector<GraphEdge> out;
    for (const Keyframe& kf : keyframes) {
        if (std::abs(current.id - kf.id) <= min_gap) continue;
        if ((current.pose.t - kf.pose.t).norm() >= r_loop) continue;
        GraphEdge e;
        e.frame_i = current.id;
        e.frame_j = kf.id;
        e.kind = EdgeKind::loop;
        out.push_back(std::move(e));
    }
    return out;
}

struct BaResult {
    std::vector<Sim3Pose> poses;
    bool converged = false;
    int iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    std::string diagnostic;
};

namespace detail {

inline bool graph_connected(size_t n, const std::vector<GraphEdge>& edges,
                            const std::vector<int>& ids) {
    std::vector<size_t> parent(n);
    std::iota(parent.begin(), parent.end(), size_t{0});
    auto find = [&](size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    auto index_of = [&](int id) {
        for (size_t k = 0; k < ids.size(); ++k)
            if (ids[k] == id) return k;
        throw std::invalid_argument("pose graph edge references unknown keyframe id " + std::to_string(id));
    };
    for (const GraphEdge& e : edges) parent[find(index_of(e.frame_i))] = find(index_of(e.frame_j));
    for (size_t k = 1; k < n; ++k)
        if (find(k) != find(0)) return false;
    return true;
}

}  // namespace detail

// Gauss-Newton over all keyframe Sim(3) poses except keyframe 0 (gauge,
// including its scale), minimizing Huber-weighted pixel reprojection errors
//   r = p_i - pi(T_i^-1 T_j X_j)
// with the pointmaps held fixed. Zero-confidence matches are skipped exactly.
inline BaResult global_bundle_adjust(const std::vector<Keyframe>& keyframes,
                                     const std::vector<GraphEdge>& edges, const CameraIntrinsics& K,
                                     const RobustKernel& kernel = {1.0}) {
    BaResult out;
    out.poses.reserve(keyframes.size());
    for (const Keyframe& kf : keyframes) out.poses.push_back(kf.pose);
    if (keyframes.size() <= 1) {
        out.converged = true;
        return out;
    }
    std::vector<int> ids(keyframes.size());
    for (size_t k = 0; k < keyframes.size(); ++k) ids[k] = keyframes[k].id;
    if (!detail::graph_connected(keyframes.size(), edges, ids)) {
        out.diagnostic = "disconnected pose graph";
        return out;
    }
    auto index_of = [&](int id) {
        for (size_t k = 0; k < ids.size(); ++k)
            if (ids[k] == id) return k;
        throw std::invalid_argument("pose graph edge references unknown keyframe id " + std::to_string(id));
    };

    const size_t n_free = keyframes.size() - 1;  // keyframe 0 is the gauge
    const Eigen::Index dim = static_cast<Eigen::Index>(7 * n_free);

    auto cost_of = [&](const std::vector<Sim3Pose>& poses) {
        double c = 0;
        for (const GraphEdge& e : edges) {
            const Sim3Pose Tij = sim3_compose(poses[index_of(e.frame_i)].inverse(), poses[index_of(e.frame_j)]);
            const Image3& pm = keyframes[index_of(e.frame_j)].frame.pointmap;
            for (const Match& m : e.matches) {
                if (m.q <= 0.0) continue;
                const Vec3 x = Tij.apply(detail::pointmap_at(pm, m.pixel_b));
                if (x.z() <= kNearPlane) continue;
                const Vec2 proj(K.fx * x.x() / x.z() + K.cx, K.fy * x.y() / x.z() + K.cy);
                const Vec2 r = m.pixel_a.cast<double>() - proj;
                c += m.q * detail::huber_rho(r.norm(), kernel.huber_delta);
            }
        }
        return c;
    };

    double cost = cost_of(out.poses);
    out.initial_cost = cost;
    for (int it = 0; it < kBaMaxIters; ++it) {
        out.iterations = it + 1;
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);

        for (const GraphEdge& e : edges) {
            const size_t ii = index_of(e.frame_i), jj = index_of(e.frame_j);
            const Sim3Pose& Ti = out.poses[ii];
            const Sim3Pose& Tj = out.poses[jj];
            const Mat3 Rit = Ti.rotation().transpose();
            const Image3& pm = keyframes[jj].frame.pointmap;
            for (const Match& m : e.matches) {
                if (m.q <= 0.0) continue;
                const Vec3 w = Tj.apply(detail::pointmap_at(pm, m.pixel_b));  // world point
                const Vec3 x = Ti.inverse().apply(w);
                if (x.z() <= kNearPlane) continue;
                const double iz = 1.0 / x.z();
                const Vec2 proj(K.fx * x.x() * iz + K.cx, K.fy * x.y() * iz + K.cy);
                const Vec2 r = m.pixel_a.cast<double>() - proj;

                Eigen::Matrix<double, 2, 3> Jpi;
                Jpi << K.fx * iz, 0, -K.fx * x.x() * iz * iz,
                       0, K.fy * iz, -K.fy * x.y() * iz * iz;
                Eigen::Matrix<double, 3, 7> Jw;  // d(exp(d) * w)/dd
                Jw.block<3, 3>(0, 0) = Mat3::Identity();
                Jw.block<3, 3>(0, 3) = -skew(w);
                Jw.col(6) = w;
                // x = Ti^-1 w; the linear part of Ti^-1 is (1/s_i) Ri^T
                const Eigen::Matrix<double, 2, 7> Jproj = Jpi * ((1.0 / Ti.s) * Rit) * Jw;

                const double wgt = m.q * detail::huber_weight(r.norm(), kernel.huber_delta);
                // residual Jacobians: dr/dd_i = +Jproj, dr/dd_j = -Jproj
                struct Blk {
                    size_t kf;
                    double sign;
                };
                const Blk blks[2] = {{ii, +1.0}, {jj, -1.0}};
                for (const Blk& a : blks) {
                    if (a.kf == 0) continue;
                    const Eigen::Index ra = static_cast<Eigen::Index>(7 * (a.kf - 1));
                    const Eigen::Matrix<double, 2, 7> Ja = a.sign * Jproj;
                    g.segment<7>(ra).noalias() += wgt * Ja.transpose() * r;
                    for (const Blk& b : blks) {
                        if (b.kf == 0) continue;
                        const Eigen::Index rb = static_cast<Eigen::Index>(7 * (b.kf - 1));
                        const Eigen::Matrix<double, 2, 7> Jb = b.sign * Jproj;
                        H.block<7, 7>(ra, rb).noalias() += wgt * Ja.transpose() * Jb;
                    }
                }
            }
        }

        const Eigen::FullPivLU<Eigen::MatrixXd> lu(H);
        if (lu.rank() < dim) {
            out.diagnostic = "rank-deficient bundle adjustment system";
            break;
        }
        Eigen::VectorXd step = lu.solve(-g);

        bool accepted = false;
        for (int h = 0; h <= kTrackMaxHalvings; ++h) {
            std::vector<Sim3Pose> trial = out.poses;
            for (size_t k = 1; k < trial.size(); ++k)
                trial[k] = sim3_compose(sim3_exp(step.segment<7>(static_cast<Eigen::Index>(7 * (k - 1)))),
                                        out.poses[k]);
            const double trial_cost = cost_of(trial);
            if (trial_cost <= cost) {
                out.poses = std::move(trial);
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
        if (step.norm() < kBaStepTol) {
            out.converged = true;
            break;
        }
    }
    out.final_cost = cost;
    return out;
}

// Debug dump: one `i j kind n_matches` line per edge.
inline void write_edge_list(const std::vector<GraphEdge>& edges, std::ostream& os) {
    for (const GraphEdge& e : edges)
        os << e.frame_i << " " << e.frame_j << " "
           << (e.kind == EdgeKind::loop ? "loop" : "sequential") << " " << e.matches.size() << "\n";
}

}  // namespace watersplat
