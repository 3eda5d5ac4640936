#pragma once

#include <map>
#include <random>
#include <unordered_map>

#include "watersplat/adam.hpp"
#include "watersplat/losses.hpp"
#include "watersplat/tracker.hpp"

namespace watersplat {

struct MapConfig {
    double tau_A = 0.9;          // opacity threshold for densification candidates
    double d_thresh = 0.15;      // re-render translation threshold (units)
    double theta_thresh = 7.0;   // re-render rotation threshold (degrees)
    double global_thresh = 0.3;  // flagged fraction that triggers global mapping
    double voxel_size = 0.35;    // merge grid edge (units)
    int new_kf_iters = 50;
    int refine_kf_count = 5;
    int refine_iters = 40;
    int densify_downsample = 16;  // keep 1 of N candidates
};

struct LearningRates {
    double position = 1.6e-4;  // multiplied by the scene extent
    double rotation = 1e-3;
    double log_scale = 5e-3;
    double color = 2.5e-3;
    double opacity_logit = 5e-2;
    double medium = 1e-3;
    // Decoupled (AdamW-style) decay on the medium MLP weight matrices only;
    // the output bias is untouched, so the constant part of the medium is
    // never shrunk — decay pulls the net toward direction independence.
    double medium_weight_decay = 0.0;
};

// Largest bounding-box edge of the primitive positions; the position learning
// rate is expressed relative to it.
inline double scene_extent(const std::vector<GaussianPrimitive>& map) {
    if (map.empty()) return 1.0;
    Vec3 lo = map[0].mu, hi = map[0].mu;
    for (const GaussianPrimitive& g : map) {
        lo = lo.cwiseMin(g.mu);
        hi = hi.cwiseMax(g.mu);
    }
    const double e = (hi - lo).maxCoeff();
    return e > 0 ? e : 1.0;
}

// New primitives for incompletely covered, non-water pixels of a keyframe view:
// candidates where accum_opacity < tau_A and mask = 0, thinned to every
// densify_downsample-th in row-major order.
inline std::vector<GaussianPrimitive> densify(const Keyframe& kf, const RenderOutput& rendered,
                                              const MapConfig& cfg) {
    const Image3& pm = kf.frame.pointmap;
    std::vector<Vec2i> kept;
    size_t candidate = 0;
    for (int y = 0; y < pm.height; ++y)
        for (int x = 0; x < pm.width; ++x) {
            if (kf.frame.water_mask.at(x, y)[0] > 0.5) continue;
            if (rendered.accum_opacity.at(x, y)[0] >= cfg.tau_A) continue;
            if (pm.at(x, y)[2] <= 0.0) continue;  // no depth, nothing to anchor
            if (candidate++ % static_cast<size_t>(cfg.densify_downsample) == 0) kept.push_back({x, y});
        }

    std::vector<Vec3> world;
    world.reserve(kept.size());
    for (const Vec2i& p : kept) {
        const double* v = pm.at(p.x(), p.y());
        world.push_back(kf.pose.apply(Vec3(v[0], v[1], v[2])));
    }

    // isotropic initial scale from the median nearest-neighbor spacing of the
    // kept candidates; a lone candidate falls back to a depth-based size
    double spacing = 0.0;
    if (world.size() >= 2) {
        std::vector<double> nn(world.size(), std::numeric_limits<double>::infinity());
        for (size_t a = 0; a < world.size(); ++a)
            for (size_t b = a + 1; b < world.size(); ++b) {
                const double d = (world[a] - world[b]).norm();
                nn[a] = std::min(nn[a], d);
                nn[b] = std::min(nn[b], d);
            }
        std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
        spacing = nn[nn.size() / 2];
    } else if (world.size() == 1) {
        spacing = 0.05 * pm.at(kept[0].x(), kept[0].y())[2];
    }
    const double scale = std::max(1.5 * spacing, 1e-6);

    std::vector<GaussianPrimitive> out;
    out.reserve(kept.size());
    for (size_t k = 0; k < kept.size(); ++k) {
        GaussianPrimitive g;
        g.mu = world[k];
        const double* c = kf.frame.image.at(kept[k].x(), kept[k].y());
        g.color = Vec3(c[0], c[1], c[2]);
        g.opacity_logit = 0.0;  // logit(0.5)
        g.log_scale.setConstant(std::log(scale));
        g.anchor = kf.id;
        out.push_back(g);
    }
    return out;
}

// Adam moments for the whole map + medium; grows as densification appends
// primitives (new slots start with zero moments).
struct MapOptimizerState {
    std::vector<AdamMoments<Vec3>> mu, log_scale, color;
    std::vector<AdamMoments<Eigen::Vector4d>> rot;
    std::vector<AdamScalar> opacity;
    AdamMedium medium;
    long t = 0;

    void resize(size_t n) {
        while (mu.size() < n) {
            mu.emplace_back(Vec3::Zero().eval());
            log_scale.emplace_back(Vec3::Zero().eval());
            color.emplace_back(Vec3::Zero().eval());
            rot.emplace_back(Eigen::Vector4d::Zero().eval());
            opacity.emplace_back();
        }
    }
};

// One gradient step of total_loss on a single keyframe view.
inline double map_gradient_step(std::vector<GaussianPrimitive>& map, MediumNetParams& medium,
                                const Keyframe& kf, const CameraIntrinsics& K, const LossWeights& weights,
                                const LearningRates& lrs, MapOptimizerState& state) {
    state.resize(map.size());
    // One context serves both passes: projection, sorting and the medium MLP
    // forward are identical between them.
    const detail::FrameContext ctx = detail::build_context(map, medium, kf.pose, K);
    const RenderOutput out = detail::render_with_context(ctx, map.size(), K);
    const TotalLoss loss = total_loss(out, kf.frame.image, kf.frame.water_mask, map, out.visible, weights);
    Image3 zero(K.width, K.height);
    RenderGrads grads = detail::render_backward_with_context(ctx, map, medium, kf.pose, K, loss.grad_composite,
                                                             zero, loss.grad_medium);

    const double extent = scene_extent(map);
    ++state.t;
    for (size_t i = 0; i < map.size(); ++i) {
        const Vec3 gls = grads.log_scale[i] + loss.log_scale_grad[i];
        state.mu[i].step(map[i].mu, grads.mu[i], lrs.position * extent, state.t);
        state.log_scale[i].step(map[i].log_scale, gls, lrs.log_scale, state.t);
        state.color[i].step(map[i].color, grads.color[i], lrs.color, state.t);
        state.rot[i].step(map[i].rot, grads.rot[i], lrs.rotation, state.t);
        state.opacity[i].step(map[i].opacity_logit, grads.opacity_logit[i], lrs.opacity_logit, state.t);
        map[i].rot.normalize();
        map[i].color = map[i].color.cwiseMax(0.0).cwiseMin(1.0);
    }
    state.medium.step(medium, grads.medium, lrs.medium, state.t);
    if (lrs.medium_weight_decay > 0.0) {
        const double f = 1.0 - lrs.medium * lrs.medium_weight_decay;
        medium.W1 *= f;
        medium.W2 *= f;
        medium.W3 *= f;
        medium.W4 *= f;
    }
    return loss.value;
}

struct OptimizeReport {
    double first_loss = 0.0;
    double last_loss = 0.0;
    int steps = 0;
};

// The per-keyframe schedule: the newest keyframe is optimized for new_kf_iters
// steps, then refine_kf_count randomly chosen earlier keyframes get
// refine_iters steps each. The RNG is caller-seeded for determinism.
inline OptimizeReport optimize_step(std::vector<GaussianPrimitive>& map, MediumNetParams& medium,
                                    const std::vector<Keyframe>& keyframes, size_t newest,
                                    const CameraIntrinsics& K, const MapConfig& cfg,
                                    const LossWeights& weights, const LearningRates& lrs,
                                    MapOptimizerState& state, std::mt19937_64& rng) {
    if (keyframes.empty()) throw std::invalid_argument("optimize_step: no keyframes");
    OptimizeReport rep;
    auto run = [&](const Keyframe& kf, int iters) {
        for (int it = 0; it < iters; ++it) {
            const double l = map_gradient_step(map, medium, kf, K, weights, lrs, state);
            if (rep.steps == 0) rep.first_loss = l;
            rep.last_loss = l;
            ++rep.steps;
        }
    };
    run(keyframes[newest], cfg.new_kf_iters);
    if (keyframes.size() > 1 && cfg.refine_kf_count > 0) {
        std::uniform_int_distribution<size_t> pick(0, keyframes.size() - 2);
        for (int k = 0; k < cfg.refine_kf_count; ++k) {
            size_t idx = pick(rng);
            if (idx >= newest) ++idx;  // uniform over all but the newest
            run(keyframes[idx], cfg.refine_iters);
        }
    }
    return rep;
}

namespace detail {

inline bool same_pose(const Sim3Pose& a, const Sim3Pose& b) {
    return a.s == b.s && a.t == b.t && a.q.coeffs() == b.q.coeffs();
}

}  // namespace detail

// Rigid/similarity re-anchoring after BA: every primitive follows its anchor
// keyframe's pose delta — mu' = T'_k T_k^-1 mu, R' = R'_k R_k^-1 R,
// S' = (s'_k / s_k) S. Primitives of unchanged anchors are left bit-identical.
inline void adjust_primitives(std::vector<GaussianPrimitive>& map,
                              const std::map<int, Sim3Pose>& old_poses,
                              const std::map<int, Sim3Pose>& new_poses) {
    struct Delta {
        Sim3Pose T;
        Quat rot;
        double log_s;
        bool changed;
    };
    std::unordered_map<int, Delta> deltas;
    for (GaussianPrimitive& g : map) {
        auto it = deltas.find(g.anchor);
        if (it == deltas.end()) {
            const auto oldp = old_poses.find(g.anchor);
            const auto newp = new_poses.find(g.anchor);
            if (oldp == old_poses.end() || newp == new_poses.end())
                throw std::invalid_argument("adjust_primitives: unknown anchor keyframe id " +
                                            std::to_string(g.anchor));
            Delta d;
            d.changed = !detail::same_pose(oldp->second, newp->second);
            d.T = sim3_compose(newp->second, oldp->second.inverse());
            d.rot = (newp->second.q * oldp->second.q.conjugate()).normalized();
            d.log_s = std::log(newp->second.s / oldp->second.s);
            it = deltas.emplace(g.anchor, d).first;
        }
        const Delta& d = it->second;
        if (!d.changed) continue;
        g.mu = d.T.apply(g.mu);
        const Quat q(g.rot[0], g.rot[1], g.rot[2], g.rot[3]);
        const Quat qn = (d.rot * q).normalized();
        g.rot = Eigen::Vector4d(qn.w(), qn.x(), qn.y(), qn.z());
        g.log_scale.array() += d.log_s;
    }
}

struct RerenderDecision {
    std::vector<char> flags;  // parallel to the pose map iteration order (by id)
    bool global = false;
};

// Flag keyframes whose pose moved beyond the thresholds; trip the global
// mapping trigger when too many moved.
inline RerenderDecision mark_rerender(const std::map<int, Sim3Pose>& old_poses,
                                      const std::map<int, Sim3Pose>& new_poses, const MapConfig& cfg) {
    if (old_poses.size() != new_poses.size())
        throw std::invalid_argument("mark_rerender: pose set size mismatch");
    RerenderDecision out;
    size_t flagged = 0;
    for (const auto& [id, oldp] : old_poses) {
        const auto it = new_poses.find(id);
        if (it == new_poses.end())
            throw std::invalid_argument("mark_rerender: id missing from new poses: " + std::to_string(id));
        const auto [d, theta] = pose_delta_metrics(oldp, it->second);
        const bool flag = d > cfg.d_thresh || theta > cfg.theta_thresh;
        out.flags.push_back(flag ? 1 : 0);
        if (flag) ++flagged;
    }
    out.global = old_poses.empty()
                     ? false
                     : static_cast<double>(flagged) / static_cast<double>(old_poses.size()) > cfg.global_thresh;
    return out;
}

// Voxel-grid merge of the primitives anchored to two loop-closing keyframes.
// Each occupied voxel keeps a single primitive with componentwise-averaged
// attributes; the merged anchor is a seeded-random pick among the members.
inline void merge_primitives(std::vector<GaussianPrimitive>& map, int frame_a, int frame_b,
                             const MapConfig& cfg, const std::vector<int>& known_frames,
                             uint64_t seed = 0) {
    auto known = [&](int id) {
        return std::find(known_frames.begin(), known_frames.end(), id) != known_frames.end();
    };
    if (!known(frame_a)) throw std::invalid_argument("merge_primitives: unknown frame id " + std::to_string(frame_a));
    if (!known(frame_b)) throw std::invalid_argument("merge_primitives: unknown frame id " + std::to_string(frame_b));

    struct Key {
        long x, y, z;
        bool operator<(const Key& o) const { return std::tie(x, y, z) < std::tie(o.x, o.y, o.z); }
    };
    std::map<Key, std::vector<size_t>> voxels;  // ordered: deterministic iteration
    std::vector<GaussianPrimitive> untouched;
    for (size_t i = 0; i < map.size(); ++i) {
        const GaussianPrimitive& g = map[i];
        if (g.anchor != frame_a && g.anchor != frame_b) {
            untouched.push_back(g);
            continue;
        }
        const Key k{static_cast<long>(std::floor(g.mu.x() / cfg.voxel_size)),
                    static_cast<long>(std::floor(g.mu.y() / cfg.voxel_size)),
                    static_cast<long>(std::floor(g.mu.z() / cfg.voxel_size))};
        voxels[k].push_back(i);
    }

    std::mt19937_64 rng(seed);
    std::vector<GaussianPrimitive> merged;
    for (const auto& [key, members] : voxels) {
        if (members.size() == 1) {
            merged.push_back(map[members[0]]);
            continue;
        }
        GaussianPrimitive out;
        Vec3 mu = Vec3::Zero(), scale = Vec3::Zero(), color = Vec3::Zero();
        double opacity = 0;
        Eigen::Vector4d qsum = Eigen::Vector4d::Zero();
        const Eigen::Vector4d q0 = map[members[0]].rot;
        for (size_t i : members) {
            const GaussianPrimitive& g = map[i];
            mu += g.mu;
            scale += g.scale();
            color += g.color;
            opacity += g.opacity();
            qsum += g.rot.dot(q0) >= 0 ? g.rot : Eigen::Vector4d(-g.rot);
        }
        const double inv = 1.0 / static_cast<double>(members.size());
        out.mu = mu * inv;
        out.log_scale = (scale * inv).array().log().matrix();
        out.color = color * inv;
        out.opacity_logit = logit(std::clamp(opacity * inv, 1e-9, 1.0 - 1e-9));
        out.rot = qsum.normalized();
        std::uniform_int_distribution<size_t> pick(0, members.size() - 1);
        out.anchor = map[members[pick(rng)]].anchor;
        merged.push_back(out);
    }
    untouched.insert(untouched.end(), merged.begin(), merged.end());
    map = std::move(untouched);
}

// ---------------------------------------------------------------------------
// Checkpoint: "WSPL", u32 version, u64 count, per-primitive 14 x f32 + u32
// anchor, medium parameters, trajectory text. Little-endian throughout.

inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& out, const std::vector<GaussianPrimitive>& map,
                            const MediumNetParams& medium, const std::vector<TrajectoryEntry>& traj) {
    out.write("WSPL", 4);
    const uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t count = map.size();
    out.write(reinterpret_cast<const char*>(&count), 8);
    for (const GaussianPrimitive& g : map) {
        float buf[14];
        for (int k = 0; k < 3; ++k) buf[k] = static_cast<float>(g.mu[k]);
        for (int k = 0; k < 4; ++k) buf[3 + k] = static_cast<float>(g.rot[k]);
        for (int k = 0; k < 3; ++k) buf[7 + k] = static_cast<float>(g.log_scale[k]);
        for (int k = 0; k < 3; ++k) buf[10 + k] = static_cast<float>(g.color[k]);
        buf[13] = static_cast<float>(g.opacity_logit);
        out.write(reinterpret_cast<const char*>(buf), sizeof(buf));
        const uint32_t anchor = static_cast<uint32_t>(g.anchor);
        out.write(reinterpret_cast<const char*>(&anchor), 4);
    }
    medium_serialize(medium, out);
    write_trajectory(traj, out);
}

inline void save_checkpoint(const std::string& path, const std::vector<GaussianPrimitive>& map,
                            const MediumNetParams& medium, const std::vector<TrajectoryEntry>& traj) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    save_checkpoint(out, map, medium, traj);
}

struct Checkpoint {
    std::vector<GaussianPrimitive> map;
    MediumNetParams medium;
    std::vector<TrajectoryEntry> trajectory;
};

inline Checkpoint load_checkpoint(std::istream& in, const std::string& origin = "<stream>") {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "WSPL")
        throw std::runtime_error("not a checkpoint (bad magic) in " + origin);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " in " + origin);
    uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 8);
    Checkpoint cp;
    cp.map.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        float buf[14];
        uint32_t anchor = 0;
        in.read(reinterpret_cast<char*>(buf), sizeof(buf));
        in.read(reinterpret_cast<char*>(&anchor), 4);
        if (!in)
            throw std::runtime_error("truncated checkpoint at primitive " + std::to_string(i) + " in " + origin);
        GaussianPrimitive g;
        for (int k = 0; k < 3; ++k) g.mu[k] = buf[k];
        for (int k = 0; k < 4; ++k) g.rot[k] = buf[3 + k];
        for (int k = 0; k < 3; ++k) g.log_scale[k] = buf[7 + k];
        for (int k = 0; k < 3; ++k) g.color[k] = buf[10 + k];
        g.opacity_logit = buf[13];
        g.anchor = static_cast<int>(anchor);
        cp.map.push_back(g);
    }
    cp.medium = medium_deserialize(in);
    cp.trajectory = read_trajectory(in, origin);
    return cp;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return load_checkpoint(in, path);
}

}  // namespace watersplat
