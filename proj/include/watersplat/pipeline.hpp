#pragma once

#include <thread>

#include "watersplat/config.hpp"
#include "watersplat/harness.hpp"
#include "watersplat/map_manager.hpp"
#include "watersplat/pose_graph.hpp"

namespace watersplat {

struct SlamResult {
    std::vector<GaussianPrimitive> map;
    MediumNetParams medium;
    std::vector<Keyframe> keyframes;
    std::vector<int> kf_frame_index;             // dataset frame each keyframe came from
    std::vector<TrajectoryEntry> trajectory;     // every frame, online estimate
    std::vector<TrajectoryEntry> kf_trajectory;  // final keyframe poses
    std::vector<GraphEdge> edges;
    std::vector<std::string> loss_log;  // "kf <id> first <loss> last <loss> steps <n>"
    std::vector<Sim3Pose> kf_poses_pre_ba;  // snapshot before the first accepted BA
    int loops_closed = 0;
    bool ba_ran = false;
};

namespace detail {

inline void log_line(std::ostream* log, const std::string& s) {
    if (log) *log << s << "\n";
}

}  // namespace detail

// Sequential (default) or tracker/mapper-overlapped SLAM over a synthetic
// dataset. The dataset's ground-truth trajectory is consumed only by the
// correspondence source, which stands in for a learned matcher; pose
// estimation itself never sees it.
inline SlamResult run_slam(const Dataset& ds, const SlamConfig& cfg, std::ostream* log = nullptr) {
    if (ds.frames.empty()) throw std::runtime_error("run_slam: dataset has no frames");
    if (ds.gt_traj.size() != ds.frames.size())
        throw std::runtime_error("run_slam: gt_traj length does not match frame count (needed by the match source)");

    // Working copies: the no-mask ablation removes the water mask everywhere —
    // confidence gating, match generation, densification, and losses.
    std::vector<Frame> frames = ds.frames;
    for (Frame& f : frames) {
        if (!cfg.use_water_mask) f.water_mask.fill(0.0);
        f = mask_confidence(std::move(f));
    }
    auto gt_pose = [&](int i) { return ds.gt_traj[static_cast<size_t>(i)].pose; };

    SlamResult res;
    res.medium = medium_init(cfg.seed);
    std::mt19937_64 rng(cfg.seed);
    MapOptimizerState opt;

    std::thread mapper;  // parallel mode: optimization overlaps tracking
    auto join_mapper = [&] {
        if (mapper.joinable()) mapper.join();
    };
    auto optimize_newest = [&](size_t newest) {
        const OptimizeReport rep =
            optimize_step(res.map, res.medium, res.keyframes, newest, ds.K, cfg.map, cfg.loss, cfg.lr, opt, rng);
        res.loss_log.push_back("kf " + std::to_string(res.keyframes[newest].id) + " first " +
                               std::to_string(rep.first_loss) + " last " + std::to_string(rep.last_loss) +
                               " steps " + std::to_string(rep.steps));
    };
    auto add_keyframe = [&](int frame_index, const Sim3Pose& pose) {
        join_mapper();
        Keyframe kf;
        kf.id = static_cast<int>(res.keyframes.size());
        kf.frame = frames[static_cast<size_t>(frame_index)];
        kf.pose = pose;

        if (kf.id > 0) {
            // sequential edges both directions: the projection residual is
            // invariant to the observing camera's scale, so each keyframe's
            // scale is only constrained when it is the point source.
            const Keyframe& prev = res.keyframes.back();
            const int pf = res.kf_frame_index.back();
            GraphEdge fwd{prev.id, kf.id,
                          ground_truth_matches(prev.frame, gt_pose(pf), kf.frame, gt_pose(frame_index), ds.K,
                                               cfg.match_stride),
                          EdgeKind::sequential};
            GraphEdge bwd{kf.id, prev.id,
                          ground_truth_matches(kf.frame, gt_pose(frame_index), prev.frame, gt_pose(pf), ds.K,
                                               cfg.match_stride),
                          EdgeKind::sequential};
            res.edges.push_back(std::move(fwd));
            res.edges.push_back(std::move(bwd));
        }

        std::vector<int> loop_partners;
        for (const GraphEdge& cand : detect_loops(res.keyframes, kf, cfg.loop_radius, cfg.loop_min_gap)) {
            const size_t j = static_cast<size_t>(cand.frame_j);
            const int jf = res.kf_frame_index[j];
            GraphEdge fwd{kf.id, cand.frame_j,
                          ground_truth_matches(kf.frame, gt_pose(frame_index), res.keyframes[j].frame,
                                               gt_pose(jf), ds.K, cfg.match_stride),
                          EdgeKind::loop};
            if (static_cast<int>(fwd.matches.size()) < cfg.min_loop_matches) continue;
            GraphEdge bwd{cand.frame_j, kf.id,
                          ground_truth_matches(res.keyframes[j].frame, gt_pose(jf), kf.frame,
                                               gt_pose(frame_index), ds.K, cfg.match_stride),
                          EdgeKind::loop};
            res.edges.push_back(std::move(fwd));
            res.edges.push_back(std::move(bwd));
            loop_partners.push_back(cand.frame_j);
            ++res.loops_closed;
            detail::log_line(log, "loop closure: kf " + std::to_string(kf.id) + " <-> kf " +
                                      std::to_string(cand.frame_j));
        }

        res.keyframes.push_back(std::move(kf));
        res.kf_frame_index.push_back(frame_index);
        const size_t newest = res.keyframes.size() - 1;

        // densify against the current map, then optimize the newest view
        const RenderOutput coverage = render(res.map, res.medium, res.keyframes[newest].pose, ds.K);
        std::vector<GaussianPrimitive> fresh = densify(res.keyframes[newest], coverage, cfg.map);
        detail::log_line(log, "kf " + std::to_string(res.keyframes[newest].id) + ": +" +
                                  std::to_string(fresh.size()) + " primitives");
        res.map.insert(res.map.end(), fresh.begin(), fresh.end());
        if (cfg.parallel) {
            mapper = std::thread(optimize_newest, newest);
        } else {
            optimize_newest(newest);
        }

        if (!loop_partners.empty()) {
            join_mapper();
            if (!res.ba_ran) {
                res.kf_poses_pre_ba.clear();
                for (const Keyframe& k : res.keyframes) res.kf_poses_pre_ba.push_back(k.pose);
            }
            std::map<int, Sim3Pose> old_poses;
            for (const Keyframe& k : res.keyframes) old_poses[k.id] = k.pose;
            const BaResult ba = global_bundle_adjust(res.keyframes, res.edges, ds.K, cfg.ba_kernel);
            if (!ba.diagnostic.empty()) {
                detail::log_line(log, "bundle adjustment skipped: " + ba.diagnostic);
            } else {
                res.ba_ran = true;
                detail::log_line(log, "bundle adjustment: cost " + std::to_string(ba.initial_cost) + " -> " +
                                          std::to_string(ba.final_cost) + " in " + std::to_string(ba.iterations) +
                                          " iterations");
                std::map<int, Sim3Pose> new_poses;
                for (size_t k = 0; k < res.keyframes.size(); ++k) {
                    res.keyframes[k].pose = ba.poses[k];
                    new_poses[res.keyframes[k].id] = ba.poses[k];
                }
                const RerenderDecision dec = mark_rerender(old_poses, new_poses, cfg.map);
                {
                    size_t idx = 0;
                    for (const auto& [id, p] : old_poses) {
                        (void)p;
                        res.keyframes[static_cast<size_t>(id)].rerender_flag = dec.flags[idx++] != 0;
                    }
                }
                if (cfg.adjust) adjust_primitives(res.map, old_poses, new_poses);
                if (cfg.merge) {
                    std::vector<int> known;
                    for (const Keyframe& k : res.keyframes) known.push_back(k.id);
                    for (int partner : loop_partners) {
                        const size_t before = res.map.size();
                        merge_primitives(res.map, res.keyframes[newest].id, partner, cfg.map, known, cfg.seed);
                        detail::log_line(log, "merge kf " + std::to_string(res.keyframes[newest].id) + "+" +
                                                  std::to_string(partner) + ": " + std::to_string(before) +
                                                  " -> " + std::to_string(res.map.size()) + " primitives");
                    }
                }
                if (dec.global) {
                    // global mapping: every flagged keyframe gets one refine pass
                    detail::log_line(log, "global mapping triggered");
                    for (size_t k = 0; k < res.keyframes.size(); ++k) {
                        if (!res.keyframes[k].rerender_flag) continue;
                        for (int it = 0; it < cfg.map.refine_iters; ++it)
                            map_gradient_step(res.map, res.medium, res.keyframes[k], ds.K, cfg.loss, cfg.lr, opt);
                    }
                }
                for (Keyframe& k : res.keyframes) k.rerender_flag = false;
            }
        }
    };

    // frame 0 bootstraps the map at the identity pose (monocular gauge)
    res.trajectory.push_back({frames[0].timestamp, Sim3Pose::identity()});
    add_keyframe(0, Sim3Pose::identity());

    Sim3Pose last_rel = Sim3Pose::identity();
    for (size_t f = 1; f < frames.size(); ++f) {
        const Keyframe& kf = res.keyframes.back();
        const int kff = res.kf_frame_index.back();
        const std::vector<Match> matches = ground_truth_matches(kf.frame, gt_pose(kff), frames[f],
                                                                gt_pose(static_cast<int>(f)), ds.K,
                                                                cfg.match_stride);
        TrackResult tr;
        try {
            tr = estimate_pose(matches, kf.frame.pointmap, frames[f].pointmap, last_rel, cfg.kernel);
        } catch (const std::exception& e) {
            join_mapper();
            throw std::runtime_error("tracking failed at frame " + std::to_string(f) + ": " + e.what());
        }
        if (!tr.pose.t.allFinite() || !std::isfinite(tr.pose.s)) {
            join_mapper();
            throw std::runtime_error("tracking diverged at frame " + std::to_string(f));
        }
        const Sim3Pose world = sim3_compose(kf.pose, tr.pose);
        res.trajectory.push_back({frames[f].timestamp, world});
        if (keyframe_decision(tr, frames[f], kf, cfg.keyframe)) {
            add_keyframe(static_cast<int>(f), world);
            last_rel = Sim3Pose::identity();
        } else {
            last_rel = tr.pose;
        }
    }
    join_mapper();

    for (size_t k = 0; k < res.keyframes.size(); ++k)
        res.kf_trajectory.push_back({frames[static_cast<size_t>(res.kf_frame_index[k])].timestamp,
                                     res.keyframes[k].pose});
    return res;
}

}  // namespace watersplat
