#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "test_util.hpp"
#include "watersplat/pose_graph.hpp"

using namespace watersplat;

namespace {

const CameraIntrinsics kCam{60.0, 60.0, 31.5, 31.5, 64, 64};

// Build keyframes with ground-truth poses and consistent pointmaps, plus
// noise-free matches: points are generated on frame i's pixel grid so the
// reprojection residual is exactly zero at the ground truth.
struct GraphScene {
    std::vector<Keyframe> keyframes;
    std::vector<GraphEdge> edges;
};

GraphEdge make_edge(int i, int j, const Sim3Pose& Ti, const Sim3Pose& Tj, Image3& pointmap_j,
                    int& slot, std::mt19937_64& rng, int n_matches = 60) {
    GraphEdge e;
    e.frame_i = i;
    e.frame_j = j;
    std::uniform_int_distribution<int> px(4, kCam.width - 5);
    std::uniform_real_distribution<double> ud(1.5, 3.5), uq(0.4, 1.0);
    const int side = pointmap_j.width;
    for (int k = 0; k < n_matches; ++k) {
        const int ax = px(rng), ay = px(rng);
        const double d = ud(rng);
        const Vec3 xi((ax - kCam.cx) / kCam.fx * d, (ay - kCam.cy) / kCam.fy * d, d);
        const Vec3 w = Ti.apply(xi);
        const Vec3 xj = Tj.inverse().apply(w);
        const Vec2i pb(slot % side, slot / side);
        ++slot;
        for (int c = 0; c < 3; ++c) pointmap_j.at(pb.x(), pb.y())[c] = xj[c];
        e.matches.push_back({{ax, ay}, pb, uq(rng)});
    }
    return e;
}

Keyframe make_kf(int id, const Sim3Pose& pose, int pm_side = 32) {
    Keyframe kf;
    kf.id = id;
    kf.pose = pose;
    kf.frame.pointmap = Image3(pm_side, pm_side);
    return kf;
}

double mean_reproj_px(const std::vector<Keyframe>& kfs, const std::vector<GraphEdge>& edges,
                      const std::vector<Sim3Pose>& poses) {
    double sum = 0;
    size_t n = 0;
    for (const GraphEdge& e : edges) {
        const Sim3Pose Tij = sim3_compose(poses[static_cast<size_t>(e.frame_i)].inverse(),
                                          poses[static_cast<size_t>(e.frame_j)]);
        const Image3& pm = kfs[static_cast<size_t>(e.frame_j)].frame.pointmap;
        for (const Match& m : e.matches) {
            if (m.q <= 0) continue;
            const double* p = pm.at(m.pixel_b.x(), m.pixel_b.y());
            const Vec3 x = Tij.apply(Vec3(p[0], p[1], p[2]));
            const Vec2 proj(kCam.fx * x.x() / x.z() + kCam.cx, kCam.fy * x.y() / x.z() + kCam.cy);
            sum += (m.pixel_a.cast<double>() - proj).norm();
            ++n;
        }
    }
    return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("detect_loops: radius and id-gap filters") {
    std::vector<Keyframe> kfs;
    for (int k = 0; k < 31; ++k) {
        Sim3Pose p;
        p.t = Vec3(0.2 * k, 0, 0);
        kfs.push_back(make_kf(k, p, 2));
    }
    // far-away current keyframe: nothing within radius
    Keyframe far = make_kf(31, Sim3Pose::identity(), 2);
    far.pose.t = Vec3(100, 0, 0);
    CHECK(detect_loops(kfs, far).empty());

    // exact revisit of the start after 30 keyframes
    Keyframe revisit = make_kf(31, Sim3Pose::identity(), 2);
    const auto loops = detect_loops(kfs, revisit);
    REQUIRE(loops.size() >= 1);
    CHECK(loops[0].frame_j == 0);
    CHECK(loops[0].kind == EdgeKind::loop);
    for (const GraphEdge& e : loops) CHECK(std::abs(e.frame_i - e.frame_j) > 20);

    // temporal neighbor at distance 0 is excluded by the gap filter
    Keyframe neighbor = make_kf(31, kfs[30].pose, 2);
    for (const GraphEdge& e : detect_loops(kfs, neighbor)) CHECK(e.frame_j != 30);
}

TEST_CASE("single keyframe is unchanged by bundle adjustment") {
    std::vector<Keyframe> kfs{make_kf(0, Sim3Pose::identity(), 2)};
    const BaResult r = global_bundle_adjust(kfs, {}, kCam);
    CHECK(r.converged);
    CHECK(r.poses.size() == 1);
    CHECK(r.poses[0].t == kfs[0].pose.t);
}

TEST_CASE("two keyframes: perturbed second pose recovers noise-free geometry") {
    std::mt19937_64 rng(3);
    Sim3Pose T1;
    T1.t = Vec3(0.4, 0.1, -0.2);
    T1.q = Quat(Eigen::AngleAxisd(0.15, Vec3(0.2, 1.0, 0.1).normalized()));
    T1.s = 1.3;

    std::vector<Keyframe> kfs{make_kf(0, Sim3Pose::identity()), make_kf(1, T1)};
    std::vector<GraphEdge> edges;
    int slot0 = 0, slot1 = 0;
    edges.push_back(make_edge(0, 1, kfs[0].pose, kfs[1].pose, kfs[1].frame.pointmap, slot1, rng));
    edges.push_back(make_edge(1, 0, kfs[1].pose, kfs[0].pose, kfs[0].frame.pointmap, slot0, rng));

    // perturb the estimate handed to BA
    std::vector<Keyframe> noisy = kfs;
    noisy[1].pose.t += Vec3(0.06, -0.04, 0.05);
    noisy[1].pose.q = (noisy[1].pose.q * Quat(Eigen::AngleAxisd(0.04, Vec3::UnitX()))).normalized();
    noisy[1].pose.s *= 1.05;

    const double before = mean_reproj_px(noisy, edges, {noisy[0].pose, noisy[1].pose});
    REQUIRE(before > 0.5);
    const BaResult r = global_bundle_adjust(noisy, edges, kCam, {1.0});
    CHECK(r.final_cost <= r.initial_cost);
    CHECK(mean_reproj_px(noisy, edges, r.poses) < 1e-5);
    CHECK((r.poses[1].t - T1.t).norm() < 1e-5);
    CHECK(std::abs(r.poses[1].s - T1.s) < 1e-5);
}

namespace {

GraphScene make_loop_scene(uint64_t seed, double noise_frac, int n = 10) {
    std::mt19937_64 rng(seed);
    GraphScene s;
    std::vector<Sim3Pose> gt;
    for (int k = 0; k < n; ++k) {
        // cameras on a circle, looking roughly at the ring center
        const double a = 2.0 * M_PI * k / n;
        Sim3Pose p;
        p.t = Vec3(1.5 * std::cos(a), 1.5 * std::sin(a), 0.0);
        p.q = Quat(Eigen::AngleAxisd(a * 0.3, Vec3::UnitZ()));
        gt.push_back(p);
        s.keyframes.push_back(make_kf(k, p));
    }
    std::vector<int> slots(static_cast<size_t>(n), 0);
    for (int k = 1; k < n; ++k) {
        s.edges.push_back(make_edge(k - 1, k, gt[static_cast<size_t>(k - 1)], gt[static_cast<size_t>(k)],
                                    s.keyframes[static_cast<size_t>(k)].frame.pointmap,
                                    slots[static_cast<size_t>(k)], rng));
        s.edges.push_back(make_edge(k, k - 1, gt[static_cast<size_t>(k)], gt[static_cast<size_t>(k - 1)],
                                    s.keyframes[static_cast<size_t>(k - 1)].frame.pointmap,
                                    slots[static_cast<size_t>(k - 1)], rng));
    }
    // one loop closure pair
    s.edges.push_back(make_edge(0, n - 1, gt[0], gt[static_cast<size_t>(n - 1)],
                                s.keyframes[static_cast<size_t>(n - 1)].frame.pointmap,
                                slots[static_cast<size_t>(n - 1)], rng));
    s.edges.back().kind = EdgeKind::loop;
    s.edges.push_back(make_edge(n - 1, 0, gt[static_cast<size_t>(n - 1)], gt[0],
                                s.keyframes[0].frame.pointmap, slots[0], rng));
    s.edges.back().kind = EdgeKind::loop;

    // simulated odometry drift on the initial estimates
    std::normal_distribution<double> nn(0.0, noise_frac);
    Vec3 drift = Vec3::Zero();
    for (int k = 1; k < n; ++k) {
        drift += Vec3(nn(rng), nn(rng), nn(rng));
        s.keyframes[static_cast<size_t>(k)].pose.t += drift;
        s.keyframes[static_cast<size_t>(k)].pose.q =
            (s.keyframes[static_cast<size_t>(k)].pose.q * Quat(Eigen::AngleAxisd(nn(rng), Vec3::UnitY())))
                .normalized();
    }
    return s;
}

double translation_rmse(const std::vector<Sim3Pose>& a, const std::vector<Sim3Pose>& gt) {
    double ss = 0;
    for (size_t k = 0; k < a.size(); ++k) ss += (a[k].t - gt[k].t).squaredNorm();
    return std::sqrt(ss / static_cast<double>(a.size()));
}

}  // namespace

TEST_CASE("ten-keyframe loop with odometry noise improves after BA") {
    GraphScene noisy = make_loop_scene(11, 0.015);
    GraphScene clean = make_loop_scene(11, 0.0);
    std::vector<Sim3Pose> gt, pre;
    for (const Keyframe& kf : clean.keyframes) gt.push_back(kf.pose);
    for (const Keyframe& kf : noisy.keyframes) pre.push_back(kf.pose);

    const BaResult r = global_bundle_adjust(noisy.keyframes, noisy.edges, kCam, {1.0});
    CHECK(r.final_cost <= r.initial_cost);
    const double ate_pre = translation_rmse(pre, gt);
    const double ate_post = translation_rmse(r.poses, gt);
    CHECK(ate_post < ate_pre);
    CHECK(ate_post < 1e-4);  // noise-free matches: exact recovery up to gauge
}

TEST_CASE("gauge invariance: a common Sim(3) on all poses shifts the solution by exactly it") {
    GraphScene base = make_loop_scene(13, 0.01, 6);
    const BaResult r0 = global_bundle_adjust(base.keyframes, base.edges, kCam, {1.0});

    Sim3Pose G;
    G.t = Vec3(0.7, -0.3, 0.2);
    G.q = Quat(Eigen::AngleAxisd(0.6, Vec3(1, 2, 0.5).normalized()));
    G.s = 1.7;
    GraphScene moved = base;
    for (Keyframe& kf : moved.keyframes) kf.pose = sim3_compose(G, kf.pose);
    const BaResult r1 = global_bundle_adjust(moved.keyframes, moved.edges, kCam, {1.0});

    for (size_t k = 0; k < r0.poses.size(); ++k) {
        const Sim3Pose expected = sim3_compose(G, r0.poses[k]);
        CHECK((r1.poses[k].t - expected.t).norm() < 1e-6);
        CHECK(std::abs(r1.poses[k].s - expected.s) < 1e-6);
        CHECK(std::abs(std::abs(r1.poses[k].q.normalized().dot(expected.q.normalized())) - 1.0) < 1e-9);
    }
}

TEST_CASE("zero-confidence matches are excluded bit-exactly") {
    GraphScene a = make_loop_scene(17, 0.01, 5);
    GraphScene b = a;
    // append garbage matches at q = 0 referencing corrupted pointmap slots
    for (GraphEdge& e : b.edges) {
        Image3& pm = b.keyframes[static_cast<size_t>(e.frame_j)].frame.pointmap;
        for (int c = 0; c < 3; ++c) pm.at(pm.width - 1, pm.height - 1)[c] = 1e6;
        e.matches.push_back({{0, 0}, {pm.width - 1, pm.height - 1}, 0.0});
    }
    const BaResult ra = global_bundle_adjust(a.keyframes, a.edges, kCam, {1.0});
    const BaResult rb = global_bundle_adjust(b.keyframes, b.edges, kCam, {1.0});
    for (size_t k = 0; k < ra.poses.size(); ++k) {
        CHECK(ra.poses[k].t == rb.poses[k].t);
        CHECK(ra.poses[k].s == rb.poses[k].s);
        CHECK(ra.poses[k].q.coeffs() == rb.poses[k].q.coeffs());
    }
}

TEST_CASE("disconnected graph returns unchanged poses with a diagnostic") {
    std::mt19937_64 rng(19);
    std::vector<Keyframe> kfs{make_kf(0, Sim3Pose::identity()), make_kf(1, Sim3Pose::identity()),
                              make_kf(2, Sim3Pose::identity())};
    kfs[1].pose.t = Vec3(0.5, 0, 0);
    kfs[2].pose.t = Vec3(5.0, 0, 0);
    std::vector<GraphEdge> edges;
    int slot = 0;
    edges.push_back(make_edge(0, 1, kfs[0].pose, kfs[1].pose, kfs[1].frame.pointmap, slot, rng));
    // keyframe 2 has no edge
    const BaResult r = global_bundle_adjust(kfs, edges, kCam);
    CHECK_FALSE(r.converged);
    CHECK(!r.diagnostic.empty());
    for (size_t k = 0; k < kfs.size(); ++k) CHECK(r.poses[k].t == kfs[k].pose.t);
}

TEST_CASE("edge list dump format") {
    GraphEdge e1{0, 1, {{Vec2i(0, 0), Vec2i(0, 0), 1.0}}, EdgeKind::sequential};
    GraphEdge e2{9, 0, {{Vec2i(0, 0), Vec2i(0, 0), 1.0}, {Vec2i(1, 0), Vec2i(1, 0), 0.5}}, EdgeKind::loop};
    std::ostringstream os;
    write_edge_list({e1, e2}, os);
    CHECK(os.str() == "0 1 sequential 1\n9 0 loop 2\n");
}
