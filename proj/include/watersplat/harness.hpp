#pragma once

#include <filesystem>
#include <random>

#include "watersplat/map_manager.hpp"
#include "watersplat/renderer.hpp"

namespace watersplat {

enum class Layout { plane, box_room, ridge };
enum class TrajKind { orbit, lawnmower, loop, dolly };

struct SceneSpec {
    int n_primitives = 200;
    Layout layout = Layout::plane;
    double water_fraction = 0.3;  // targeted for the plane layout
    uint64_t seed = 0;
    int image_size = 64;
    TrajKind trajectory = TrajKind::orbit;
    int n_frames = 20;
    double pointmap_sigma = 0.0;   // scene units
    double conf_floor = 0.1;
    double outlier_fraction = 0.0;
    // Constant ground-truth medium; unset means the blue-shifted default.
    std::optional<MediumSample> medium;
    double albedo_scale = 1.0;  // scales the surface palette (dim benthic scenes < 1)
    bool high_contrast = false;  // use the bimodal bright/dark palette
};

struct GroundTruthScene {
    std::vector<GaussianPrimitive> primitives;
    MediumNetParams medium;      // network form, flows through the renderer
    MediumSample medium_sample;  // the constant ground truth behind it
    Vec3 extent_lo = Vec3::Zero(), extent_hi = Vec3::Zero();
};

// Blue-shifted water-like constants used when a spec does not override them.
inline MediumSample default_medium() {
    MediumSample m;
    m.sigma_attn = Vec3(0.10, 0.06, 0.04);
    m.sigma_bs = Vec3(0.02, 0.05, 0.08);
    m.c_med = Vec3(0.05, 0.25, 0.35);
    return m;
}

inline CameraIntrinsics make_intrinsics(int size) {
    const double f = 1.2 * size;
    return {f, f, (size - 1) / 2.0, (size - 1) / 2.0, size, size};
}

namespace detail {

// Half-height of the view frustum at the nominal camera distance.
inline constexpr double kCamDistance = 2.0;
inline double view_half_extent() { return kCamDistance / 2.4; }  // (size/2) / (1.2 size) * d

inline const std::array<Vec3, 8>& palette() {
    static const std::array<Vec3, 8> p = {
        Vec3(0.85, 0.30, 0.25), Vec3(0.90, 0.65, 0.20), Vec3(0.80, 0.80, 0.30), Vec3(0.30, 0.70, 0.35),
        Vec3(0.25, 0.65, 0.75), Vec3(0.30, 0.40, 0.85), Vec3(0.60, 0.35, 0.75), Vec3(0.85, 0.55, 0.60)};
    return p;
}

// Anchored palette: mostly dim benthic tones plus one near-white entry.
// Bright surfaces seen far away anchor attenuation (a color cannot exceed 1
// to fake extra dimming) while dim surfaces seen up close anchor backscatter
// (a color cannot go below 0 to fake extra veiling).
inline const std::array<Vec3, 8>& palette_high_contrast() {
    static const std::array<Vec3, 8> p = {
        Vec3(0.92, 0.90, 0.88), Vec3(0.26, 0.09, 0.08), Vec3(0.27, 0.20, 0.06), Vec3(0.24, 0.24, 0.09),
        Vec3(0.09, 0.21, 0.11), Vec3(0.08, 0.20, 0.23), Vec3(0.09, 0.12, 0.26), Vec3(0.18, 0.11, 0.23)};
    return p;
}

}  // namespace detail

// Deterministic ground-truth scene on the requested layout. The geometry faces
// the cameras (which sit at negative z looking toward +z); for the plane
// layout the wall fills the lower (1 - water_fraction) of the nominal view.
inline GroundTruthScene generate_scene(const SceneSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    GroundTruthScene scene;
    scene.medium_sample = spec.medium.value_or(default_medium());
    scene.medium = MediumNetParams::constant(scene.medium_sample);

    const double h = detail::view_half_extent();           // ~0.833
    const double top = -h;                                 // image-up = -y
    const double wall_top = top + spec.water_fraction * 2 * h;  // water above this line
    const int n = spec.n_primitives;
    // The wall overshoots the view frustum at the sides and bottom so only the
    // top boundary (the water line) is visible.
    const double half_w = 1.15 * h;
    const double wall_bottom = 1.15 * h;
    const double wall_h = wall_bottom - wall_top;
    const int nx = std::max(1, static_cast<int>(std::lround(std::sqrt(n * (2.0 * half_w) / std::max(wall_h, 1e-6)))));
    const int ny = std::max(1, (n + nx - 1) / nx);

    double spacing = 2.0 * half_w / nx;
    for (int k = 0; k < n; ++k) {
        const int gx = k % nx, gy = (k / nx) % ny;
        GaussianPrimitive g;
        const double fx = (gx + 0.5) / nx, fy = (gy + 0.5) / ny;
        const double x = -half_w + fx * 2 * half_w + 0.25 * spacing * sym(rng);
        const double y = wall_top + fy * wall_h + 0.25 * spacing * sym(rng);
        switch (spec.layout) {
            case Layout::plane:
                g.mu = Vec3(x, y, 0.04 * sym(rng));
                break;
            case Layout::ridge:
                g.mu = Vec3(x, y, 0.25 * std::sin(2.0 * M_PI * x / (1.2 * h)) + 0.03 * sym(rng));
                break;
            case Layout::box_room: {
                // five interior faces of a box, skipping the face behind the cameras
                const int face = k % 5;
                const double a = sym(rng), b = sym(rng);
                const double e = 1.4;
                switch (face) {
                    case 0: g.mu = Vec3(a * e, b * e, e); break;
                    case 1: g.mu = Vec3(-e, a * e, b * e * 0.5 + e * 0.5); break;
                    case 2: g.mu = Vec3(e, a * e, b * e * 0.5 + e * 0.5); break;
                    case 3: g.mu = Vec3(a * e, -e, b * e * 0.5 + e * 0.5); break;
                    default: g.mu = Vec3(a * e, e, b * e * 0.5 + e * 0.5); break;
                }
                break;
            }
        }
        // The high-contrast palette is laid out in coherent 2x2-primitive
        // patches: the extreme tones anchor the medium fit, and the patch
        // structure keeps the texture renderable at modest primitive counts.
        const size_t color_idx = spec.high_contrast
                                     ? static_cast<size_t>((gx / 2 + 3 * (gy / 2)) % 8)
                                     : static_cast<size_t>(rng() % 8);
        const auto& pal = spec.high_contrast ? detail::palette_high_contrast() : detail::palette();
        g.color = spec.albedo_scale * pal[color_idx];
        g.opacity_logit = logit(0.6 + 0.35 * u01(rng));
        const double s = spacing * (0.9 + 0.3 * u01(rng));
        g.log_scale = Vec3(std::log(s), std::log(s), std::log(s)) +
                      Vec3(sym(rng), sym(rng), sym(rng)) * 0.05;  // near-isotropic
        g.anchor = 0;
        scene.primitives.push_back(g);
    }

    scene.extent_lo = scene.primitives[0].mu;
    scene.extent_hi = scene.primitives[0].mu;
    for (const auto& g : scene.primitives) {
        scene.extent_lo = scene.extent_lo.cwiseMin(g.mu);
        scene.extent_hi = scene.extent_hi.cwiseMax(g.mu);
    }
    return scene;
}

namespace detail {

// World-from-camera rotation looking from `eye` toward `target`; image-down is
// aligned with world +y.
inline Quat look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 down(0, 1, 0);
    if (std::abs(forward.dot(down)) > 0.99) down = Vec3(0, 0, 1);
    const Vec3 right = down.cross(forward).normalized();
    const Vec3 d = forward.cross(right);
    Mat3 R;
    R.col(0) = right;
    R.col(1) = d;
    R.col(2) = forward;
    return Quat(R).normalized();
}

}  // namespace detail

// Poses facing the scene: a ring for orbit, a serpentine sweep for lawnmower,
// and a closed ring (last pose = first) for loop. All scales are 1.
inline std::vector<Sim3Pose> generate_trajectory(const SceneSpec& spec, const GroundTruthScene& scene) {
    if (spec.n_frames < 2) throw std::invalid_argument("generate_trajectory: need at least 2 frames");
    // Wall layouts are built around the origin of the nominal view frustum;
    // aiming at the primitive centroid would recenter the water line away from
    // the requested fraction. The box room has no such line, so its cameras
    // track the centroid.
    const Vec3 c = spec.layout == Layout::box_room ? Vec3(0.5 * (scene.extent_lo + scene.extent_hi)) : Vec3::Zero();
    const double d0 = detail::kCamDistance;
    std::vector<Sim3Pose> out;
    out.reserve(static_cast<size_t>(spec.n_frames));
    const double tilt = 8.0 * M_PI / 180.0;
    for (int k = 0; k < spec.n_frames; ++k) {
        Sim3Pose p;
        switch (spec.trajectory) {
            case TrajKind::orbit: {
                const double phi = 2.0 * M_PI * k / spec.n_frames;
                const Vec3 dir(std::sin(tilt) * std::cos(phi), std::sin(tilt) * std::sin(phi), -std::cos(tilt));
                p.t = c + d0 * dir;
                p.q = detail::look_at(p.t, c);
                break;
            }
            case TrajKind::loop: {
                const double phi = 2.0 * M_PI * k / (spec.n_frames - 1);  // closed: last = first
                const Vec3 dir(std::sin(tilt) * std::cos(phi), std::sin(tilt) * std::sin(phi), -std::cos(tilt));
                p.t = c + d0 * dir;
                p.q = detail::look_at(p.t, c);
                break;
            }
            case TrajKind::dolly: {
                // Two in-out cycles between 0.75 d0 and 2.0 d0 with a small
                // lateral wobble: the same surfaces appear at strongly
                // different ranges, which separates range-dependent effects
                // (attenuation, backscatter) from per-primitive color.
                const double u = static_cast<double>(k) / (spec.n_frames - 1);
                const double dist = d0 * (1.55 + 0.95 * std::cos(4.0 * M_PI * u));
                const double phi = 0.35 * std::sin(2.0 * M_PI * u);
                const Vec3 dir(std::sin(tilt + phi), std::sin(tilt) * std::sin(2.0 * M_PI * u), -std::cos(tilt + phi));
                p.t = c + dist * dir.normalized();
                p.q = detail::look_at(p.t, c);
                break;
            }
            case TrajKind::lawnmower: {
                const int cols = std::max(2, static_cast<int>(std::lround(std::sqrt(spec.n_frames))));
                const int row = k / cols;
                int col = k % cols;
                if (row % 2 == 1) col = cols - 1 - col;  // serpentine
                const int rows = (spec.n_frames + cols - 1) / cols;
                const double x = (cols == 1 ? 0.0 : -0.3 + 0.6 * col / (cols - 1));
                const double y = (rows == 1 ? 0.0 : -0.3 + 0.6 * row / (rows - 1));
                p.t = c + Vec3(x, y, -d0);
                p.q = detail::look_at(p.t, p.t + Vec3(0, 0, 1.0));
                break;
            }
        }
        out.push_back(p);
    }
    return out;
}

// Forward-model sensor simulation: the image comes from the same composite
// renderer the SLAM inverts; the pointmap samples each pixel ray at the
// blended object depth; the mask and confidence derive from accumulated
// opacity. Outlier pixels get corrupted points at zero confidence.
inline Frame synthesize_frame(const GroundTruthScene& scene, const Sim3Pose& pose, const CameraIntrinsics& K,
                              const SceneSpec& spec, int frame_index) {
    const RenderOutput out = render(scene.primitives, scene.medium, pose, K);
    Frame f;
    f.timestamp = frame_index;
    f.image = out.composite;
    for (double& v : f.image.data) v = std::clamp(v, 0.0, 1.0);
    f.water_mask = Image1(K.width, K.height);
    f.pointmap = Image3(K.width, K.height);
    f.confidence = Image1(K.width, K.height);

    std::mt19937_64 rng(spec.seed * 1000003ULL + static_cast<uint64_t>(frame_index) + 1);
    std::normal_distribution<double> noise(0.0, spec.pointmap_sigma);
    std::uniform_real_distribution<double> u01(0.0, 1.0), gross(-10.0, 10.0);
    for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) {
            const double A = out.accum_opacity.at(x, y)[0];
            f.water_mask.at(x, y)[0] = A < 0.5 ? 1.0 : 0.0;
            f.confidence.at(x, y)[0] = std::clamp(A, spec.conf_floor, 1.0);
            double depth = out.blended_depth.at(x, y)[0];
            // A pointmap predictor regresses *something* in textureless water;
            // the mask is what flags those pixels as unreliable. Hallucinate a
            // camera-attached veil at a plausible constant depth: the predictor
            // sees the same backscatter pattern from every viewpoint, so its
            // water geometry rides along with the camera instead of staying
            // fixed in the world.
            if (depth <= 0) depth = detail::kCamDistance;
            const Vec3 dir_cam((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
            Vec3 p = dir_cam * depth;
            if (spec.pointmap_sigma > 0) p += Vec3(noise(rng), noise(rng), noise(rng));
            if (spec.outlier_fraction > 0 && u01(rng) < spec.outlier_fraction) {
                p = Vec3(gross(rng), gross(rng), gross(rng));
                f.confidence.at(x, y)[0] = 0.0;
            }
            for (int c = 0; c < 3; ++c) f.pointmap.at(x, y)[c] = p[c];
        }
    return f;
}

// Pixel-index correspondences by reprojecting frame f's pointmap into frame k
// (nearest-pixel rounding); q = sqrt(Q_f * Q_k). This is the match source the
// pipeline uses in place of a learned matcher.
inline std::vector<Match> ground_truth_matches(const Frame& frame_k, const Sim3Pose& pose_k,
                                               const Frame& frame_f, const Sim3Pose& pose_f,
                                               const CameraIntrinsics& K, int stride = 1,
                                               double lock_conf = 0.1) {
    std::vector<Match> out;
    const Sim3Pose k_from_f = sim3_compose(pose_k.inverse(), pose_f);
    for (int y = 0; y < K.height; y += stride)
        for (int x = 0; x < K.width; x += stride) {
            const double qf = frame_f.confidence.at(x, y)[0];
            if (qf <= 0 || frame_f.water_mask.at(x, y)[0] > 0.5) continue;
            const double* p = frame_f.pointmap.at(x, y);
            if (p[2] <= 0) continue;
            if (qf <= lock_conf) {
                // Floor-confidence pixels are hallucinated water. A correlation
                // matcher there locks onto the camera-attached veiling pattern
                // and reports zero apparent motion: a same-pixel match, wrong
                // whenever the camera actually moved. mask_confidence zeroes
                // these pixels, so they only survive with the mask disabled.
                const double qk = frame_k.confidence.at(x, y)[0];
                if (qk <= 0 || frame_k.water_mask.at(x, y)[0] > 0.5) continue;
                if (frame_k.pointmap.at(x, y)[2] <= 0) continue;
                out.push_back({{x, y}, {x, y}, std::sqrt(qf * qk)});
                continue;
            }
            const Vec3 xk = k_from_f.apply(Vec3(p[0], p[1], p[2]));
            if (xk.z() <= kNearPlane) continue;
            const int ax = static_cast<int>(std::lround(K.fx * xk.x() / xk.z() + K.cx));
            const int ay = static_cast<int>(std::lround(K.fy * xk.y() / xk.z() + K.cy));
            if (ax < 0 || ax >= K.width || ay < 0 || ay >= K.height) continue;
            const double qk = frame_k.confidence.at(ax, ay)[0];
            if (qk <= 0 || frame_k.water_mask.at(ax, ay)[0] > 0.5) continue;
            if (frame_k.pointmap.at(ax, ay)[2] <= 0) continue;
            out.push_back({{ax, ay}, {x, y}, std::sqrt(qf * qk)});
        }
    return out;
}

// Exact-correspondence oracle: both pointmaps carry the *same* world points so
// the alignment optimum is the ground-truth relative pose to solver precision.
// This is what an ideal matcher would deliver; the rounded variant above is
// what the pipeline consumes.
struct ExactCorrespondences {
    Image3 pointmap_k, pointmap_f;
    std::vector<Match> matches;
};

inline ExactCorrespondences exact_correspondences(const Frame& frame_k, const Sim3Pose& pose_k,
                                                  const Sim3Pose& pose_f, const CameraIntrinsics& K,
                                                  int stride = 4) {
    ExactCorrespondences out;
    out.pointmap_k = Image3(K.width, K.height);
    out.pointmap_f = Image3(K.width, K.height);
    const Sim3Pose f_from_k = sim3_compose(pose_f.inverse(), pose_k);
    for (int y = 0; y < K.height; y += stride)
        for (int x = 0; x < K.width; x += stride) {
            if (frame_k.water_mask.at(x, y)[0] > 0.5 || frame_k.confidence.at(x, y)[0] <= 0) continue;
            const double* p = frame_k.pointmap.at(x, y);
            if (p[2] <= 0) continue;
            const Vec3 xk(p[0], p[1], p[2]);
            const Vec3 xf = f_from_k.apply(xk);
            if (xf.z() <= kNearPlane) continue;
            const int bx = static_cast<int>(std::lround(K.fx * xf.x() / xf.z() + K.cx));
            const int by = static_cast<int>(std::lround(K.fy * xf.y() / xf.z() + K.cy));
            if (bx < 0 || bx >= K.width || by < 0 || by >= K.height) continue;
            for (int c = 0; c < 3; ++c) {
                out.pointmap_k.at(x, y)[c] = xk[c];
                out.pointmap_f.at(bx, by)[c] = xf[c];
            }
            out.matches.push_back({{x, y}, {bx, by}, frame_k.confidence.at(x, y)[0]});
        }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset directory layout

struct Dataset {
    CameraIntrinsics K;
    std::vector<Frame> frames;
    std::vector<TrajectoryEntry> gt_traj;
    bool has_medium_gt = false;
    MediumSample medium_gt;
};

struct GeneratedDataset {
    GroundTruthScene scene;
    std::vector<Sim3Pose> poses;
    Dataset data;
};

// Scene + trajectory + all frames, in memory.
inline GeneratedDataset generate_dataset(const SceneSpec& spec) {
    GeneratedDataset out;
    out.scene = generate_scene(spec);
    out.poses = generate_trajectory(spec, out.scene);
    out.data.K = make_intrinsics(spec.image_size);
    for (int i = 0; i < spec.n_frames; ++i) {
        out.data.frames.push_back(synthesize_frame(out.scene, out.poses[static_cast<size_t>(i)], out.data.K, spec, i));
        out.data.gt_traj.push_back({static_cast<double>(i), out.poses[static_cast<size_t>(i)]});
    }
    out.data.has_medium_gt = true;
    out.data.medium_gt = out.scene.medium_sample;
    return out;
}

inline void write_dataset(const std::vector<Frame>& frames, const std::vector<Sim3Pose>& poses,
                          const GroundTruthScene& scene, const CameraIntrinsics& K, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (const char* sub : {"images", "masks", "pointmaps", "conf"}) fs::create_directories(fs::path(dir) / sub);

    {
        std::ofstream intr(fs::path(dir) / "intrinsics.txt");
        if (!intr) throw std::runtime_error("cannot write intrinsics.txt in " + dir);
        intr.precision(17);
        intr << K.fx << " " << K.fy << " " << K.cx << " " << K.cy << " " << K.width << " " << K.height << "\n";
    }
    char name[32];
    for (size_t i = 0; i < frames.size(); ++i) {
        std::snprintf(name, sizeof(name), "%06zu", i);
        const Frame& f = frames[i];
        write_ppm(f.image, (fs::path(dir) / "images" / (std::string(name) + ".ppm")).string());
        write_pgm_mask(f.water_mask, (fs::path(dir) / "masks" / (std::string(name) + ".pgm")).string());
        write_pfm(f.pointmap, (fs::path(dir) / "pointmaps" / (std::string(name) + ".pfm")).string());
        write_pfm(f.confidence, (fs::path(dir) / "conf" / (std::string(name) + ".pfm")).string());
    }
    std::vector<TrajectoryEntry> traj;
    for (size_t i = 0; i < poses.size(); ++i) traj.push_back({static_cast<double>(i), poses[i]});
    write_trajectory(traj, (fs::path(dir) / "gt_traj.txt").string());
    {
        std::ofstream med(fs::path(dir) / "medium_gt.txt");
        med.precision(17);
        const MediumSample& m = scene.medium_sample;
        med << m.sigma_attn.transpose() << " " << m.sigma_bs.transpose() << " " << m.c_med.transpose() << "\n";
    }
}

inline Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    {
        const fs::path p = fs::path(dir) / "intrinsics.txt";
        std::ifstream intr(p);
        if (!intr) throw std::runtime_error("missing intrinsics file: " + p.string());
        if (!(intr >> ds.K.fx >> ds.K.fy >> ds.K.cx >> ds.K.cy >> ds.K.width >> ds.K.height))
            throw std::runtime_error("malformed intrinsics file: " + p.string());
    }
    char name[32];
    for (size_t i = 0;; ++i) {
        std::snprintf(name, sizeof(name), "%06zu", i);
        const fs::path img = fs::path(dir) / "images" / (std::string(name) + ".ppm");
        if (!fs::exists(img)) break;
        Frame f;
        f.timestamp = static_cast<double>(i);
        f.image = read_ppm(img.string());
        f.water_mask = read_pgm_mask((fs::path(dir) / "masks" / (std::string(name) + ".pgm")).string());
        f.pointmap = read_pfm<3>((fs::path(dir) / "pointmaps" / (std::string(name) + ".pfm")).string());
        f.confidence = read_pfm<1>((fs::path(dir) / "conf" / (std::string(name) + ".pfm")).string());
        ds.frames.push_back(std::move(f));
    }
    ds.gt_traj = read_trajectory((fs::path(dir) / "gt_traj.txt").string());
    const fs::path med = fs::path(dir) / "medium_gt.txt";
    if (fs::exists(med)) {
        std::ifstream in(med);
        MediumSample m;
        if (in >> m.sigma_attn[0] >> m.sigma_attn[1] >> m.sigma_attn[2] >> m.sigma_bs[0] >> m.sigma_bs[1] >>
            m.sigma_bs[2] >> m.c_med[0] >> m.c_med[1] >> m.c_med[2]) {
            ds.medium_gt = m;
            ds.has_medium_gt = true;
        }
    }
    return ds;
}

}  // namespace watersplat
