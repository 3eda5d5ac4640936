// watersplat — batch entry points for the medium-aware splatting SLAM:
//   simulate  synthesize a dataset
//   slam      run tracking + mapping on a dataset
//   eval      render held-out views from a checkpoint, report metrics
//   render    render a single view from a checkpoint
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <cstring>
#include <filesystem>
#include <iostream>
#include <optional>

#include "watersplat/metrics.hpp"
#include "watersplat/pipeline.hpp"
#include "watersplat/ssim.hpp"

namespace fs = std::filesystem;
using namespace watersplat;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat flag parser: --key value pairs plus bare switches.
struct Args {
    std::map<std::string, std::string> values;
    std::vector<std::string> switches;

    bool has(const std::string& s) const {
        return std::find(switches.begin(), switches.end(), s) != switches.end();
    }
    std::optional<std::string> get(const std::string& k) const {
        const auto it = values.find(k);
        if (it == values.end()) return std::nullopt;
        return it->second;
    }
    std::string require(const std::string& k) const {
        const auto v = get(k);
        if (!v) throw UsageError("missing required flag --" + k);
        return *v;
    }
};

Args parse_args(int argc, char** argv, const std::vector<std::string>& known_switches) {
    Args a;
    for (int i = 0; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg.rfind("--", 0) != 0) throw UsageError("unexpected argument: " + arg);
        arg = arg.substr(2);
        if (std::find(known_switches.begin(), known_switches.end(), arg) != known_switches.end()) {
            a.switches.push_back(arg);
        } else if (i + 1 < argc) {
            a.values[arg] = argv[++i];
        } else {
            throw UsageError("flag --" + arg + " needs a value");
        }
    }
    return a;
}

double num_arg(const Args& a, const std::string& k, double fallback) {
    const auto v = a.get(k);
    if (!v) return fallback;
    try {
        return std::stod(*v);
    } catch (const std::exception&) {
        throw UsageError("bad numeric value for --" + k + ": " + *v);
    }
}

void usage(std::ostream& os) {
    os << "usage: watersplat <simulate|slam|eval|render> [flags]\n"
          "  simulate --out DIR [--layout plane|box-room|ridge] [--traj orbit|lawnmower|loop|dolly]\n"
          "           [--frames N] [--prims N] [--size N] [--water-fraction F] [--seed N]\n"
          "           [--noise F] [--conf-floor F] [--outliers F]\n"
          "  slam     --dataset DIR --out DIR [--config FILE] [--seed N]\n"
          "           [--no-water-mask] [--no-adjust] [--no-merge] [--parallel]\n"
          "  eval     --checkpoint FILE --dataset DIR --out DIR [--holdout i,j,k]\n"
          "  render   --checkpoint FILE --dataset DIR --frame N --mode composite|object|medium|clear\n"
          "           --out FILE.ppm\n";
}

SceneSpec spec_from_args(const Args& a) {
    SceneSpec spec;
    spec.n_primitives = static_cast<int>(num_arg(a, "prims", spec.n_primitives));
    spec.image_size = static_cast<int>(num_arg(a, "size", spec.image_size));
    spec.n_frames = static_cast<int>(num_arg(a, "frames", spec.n_frames));
    spec.seed = static_cast<uint64_t>(num_arg(a, "seed", 0));
    spec.water_fraction = num_arg(a, "water-fraction", spec.water_fraction);
    spec.pointmap_sigma = num_arg(a, "noise", spec.pointmap_sigma);
    spec.conf_floor = num_arg(a, "conf-floor", spec.conf_floor);
    spec.outlier_fraction = num_arg(a, "outliers", spec.outlier_fraction);
    if (const auto v = a.get("layout")) {
        if (*v == "plane") spec.layout = Layout::plane;
        else if (*v == "box-room") spec.layout = Layout::box_room;
        else if (*v == "ridge") spec.layout = Layout::ridge;
        else throw UsageError("unknown layout: " + *v);
    }
    if (const auto v = a.get("traj")) {
        if (*v == "orbit") spec.trajectory = TrajKind::orbit;
        else if (*v == "lawnmower") spec.trajectory = TrajKind::lawnmower;
        else if (*v == "loop") spec.trajectory = TrajKind::loop;
        else if (*v == "dolly") spec.trajectory = TrajKind::dolly;
        else throw UsageError("unknown trajectory: " + *v);
    }
    return spec;
}

int cmd_simulate(const Args& a) {
    const SceneSpec spec = spec_from_args(a);
    const std::string out = a.require("out");
    const GeneratedDataset gen = generate_dataset(spec);
    write_dataset(gen.data.frames, gen.poses, gen.scene, gen.data.K, out);
    double water = 0;
    for (double v : gen.data.frames[0].water_mask.data) water += v;
    std::cout << "wrote " << gen.data.frames.size() << " frames to " << out << "\n"
              << "realized water fraction (frame 0): "
              << water / static_cast<double>(gen.data.frames[0].water_mask.pixels()) << "\n";
    return 0;
}

int cmd_slam(const Args& a) {
    const std::string out_dir = a.require("out");
    SlamConfig cfg;
    if (const auto c = a.get("config")) load_config(cfg, *c);
    // flags override the file
    if (const auto s = a.get("seed")) cfg.seed = static_cast<uint64_t>(std::stoull(*s));
    if (a.has("no-water-mask")) cfg.use_water_mask = false;
    if (a.has("no-adjust")) cfg.adjust = false;
    if (a.has("no-merge")) cfg.merge = false;
    if (a.has("parallel")) cfg.parallel = true;

    const Dataset ds = read_dataset(a.require("dataset"));
    fs::create_directories(out_dir);
    std::ofstream log(fs::path(out_dir) / "slam_log.txt");

    SlamResult res;
    try {
        res = run_slam(ds, cfg, &log);
    } catch (const std::runtime_error& e) {
        // partial outputs: whatever the log captured is already flushed
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }

    save_checkpoint((fs::path(out_dir) / "checkpoint.wspl").string(), res.map, res.medium, res.kf_trajectory);
    write_trajectory(res.kf_trajectory, (fs::path(out_dir) / "traj_kf.txt").string());
    write_trajectory(res.trajectory, (fs::path(out_dir) / "traj_frames.txt").string());
    {
        std::ofstream edges(fs::path(out_dir) / "edges.txt");
        write_edge_list(res.edges, edges);
        std::ofstream losses(fs::path(out_dir) / "loss_log.txt");
        for (const auto& l : res.loss_log) losses << l << "\n";
    }
    std::cout << res.keyframes.size() << " keyframes, " << res.map.size() << " primitives, "
              << res.loops_closed << " loop closures\n";
    return 0;
}

int cmd_eval(const Args& a) {
    const Checkpoint cp = load_checkpoint(a.require("checkpoint"));
    const Dataset ds = read_dataset(a.require("dataset"));
    const std::string out_dir = a.require("out");
    fs::create_directories(out_dir);

    std::vector<int> holdout;
    if (const auto h = a.get("holdout")) {
        std::istringstream ss(*h);
        std::string tok;
        while (std::getline(ss, tok, ',')) holdout.push_back(std::stoi(tok));
    } else {
        for (size_t i = 0; i < ds.frames.size(); i += 4) holdout.push_back(static_cast<int>(i));
    }
    for (int i : holdout)
        if (i < 0 || i >= static_cast<int>(ds.frames.size()))
            throw std::runtime_error("holdout index out of range: " + std::to_string(i));

    MetricsTable t;
    t.columns = {"psnr", "ssim"};
    double psnr_sum = 0, ssim_sum = 0;
    for (int i : holdout) {
        const Sim3Pose pose = ds.gt_traj[static_cast<size_t>(i)].pose;
        const RenderOutput out = render(cp.map, cp.medium, pose, ds.K);
        Image3 composite = out.composite;
        for (double& v : composite.data) v = std::clamp(v, 0.0, 1.0);
        const double p = psnr(composite, ds.frames[static_cast<size_t>(i)].image);
        const double s = ssim(composite, ds.frames[static_cast<size_t>(i)].image);
        char name[16];
        std::snprintf(name, sizeof(name), "%06d", i);
        t.add_row(name, {p, s});
        psnr_sum += p;
        ssim_sum += s;
    }
    const double n = static_cast<double>(holdout.size());
    t.add_row("mean", {psnr_sum / n, ssim_sum / n});

    // ATE of the checkpoint keyframe trajectory vs ground truth at matching timestamps
    std::vector<Sim3Pose> est, gt;
    for (const TrajectoryEntry& e : cp.trajectory) {
        for (const TrajectoryEntry& g : ds.gt_traj)
            if (g.timestamp == e.timestamp) {
                est.push_back(e.pose);
                gt.push_back(g.pose);
                break;
            }
    }
    std::optional<double> ate;
    if (est.size() >= 3) ate = ate_rmse(est, gt);

    std::ofstream csv(fs::path(out_dir) / "metrics.csv");
    write_metrics_csv(t, csv);
    std::ofstream txt(fs::path(out_dir) / "metrics.txt");
    write_metrics_text(t, txt);
    if (ate) {
        csv << "ate_rmse," << std::setprecision(10) << *ate << ",\n";
        txt << "ate_rmse  " << std::setprecision(10) << *ate << "\n";
        std::cout << "ate_rmse " << *ate << "\n";
    }
    if (ds.has_medium_gt) {
        const MediumSample rec = medium_forward(cp.medium, Vec3(0, 0, 1));
        txt << "medium sigma_attn recovered " << rec.sigma_attn.transpose() << " gt "
            << ds.medium_gt.sigma_attn.transpose() << "\n"
            << "medium sigma_bs   recovered " << rec.sigma_bs.transpose() << " gt "
            << ds.medium_gt.sigma_bs.transpose() << "\n"
            << "medium c_med      recovered " << rec.c_med.transpose() << " gt "
            << ds.medium_gt.c_med.transpose() << "\n";
    }
    std::cout << "mean psnr " << psnr_sum / n << " ssim " << ssim_sum / n << " over " << holdout.size()
              << " holdouts\n";
    return 0;
}

int cmd_render(const Args& a) {
    const Checkpoint cp = load_checkpoint(a.require("checkpoint"));
    const Dataset ds = read_dataset(a.require("dataset"));
    const int frame = static_cast<int>(num_arg(a, "frame", 0));
    if (frame < 0 || frame >= static_cast<int>(ds.frames.size()))
        throw std::runtime_error("frame index out of range: " + std::to_string(frame));
    const std::string mode = a.get("mode").value_or("composite");

    const RenderOutput out = render(cp.map, cp.medium, ds.gt_traj[static_cast<size_t>(frame)].pose, ds.K);
    const Image3* img = nullptr;
    if (mode == "composite") img = &out.composite;
    else if (mode == "object") img = &out.object;
    else if (mode == "medium") img = &out.medium;
    else if (mode == "clear") img = &out.clear;
    else throw UsageError("unknown render mode: " + mode);

    write_ppm(*img, a.require("out"));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        usage(std::cerr);
        return kExitUsage;
    }
    const std::string cmd = argv[1];
    try {
        const Args a = parse_args(argc - 2, argv + 2, {"no-water-mask", "no-adjust", "no-merge", "parallel"});
        if (cmd == "simulate") return cmd_simulate(a);
        if (cmd == "slam") return cmd_slam(a);
        if (cmd == "eval") return cmd_eval(a);
        if (cmd == "render") return cmd_render(a);
        usage(std::cerr);
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        usage(std::cerr);
        return kExitUsage;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
}
