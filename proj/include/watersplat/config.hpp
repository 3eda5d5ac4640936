#pragma once

#include "watersplat/map_manager.hpp"
#include "watersplat/pose_graph.hpp"

namespace watersplat {

// Everything a SLAM run can be told, file- and flag-addressable.
struct SlamConfig {
    MapConfig map;
    LossWeights loss;
    RobustKernel kernel;            // tracker Huber, scene units
    RobustKernel ba_kernel{1.0};    // bundle-adjustment Huber, pixels
    KeyframePolicy keyframe;
    LearningRates lr;
    double loop_radius = kLoopRadius;
    int loop_min_gap = kLoopMinGap;
    int match_stride = 2;        // pixel stride of the correspondence source
    int min_loop_matches = 12;   // loop candidates with fewer matches are dropped
    uint64_t seed = 0;
    bool use_water_mask = true;
    bool adjust = true;
    bool merge = true;
    bool parallel = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

// Apply one `key = value` assignment. Unknown keys and malformed numbers are
// errors: a typo silently ignored is a config bug shipped.
inline void config_set(SlamConfig& cfg, const std::string& key, const std::string& value) {
    auto num = [&] {
        size_t used = 0;
        double v = 0;
        try {
            v = std::stod(value, &used);
        } catch (const std::exception&) {
            throw std::runtime_error("config: bad numeric value for " + key + ": '" + value + "'");
        }
        if (detail::trim(value.substr(used)) != "")
            throw std::runtime_error("config: bad numeric value for " + key + ": '" + value + "'");
        return v;
    };
    auto boolean = [&] {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        throw std::runtime_error("config: bad boolean value for " + key + ": '" + value + "'");
    };

    if (key == "tau_A") cfg.map.tau_A = num();
    else if (key == "d_thresh") cfg.map.d_thresh = num();
    else if (key == "theta_thresh") cfg.map.theta_thresh = num();
    else if (key == "global_thresh") cfg.map.global_thresh = num();
    else if (key == "voxel_size") cfg.map.voxel_size = num();
    else if (key == "new_kf_iters") cfg.map.new_kf_iters = static_cast<int>(num());
    else if (key == "refine_kf_count") cfg.map.refine_kf_count = static_cast<int>(num());
    else if (key == "refine_iters") cfg.map.refine_iters = static_cast<int>(num());
    else if (key == "densify_downsample") cfg.map.densify_downsample = static_cast<int>(num());
    else if (key == "lambda_ssim") cfg.loss.lambda_ssim = num();
    else if (key == "lambda_sempho") cfg.loss.lambda_sempho = num();
    else if (key == "lambda_s") cfg.loss.lambda_s = num();
    else if (key == "huber_delta") cfg.kernel.huber_delta = num();
    else if (key == "ba_huber_delta") cfg.ba_kernel.huber_delta = num();
    else if (key == "coverage_thresh") cfg.keyframe.coverage_thresh = num();
    else if (key == "trans_depth_factor") cfg.keyframe.trans_depth_factor = num();
    else if (key == "rot_thresh_deg") cfg.keyframe.rot_thresh_deg = num();
    else if (key == "lr_position") cfg.lr.position = num();
    else if (key == "lr_rotation") cfg.lr.rotation = num();
    else if (key == "lr_log_scale") cfg.lr.log_scale = num();
    else if (key == "lr_color") cfg.lr.color = num();
    else if (key == "lr_opacity_logit") cfg.lr.opacity_logit = num();
    else if (key == "lr_medium") cfg.lr.medium = num();
    else if (key == "loop_radius") cfg.loop_radius = num();
    else if (key == "loop_min_gap") cfg.loop_min_gap = static_cast<int>(num());
    else if (key == "match_stride") cfg.match_stride = static_cast<int>(num());
    else if (key == "min_loop_matches") cfg.min_loop_matches = static_cast<int>(num());
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(num());
    else if (key == "use_water_mask") cfg.use_water_mask = boolean();
    else if (key == "adjust") cfg.adjust = boolean();
    else if (key == "merge") cfg.merge = boolean();
    else if (key == "parallel") cfg.parallel = boolean();
    else throw std::runtime_error("config: unknown key '" + key + "'");
}

inline void load_config(SlamConfig& cfg, std::istream& in, const std::string& origin = "<stream>") {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: missing '=' at " + origin + ":" + std::to_string(lineno));
        config_set(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
}

inline void load_config(SlamConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    load_config(cfg, in, path);
}

}  // namespace watersplat
