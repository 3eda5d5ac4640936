#pragma once

#include <iomanip>

#include "watersplat/image.hpp"
#include "watersplat/sim3.hpp"

namespace watersplat {

inline constexpr double kPsnrCap = 100.0;

// 10 log10(1 / MSE) over all pixels and channels, capped at 100 dB.
inline double psnr(const Image3& a, const Image3& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: image shapes differ");
    if (a.data.empty()) throw std::invalid_argument("psnr: empty images");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// RMSE of translation residuals after closed-form Sim(3) (Umeyama) alignment
// of the estimated trajectory onto the ground truth. Sim(3), not SE(3):
// monocular scale is unobservable, so a global scale must be absorbed.
inline double ate_rmse(const std::vector<Sim3Pose>& estimated, const std::vector<Sim3Pose>& ground_truth) {
    if (estimated.size() != ground_truth.size())
        throw std::invalid_argument("ate_rmse: trajectory lengths differ (" + std::to_string(estimated.size()) +
                                    " vs " + std::to_string(ground_truth.size()) + ")");
    const Eigen::Index n = static_cast<Eigen::Index>(estimated.size());
    if (n < 3) throw std::invalid_argument("ate_rmse: need at least 3 poses");

    Eigen::Matrix3Xd src(3, n), dst(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        src.col(i) = estimated[static_cast<size_t>(i)].t;
        dst.col(i) = ground_truth[static_cast<size_t>(i)].t;
    }
    // Degeneracy: alignment needs 3 distinct, non-collinear ground-truth points.
    const Eigen::Matrix3Xd centered = dst.colwise() - dst.rowwise().mean();
    const Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centered);
    const auto& sv = svd.singularValues();
    if (sv[0] <= 1e-12 || sv[1] <= 1e-9 * sv[0])
        throw std::invalid_argument("ate_rmse: degenerate trajectory (fewer than 3 distinct non-collinear points)");

    const Eigen::Matrix4d T = Eigen::umeyama(src, dst, /*with_scaling=*/true);
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 r = T.block<3, 3>(0, 0) * src.col(i) + T.block<3, 1>(0, 3) - dst.col(i);
        ss += r.squaredNorm();
    }
    return std::sqrt(ss / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Report emission: one named row per item, a fixed column set.

struct MetricsTable {
    std::vector<std::string> columns;
    std::vector<std::pair<std::string, std::vector<double>>> rows;

    void add_row(const std::string& name, std::vector<double> values) {
        if (values.size() != columns.size()) throw std::invalid_argument("metrics row width mismatch: " + name);
        rows.emplace_back(name, std::move(values));
    }
};

inline void write_metrics_csv(const MetricsTable& t, std::ostream& out) {
    out << "name";
    for (const auto& c : t.columns) out << "," << c;
    out << "\n";
    const auto saved = out.precision(10);
    for (const auto& [name, vals] : t.rows) {
        out << name;
        for (double v : vals) out << "," << v;
        out << "\n";
    }
    out.precision(saved);
}

inline void write_metrics_text(const MetricsTable& t, std::ostream& out) {
    size_t name_w = 4;
    for (const auto& [name, vals] : t.rows) name_w = std::max(name_w, name.size());
    out << std::left << std::setw(static_cast<int>(name_w) + 2) << "name";
    for (const auto& c : t.columns) out << std::right << std::setw(14) << c;
    out << "\n";
    for (const auto& [name, vals] : t.rows) {
        out << std::left << std::setw(static_cast<int>(name_w) + 2) << name;
        for (double v : vals) out << std::right << std::setw(14) << std::fixed << std::setprecision(6) << v;
        out << "\n";
        out.unsetf(std::ios::fixed);
    }
    out << std::right;
}

}  // namespace watersplat
