#pragma once

#include "watersplat/image.hpp"

namespace watersplat {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> out(kSsimWindow * kSsimWindow);
        const int r = kSsimWindow / 2;
        double sum = 0;
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSsimSigma * kSsimSigma));
                out[(dy + r) * kSsimWindow + (dx + r)] = v;
                sum += v;
            }
        for (double& v : out) v /= sum;
        return out;
    }();
    return w;
}

}  // namespace detail

// Mean local SSIM over all fully contained 11x11 windows, per channel then
// averaged. Optionally produces the gradient w.r.t. image a.
inline double ssim(const Image3& a, const Image3& b, Image3* grad_a = nullptr) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    if (a.width < kSsimWindow || a.height < kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than window");
    const auto& w = detail::ssim_window();
    const int r = kSsimWindow / 2;
    const int vw = a.width - 2 * r, vh = a.height - 2 * r;
    const double norm = 1.0 / (static_cast<double>(vw) * vh * 3.0);

    if (grad_a) {
        *grad_a = Image3(a.width, a.height);
        grad_a->fill(0.0);
    }

    double total = 0;
    for (int cy = r; cy < a.height - r; ++cy) {
        for (int cx = r; cx < a.width - r; ++cx) {
            for (int ch = 0; ch < 3; ++ch) {
                double mu_a = 0, mu_b = 0, ra = 0, rb = 0, rab = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const double wv = w[(dy + r) * kSsimWindow + (dx + r)];
                        const double av = a.at(cx + dx, cy + dy)[ch];
                        const double bv = b.at(cx + dx, cy + dy)[ch];
                        mu_a += wv * av;
                        mu_b += wv * bv;
                        ra += wv * av * av;
                        rb += wv * bv * bv;
                        rab += wv * av * bv;
                    }
                const double va = ra - mu_a * mu_a;
                const double vb = rb - mu_b * mu_b;
                const double cov = rab - mu_a * mu_b;
                const double N1 = 2 * mu_a * mu_b + kSsimC1, D1 = mu_a * mu_a + mu_b * mu_b + kSsimC1;
                const double N2 = 2 * cov + kSsimC2, D2 = va + vb + kSsimC2;
                const double l = N1 / D1, cs = N2 / D2;
                total += l * cs;

                if (grad_a) {
                    // partials w.r.t. (mu_a, ra, rab)
                    const double d_mu = cs * (2 * mu_b * D1 - 2 * mu_a * N1) / (D1 * D1) +
                                        l * ((N2 / (D2 * D2)) * 2 * mu_a - (2.0 / D2) * mu_b);
                    const double d_ra = l * (-N2 / (D2 * D2));
                    const double d_rab = l * (2.0 / D2);
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const double wv = w[(dy + r) * kSsimWindow + (dx + r)];
                            const double av = a.at(cx + dx, cy + dy)[ch];
                            const double bv = b.at(cx + dx, cy + dy)[ch];
                            grad_a->at(cx + dx, cy + dy)[ch] +=
                                norm * wv * (d_mu + d_ra * 2 * av + d_rab * bv);
                        }
                }
            }
        }
    }
    return total * norm;
}

}  // namespace watersplat
