#pragma once

#include "watersplat/renderer.hpp"
#include "watersplat/ssim.hpp"

namespace watersplat {

struct LossWeights {
    double lambda_ssim = 0.2;
    double lambda_sempho = 1.0;
    double lambda_s = 3.0;
};

struct ScalarLoss {
    double value = 0.0;
    Image3 grad;  // w.r.t. the rendered input image
};

namespace detail {

// Mean-normalized masked L1. `select` is 1 where the pixel participates.
inline ScalarLoss masked_l1(const Image3& render, const Image3& target, const Image1& select) {
    if (!render.same_shape(target) || render.width != select.width || render.height != select.height)
        throw std::invalid_argument("photometric loss: shape mismatch");
    ScalarLoss out;
    out.grad = Image3(render.width, render.height);
    size_t count = 0;
    for (size_t p = 0; p < render.pixels(); ++p)
        if (select.data[p] > 0.5) ++count;
    if (count == 0) return out;
    const double norm = 1.0 / (static_cast<double>(count) * 3.0);
    for (int y = 0; y < render.height; ++y)
        for (int x = 0; x < render.width; ++x) {
            if (select.at(x, y)[0] <= 0.5) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = render.at(x, y)[c] - target.at(x, y)[c];
                out.value += std::abs(d) * norm;
                out.grad.at(x, y)[c] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * norm;
            }
        }
    return out;
}

inline Image1 complement(const Image1& mask) {
    Image1 out = mask;
    for (double& v : out.data) v = v > 0.5 ? 0.0 : 1.0;
    return out;
}

}  // namespace detail

// L1 between the medium rendering and the target, water pixels only.
inline ScalarLoss medium_photo_loss(const Image3& render_med, const Image3& target, const Image1& mask) {
    return detail::masked_l1(render_med, target, mask);
}

// L1 between the composite and the target on non-water pixels.
inline ScalarLoss composite_photo_loss(const Image3& render, const Image3& target, const Image1& mask) {
    return detail::masked_l1(render, target, detail::complement(mask));
}

struct SemphoLoss {
    double value = 0.0;
    Image3 grad_composite;
    Image3 grad_medium;
};

// (1 - l_ssim)(L_med + L_c) + l_ssim (1 - SSIM(composite, target)).
// SSIM runs on the full composite, unmasked.
inline SemphoLoss sempho_loss(const RenderOutput& render, const Image3& target, const Image1& mask,
                              const LossWeights& w) {
    SemphoLoss out;
    const ScalarLoss lmed = medium_photo_loss(render.medium, target, mask);
    const ScalarLoss lc = composite_photo_loss(render.composite, target, mask);
    Image3 ssim_grad;
    const double s = ssim(render.composite, target, &ssim_grad);
    out.value = (1.0 - w.lambda_ssim) * (lmed.value + lc.value) + w.lambda_ssim * (1.0 - s);

    out.grad_composite = Image3(target.width, target.height);
    out.grad_medium = Image3(target.width, target.height);
    for (size_t i = 0; i < out.grad_composite.data.size(); ++i) {
        out.grad_composite.data[i] = (1.0 - w.lambda_ssim) * lc.grad.data[i] - w.lambda_ssim * ssim_grad.data[i];
        out.grad_medium.data[i] = (1.0 - w.lambda_ssim) * lmed.grad.data[i];
    }
    return out;
}

struct IsotropicLoss {
    double value = 0.0;
    std::vector<Vec3> log_scale_grad;  // per primitive, zero for non-visible
};

// Sum over visible primitives of |S - mean(S)| per axis; gradients flow in
// log-scale space.
inline IsotropicLoss isotropic_loss(const std::vector<GaussianPrimitive>& map, const std::vector<int>& visible) {
    IsotropicLoss out;
    out.log_scale_grad.assign(map.size(), Vec3::Zero());
    for (int i : visible) {
        const Vec3 s = map[static_cast<size_t>(i)].scale();
        const double mean = s.mean();
        Vec3 sgn;
        for (int k = 0; k < 3; ++k) {
            const double d = s[k] - mean;
            out.value += std::abs(d);
            sgn[k] = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        }
        const double sgn_sum = sgn.sum();
        for (int k = 0; k < 3; ++k)
            out.log_scale_grad[static_cast<size_t>(i)][k] = (sgn[k] - sgn_sum / 3.0) * s[k];
    }
    return out;
}

struct TotalLoss {
    double value = 0.0;
    Image3 grad_composite;
    Image3 grad_medium;
    std::vector<Vec3> log_scale_grad;
};

inline TotalLoss total_loss(const RenderOutput& render, const Image3& target, const Image1& mask,
                            const std::vector<GaussianPrimitive>& map, const std::vector<int>& visible,
                            const LossWeights& w) {
    TotalLoss out;
    SemphoLoss sem = sempho_loss(render, target, mask, w);
    IsotropicLoss iso = isotropic_loss(map, visible);
    out.value = w.lambda_sempho * sem.value + w.lambda_s * iso.value;
    out.grad_composite = std::move(sem.grad_composite);
    out.grad_medium = std::move(sem.grad_medium);
    for (double& v : out.grad_composite.data) v *= w.lambda_sempho;
    for (double& v : out.grad_medium.data) v *= w.lambda_sempho;
    out.log_scale_grad = std::move(iso.log_scale_grad);
    for (Vec3& g : out.log_scale_grad) g *= w.lambda_s;
    return out;
}

}  // namespace watersplat
