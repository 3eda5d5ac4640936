#pragma once

#include "watersplat/medium.hpp"

namespace watersplat {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Adaptive-moment state for one tensor; callers own the step counter so that
// heterogeneous tensors can share a schedule.
template <typename T>
struct AdamMoments {
    T m, v;

    explicit AdamMoments(const T& shape) : m(shape), v(shape) {
        m.setZero();
        v.setZero();
    }

    void step(T& param, const T& grad, double lr, long t) {
        m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
        v.array() = kAdamBeta2 * v.array() + (1.0 - kAdamBeta2) * grad.array().square();
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEps);
    }
};

struct AdamScalar {
    double m = 0, v = 0;

    void step(double& param, double grad, double lr, long t) {
        m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
        v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad * grad;
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
        param -= lr * (m / c1) / (std::sqrt(v / c2) + kAdamEps);
    }
};

// Moments for the whole medium network, tensor by tensor.
struct AdamMedium {
    MediumNetParams m, v;  // zero-initialized by construction

    void step(MediumNetParams& params, const MediumNetGrads& grads, double lr, long t) {
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
        auto upd = [&](auto& p, auto& mm, auto& vv, const auto& g) {
            mm.array() = kAdamBeta1 * mm.array() + (1.0 - kAdamBeta1) * g.array();
            vv.array() = kAdamBeta2 * vv.array() + (1.0 - kAdamBeta2) * g.array().square();
            p.array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + kAdamEps);
        };
        upd(params.W1, m.W1, v.W1, grads.W1);
        upd(params.W2, m.W2, v.W2, grads.W2);
        upd(params.W3, m.W3, v.W3, grads.W3);
        upd(params.W4, m.W4, v.W4, grads.W4);
        upd(params.b1, m.b1, v.b1, grads.b1);
        upd(params.b2, m.b2, v.b2, grads.b2);
        upd(params.b3, m.b3, v.b3, grads.b3);
        upd(params.b4, m.b4, v.b4, grads.b4);
    }
};

}  // namespace watersplat
