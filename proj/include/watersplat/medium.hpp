#pragma once

#include <ostream>
#include <istream>
#include <random>

#include "watersplat/sh.hpp"

namespace watersplat {

// Per-ray medium attributes: attenuation density, backscatter density and
// asymptotic medium color, all per color channel.
struct MediumSample {
    Vec3 sigma_attn = Vec3::Zero();
    Vec3 sigma_bs = Vec3::Zero();
    Vec3 c_med = Vec3::Zero();
};

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus_inv(double y) { return std::log(std::expm1(y)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline constexpr int kMediumHidden = 128;
inline constexpr int kMediumOut = 9;

// 4-layer MLP, 16 -> 128 -> 128 -> 128 -> 9. Hidden activations are softplus;
// the 9 outputs split 3/3/3 into softplus(sigma_attn), softplus(sigma_bs),
// sigmoid(c_med), so every MediumSample invariant holds by construction.
struct MediumNetParams {
    Eigen::MatrixXd W1{kMediumHidden, kShDim}, W2{kMediumHidden, kMediumHidden},
        W3{kMediumHidden, kMediumHidden}, W4{kMediumOut, kMediumHidden};
    Eigen::VectorXd b1{kMediumHidden}, b2{kMediumHidden}, b3{kMediumHidden}, b4{kMediumOut};

    MediumNetParams() {
        W1.setZero(); W2.setZero(); W3.setZero(); W4.setZero();
        b1.setZero(); b2.setZero(); b3.setZero(); b4.setZero();
    }

    // Zero weights with a chosen final bias reproduce a direction-independent
    // medium exactly.
    static MediumNetParams constant(const MediumSample& m) {
        MediumNetParams p;
        for (int c = 0; c < 3; ++c) {
            p.b4[c] = softplus_inv(m.sigma_attn[c]);
            p.b4[3 + c] = softplus_inv(m.sigma_bs[c]);
            p.b4[6 + c] = logit(m.c_med[c]);
        }
        return p;
    }

    template <typename F>
    void for_each_tensor(F&& f) {
        f(W1); f(b1); f(W2); f(b2); f(W3); f(b3); f(W4); f(b4);
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        f(W1); f(b1); f(W2); f(b2); f(W3); f(b3); f(W4); f(b4);
    }
};

using MediumNetGrads = MediumNetParams;

inline MediumNetParams medium_init(uint64_t seed) {
    std::mt19937_64 rng(seed);
    MediumNetParams p;
    auto fill = [&](Eigen::MatrixXd& W, double gain) {
        const double a = gain * std::sqrt(6.0 / (W.rows() + W.cols()));
        std::uniform_real_distribution<double> dist(-a, a);
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = dist(rng);
    };
    fill(p.W1, 1.0);
    fill(p.W2, 1.0);
    fill(p.W3, 1.0);
    fill(p.W4, 0.01);  // small so the initial medium stays near the bias point
    for (int c = 0; c < 3; ++c) {
        p.b4[c] = softplus_inv(0.05);
        p.b4[3 + c] = softplus_inv(0.05);
        // c_med bias 0 -> sigmoid 0.5
    }
    return p;
}

// Batched evaluation over N directions; the cache keeps everything the
// reverse pass needs.
struct MediumBatch {
    Eigen::MatrixXd enc;            // N x 16
    Eigen::MatrixXd z1, z2, z3;     // N x 128 pre-activations
    Eigen::MatrixXd h1, h2, h3;     // N x 128 activations
    Eigen::MatrixXd z4;             // N x 9 pre-activations
    Eigen::MatrixXd out;            // N x 9 activated: [sigma_attn, sigma_bs, c_med]

    MediumSample sample(Eigen::Index i) const {
        MediumSample m;
        m.sigma_attn = out.row(i).segment<3>(0).transpose();
        m.sigma_bs = out.row(i).segment<3>(3).transpose();
        m.c_med = out.row(i).segment<3>(6).transpose();
        return m;
    }
};

inline MediumBatch medium_forward_batch(const MediumNetParams& p, const Eigen::MatrixXd& enc) {
    MediumBatch b;
    b.enc = enc;
    // Vectorized overflow-safe softplus: with m = max(x, 0),
    // softplus(x) = m + log(exp(-m) + exp(x - m)). Uses only exp/log, which
    // have packet implementations, unlike log1p.
    auto act = [](const auto& z) {
        const Eigen::ArrayXXd m = z.array().max(0.0);
        return Eigen::MatrixXd((m + ((-m).exp() + (z.array() - m).exp()).log()).matrix());
    };
    b.z1 = (enc * p.W1.transpose()).rowwise() + p.b1.transpose();
    b.h1 = act(b.z1);
    b.z2 = (b.h1 * p.W2.transpose()).rowwise() + p.b2.transpose();
    b.h2 = act(b.z2);
    b.z3 = (b.h2 * p.W3.transpose()).rowwise() + p.b3.transpose();
    b.h3 = act(b.z3);
    b.z4 = (b.h3 * p.W4.transpose()).rowwise() + p.b4.transpose();
    b.out.resize(b.z4.rows(), kMediumOut);
    b.out.leftCols<6>() = act(b.z4.leftCols<6>());
    b.out.rightCols<3>() = (1.0 + (-b.z4.rightCols<3>().array()).exp()).inverse();
    return b;
}

// Reverse pass for a batch. grad_out is N x 9 in the activated output space.
// Accumulates into `grads`; optionally returns the gradient w.r.t. enc.
inline void medium_backward_batch(const MediumNetParams& p, const MediumBatch& b,
                                  const Eigen::MatrixXd& grad_out, MediumNetGrads& grads,
                                  Eigen::MatrixXd* grad_enc = nullptr) {
    Eigen::MatrixXd d4(b.z4.rows(), kMediumOut);
    const Eigen::ArrayXXd s4 = (1.0 + (-b.z4.array()).exp()).inverse();
    d4.array() = grad_out.array() * s4;
    d4.rightCols<3>().array() *= 1.0 - s4.rightCols(3);
    auto dact = [](const auto& z) {
        return (1.0 + (-z.array()).exp()).inverse().matrix().eval();
    };
    grads.W4 += d4.transpose() * b.h3;
    grads.b4 += d4.colwise().sum().transpose();
    Eigen::MatrixXd d3 = (d4 * p.W4).cwiseProduct(dact(b.z3));
    grads.W3 += d3.transpose() * b.h2;
    grads.b3 += d3.colwise().sum().transpose();
    Eigen::MatrixXd d2 = (d3 * p.W3).cwiseProduct(dact(b.z2));
    grads.W2 += d2.transpose() * b.h1;
    grads.b2 += d2.colwise().sum().transpose();
    Eigen::MatrixXd d1 = (d2 * p.W2).cwiseProduct(dact(b.z1));
    grads.W1 += d1.transpose() * b.enc;
    grads.b1 += d1.colwise().sum().transpose();
    if (grad_enc) *grad_enc = d1 * p.W1;
}

inline MediumSample medium_forward(const MediumNetParams& p, const Vec3& dir) {
    Eigen::MatrixXd enc(1, kShDim);
    enc.row(0) = sh_encode(dir).transpose();
    return medium_forward_batch(p, enc).sample(0);
}

// Single-direction reverse pass: exact gradients of medium_forward w.r.t.
// every parameter and the raw input direction.
inline std::pair<MediumNetGrads, Vec3> medium_backward(const MediumNetParams& p, const Vec3& dir,
                                                       const MediumSample& grad_out) {
    Eigen::MatrixXd enc(1, kShDim);
    enc.row(0) = sh_encode(dir).transpose();
    const MediumBatch b = medium_forward_batch(p, enc);
    Eigen::MatrixXd g(1, kMediumOut);
    g.row(0).segment<3>(0) = grad_out.sigma_attn.transpose();
    g.row(0).segment<3>(3) = grad_out.sigma_bs.transpose();
    g.row(0).segment<3>(6) = grad_out.c_med.transpose();
    MediumNetGrads grads;
    Eigen::MatrixXd genc;
    medium_backward_batch(p, b, g, grads, &genc);
    const Vec3 gdir = (genc.row(0) * sh_encode_jacobian(dir)).transpose();
    return {grads, gdir};
}

// Checkpoint layout: little-endian float32, layer-major, weights row-major
// then bias, layers in order.
inline void medium_serialize(const MediumNetParams& p, std::ostream& out) {
    p.for_each_tensor([&](const auto& t) {
        for (Eigen::Index i = 0; i < t.rows(); ++i)
            for (Eigen::Index j = 0; j < t.cols(); ++j) {
                const float f = static_cast<float>(t(i, j));
                out.write(reinterpret_cast<const char*>(&f), 4);
            }
    });
}

inline MediumNetParams medium_deserialize(std::istream& in) {
    MediumNetParams p;
    p.for_each_tensor([&](auto& t) {
        for (Eigen::Index i = 0; i < t.rows(); ++i)
            for (Eigen::Index j = 0; j < t.cols(); ++j) {
                float f;
                in.read(reinterpret_cast<char*>(&f), 4);
                if (!in) throw std::runtime_error("truncated medium parameters in checkpoint");
                t(i, j) = f;
            }
    });
    return p;
}

}  // namespace watersplat
