#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "taper/encoder.hpp"

namespace taper {

/// Runs the exit head attached after backbone layer `layer` (1-based,
/// 1..L-1) over the given state: adapter down to the reduced width, one
/// single-head block, then pool/project/softmax. In MP mode the state passed
/// in must already have that layer's mask applied, so the head sees the same
/// distribution at training and inference time.
template <class E>
ClassifierOut<E> sub_forward(E& ex, const Model& m, int layer, const Hidden<E>& h) {
    if (layer < 1 || layer >= m.cfg.layers) throw ConfigError("sub_forward: no exit head at this layer");
    const SubParams& sp = m.subs[layer - 1];
    auto z = ex.add_row_vec(ex.matmul(h.values, ex.param(sp.in_w)), ex.param(sp.in_b));
    auto blk = detail::block_core(ex, sp.block, m.cfg.sub_block_dims(), z);
    return detail::classify_cls_row(ex, sp.head, blk.values);
}

/// Normalized entropy of a distribution: sum p log p / log(1/N), clamped to
/// [0,1]. Zero entries contribute zero; one-hot gives exactly 0, uniform
/// gives 1.
inline double uncertainty(const Matrix& p, int classes) {
    double num = 0.0;
    for (double v : p.data)
        if (v > 0.0) num += v * std::log(v);
    const double u = num / std::log(1.0 / classes);
    return std::clamp(u, 0.0, 1.0);
}

/// Halt test: exit as soon as the uncertainty is at or below tau.
inline bool should_exit(double u, double tau) { return u <= tau; }

/// KL(p_s || p_t) in nats, sub-classifier distribution first. The teacher is
/// clamped at 1e-12 before the division; zero student entries contribute 0.
inline double kd_loss(const Matrix& p_s, const Matrix& p_t) {
    if (!p_s.same_shape(p_t)) throw ShapeError("kd_loss: shape mismatch");
    double acc = 0.0;
    for (int i = 0; i < p_s.size(); ++i) {
        const double ps = p_s.data[i];
        if (ps > 0.0) acc += ps * std::log(ps / std::max(p_t.data[i], 1e-12));
    }
    return acc;
}

/// Differentiable KD term against a detached teacher distribution.
inline ad::Var kd_loss(TapeExec& ex, ad::Var p_s, Matrix p_t) {
    return ex.tape->kl_to_const(p_s, std::move(p_t));
}

/// Sum of KD losses of all L-1 exit heads against the (detached) main
/// classifier distribution. Gradients flow only into whatever produced the
/// student distributions — with a raw-forward teacher that is exactly the
/// sub-classifier parameters.
inline ad::Var stage2_loss(TapeExec& ex, const std::vector<ad::Var>& sub_probs, const Matrix& p_t) {
    ad::Var acc = kd_loss(ex, sub_probs[0], p_t);
    for (size_t l = 1; l < sub_probs.size(); ++l)
        acc = ex.add(acc, kd_loss(ex, sub_probs[l], p_t));
    return acc;
}

/// Depth-wise exit record for one inference.
struct ExitState {
    double tau = 0.0;
    std::vector<double> u;             // uncertainty per evaluated exit head
    std::vector<Matrix> sub_probs;     // matching distributions
    Matrix final_probs;                // main-classifier distribution when no exit fired
    int exit_layer = 0;                // first layer with u <= tau, or L
};

} // namespace taper
