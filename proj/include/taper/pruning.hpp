#pragma once

#include <string>
#include <vector>

#include "taper/encoder.hpp"

namespace taper {

enum class PruneMode { disabled, soft, hard };

/// Width-wise pruning hyperparameters. The per-layer thresholds themselves
/// live in Model::deltas (they are trainable); this carries the run-level
/// knobs: the final-layer threshold anchoring the schedule, the gate
/// temperature, the L1 weight, and the active mode.
struct PruneConfig {
    PruneMode mode = PruneMode::disabled;
    double delta_final = 0.0;  // threshold at layer L, anchors the linear schedule
    double temperature = 1e-5; // gate temperature T
    double lambda = 0.0;       // L1 mask regularizer weight

    void validate_soft() const {
        if (temperature <= 0.0) throw ConfigError("PruneConfig: temperature must be > 0 in soft mode");
    }
};

/// Linear threshold schedule: layer l (1-based) gets delta_final * l / L.
inline std::vector<double> threshold_schedule(double delta_final, int layers) {
    if (delta_final < 0.0) throw ConfigError("threshold_schedule: delta_final must be >= 0");
    std::vector<double> out(layers);
    for (int l = 1; l <= layers; ++l) out[l - 1] = delta_final * l / layers;
    return out;
}

/// Token importance: mean attention a token receives, averaged over heads and
/// source tokens — the column mean of each head's row-stochastic matrix.
/// Returns an n x 1 vector whose entries sum to 1.
template <class E>
typename E::V importance(E& ex, const std::vector<typename E::V>& attn) {
    typename E::V acc = ex.col_sum(attn[0]);
    for (size_t h = 1; h < attn.size(); ++h) acc = ex.add(acc, ex.col_sum(attn[h]));
    const int n = ex.value(acc).rows;
    return ex.scale(acc, 1.0 / (static_cast<double>(attn.size()) * n));
}

/// Soft gate sigma((s - delta_l) / T): strictly inside (0,1), monotone up in
/// the scores and down in the threshold. delta is a 1 x 1 scalar (typically
/// picked out of Model::deltas so gradients reach it).
template <class E>
typename E::V soft_gate(E& ex, const typename E::V& scores, const typename E::V& delta,
                        double temperature) {
    if (temperature <= 0.0) throw ConfigError("soft_gate: temperature must be > 0");
    return ex.sigmoid_m(ex.scale(ex.sub_scalar(scores, delta), 1.0 / temperature));
}

/// Row-wise gating of hidden states. The [CLS] row is exempt: its gate is
/// forced to 1 so the pooler's input can never be zeroed out.
template <class E>
typename E::V apply_soft_mask(E& ex, const typename E::V& values, const typename E::V& gates) {
    return ex.row_scale(values, ex.exempt_first(gates));
}

/// Binarized keep decision: token i survives iff s_i > delta (the sigma > 0.5
/// binarization of the soft gate). Index 0 ([CLS]) is always kept; when every
/// other token falls below threshold the state collapses to [CLS] alone.
/// Returns indices into the current state, ascending.
inline std::vector<int> hard_mask(const Matrix& scores, double delta) {
    std::vector<int> keep{0};
    for (int i = 1; i < scores.rows; ++i)
        if (scores.data[i] > delta) keep.push_back(i);
    return keep;
}

/// lambda * mean(|gate|) over every gate entry of every gated layer.
template <class E>
typename E::V mask_l1_penalty(E& ex, const std::vector<typename E::V>& layer_gates, double lambda) {
    int total = 0;
    for (const auto& g : layer_gates) total += ex.value(g).rows;
    typename E::V acc = ex.sum_all(ex.abs_m(layer_gates[0]));
    for (size_t l = 1; l < layer_gates.size(); ++l)
        acc = ex.add(acc, ex.sum_all(ex.abs_m(layer_gates[l])));
    return ex.scale(acc, lambda / total);
}

} // namespace taper
