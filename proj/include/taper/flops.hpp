#pragma once

#include <cstdint>

#include "taper/config.hpp"

namespace taper {

// Operation-count convention
// --------------------------
// Costs are split into two integers so either accounting convention can be
// recovered from a report:
//   mac — multiply-accumulates inside matrix products (one per scalar
//         multiply-add of a dot product). These are the classic terms:
//         attention 4*n*d^2 + 2*n^2*d, FFN 2*n*d*d_ff.
//   aux — every other counted scalar op, 1 each: bias adds, residual adds,
//         attention logit scaling, softmax (4/element: max-shift, exp,
//         sum-accumulate, divide), layernorm (6d+4 per row), GELU
//         (5/element), tanh (1/element), positional-embedding adds.
// Comparisons, gathers and copies (row select, slicing, concat) are free, and
// so is the pruning bookkeeping itself (importance column means, threshold
// tests): pruning only removes compute, it never adds any. Reported
// FLOPs = 2*mac + aux (a MAC is one multiply plus one add; aux ops are single
// floating ops).
struct OpCost {
    uint64_t mac = 0;
    uint64_t aux = 0;

    uint64_t flops() const { return 2 * mac + aux; }
    OpCost& operator+=(const OpCost& o) {
        mac += o.mac;
        aux += o.aux;
        return *this;
    }
    friend OpCost operator+(OpCost a, const OpCost& b) { return a += b; }
    friend bool operator==(const OpCost&, const OpCost&) = default;
};

inline OpCost linear_cost(uint64_t n, uint64_t in, uint64_t out) {
    return {n * in * out, n * out};
}

inline OpCost softmax_cost(uint64_t rows, uint64_t cols) { return {0, 4 * rows * cols}; }

inline OpCost layer_norm_cost(uint64_t rows, uint64_t cols) { return {0, rows * (6 * cols + 4)}; }

inline OpCost gelu_cost(uint64_t rows, uint64_t cols) { return {0, 5 * rows * cols}; }

/// Multi-head attention + residual + layernorm for n tokens at the given
/// block dims: QKV and output projections, per-head score and context
/// products, logit scaling, per-head softmax.
inline OpCost attention_cost(uint64_t n, const BlockDims& dims) {
    const uint64_t d = dims.width;
    const uint64_t heads = dims.heads;
    OpCost c;
    c += linear_cost(n, d, d);  // Q
    c += linear_cost(n, d, d);  // K
    c += linear_cost(n, d, d);  // V
    c.mac += 2 * n * n * d;     // scores + context over all heads
    c.aux += heads * n * n;     // logit scaling
    c += softmax_cost(heads * n, n);
    c += linear_cost(n, d, d);  // output projection
    c.aux += n * d;             // residual
    c += layer_norm_cost(n, d);
    return c;
}

/// Position-wise FFN + residual + layernorm.
inline OpCost ffn_cost(uint64_t n, const BlockDims& dims) {
    const uint64_t d = dims.width;
    const uint64_t f = dims.ffn;
    OpCost c;
    c += linear_cost(n, d, f);
    c += gelu_cost(n, f);
    c += linear_cost(n, f, d);
    c.aux += n * d;  // residual
    c += layer_norm_cost(n, d);
    return c;
}

inline OpCost block_cost(uint64_t n, const BlockDims& dims) {
    return attention_cost(n, dims) + ffn_cost(n, dims);
}

/// Token + positional embedding: the lookup is free, the add is counted.
inline OpCost embed_cost(uint64_t n, uint64_t d) { return {0, n * d}; }

/// Pooler (tanh dense on the [CLS] row) + projection + softmax.
inline OpCost head_cost(uint64_t d, uint64_t classes) {
    OpCost c;
    c += linear_cost(1, d, d);
    c.aux += d;  // tanh
    c += linear_cost(1, d, classes);
    c += softmax_cost(1, classes);
    return c;
}

/// One exit head over n retained tokens: width adapter, single-head reduced
/// block, pooler/projector.
inline OpCost sub_classifier_cost(uint64_t n, const ModelConfig& cfg) {
    OpCost c;
    c += linear_cost(n, cfg.hidden, cfg.sub_hidden);
    c += block_cost(n, cfg.sub_block_dims());
    c += head_cost(cfg.sub_hidden, cfg.classes);
    return c;
}

enum class FlopsComponent { attention, ffn, block, sub_classifier, classifier_head, embed };

/// Closed-form cost of one component at n retained tokens. The instrumented
/// counter in the test suite must agree with these numbers exactly.
inline OpCost count_flops(const ModelConfig& cfg, uint64_t n, FlopsComponent comp) {
    if (n < 1) throw ConfigError("count_flops: n must be >= 1");
    switch (comp) {
        case FlopsComponent::attention: return attention_cost(n, cfg.block_dims());
        case FlopsComponent::ffn: return ffn_cost(n, cfg.block_dims());
        case FlopsComponent::block: return block_cost(n, cfg.block_dims());
        case FlopsComponent::sub_classifier: return sub_classifier_cost(n, cfg);
        case FlopsComponent::classifier_head: return head_cost(cfg.hidden, cfg.classes);
        case FlopsComponent::embed: return embed_cost(n, cfg.hidden);
    }
    throw ConfigError("count_flops: unknown component");
}

/// Full-depth, no-prune, no-exit-head cost at input width n: the speedup
/// denominator's counterpart.
inline OpCost baseline_cost(const ModelConfig& cfg, uint64_t n) {
    OpCost c = embed_cost(n, cfg.hidden);
    for (int l = 0; l < cfg.layers; ++l) c += block_cost(n, cfg.block_dims());
    c += head_cost(cfg.hidden, cfg.classes);
    return c;
}

} // namespace taper
