#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "taper/exec.hpp"
#include "taper/model.hpp"

namespace taper {

constexpr int kClsId = 0;

/// Hidden states for the currently retained tokens. positions are the tokens'
/// original sequence slots (strictly increasing, slot 0 = [CLS] always
/// present); values is n x d under the executor's value type.
template <class E>
struct Hidden {
    typename E::V values;
    std::vector<int> positions;
    int layer = 0;

    int n() const { return static_cast<int>(positions.size()); }
};

/// Token + learned positional embedding. Prepends the [CLS] id (0) when the
/// sequence does not already start with it; the empty sequence embeds to a
/// [CLS]-only state.
template <class E>
Hidden<E> embed(E& ex, const Model& m, std::span<const int> ids) {
    if (static_cast<int>(ids.size()) > m.cfg.max_len)
        throw InputError("embed: sequence length " + std::to_string(ids.size()) +
                         " exceeds max_len " + std::to_string(m.cfg.max_len));
    std::vector<int> full;
    full.reserve(ids.size() + 1);
    if (ids.empty() || ids.front() != kClsId) full.push_back(kClsId);
    for (int id : ids) {
        if (id < 0 || id >= m.cfg.vocab)
            throw InputError("embed: token id " + std::to_string(id) + " out of vocab " +
                             std::to_string(m.cfg.vocab));
        full.push_back(id);
    }
    const int n = static_cast<int>(full.size());
    std::vector<int> pos(n);
    std::iota(pos.begin(), pos.end(), 0);

    auto tok = ex.select_rows(ex.param(m.tok_emb), full);
    auto p = ex.select_rows(ex.param(m.pos_emb), pos);
    Hidden<E> h;
    h.values = ex.add(tok, p);
    h.positions = std::move(pos);
    h.layer = 0;
    return h;
}

namespace detail {

/// Q/K/V projections, per-head probabilities, and the concatenated context.
/// Shared by attention_probs (which only needs probs) and block_forward.
template <class E>
struct AttnCore {
    std::vector<typename E::V> probs;  // one n x n matrix per head
    typename E::V context;             // n x width
};

template <class E>
AttnCore<E> attention_core(E& ex, const AttnParams& ap, const BlockDims& dims,
                           const typename E::V& x) {
    auto q = ex.add_row_vec(ex.matmul(x, ex.param(ap.wq)), ex.param(ap.bq));
    auto k = ex.add_row_vec(ex.matmul(x, ex.param(ap.wk)), ex.param(ap.bk));
    auto v = ex.add_row_vec(ex.matmul(x, ex.param(ap.wv)), ex.param(ap.bv));

    const int dh = dims.head_dim();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dims.scale_full_dim ? dims.width : dh));

    AttnCore<E> out;
    std::vector<typename E::V> ctx_heads;
    out.probs.reserve(dims.heads);
    ctx_heads.reserve(dims.heads);
    for (int h = 0; h < dims.heads; ++h) {
        auto qh = ex.slice_cols(q, h * dh, dh);
        auto kh = ex.slice_cols(k, h * dh, dh);
        auto vh = ex.slice_cols(v, h * dh, dh);
        auto scores = ex.scale(ex.matmul_nt(qh, kh), inv_scale);
        auto probs = ex.softmax_rows(scores);
        ctx_heads.push_back(ex.matmul(probs, vh));
        out.probs.push_back(std::move(probs));
    }
    out.context = ex.concat_cols(ctx_heads);
    return out;
}

template <class E>
struct BlockOut {
    typename E::V values;
    std::vector<typename E::V> attn;
};

template <class E>
BlockOut<E> block_core(E& ex, const BlockParams& bp, const BlockDims& dims,
                       const typename E::V& x) {
    AttnCore<E> core = attention_core(ex, bp.attn, dims, x);
    auto o = ex.add_row_vec(ex.matmul(core.context, ex.param(bp.attn.wo)), ex.param(bp.attn.bo));
    auto x1 = ex.layer_norm(ex.add(x, o), ex.param(bp.ln1_g), ex.param(bp.ln1_b));
    auto f = ex.gelu(ex.add_row_vec(ex.matmul(x1, ex.param(bp.ffn_w1)), ex.param(bp.ffn_b1)));
    auto f2 = ex.add_row_vec(ex.matmul(f, ex.param(bp.ffn_w2)), ex.param(bp.ffn_b2));
    BlockOut<E> out;
    out.values = ex.layer_norm(ex.add(x1, f2), ex.param(bp.ln2_g), ex.param(bp.ln2_b));
    out.attn = std::move(core.probs);
    return out;
}

} // namespace detail

/// Per-head attention probabilities at backbone layer `layer` (1-based) for
/// the given input state. Every row of every head sums to 1.
template <class E>
std::vector<typename E::V> attention_probs(E& ex, const Model& m, int layer, const Hidden<E>& h) {
    return detail::attention_core(ex, m.blocks[layer - 1].attn, m.cfg.block_dims(), h.values).probs;
}

template <class E>
struct BlockResult {
    Hidden<E> h;
    std::vector<typename E::V> attn;  // per-head probabilities from this block
};

/// One backbone block: multi-head attention + residual + layernorm, then the
/// GELU FFN + residual + layernorm. Keeps positions, bumps the layer index,
/// and hands back the attention tensor for the pruning stage.
template <class E>
BlockResult<E> block_forward(E& ex, const Model& m, int layer, const Hidden<E>& in) {
    if (in.layer != layer - 1) throw ShapeError("block_forward: state is not the previous layer's output");
    auto out = detail::block_core(ex, m.blocks[layer - 1], m.cfg.block_dims(), in.values);
    BlockResult<E> r;
    r.h.values = std::move(out.values);
    r.h.positions = in.positions;
    r.h.layer = layer;
    r.attn = std::move(out.attn);
    return r;
}

template <class E>
struct ClassifierOut {
    typename E::V logits;  // 1 x N
    typename E::V probs;   // 1 x N, softmax of logits
};

namespace detail {

template <class E>
ClassifierOut<E> classify_cls_row(E& ex, const HeadParams& hp, const typename E::V& values) {
    auto cls = ex.select_rows(values, {0});
    auto pooled = ex.tanh_m(ex.add_row_vec(ex.matmul(cls, ex.param(hp.pool_w)), ex.param(hp.pool_b)));
    ClassifierOut<E> out;
    out.logits = ex.add_row_vec(ex.matmul(pooled, ex.param(hp.proj_w)), ex.param(hp.proj_b));
    out.probs = ex.softmax_rows(out.logits);
    return out;
}

} // namespace detail

/// Main classifier: tanh-pool the [CLS] row, project to N logits, softmax.
template <class E>
ClassifierOut<E> pool_and_classify(E& ex, const Model& m, const Hidden<E>& h) {
    return detail::classify_cls_row(ex, m.head, h.values);
}

/// Plain full-depth forward with no pruning and no exits: the reference
/// prediction path.
inline ClassifierOut<RawExec> encoder_forward(const Model& m, std::span<const int> ids) {
    RawExec ex;
    Hidden<RawExec> h = embed(ex, m, ids);
    for (int l = 1; l <= m.cfg.layers; ++l) h = block_forward(ex, m, l, h).h;
    return pool_and_classify(ex, m, h);
}

} // namespace taper
