#pragma once

#include <random>
#include <string>
#include <vector>

#include "taper/config.hpp"
#include "taper/params.hpp"

namespace taper {

struct AttnParams {
    ParamTensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockParams {
    AttnParams attn;
    ParamTensor ln1_g, ln1_b;
    ParamTensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    ParamTensor ln2_g, ln2_b;
};

/// Pooler (tanh dense over the [CLS] row) plus classifier projection.
struct HeadParams {
    ParamTensor pool_w, pool_b, proj_w, proj_b;
};

/// One exit head: input adapter to the reduced width, a single-head block at
/// that width, then its own pooler/projector.
struct SubParams {
    ParamTensor in_w, in_b;
    BlockParams block;
    HeadParams head;
};

/// The full parameter store: backbone, main head, L-1 exit heads, and the
/// per-layer pruning thresholds (an L x 1 tensor). Construction is
/// deterministic for a given (config, seed).
class Model {
public:
    ModelConfig cfg;
    ParamTensor tok_emb;  // vocab x d
    ParamTensor pos_emb;  // (max_len + 1) x d, +1 covers the [CLS] prepend
    std::vector<BlockParams> blocks;
    HeadParams head;
    std::vector<SubParams> subs;  // exit heads for layers 1..L-1
    ParamTensor deltas;           // L x 1 pruning thresholds

    explicit Model(const ModelConfig& config, uint64_t seed = 1) : cfg(config) {
        cfg.validate();
        std::mt19937_64 rng(seed);
        const int d = cfg.hidden;

        init(tok_emb, "embed.tok", cfg.vocab, d, ParamGroup::backbone, rng, true);
        init(pos_emb, "embed.pos", cfg.max_len + 1, d, ParamGroup::backbone, rng, true);

        blocks.resize(cfg.layers);
        for (int l = 0; l < cfg.layers; ++l)
            init_block(blocks[l], "block" + std::to_string(l), cfg.block_dims(), ParamGroup::backbone, rng);

        init_head(head, "head", d, cfg.classes, ParamGroup::main_head, rng);

        const int ds = cfg.sub_hidden;
        subs.resize(cfg.layers - 1);
        for (int l = 0; l < cfg.layers - 1; ++l) {
            SubParams& s = subs[l];
            const std::string p = "sub" + std::to_string(l + 1);
            init(s.in_w, p + ".in_w", d, ds, ParamGroup::sub_head, rng, true);
            init(s.in_b, p + ".in_b", 1, ds, ParamGroup::sub_head, rng, false);
            init_block(s.block, p + ".block", cfg.sub_block_dims(), ParamGroup::sub_head, rng);
            init_head(s.head, p + ".head", ds, cfg.classes, ParamGroup::sub_head, rng);
        }

        init(deltas, "prune.deltas", cfg.layers, 1, ParamGroup::deltas, rng, false);
        rebuild_registry();
    }

    Model(const Model& o)
        : cfg(o.cfg), tok_emb(o.tok_emb), pos_emb(o.pos_emb), blocks(o.blocks),
          head(o.head), subs(o.subs), deltas(o.deltas) {
        rebuild_registry();
    }
    Model& operator=(const Model& o) {
        cfg = o.cfg;
        tok_emb = o.tok_emb;
        pos_emb = o.pos_emb;
        blocks = o.blocks;
        head = o.head;
        subs = o.subs;
        deltas = o.deltas;
        rebuild_registry();
        return *this;
    }

    const ParameterSet& params() const { return registry_; }

    double delta_at(int layer) const { return deltas.value(layer - 1, 0); }

private:
    ParameterSet registry_;

    static void init(ParamTensor& p, std::string name, int r, int c, ParamGroup g,
                     std::mt19937_64& rng, bool random, double fill = 0.0) {
        p.name = std::move(name);
        p.group = g;
        p.value = random ? Matrix(r, c) : Matrix::filled(r, c, fill);
        if (random) {
            std::normal_distribution<double> dist(0.0, 0.02);
            for (double& v : p.value.data) v = dist(rng);
        }
    }

    static void init_block(BlockParams& b, const std::string& p, const BlockDims& dims,
                           ParamGroup g, std::mt19937_64& rng) {
        const int d = dims.width;
        init(b.attn.wq, p + ".attn.wq", d, d, g, rng, true);
        init(b.attn.bq, p + ".attn.bq", 1, d, g, rng, false);
        init(b.attn.wk, p + ".attn.wk", d, d, g, rng, true);
        init(b.attn.bk, p + ".attn.bk", 1, d, g, rng, false);
        init(b.attn.wv, p + ".attn.wv", d, d, g, rng, true);
        init(b.attn.bv, p + ".attn.bv", 1, d, g, rng, false);
        init(b.attn.wo, p + ".attn.wo", d, d, g, rng, true);
        init(b.attn.bo, p + ".attn.bo", 1, d, g, rng, false);
        init(b.ln1_g, p + ".ln1_g", 1, d, g, rng, false, 1.0);
        init(b.ln1_b, p + ".ln1_b", 1, d, g, rng, false);
        init(b.ffn_w1, p + ".ffn_w1", d, dims.ffn, g, rng, true);
        init(b.ffn_b1, p + ".ffn_b1", 1, dims.ffn, g, rng, false);
        init(b.ffn_w2, p + ".ffn_w2", dims.ffn, d, g, rng, true);
        init(b.ffn_b2, p + ".ffn_b2", 1, d, g, rng, false);
        init(b.ln2_g, p + ".ln2_g", 1, d, g, rng, false, 1.0);
        init(b.ln2_b, p + ".ln2_b", 1, d, g, rng, false);
    }

    static void init_head(HeadParams& h, const std::string& p, int d, int classes,
                          ParamGroup g, std::mt19937_64& rng) {
        init(h.pool_w, p + ".pool_w", d, d, g, rng, true);
        init(h.pool_b, p + ".pool_b", 1, d, g, rng, false);
        init(h.proj_w, p + ".proj_w", d, classes, g, rng, true);
        init(h.proj_b, p + ".proj_b", 1, classes, g, rng, false);
    }

    void rebuild_registry() {
        registry_ = ParameterSet();
        auto add_block = [&](BlockParams& b) {
            for (ParamTensor* p : {&b.attn.wq, &b.attn.bq, &b.attn.wk, &b.attn.bk,
                                   &b.attn.wv, &b.attn.bv, &b.attn.wo, &b.attn.bo,
                                   &b.ln1_g, &b.ln1_b, &b.ffn_w1, &b.ffn_b1,
                                   &b.ffn_w2, &b.ffn_b2, &b.ln2_g, &b.ln2_b})
                registry_.add(p);
        };
        auto add_head = [&](HeadParams& h) {
            for (ParamTensor* p : {&h.pool_w, &h.pool_b, &h.proj_w, &h.proj_b}) registry_.add(p);
        };
        registry_.add(&tok_emb);
        registry_.add(&pos_emb);
        for (BlockParams& b : blocks) add_block(b);
        add_head(head);
        for (SubParams& s : subs) {
            registry_.add(&s.in_w);
            registry_.add(&s.in_b);
            add_block(s.block);
            add_head(s.head);
        }
        registry_.add(&deltas);
    }
};

} // namespace taper
