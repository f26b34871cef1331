#pragma once

#include <string>

#include "taper/errors.hpp"

namespace taper {

/// Dimensions used by one transformer block.
struct BlockDims {
    int width = 0;   // hidden size the block operates at
    int heads = 0;
    int ffn = 0;     // inner FFN size
    bool scale_full_dim = false;  // divide attention logits by sqrt(width) instead of sqrt(head_dim)

    int head_dim() const { return width / heads; }
};

struct ModelConfig {
    int layers = 4;       // L, stacked blocks
    int hidden = 32;      // d
    int heads = 4;        // N_h
    int ffn = 128;        // FFN inner size
    int classes = 2;      // N
    int vocab = 64;       // token id space, id 0 reserved for [CLS]
    int max_len = 128;    // maximum input id-sequence length (before [CLS] prepend)
    int sub_hidden = 16;  // exit-head block width, default hidden/2
    // The attention logit divisor is sqrt(head_dim) by default; flipping this
    // switches to sqrt(hidden) for the whole model.
    bool attn_scale_full_dim = false;

    int head_dim() const { return hidden / heads; }

    BlockDims block_dims() const { return {hidden, heads, ffn, attn_scale_full_dim}; }
    // Exit heads run a single-head block at reduced width with a 2x inner FFN.
    BlockDims sub_block_dims() const { return {sub_hidden, 1, 2 * sub_hidden, attn_scale_full_dim}; }

    void validate() const {
        if (layers < 2) throw ConfigError("ModelConfig: layers must be >= 2");
        if (hidden <= 0 || heads <= 0 || hidden % heads != 0)
            throw ConfigError("ModelConfig: hidden must be a positive multiple of heads");
        if (ffn <= 0 || classes < 2 || vocab < 2 || max_len < 1)
            throw ConfigError("ModelConfig: ffn/classes/vocab/max_len out of range");
        if (sub_hidden <= 0 || sub_hidden > hidden)
            throw ConfigError("ModelConfig: sub_hidden must be in [1, hidden]");
    }
};

} // namespace taper
