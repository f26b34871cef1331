#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_set>

#include "taper/model.hpp"

namespace taper {

// Checkpoint format v1 (little-endian binary):
//   bytes 0..7   magic "TAPERCKP"
//   u32          format version (1)
//   str          stage tag (u32 length + bytes)
//   config       9 x i32: layers, hidden, heads, ffn, classes, vocab,
//                max_len, sub_hidden, attn_scale_full_dim
//   u32          tensor count
//   per tensor   str name, u8 group, u32 rows, u32 cols, rows*cols f64
inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'P', 'E', 'R', 'C', 'K', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_i32(std::ostream& out, int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline int32_t read_i32(std::istream& in) {
    int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline std::string read_str(std::istream& in) {
    const uint32_t n = read_u32(in);
    if (n > (1u << 20)) throw InputError("checkpoint: implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

} // namespace detail

inline void save_checkpoint(const Model& m, const std::string& path, const std::string& stage_tag) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("save_checkpoint: cannot open " + path);
    out.write(kCheckpointMagic, 8);
    detail::write_u32(out, kCheckpointVersion);
    detail::write_str(out, stage_tag);
    for (int v : {m.cfg.layers, m.cfg.hidden, m.cfg.heads, m.cfg.ffn, m.cfg.classes, m.cfg.vocab,
                  m.cfg.max_len, m.cfg.sub_hidden, static_cast<int>(m.cfg.attn_scale_full_dim)})
        detail::write_i32(out, v);
    const auto& tensors = m.params().all();
    detail::write_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const ParamTensor* p : tensors) {
        detail::write_str(out, p->name);
        const char group = static_cast<char>(p->group);
        out.write(&group, 1);
        detail::write_u32(out, static_cast<uint32_t>(p->value.rows));
        detail::write_u32(out, static_cast<uint32_t>(p->value.cols));
        out.write(reinterpret_cast<const char*>(p->value.data.data()),
                  static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
    }
    if (!out) throw InputError("save_checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
    Model model;
    std::string stage_tag;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw InputError("load_checkpoint: bad magic (not a checkpoint?): " + path);
    const uint32_t version = detail::read_u32(in);
    if (version != kCheckpointVersion)
        throw InputError("load_checkpoint: unsupported format version " + std::to_string(version));
    const std::string stage_tag = detail::read_str(in);

    ModelConfig cfg;
    cfg.layers = detail::read_i32(in);
    cfg.hidden = detail::read_i32(in);
    cfg.heads = detail::read_i32(in);
    cfg.ffn = detail::read_i32(in);
    cfg.classes = detail::read_i32(in);
    cfg.vocab = detail::read_i32(in);
    cfg.max_len = detail::read_i32(in);
    cfg.sub_hidden = detail::read_i32(in);
    cfg.attn_scale_full_dim = detail::read_i32(in) != 0;
    cfg.validate();

    LoadedCheckpoint lc{Model(cfg, 0), stage_tag};
    const uint32_t count = detail::read_u32(in);
    std::unordered_set<std::string> filled;
    for (uint32_t t = 0; t < count; ++t) {
        const std::string name = detail::read_str(in);
        char group;
        in.read(&group, 1);
        const uint32_t rows = detail::read_u32(in);
        const uint32_t cols = detail::read_u32(in);
        ParamTensor* p = lc.model.params().find(name);
        if (!p) throw InputError("load_checkpoint: unknown tensor " + name);
        if (!filled.insert(name).second) throw InputError("load_checkpoint: duplicate tensor " + name);
        if (p->value.rows != static_cast<int>(rows) || p->value.cols != static_cast<int>(cols))
            throw InputError("load_checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(p->value.data.data()),
                static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
    }
    if (!in) throw InputError("load_checkpoint: truncated file " + path);
    if (filled.size() != lc.model.params().all().size())
        throw InputError("load_checkpoint: tensor count mismatch in " + path);
    return lc;
}

} // namespace taper
