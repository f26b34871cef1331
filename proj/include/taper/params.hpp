#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "taper/matrix.hpp"

namespace taper {

/// Freeze/ownership group for stage-wise training. The optimizer is handed
/// only the groups a stage trains, so frozen tensors are never touched.
enum class ParamGroup : uint8_t {
    backbone = 0,   // embeddings + transformer blocks
    main_head = 1,  // pooler + main classifier projection
    deltas = 2,     // per-layer pruning thresholds
    sub_head = 3,   // all sub-classifier parameters
};

inline const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::backbone: return "backbone";
        case ParamGroup::main_head: return "main_head";
        case ParamGroup::deltas: return "deltas";
        case ParamGroup::sub_head: return "sub_head";
    }
    return "?";
}

struct ParamTensor {
    std::string name;
    Matrix value;
    ParamGroup group = ParamGroup::backbone;
};

/// Flat view over a model's tensors in deterministic registration order.
/// Names are unique; duplicates are a construction bug.
class ParameterSet {
public:
    void add(ParamTensor* p) {
        if (!names_.insert(p->name).second)
            throw ConfigError("ParameterSet: duplicate tensor name " + p->name);
        items_.push_back(p);
    }

    const std::vector<ParamTensor*>& all() const { return items_; }

    std::vector<ParamTensor*> group(std::initializer_list<ParamGroup> groups) const {
        std::vector<ParamTensor*> out;
        for (ParamTensor* p : items_)
            for (ParamGroup g : groups)
                if (p->group == g) { out.push_back(p); break; }
        return out;
    }

    ParamTensor* find(const std::string& name) const {
        for (ParamTensor* p : items_)
            if (p->name == name) return p;
        return nullptr;
    }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const ParamTensor* p : items_) n += p->value.size();
        return n;
    }

private:
    std::vector<ParamTensor*> items_;
    std::unordered_set<std::string> names_;
};

} // namespace taper
