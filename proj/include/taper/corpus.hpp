#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "taper/errors.hpp"

namespace taper {

struct LabeledExample {
    std::vector<int> ids;
    int label = 0;
};

enum class CorpusFormat { jsonl, tsv };

inline CorpusFormat parse_format(const std::string& s) {
    if (s == "jsonl") return CorpusFormat::jsonl;
    if (s == "tsv") return CorpusFormat::tsv;
    throw ConfigError("unknown corpus format: " + s);
}

struct LengthStats {
    long count = 0;
    int min_len = 0;
    int max_len = 0;
    double mean_len = 0.0;
};

struct Corpus {
    std::string name;
    int classes = 0;  // N
    int vocab = 0;
    std::vector<LabeledExample> examples;

    LengthStats stats() const {
        LengthStats s;
        s.count = static_cast<long>(examples.size());
        if (examples.empty()) return s;
        s.min_len = s.max_len = static_cast<int>(examples[0].ids.size());
        double sum = 0.0;
        for (const auto& e : examples) {
            const int n = static_cast<int>(e.ids.size());
            s.min_len = std::min(s.min_len, n);
            s.max_len = std::max(s.max_len, n);
            sum += n;
        }
        s.mean_len = sum / s.count;
        return s;
    }
};

namespace detail {

inline std::vector<int> parse_id_string(const std::string& s, const char* where) {
    std::vector<int> ids;
    std::istringstream iss(s);
    std::string tok;
    while (iss >> tok) {
        try {
            size_t pos = 0;
            const int v = std::stoi(tok, &pos);
            if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
            ids.push_back(v);
        } catch (const std::exception&) {
            throw InputError(std::string(where) + ": bad token id '" + tok + "'");
        }
    }
    return ids;
}

inline void validate_example(const LabeledExample& e, int expected_classes, int expected_vocab,
                             const char* where) {
    if (e.ids.empty()) throw InputError(std::string(where) + ": empty id sequence");
    if (e.label < 0) throw InputError(std::string(where) + ": negative label");
    if (expected_classes > 0 && e.label >= expected_classes)
        throw InputError(std::string(where) + ": label " + std::to_string(e.label) +
                         " >= class count " + std::to_string(expected_classes));
    for (int id : e.ids)
        if (expected_vocab > 0 && id >= expected_vocab)
            throw InputError(std::string(where) + ": token id " + std::to_string(id) +
                             " >= vocab " + std::to_string(expected_vocab));
}

} // namespace detail

/// Reads a corpus file in deterministic (file) order.
///   jsonl: one object per line, fields "ids" (whitespace-separated id string
///          or integer array) and "label".
///   tsv:   label TAB whitespace-separated ids.
/// Passing expected_classes/expected_vocab (> 0) turns range violations into
/// errors; otherwise both are inferred from the data.
inline Corpus ingest(const std::string& path, CorpusFormat format, int expected_classes = 0,
                     int expected_vocab = 0) {
    std::ifstream in(path);
    if (!in) throw InputError("ingest: cannot open " + path);
    Corpus c;
    c.name = path;
    c.classes = expected_classes;
    c.vocab = expected_vocab;
    std::string line;
    long line_no = 0;
    int max_label = -1, max_id = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        LabeledExample e;
        if (format == CorpusFormat::jsonl) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const std::exception& ex) {
                throw InputError(where + ": invalid json (" + ex.what() + ")");
            }
            if (!j.contains("ids") || !j.contains("label"))
                throw InputError(where + ": missing 'ids' or 'label'");
            if (!j["label"].is_number_integer()) throw InputError(where + ": 'label' must be an integer");
            e.label = j["label"].get<int>();
            if (j["ids"].is_string()) {
                e.ids = detail::parse_id_string(j["ids"].get<std::string>(), where.c_str());
            } else if (j["ids"].is_array()) {
                for (const auto& v : j["ids"]) {
                    if (!v.is_number_integer() || v.get<int>() < 0)
                        throw InputError(where + ": 'ids' must hold non-negative integers");
                    e.ids.push_back(v.get<int>());
                }
            } else {
                throw InputError(where + ": 'ids' must be a string or array");
            }
        } else {
            const size_t tab = line.find('\t');
            if (tab == std::string::npos) throw InputError(where + ": expected 'label<TAB>ids'");
            try {
                size_t pos = 0;
                e.label = std::stoi(line.substr(0, tab), &pos);
                if (pos != tab) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw InputError(where + ": bad label field");
            }
            e.ids = detail::parse_id_string(line.substr(tab + 1), where.c_str());
        }
        detail::validate_example(e, expected_classes, expected_vocab, where.c_str());
        max_label = std::max(max_label, e.label);
        for (int id : e.ids) max_id = std::max(max_id, id);
        c.examples.push_back(std::move(e));
    }
    if (expected_classes == 0) c.classes = max_label + 1;
    if (expected_vocab == 0) c.vocab = max_id + 1;
    return c;
}

inline void export_corpus(const Corpus& c, const std::string& path, CorpusFormat format) {
    std::ofstream out(path);
    if (!out) throw InputError("export_corpus: cannot open " + path);
    for (const auto& e : c.examples) {
        std::ostringstream ids;
        for (size_t i = 0; i < e.ids.size(); ++i) {
            if (i) ids << ' ';
            ids << e.ids[i];
        }
        if (format == CorpusFormat::jsonl) {
            nlohmann::json j{{"ids", ids.str()}, {"label", e.label}};
            out << j.dump() << '\n';
        } else {
            out << e.label << '\t' << ids.str() << '\n';
        }
    }
}

/// Synthetic classification task. Each sequence carries `markers` copies of
/// its class's marker token (id 1+class) among uniform filler; longer
/// sequences additionally carry a few marker tokens of one other class
/// (`confusers` per bucket), always strictly fewer than the true markers, so
/// a majority-of-markers rule recovers every label. Salient-token count is
/// length-independent: long sequences are mostly prunable filler.
struct SynthSpec {
    int classes = 4;
    int vocab = 64;
    int examples = 1000;
    std::array<double, 3> bucket_mix = {1.0 / 3, 1.0 / 3, 1.0 / 3};  // short/middle/long
    int min_len = 5;
    int short_hi = 34;   // short: [min_len, 34]
    int mid_hi = 70;     // middle: [35, 70]
    int max_len = 110;   // long: [71, max_len]
    int markers = 3;
    std::array<int, 3> confusers = {0, 1, 2};  // per bucket

    void validate() const {
        if (classes < 2 || vocab < classes + 2)
            throw ConfigError("SynthSpec: need vocab >= classes + 2 (markers + filler + [CLS])");
        if (examples < 0) throw ConfigError("SynthSpec: negative example count");
        if (min_len < 1 || short_hi < min_len || mid_hi <= short_hi || max_len <= mid_hi)
            throw ConfigError("SynthSpec: length buckets must be ordered");
        for (int c : confusers)
            if (c >= markers) throw ConfigError("SynthSpec: confusers must stay below markers");
        if (min_len < markers + confusers[0])
            throw ConfigError("SynthSpec: min_len too small for markers + confusers");
    }
};

inline Corpus synth_task(const SynthSpec& spec, uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::discrete_distribution<int> bucket_dist(spec.bucket_mix.begin(), spec.bucket_mix.end());
    std::uniform_int_distribution<int> label_dist(0, spec.classes - 1);
    std::uniform_int_distribution<int> filler_dist(spec.classes + 1, spec.vocab - 1);

    const int lo[3] = {spec.min_len, spec.short_hi + 1, spec.mid_hi + 1};
    const int hi[3] = {spec.short_hi, spec.mid_hi, spec.max_len};

    Corpus c;
    c.name = "synth";
    c.classes = spec.classes;
    c.vocab = spec.vocab;
    c.examples.reserve(spec.examples);
    std::vector<int> slots;
    for (int i = 0; i < spec.examples; ++i) {
        const int bucket = bucket_dist(rng);
        const int len = std::uniform_int_distribution<int>(lo[bucket], hi[bucket])(rng);
        const int label = label_dist(rng);
        int other = label;
        if (spec.classes > 1) {
            other = std::uniform_int_distribution<int>(0, spec.classes - 2)(rng);
            if (other >= label) ++other;
        }
        const int conf = std::min(spec.confusers[bucket], len - spec.markers);

        LabeledExample e;
        e.label = label;
        e.ids.resize(len);
        for (int k = 0; k < len; ++k) e.ids[k] = filler_dist(rng);
        slots.resize(len);
        std::iota(slots.begin(), slots.end(), 0);
        std::shuffle(slots.begin(), slots.end(), rng);
        for (int k = 0; k < spec.markers; ++k) e.ids[slots[k]] = 1 + label;
        for (int k = 0; k < conf; ++k) e.ids[slots[spec.markers + k]] = 1 + other;
        c.examples.push_back(std::move(e));
    }
    return c;
}

} // namespace taper
