#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "taper/corpus.hpp"
#include "taper/exiting.hpp"
#include "taper/flops.hpp"
#include "taper/pruning.hpp"

namespace taper {

// ---- length buckets -----------------------------------------------------

struct LengthBucket {
    const char* label;
    int lo;  // inclusive
    int hi;  // inclusive, INT_MAX for the open end
};

inline constexpr LengthBucket kBuckets[3] = {
    {"short", 1, 34},
    {"middle", 35, 70},
    {"long", 71, std::numeric_limits<int>::max()},
};

/// Bucket index for an example's stored id-sequence length.
inline int bucket_of(int length) {
    if (length <= kBuckets[0].hi) return 0;
    if (length <= kBuckets[1].hi) return 1;
    return 2;
}

// ---- FLOPs ledger ---------------------------------------------------------

struct LayerCost {
    int layer = 0;
    int n_in = 0;        // tokens entering the block
    int n_retained = 0;  // tokens surviving this layer's pruning
    OpCost block;
    OpCost sub;  // exit head, zero when it did not run
    bool sub_ran = false;
};

/// Exact op counts for one inference, split by component, plus the
/// full-depth no-prune no-exit baseline at the input width.
struct FlopsLedger {
    OpCost embed;
    std::vector<LayerCost> layers;
    OpCost head;  // main classifier, zero unless it ran
    bool head_ran = false;
    uint64_t baseline_flops = 0;

    uint64_t actual_flops() const {
        OpCost total = embed + head;
        for (const LayerCost& l : layers) total += l.block + l.sub;
        return total.flops();
    }
    uint64_t sub_overhead_flops() const {
        OpCost total;
        for (const LayerCost& l : layers) total += l.sub;
        return total.flops();
    }
    double speedup() const {
        const uint64_t a = actual_flops();
        return a ? static_cast<double>(baseline_flops) / a : 0.0;
    }
};

struct LayerTrace {
    int layer = 0;
    int n_in = 0;
    int n_retained = 0;
    double u = -1.0;  // -1: exit head not evaluated
    bool exited = false;
};

struct MpResult {
    int prediction = -1;
    ExitState exit;
    FlopsLedger ledger;
    std::vector<LayerTrace> trace;
    int input_len = 0;  // id count as stored in the corpus (no [CLS])
};

struct EngineSettings {
    bool exits = true;
    double tau = 0.0;
};

// ---- fused inference ------------------------------------------------------

/// Per layer: block forward; if pruning is on, importance -> hard mask ->
/// physical token drop; then the exit head on the pruned state and the
/// tau test. The final layer goes to the main classifier. The ledger counts
/// every op actually performed, exit-head overhead included.
inline MpResult mp_infer(std::span<const int> ids, const Model& m, const PruneConfig& pc,
                         const EngineSettings& es) {
    if (pc.mode == PruneMode::soft)
        throw ConfigError("mp_infer: soft gating is a training mode; use hard or disabled");
    const bool prune = pc.mode == PruneMode::hard;
    const ModelConfig& cfg = m.cfg;

    MpResult r;
    r.input_len = static_cast<int>(ids.size());
    r.exit.tau = es.tau;
    r.exit.exit_layer = cfg.layers;

    RawExec ex;
    Hidden<RawExec> h = embed(ex, m, ids);
    r.ledger.embed = embed_cost(h.n(), cfg.hidden);
    r.ledger.baseline_flops = baseline_cost(cfg, h.n()).flops();

    for (int l = 1; l <= cfg.layers; ++l) {
        BlockResult<RawExec> br = block_forward(ex, m, l, h);
        LayerCost lc;
        lc.layer = l;
        lc.n_in = h.n();
        lc.block = block_cost(h.n(), cfg.block_dims());
        h = std::move(br.h);

        LayerTrace tr;
        tr.layer = l;
        tr.n_in = lc.n_in;

        if (l < cfg.layers) {
            if (prune) {
                RawExec::V scores = importance(ex, br.attn);
                const std::vector<int> keep = hard_mask(scores, m.delta_at(l));
                if (static_cast<int>(keep.size()) < h.n()) {
                    h.values = ex.select_rows(h.values, keep);
                    std::vector<int> pos(keep.size());
                    for (size_t k = 0; k < keep.size(); ++k) pos[k] = h.positions[keep[k]];
                    h.positions = std::move(pos);
                }
            }
            lc.n_retained = h.n();
            tr.n_retained = h.n();

            if (es.exits) {
                ClassifierOut<RawExec> sub = sub_forward(ex, m, l, h);
                lc.sub = sub_classifier_cost(h.n(), cfg);
                lc.sub_ran = true;
                const double u = uncertainty(sub.probs, cfg.classes);
                r.exit.u.push_back(u);
                r.exit.sub_probs.push_back(sub.probs);
                tr.u = u;
                if (should_exit(u, es.tau)) {
                    tr.exited = true;
                    r.exit.exit_layer = l;
                    r.prediction = la::argmax_row(sub.probs);
                    r.ledger.layers.push_back(lc);
                    r.trace.push_back(tr);
                    return r;
                }
            }
        } else {
            lc.n_retained = h.n();
            tr.n_retained = h.n();
        }
        r.ledger.layers.push_back(lc);
        r.trace.push_back(tr);
    }

    ClassifierOut<RawExec> out = pool_and_classify(ex, m, h);
    r.ledger.head = head_cost(cfg.hidden, cfg.classes);
    r.ledger.head_ran = true;
    r.exit.final_probs = out.probs;
    r.prediction = la::argmax_row(out.probs);
    return r;
}

// ---- physical-removal vs attention-masking oracle --------------------------

namespace detail {

/// Row-wise softmax over the alive key columns only; masked entries come out
/// exactly 0, so downstream products match the shortened computation term by
/// term (adding 0.0 to a finite partial sum is exact).
inline Matrix masked_softmax_rows(const Matrix& a, const std::vector<char>& alive) {
    Matrix out(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* x = a.row(i);
        double* y = out.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < a.cols; ++j)
            if (alive[j]) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < a.cols; ++j) {
            y[j] = alive[j] ? std::exp(x[j] - mx) : 0.0;
            sum += y[j];
        }
        for (int j = 0; j < a.cols; ++j)
            if (alive[j]) y[j] /= sum;
    }
    return out;
}

/// Full-width block forward where dropped tokens stay as rows but are masked
/// out of every attention computation.
inline Matrix masked_block_forward(const Model& m, int layer, const Matrix& x,
                                   const std::vector<char>& alive) {
    const BlockParams& bp = m.blocks[layer - 1];
    const BlockDims dims = m.cfg.block_dims();
    const int dh = dims.head_dim();
    const double inv_scale =
        1.0 / std::sqrt(static_cast<double>(dims.scale_full_dim ? dims.width : dh));

    const Matrix q = la::add_row_vec(la::matmul(x, bp.attn.wq.value), bp.attn.bq.value);
    const Matrix k = la::add_row_vec(la::matmul(x, bp.attn.wk.value), bp.attn.bk.value);
    const Matrix v = la::add_row_vec(la::matmul(x, bp.attn.wv.value), bp.attn.bv.value);

    std::vector<Matrix> ctx_heads;
    ctx_heads.reserve(dims.heads);
    for (int h = 0; h < dims.heads; ++h) {
        const Matrix qh = la::slice_cols(q, h * dh, dh);
        const Matrix kh = la::slice_cols(k, h * dh, dh);
        const Matrix vh = la::slice_cols(v, h * dh, dh);
        const Matrix probs = masked_softmax_rows(la::scale(la::matmul_nt(qh, kh), inv_scale), alive);
        ctx_heads.push_back(la::matmul(probs, vh));
    }
    const Matrix o =
        la::add_row_vec(la::matmul(la::concat_cols(ctx_heads), bp.attn.wo.value), bp.attn.bo.value);
    const Matrix x1 = la::layer_norm(la::add(x, o), bp.ln1_g.value, bp.ln1_b.value);
    const Matrix f = la::gelu(la::add_row_vec(la::matmul(x1, bp.ffn_w1.value), bp.ffn_b1.value));
    const Matrix f2 = la::add_row_vec(la::matmul(f, bp.ffn_w2.value), bp.ffn_b2.value);
    return la::layer_norm(la::add(x1, f2), bp.ln2_g.value, bp.ln2_b.value);
}

} // namespace detail

/// Validates the hard-prune semantics: runs (a) physical token removal and
/// (b) an attention-masked full-width pass replaying the exact same drop
/// decisions, and returns the max |main-classifier logit difference|.
inline double pruned_equivalence_check(std::span<const int> ids, const Model& m,
                                       const PruneConfig& pc) {
    if (pc.mode != PruneMode::hard) throw ConfigError("pruned_equivalence_check: requires hard mode");

    // Path A: physical removal, recording the kept positions per layer.
    RawExec ex;
    Hidden<RawExec> h = embed(ex, m, ids);
    const int n0 = h.n();
    std::vector<std::vector<int>> kept_positions(m.cfg.layers + 1);
    for (int l = 1; l <= m.cfg.layers; ++l) {
        BlockResult<RawExec> br = block_forward(ex, m, l, h);
        h = std::move(br.h);
        if (l < m.cfg.layers) {
            const std::vector<int> keep = hard_mask(importance(ex, br.attn), m.delta_at(l));
            if (static_cast<int>(keep.size()) < h.n()) {
                h.values = ex.select_rows(h.values, keep);
                std::vector<int> pos(keep.size());
                for (size_t k = 0; k < keep.size(); ++k) pos[k] = h.positions[keep[k]];
                h.positions = std::move(pos);
            }
        }
        kept_positions[l] = h.positions;
    }
    const Matrix logits_a = pool_and_classify(ex, m, h).logits;

    // Path B: full width, masked attention, identical drops.
    Matrix x = embed(ex, m, ids).values;
    std::vector<char> alive(n0, 1);
    for (int l = 1; l <= m.cfg.layers; ++l) {
        x = detail::masked_block_forward(m, l, x, alive);
        std::vector<char> next(n0, 0);
        for (int p : kept_positions[l]) next[p] = 1;
        alive = std::move(next);
    }
    const Matrix logits_b = detail::classify_cls_row(ex, m.head, x).logits;

    double max_diff = 0.0;
    for (int j = 0; j < logits_a.cols; ++j)
        max_diff = std::max(max_diff, std::fabs(logits_a.data[j] - logits_b.data[j]));
    return max_diff;
}

// ---- speedup report ---------------------------------------------------------

struct ReportRow {
    double tau = 0.0;  // -1 marks an exits-disabled run
    std::string bucket;
    long count = 0;
    double mean_gflops = 0.0;
    double speedup = 0.0;
    double accuracy = 0.0;
    std::string note;
};

struct ExampleTrace {
    long index = 0;
    double tau = 0.0;
    int length = 0;
    std::string bucket;
    int label = 0;
    int prediction = 0;
    int exit_layer = 0;
    double gflops = 0.0;
    std::vector<LayerTrace> layers;
};

namespace detail {

struct BucketAccum {
    long count = 0;
    long correct = 0;
    double base_flops = 0.0;
    double actual_flops = 0.0;

    void add(const MpResult& r, int label) {
        ++count;
        correct += (r.prediction == label);
        base_flops += static_cast<double>(r.ledger.baseline_flops);
        actual_flops += static_cast<double>(r.ledger.actual_flops());
    }
    void merge(const BucketAccum& o) {
        count += o.count;
        correct += o.correct;
        base_flops += o.base_flops;
        actual_flops += o.actual_flops;
    }
    ReportRow row(double tau, const std::string& bucket) const {
        ReportRow row;
        row.tau = tau;
        row.bucket = bucket;
        row.count = count;
        if (count > 0) {
            row.mean_gflops = actual_flops / count / 1e9;
            row.speedup = actual_flops > 0.0 ? base_flops / actual_flops : 0.0;
            row.accuracy = static_cast<double>(correct) / count;
            if (row.speedup < 1.0) row.note = "overhead_exceeds_savings";
        }
        return row;
    }
};

} // namespace detail

/// One inference sweep per tau over the dataset; emits an "all" row plus one
/// row per length bucket for each tau. Speedup is total baseline FLOPs over
/// total actual FLOPs; empty buckets get a count-0 row with zeroed metrics.
/// When exits is false the sweep runs once with exit heads disabled and the
/// rows carry tau = -1.
///
/// Examples are independent, so the sweep fans out over hardware threads;
/// per-chunk accumulators merge in chunk order and all accumulated quantities
/// are exact integers, so the result does not depend on the thread count.
inline std::vector<ReportRow> speedup_report(std::span<const LabeledExample> data, const Model& m,
                                             const PruneConfig& pc, std::vector<double> tau_grid,
                                             bool exits = true,
                                             std::vector<ExampleTrace>* traces = nullptr) {
    if (data.empty()) throw InputError("speedup_report: empty dataset");
    if (!exits) tau_grid = {-1.0};
    const size_t workers =
        std::min<size_t>(std::max(1u, std::thread::hardware_concurrency()), data.size());
    std::vector<ReportRow> rows;
    for (double tau : tau_grid) {
        if (exits && (tau < 0.0 || tau > 1.0))
            throw ConfigError("speedup_report: tau must be in [0,1]");
        const EngineSettings es{exits, exits ? tau : 0.0};

        struct ChunkResult {
            detail::BucketAccum all;
            detail::BucketAccum per[3];
            std::vector<ExampleTrace> traces;
            std::exception_ptr error;
        };
        std::vector<ChunkResult> chunks(workers);
        const auto run_chunk = [&](size_t w) {
            ChunkResult& out = chunks[w];
            try {
                for (size_t i = w; i < data.size(); i += workers) {
                    const LabeledExample& e = data[i];
                    MpResult r = mp_infer(e.ids, m, pc, es);
                    const int b = bucket_of(static_cast<int>(e.ids.size()));
                    out.all.add(r, e.label);
                    out.per[b].add(r, e.label);
                    if (traces) {
                        ExampleTrace t;
                        t.index = static_cast<long>(i);
                        t.tau = tau;
                        t.length = static_cast<int>(e.ids.size());
                        t.bucket = kBuckets[b].label;
                        t.label = e.label;
                        t.prediction = r.prediction;
                        t.exit_layer = r.exit.exit_layer;
                        t.gflops = static_cast<double>(r.ledger.actual_flops()) / 1e9;
                        t.layers = r.trace;
                        out.traces.push_back(std::move(t));
                    }
                }
            } catch (...) {
                out.error = std::current_exception();
            }
        };
        if (workers == 1) {
            run_chunk(0);
        } else {
            std::vector<std::thread> pool;
            pool.reserve(workers);
            for (size_t w = 0; w < workers; ++w) pool.emplace_back(run_chunk, w);
            for (std::thread& t : pool) t.join();
        }

        detail::BucketAccum all;
        detail::BucketAccum per[3];
        for (ChunkResult& c : chunks) {
            if (c.error) std::rethrow_exception(c.error);
            all.merge(c.all);
            for (int b = 0; b < 3; ++b) per[b].merge(c.per[b]);
        }
        if (traces) {
            // Interleaved chunking: restore example order by index.
            std::vector<ExampleTrace> merged;
            for (ChunkResult& c : chunks)
                for (ExampleTrace& t : c.traces) merged.push_back(std::move(t));
            std::sort(merged.begin(), merged.end(),
                      [](const ExampleTrace& a, const ExampleTrace& b) { return a.index < b.index; });
            for (ExampleTrace& t : merged) traces->push_back(std::move(t));
        }
        rows.push_back(all.row(tau, "all"));
        for (int b = 0; b < 3; ++b) rows.push_back(per[b].row(tau, kBuckets[b].label));
    }
    return rows;
}

/// Plain full-depth accuracy, no pruning, no exits.
inline double plain_accuracy(std::span<const LabeledExample> data, const Model& m) {
    if (data.empty()) return 0.0;
    long correct = 0;
    for (const LabeledExample& e : data) {
        const ClassifierOut<RawExec> out = encoder_forward(m, e.ids);
        correct += (la::argmax_row(out.probs) == e.label);
    }
    return static_cast<double>(correct) / data.size();
}

// ---- report / trace serialization -----------------------------------------

inline constexpr const char* kReportHeader =
    "tau\tbucket\tcount\tmean_gflops\tspeedup\taccuracy\tnote";

/// Tab-separated report. The header comment states the counting convention
/// so the numbers are comparable across tools.
inline void write_report_tsv(const std::vector<ReportRow>& rows, std::ostream& out) {
    out << "# flops = 2*mac + aux (one MAC = one multiply + one add); exit-head overhead included\n";
    out << "# tau = -1 marks a run with exit heads disabled\n";
    out << kReportHeader << '\n';
    char buf[256];
    for (const ReportRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6g\t%s\t%ld\t%.9g\t%.6g\t%.6g\t%s\n", r.tau,
                      r.bucket.c_str(), r.count, r.mean_gflops, r.speedup, r.accuracy,
                      r.note.c_str());
        out << buf;
    }
}

inline nlohmann::json report_to_json(const std::vector<ReportRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const ReportRow& r : rows)
        arr.push_back({{"tau", r.tau},
                       {"bucket", r.bucket},
                       {"count", r.count},
                       {"mean_gflops", r.mean_gflops},
                       {"speedup", r.speedup},
                       {"accuracy", r.accuracy},
                       {"note", r.note}});
    return arr;
}

/// One json object per example per tau, with per-layer width/uncertainty/exit
/// fields for length-bucket analysis.
inline void write_trace_jsonl(const std::vector<ExampleTrace>& traces, std::ostream& out) {
    for (const ExampleTrace& t : traces) {
        nlohmann::json layers = nlohmann::json::array();
        for (const LayerTrace& l : t.layers)
            layers.push_back({{"layer", l.layer},
                              {"n_in", l.n_in},
                              {"n_retained", l.n_retained},
                              {"u", l.u},
                              {"exited", l.exited}});
        nlohmann::json j{{"index", t.index},     {"tau", t.tau},
                         {"length", t.length},   {"bucket", t.bucket},
                         {"label", t.label},     {"prediction", t.prediction},
                         {"exit_layer", t.exit_layer}, {"gflops", t.gflops},
                         {"layers", layers}};
        out << j.dump() << '\n';
    }
}

} // namespace taper
