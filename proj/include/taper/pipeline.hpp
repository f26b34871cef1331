#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "taper/corpus.hpp"
#include "taper/exiting.hpp"
#include "taper/pruning.hpp"

namespace taper {

// ---- plans ------------------------------------------------------------------

/// The four-step schedule: regular training, soft pruning, hard pruning,
/// exit-head training. A stage with 0 epochs is skipped entirely.
struct TrainPlan {
    std::string preset = "custom";
    int epochs_regular = 0;
    int epochs_soft = 0;
    int epochs_hard = 0;
    int epochs_sub = 0;

    double lr = 2e-5;
    int batch_size = 32;
    double delta_final = 0.0;
    double temperature = 1e-5;
    double lambda = 0.0;
    bool sub_stage_pruning = false;  // keep hard pruning active while training exit heads
    std::vector<double> tau_grid = {0.1, 0.5, 0.8};
    uint64_t seed = 1;

    void validate() const {
        if (epochs_regular < 0 || epochs_soft < 0 || epochs_hard < 0 || epochs_sub < 0)
            throw ConfigError("TrainPlan: negative epoch count");
        if (epochs_soft > 0 && epochs_hard == 0)
            throw ConfigError("TrainPlan: soft pruning requires a hard-pruning stage (binarization must follow gating)");
        if (batch_size < 1) throw ConfigError("TrainPlan: batch_size must be >= 1");
        if (lr <= 0.0) throw ConfigError("TrainPlan: lr must be > 0");
        if (delta_final < 0.0) throw ConfigError("TrainPlan: delta_final must be >= 0");
        if (lambda < 0.0) throw ConfigError("TrainPlan: lambda must be >= 0");
        for (double t : tau_grid)
            if (t < 0.0 || t > 1.0) throw ConfigError("TrainPlan: tau values must lie in [0,1]");
    }

    bool uses_pruning() const { return epochs_soft > 0 || epochs_hard > 0 || sub_stage_pruning; }
};

/// Stage-activation pattern of the named baseline. Defaults follow the
/// topic-classification schedule (3,1,2,2 for the combined model); explicit
/// epochs override the active slots, inactive slots stay off.
inline TrainPlan make_plan(const std::string& preset, std::array<int, 4> epochs = {-1, -1, -1, -1}) {
    TrainPlan plan;
    plan.preset = preset;
    std::array<int, 4> defaults{};
    std::array<bool, 4> active{};
    if (preset == "bert") {
        defaults = {3, 0, 0, 0};
        active = {true, false, false, false};
    } else if (preset == "ltp") {
        defaults = {3, 1, 2, 0};
        active = {true, true, true, false};
    } else if (preset == "fastbert") {
        defaults = {3, 0, 0, 2};
        active = {true, false, false, true};
    } else if (preset == "mp") {
        defaults = {3, 1, 2, 2};
        active = {true, true, true, true};
        plan.sub_stage_pruning = true;
    } else {
        throw ConfigError("make_plan: unknown preset '" + preset + "'");
    }
    std::array<int, 4> chosen{};
    for (int i = 0; i < 4; ++i) chosen[i] = active[i] ? (epochs[i] >= 0 ? epochs[i] : defaults[i]) : 0;
    plan.epochs_regular = chosen[0];
    plan.epochs_soft = chosen[1];
    plan.epochs_hard = chosen[2];
    plan.epochs_sub = chosen[3];
    plan.validate();
    return plan;
}

// ---- optimizer ----------------------------------------------------------------

/// Adam over an explicit tensor list. Freezing is mechanical: tensors not in
/// the list are never read or written. Gradients accumulate across
/// accumulate() calls until step() applies the update and clears them.
class Adam {
public:
    explicit Adam(std::vector<ParamTensor*> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        slots_.reserve(params.size());
        for (ParamTensor* p : params) {
            Slot s;
            s.p = p;
            s.m = Matrix(p->value.rows, p->value.cols);
            s.v = Matrix(p->value.rows, p->value.cols);
            s.g = Matrix(p->value.rows, p->value.cols);
            slots_.push_back(std::move(s));
        }
    }

    void accumulate(const TapeExec& ex) {
        for (Slot& s : slots_) {
            const Matrix* g = ex.grad_of(*s.p);
            if (g) la::accum(s.g, *g);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (Slot& s : slots_) {
            for (int i = 0; i < s.g.size(); ++i) {
                const double g = s.g.data[i];
                s.m.data[i] = beta1_ * s.m.data[i] + (1.0 - beta1_) * g;
                s.v.data[i] = beta2_ * s.v.data[i] + (1.0 - beta2_) * g * g;
                const double mhat = s.m.data[i] / bc1;
                const double vhat = s.v.data[i] / bc2;
                s.p->value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            std::fill(s.g.data.begin(), s.g.data.end(), 0.0);
        }
    }

private:
    struct Slot {
        ParamTensor* p = nullptr;
        Matrix m, v, g;
    };
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

// ---- logs -----------------------------------------------------------------------

struct StageLog {
    std::string stage;
    std::vector<double> epoch_loss;  // mean loss per epoch
};

struct TrainLog {
    std::vector<StageLog> stages;
};

// ---- forward builders ----------------------------------------------------------

namespace detail {

/// Cross-entropy training forward for stages 1-3. In soft mode every
/// non-final layer's output is gated and the collected gates feed the L1
/// penalty; in hard mode tokens are physically dropped per the binarized
/// mask. Returns the per-example loss (unscaled).
inline ad::Var build_ce_loss(TapeExec& ex, const Model& m, const LabeledExample& e,
                             PruneMode mode, const PruneConfig& pc) {
    Hidden<TapeExec> h = embed(ex, m, e.ids);
    std::vector<ad::Var> gates;
    ad::Var deltas{};
    if (mode == PruneMode::soft) {
        pc.validate_soft();
        deltas = ex.param(m.deltas);
    }
    for (int l = 1; l <= m.cfg.layers; ++l) {
        BlockResult<TapeExec> br = block_forward(ex, m, l, h);
        h = std::move(br.h);
        if (l < m.cfg.layers && mode == PruneMode::soft) {
            ad::Var s = importance(ex, br.attn);
            ad::Var gate = soft_gate(ex, s, ex.pick(deltas, l - 1, 0), pc.temperature);
            h.values = apply_soft_mask(ex, h.values, gate);
            gates.push_back(gate);
        } else if (l < m.cfg.layers && mode == PruneMode::hard) {
            ad::Var s = importance(ex, br.attn);
            const std::vector<int> keep = hard_mask(ex.value(s), m.delta_at(l));
            if (static_cast<int>(keep.size()) < h.n()) {
                h.values = ex.select_rows(h.values, keep);
                std::vector<int> pos(keep.size());
                for (size_t k = 0; k < keep.size(); ++k) pos[k] = h.positions[keep[k]];
                h.positions = std::move(pos);
            }
        }
    }
    ClassifierOut<TapeExec> out = pool_and_classify(ex, m, h);
    ad::Var loss = ex.tape->cross_entropy(out.logits, e.label);
    if (mode == PruneMode::soft) loss = ex.add(loss, mask_l1_penalty(ex, gates, pc.lambda));
    return loss;
}

} // namespace detail

/// Raw backbone pass collecting the state each exit head consumes (post-mask
/// when pruning is active) plus the detached teacher distribution.
struct BackboneStates {
    std::vector<Hidden<RawExec>> per_layer;  // inputs to exit heads 1..L-1
    Hidden<RawExec> final_state;
    Matrix teacher_probs;
};

inline BackboneStates collect_backbone_states(const Model& m, std::span<const int> ids,
                                              bool hard_pruning) {
    RawExec ex;
    BackboneStates out;
    Hidden<RawExec> h = embed(ex, m, ids);
    for (int l = 1; l <= m.cfg.layers; ++l) {
        BlockResult<RawExec> br = block_forward(ex, m, l, h);
        h = std::move(br.h);
        if (l < m.cfg.layers) {
            if (hard_pruning) {
                const std::vector<int> keep = hard_mask(importance(ex, br.attn), m.delta_at(l));
                if (static_cast<int>(keep.size()) < h.n()) {
                    h.values = ex.select_rows(h.values, keep);
                    std::vector<int> pos(keep.size());
                    for (size_t k = 0; k < keep.size(); ++k) pos[k] = h.positions[keep[k]];
                    h.positions = std::move(pos);
                }
            }
            out.per_layer.push_back(h);
        }
    }
    out.teacher_probs = pool_and_classify(ex, m, h).probs;
    out.final_state = std::move(h);
    return out;
}

// ---- stages -----------------------------------------------------------------------

namespace detail {

inline std::vector<size_t> epoch_order(size_t count, std::mt19937_64& rng) {
    std::vector<size_t> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

/// Shared epoch loop for the three cross-entropy stages.
inline void run_ce_stage(Model& m, const Corpus& data, const TrainPlan& plan, int epochs,
                         PruneMode mode, const char* stage_name, uint64_t rng_seed,
                         const std::vector<ParamTensor*>& trainables, TrainLog& log) {
    if (epochs == 0) return;
    if (data.examples.empty()) throw ConfigError(std::string(stage_name) + ": empty training corpus");
    PruneConfig pc{mode, plan.delta_final, plan.temperature, plan.lambda};
    Adam opt(trainables, plan.lr);
    std::mt19937_64 rng(rng_seed);
    StageLog slog;
    slog.stage = stage_name;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const std::vector<size_t> order = epoch_order(data.examples.size(), rng);
        double loss_sum = 0.0;
        size_t done = 0;
        while (done < order.size()) {
            const size_t batch = std::min<size_t>(plan.batch_size, order.size() - done);
            for (size_t b = 0; b < batch; ++b) {
                const LabeledExample& e = data.examples[order[done + b]];
                ad::Tape tape;
                TapeExec ex(tape);
                ad::Var loss = build_ce_loss(ex, m, e, mode, pc);
                const double lv = tape.value(loss).data[0];
                if (!std::isfinite(lv))
                    throw NumericError(std::string(stage_name) + ": non-finite loss at epoch " +
                                       std::to_string(epoch + 1) + ", example " +
                                       std::to_string(order[done + b]));
                loss_sum += lv;
                tape.backward(ex.scale(loss, 1.0 / batch));
                opt.accumulate(ex);
            }
            opt.step();
            done += batch;
        }
        slog.epoch_loss.push_back(loss_sum / order.size());
    }
    log.stages.push_back(std::move(slog));
}

} // namespace detail

/// Stage 1: plain cross-entropy over backbone + main classifier. No gating,
/// no exit heads.
inline void stage_regular(Model& m, const Corpus& data, const TrainPlan& plan, TrainLog& log) {
    detail::run_ce_stage(m, data, plan, plan.epochs_regular, PruneMode::disabled, "regular",
                         plan.seed + 101, m.params().group({ParamGroup::backbone, ParamGroup::main_head}),
                         log);
}

/// Stage 2: cross-entropy + lambda * L1(gates) with the sigmoid gates active;
/// backbone, main classifier and the thresholds all receive gradients.
inline void stage_soft_prune(Model& m, const Corpus& data, const TrainPlan& plan, TrainLog& log) {
    detail::run_ce_stage(
        m, data, plan, plan.epochs_soft, PruneMode::soft, "soft", plan.seed + 202,
        m.params().group({ParamGroup::backbone, ParamGroup::main_head, ParamGroup::deltas}), log);
}

/// Stage 3: binarized masks drop tokens during the forward pass; thresholds
/// are frozen (never handed to the optimizer), the rest of the model adapts
/// to the retained tokens.
inline void stage_hard_prune(Model& m, const Corpus& data, const TrainPlan& plan, TrainLog& log) {
    detail::run_ce_stage(m, data, plan, plan.epochs_hard, PruneMode::hard, "hard", plan.seed + 303,
                         m.params().group({ParamGroup::backbone, ParamGroup::main_head}), log);
}

/// Stage 4: trains every exit head against the frozen main classifier via the
/// summed KD loss. The teacher pass runs without a tape, so backbone and main
/// classifier can not receive gradients by construction. With mp_mode the
/// hard pruning stays active so heads see the same distributions as at
/// inference time.
inline void stage_subclassifiers(Model& m, const Corpus& data, const TrainPlan& plan, bool mp_mode,
                                 TrainLog& log) {
    if (plan.epochs_sub == 0) return;
    if (data.examples.empty()) throw ConfigError("sub: empty training corpus");
    Adam opt(m.params().group({ParamGroup::sub_head}), plan.lr);
    std::mt19937_64 rng(plan.seed + 404);
    StageLog slog;
    slog.stage = "sub";
    for (int epoch = 0; epoch < plan.epochs_sub; ++epoch) {
        const std::vector<size_t> order = detail::epoch_order(data.examples.size(), rng);
        double loss_sum = 0.0;
        size_t done = 0;
        while (done < order.size()) {
            const size_t batch = std::min<size_t>(plan.batch_size, order.size() - done);
            for (size_t b = 0; b < batch; ++b) {
                const LabeledExample& e = data.examples[order[done + b]];
                const BackboneStates states = collect_backbone_states(m, e.ids, mp_mode);
                ad::Tape tape;
                TapeExec ex(tape);
                std::vector<ad::Var> student_probs;
                student_probs.reserve(states.per_layer.size());
                for (size_t l = 0; l < states.per_layer.size(); ++l) {
                    Hidden<TapeExec> hl;
                    hl.values = ex.constant(states.per_layer[l].values);
                    hl.positions = states.per_layer[l].positions;
                    hl.layer = static_cast<int>(l) + 1;
                    student_probs.push_back(sub_forward(ex, m, hl.layer, hl).probs);
                }
                ad::Var loss = stage2_loss(ex, student_probs, states.teacher_probs);
                const double lv = tape.value(loss).data[0];
                if (!std::isfinite(lv))
                    throw NumericError("sub: non-finite loss at epoch " + std::to_string(epoch + 1));
                loss_sum += lv;
                tape.backward(ex.scale(loss, 1.0 / batch));
                opt.accumulate(ex);
            }
            opt.step();
            done += batch;
        }
        slog.epoch_loss.push_back(loss_sum / order.size());
    }
    log.stages.push_back(std::move(slog));
}

// ---- the full schedule -----------------------------------------------------------

using StageCallback = std::function<void(const std::string& stage, const Model&, const TrainLog&)>;

/// Runs the four stages in their fixed order, skipping any with 0 epochs.
/// Pruning thresholds are initialized from the linear schedule once, before
/// the pruning stages, and only ever move during the soft stage. The callback
/// fires after each executed stage (checkpoint writing lives there).
inline TrainLog run_plan(Model& m, const Corpus& data, const TrainPlan& plan,
                         const StageCallback& on_stage = {}) {
    plan.validate();
    TrainLog log;
    if (plan.epochs_regular > 0) {
        stage_regular(m, data, plan, log);
        if (on_stage) on_stage("regular", m, log);
    }
    if (plan.uses_pruning()) {
        const std::vector<double> sched = threshold_schedule(plan.delta_final, m.cfg.layers);
        for (int l = 0; l < m.cfg.layers; ++l) m.deltas.value(l, 0) = sched[l];
    }
    if (plan.epochs_soft > 0) {
        stage_soft_prune(m, data, plan, log);
        if (on_stage) on_stage("soft", m, log);
    }
    if (plan.epochs_hard > 0) {
        stage_hard_prune(m, data, plan, log);
        if (on_stage) on_stage("hard", m, log);
    }
    if (plan.epochs_sub > 0) {
        stage_subclassifiers(m, data, plan, plan.sub_stage_pruning, log);
        if (on_stage) on_stage("sub", m, log);
    }
    return log;
}

} // namespace taper
