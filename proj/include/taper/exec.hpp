#pragma once

#include <unordered_map>
#include <vector>

#include "taper/matrix.hpp"
#include "taper/params.hpp"
#include "taper/tape.hpp"

namespace taper {

// The model's forward functions are templates over an executor. RawExec runs
// plain kernels on Matrix values (inference); TapeExec runs the same kernels
// through the tape and records gradient ops. Both expose the identical
// surface so a single definition of the architecture serves both paths, with
// identical arithmetic order.

struct RawExec {
    using V = Matrix;

    const Matrix& value(const V& v) const { return v; }
    V constant(Matrix m) const { return m; }
    V param(const ParamTensor& p) const { return p.value; }

    V matmul(const V& a, const V& b) const { return la::matmul(a, b); }
    V matmul_nt(const V& a, const V& b) const { return la::matmul_nt(a, b); }
    V add(const V& a, const V& b) const { return la::add(a, b); }
    V sub(const V& a, const V& b) const { return la::sub(a, b); }
    V mul(const V& a, const V& b) const { return la::mul(a, b); }
    V scale(const V& a, double c) const { return la::scale(a, c); }
    V add_row_vec(const V& a, const V& v) const { return la::add_row_vec(a, v); }
    V row_scale(const V& a, const V& s) const { return la::row_scale(a, s); }
    V softmax_rows(const V& a) const { return la::softmax_rows(a); }
    V layer_norm(const V& a, const V& g, const V& b) const { return la::layer_norm(a, g, b); }
    V gelu(const V& a) const { return la::gelu(a); }
    V tanh_m(const V& a) const { return la::tanh_m(a); }
    V sigmoid_m(const V& a) const { return la::sigmoid_m(a); }
    V abs_m(const V& a) const { return la::abs_m(a); }
    V select_rows(const V& a, const std::vector<int>& idx) const { return la::select_rows(a, idx); }
    V slice_cols(const V& a, int c0, int w) const { return la::slice_cols(a, c0, w); }
    V concat_cols(const std::vector<V>& parts) const { return la::concat_cols(parts); }
    V col_sum(const V& a) const { return la::col_sum(a); }
    V sum_all(const V& a) const {
        Matrix m(1, 1);
        m.data[0] = la::sum_all(a);
        return m;
    }
    V mean_all(const V& a) const {
        Matrix m(1, 1);
        m.data[0] = la::sum_all(a) / a.size();
        return m;
    }
    V pick(const V& a, int r, int c) const {
        Matrix m(1, 1);
        m.data[0] = a(r, c);
        return m;
    }
    V sub_scalar(const V& a, const V& s) const {
        Matrix out = a;
        for (double& v : out.data) v -= s.data[0];
        return out;
    }
    V exempt_first(const V& a) const {
        Matrix out = a;
        out.data[0] = 1.0;
        return out;
    }
};

struct TapeExec {
    using V = ad::Var;

    explicit TapeExec(ad::Tape& t) : tape(&t) {}

    ad::Tape* tape;
    std::unordered_map<const ParamTensor*, ad::Var> registered;

    const Matrix& value(V v) const { return tape->value(v); }
    V constant(Matrix m) { return tape->leaf(std::move(m)); }

    /// Registers a parameter as a leaf once per tape; later uses share the
    /// node so adjoints accumulate across all uses.
    V param(const ParamTensor& p) {
        auto it = registered.find(&p);
        if (it != registered.end()) return it->second;
        V v = tape->leaf(p.value);
        registered.emplace(&p, v);
        return v;
    }

    /// Gradient of the last backward() pass w.r.t. p, or nullptr if p never
    /// entered the graph (its gradient is identically zero).
    const Matrix* grad_of(const ParamTensor& p) const {
        auto it = registered.find(&p);
        if (it == registered.end()) return nullptr;
        if (!tape->has_grad(it->second)) return nullptr;
        return &tape->grad(it->second);
    }

    V matmul(V a, V b) { return tape->matmul(a, b); }
    V matmul_nt(V a, V b) { return tape->matmul_nt(a, b); }
    V add(V a, V b) { return tape->add(a, b); }
    V sub(V a, V b) { return tape->sub(a, b); }
    V mul(V a, V b) { return tape->mul(a, b); }
    V scale(V a, double c) { return tape->scale(a, c); }
    V add_row_vec(V a, V v) { return tape->add_row_vec(a, v); }
    V row_scale(V a, V s) { return tape->row_scale(a, s); }
    V softmax_rows(V a) { return tape->softmax_rows(a); }
    V layer_norm(V a, V g, V b) { return tape->layer_norm(a, g, b); }
    V gelu(V a) { return tape->gelu(a); }
    V tanh_m(V a) { return tape->tanh_m(a); }
    V sigmoid_m(V a) { return tape->sigmoid_m(a); }
    V abs_m(V a) { return tape->abs_m(a); }
    V select_rows(V a, const std::vector<int>& idx) { return tape->select_rows(a, idx); }
    V slice_cols(V a, int c0, int w) { return tape->slice_cols(a, c0, w); }
    V concat_cols(const std::vector<V>& parts) { return tape->concat_cols(parts); }
    V col_sum(V a) { return tape->col_sum(a); }
    V sum_all(V a) { return tape->sum_all(a); }
    V mean_all(V a) { return tape->mean_all(a); }
    V pick(V a, int r, int c) { return tape->pick(a, r, c); }
    V sub_scalar(V a, V s) { return tape->sub_scalar(a, s); }
    V exempt_first(V a) { return tape->exempt_first(a); }
};

} // namespace taper
