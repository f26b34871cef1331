#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "taper/matrix.hpp"

namespace taper::ad {

struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape over matrix-granularity ops. Each op appends one node
/// holding its forward value and a backward closure; backward() replays the
/// closures in exact reverse order of the forward pass, accumulating adjoints.
/// Tapes are single-use per forward/backward pass and not thread-safe; run
/// distinct passes on distinct tapes.
class Tape {
public:
    const Matrix& value(Var v) const { return nodes_[v.idx].value; }

    /// Leaf with no backward rule (inputs, constants, parameters).
    Var leaf(Matrix m) { return push(std::move(m), nullptr); }

    Matrix& grad(Var v) {
        Node& n = nodes_[v.idx];
        if (n.grad.rows == 0) n.grad = Matrix(n.value.rows, n.value.cols);
        return n.grad;
    }
    bool has_grad(Var v) const { return nodes_[v.idx].grad.rows != 0; }

    /// Seeds d(loss)/d(loss) = 1 and sweeps backward. loss must be 1 x 1.
    void backward(Var loss) {
        const Matrix& lv = value(loss);
        if (lv.rows != 1 || lv.cols != 1) throw ShapeError("backward: loss must be scalar");
        if (!std::isfinite(lv.data[0])) throw NumericError("backward: non-finite loss");
        grad(loss).data[0] = 1.0;
        for (int i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.back && n.grad.rows != 0) n.back(*this);
        }
    }

    size_t node_count() const { return nodes_.size(); }

    // ---- differentiable ops -------------------------------------------

    Var matmul(Var a, Var b) {
        Matrix out = la::matmul(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            la::accum(t.grad(a), la::matmul_nt(g, t.value(b)));
            la::accum(t.grad(b), la::matmul(la::transpose(t.value(a)), g));
        });
    }

    /// a * b^T
    Var matmul_nt(Var a, Var b) {
        Matrix out = la::matmul_nt(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            la::accum(t.grad(a), la::matmul(g, t.value(b)));
            la::accum(t.grad(b), la::matmul(la::transpose(g), t.value(a)));
        });
    }

    Var add(Var a, Var b) {
        Matrix out = la::add(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            la::accum(t.grad(a), g);
            la::accum(t.grad(b), g);
        });
    }

    Var sub(Var a, Var b) {
        Matrix out = la::sub(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            la::accum(t.grad(a), g);
            Matrix& gb = t.grad(b);
            for (int i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
        });
    }

    Var mul(Var a, Var b) {
        Matrix out = la::mul(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            la::accum(t.grad(a), la::mul(g, t.value(b)));
            la::accum(t.grad(b), la::mul(g, t.value(a)));
        });
    }

    Var scale(Var a, double c) {
        Matrix out = la::scale(value(a), c);
        return push(std::move(out), [a, c](Tape& t, Var o) {
            la::accum(t.grad(a), la::scale(t.grad_ro(o), c));
        });
    }

    Var add_row_vec(Var a, Var v) {
        Matrix out = la::add_row_vec(value(a), value(v));
        return push(std::move(out), [a, v](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            la::accum(t.grad(a), g);
            Matrix& gv = t.grad(v);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) gv.data[j] += g(i, j);
        });
    }

    Var row_scale(Var a, Var s) {
        Matrix out = la::row_scale(value(a), value(s));
        return push(std::move(out), [a, s](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            const Matrix& av = t.value(a);
            const Matrix& sv = t.value(s);
            Matrix& ga = t.grad(a);
            Matrix& gs = t.grad(s);
            for (int i = 0; i < g.rows; ++i) {
                double acc = 0.0;
                for (int j = 0; j < g.cols; ++j) {
                    ga(i, j) += g(i, j) * sv.data[i];
                    acc += g(i, j) * av(i, j);
                }
                gs.data[i] += acc;
            }
        });
    }

    Var softmax_rows(Var a) {
        Matrix out = la::softmax_rows(value(a));
        return push(std::move(out), [a](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            const Matrix& y = t.value(o);
            Matrix& ga = t.grad(a);
            for (int i = 0; i < g.rows; ++i) {
                double dot = 0.0;
                for (int j = 0; j < g.cols; ++j) dot += g(i, j) * y(i, j);
                for (int j = 0; j < g.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
            }
        });
    }

    Var layer_norm(Var a, Var gain, Var bias) {
        const Matrix& x = value(a);
        const int d = x.cols;
        // Cache normalized rows and inverse stddevs for the backward rule.
        Matrix xhat(x.rows, d);
        std::vector<double> inv_std(x.rows);
        for (int i = 0; i < x.rows; ++i) {
            double mean = 0.0;
            for (int j = 0; j < d; ++j) mean += x(i, j);
            mean /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                const double c = x(i, j) - mean;
                var += c * c;
            }
            var /= d;
            inv_std[i] = 1.0 / std::sqrt(var + la::kLayerNormEps);
            for (int j = 0; j < d; ++j) xhat(i, j) = (x(i, j) - mean) * inv_std[i];
        }
        Matrix out(x.rows, d);
        const Matrix& gn = value(gain);
        const Matrix& bs = value(bias);
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < d; ++j) out(i, j) = xhat(i, j) * gn.data[j] + bs.data[j];
        la::check_finite(out, "layer_norm");
        return push(std::move(out), [a, gain, bias, xhat = std::move(xhat),
                                     inv_std = std::move(inv_std)](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            const Matrix& gn = t.value(gain);
            Matrix& ga = t.grad(a);
            Matrix& gg = t.grad(gain);
            Matrix& gb = t.grad(bias);
            const int d = g.cols;
            for (int i = 0; i < g.rows; ++i) {
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double dxh = g(i, j) * gn.data[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xhat(i, j);
                    gg.data[j] += g(i, j) * xhat(i, j);
                    gb.data[j] += g(i, j);
                }
                mean_dxh /= d;
                mean_dxh_xh /= d;
                for (int j = 0; j < d; ++j) {
                    const double dxh = g(i, j) * gn.data[j];
                    ga(i, j) += inv_std[i] * (dxh - mean_dxh - xhat(i, j) * mean_dxh_xh);
                }
            }
        });
    }

    Var gelu(Var a) {
        Matrix out = la::gelu(value(a));
        return push(std::move(out), [a](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            const Matrix& x = t.value(a);
            Matrix& ga = t.grad(a);
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (int i = 0; i < g.size(); ++i) {
                const double xv = x.data[i];
                const double cdf = 0.5 * (1.0 + std::erf(xv * M_SQRT1_2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv * xv);
                ga.data[i] += g.data[i] * (cdf + xv * pdf);
            }
        });
    }

    Var tanh_m(Var a) {
        Matrix out = la::tanh_m(value(a));
        return push(std::move(out), [a](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            const Matrix& y = t.value(o);
            Matrix& ga = t.grad(a);
            for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
        });
    }

    Var sigmoid_m(Var a) {
        Matrix out = la::sigmoid_m(value(a));
        return push(std::move(out), [a](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            const Matrix& y = t.value(o);
            Matrix& ga = t.grad(a);
            for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
        });
    }

    Var abs_m(Var a) {
        Matrix out = la::abs_m(value(a));
        return push(std::move(out), [a](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            const Matrix& x = t.value(a);
            Matrix& ga = t.grad(a);
            for (int i = 0; i < g.size(); ++i)
                ga.data[i] += g.data[i] * (x.data[i] > 0.0 ? 1.0 : (x.data[i] < 0.0 ? -1.0 : 0.0));
        });
    }

    Var select_rows(Var a, std::vector<int> idx) {
        Matrix out = la::select_rows(value(a), idx);
        return push(std::move(out), [a, idx = std::move(idx)](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            Matrix& ga = t.grad(a);
            for (size_t k = 0; k < idx.size(); ++k) {
                double* dst = ga.row(idx[k]);
                const double* src = g.row(static_cast<int>(k));
                for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
            }
        });
    }

    Var slice_cols(Var a, int c0, int width) {
        Matrix out = la::slice_cols(value(a), c0, width);
        return push(std::move(out), [a, c0, width](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            Matrix& ga = t.grad(a);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < width; ++j) ga(i, c0 + j) += g(i, j);
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        std::vector<Matrix> vals;
        vals.reserve(parts.size());
        for (Var p : parts) vals.push_back(value(p));
        Matrix out = la::concat_cols(vals);
        return push(std::move(out), [parts](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            int c0 = 0;
            for (Var p : parts) {
                Matrix& gp = t.grad(p);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < gp.cols; ++j) gp(i, j) += g(i, c0 + j);
                c0 += gp.cols;
            }
        });
    }

    Var col_sum(Var a) {
        Matrix out = la::col_sum(value(a));
        return push(std::move(out), [a](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            Matrix& ga = t.grad(a);
            for (int i = 0; i < ga.rows; ++i)
                for (int j = 0; j < ga.cols; ++j) ga(i, j) += g.data[j];
        });
    }

    Var sum_all(Var a) {
        Matrix out(1, 1);
        out.data[0] = la::sum_all(value(a));
        return push(std::move(out), [a](Tape& t, Var o) {
            const double g = t.grad_ro(o).data[0];
            Matrix& ga = t.grad(a);
            for (double& v : ga.data) v += g;
        });
    }

    Var mean_all(Var a) {
        const int n = value(a).size();
        Matrix out(1, 1);
        out.data[0] = la::sum_all(value(a)) / n;
        return push(std::move(out), [a, n](Tape& t, Var o) {
            const double g = t.grad_ro(o).data[0] / n;
            Matrix& ga = t.grad(a);
            for (double& v : ga.data) v += g;
        });
    }

    /// One element of a as a 1 x 1 scalar.
    Var pick(Var a, int r, int c) {
        Matrix out(1, 1);
        out.data[0] = value(a)(r, c);
        return push(std::move(out), [a, r, c](Tape& t, Var o) {
            t.grad(a)(r, c) += t.grad_ro(o).data[0];
        });
    }

    /// Broadcast-subtract a 1 x 1 scalar from every element of a.
    Var sub_scalar(Var a, Var s) {
        const Matrix& sv = value(s);
        if (sv.rows != 1 || sv.cols != 1) throw ShapeError("sub_scalar: scalar must be 1x1");
        Matrix out = value(a);
        for (double& v : out.data) v -= sv.data[0];
        return push(std::move(out), [a, s](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            la::accum(t.grad(a), g);
            double acc = 0.0;
            for (double v : g.data) acc += v;
            t.grad(s).data[0] -= acc;
        });
    }

    /// Copies a (n x 1) gate vector, forcing element 0 to exactly 1. No
    /// gradient flows into element 0; the rest pass through unchanged.
    Var exempt_first(Var a) {
        Matrix out = value(a);
        if (out.cols != 1) throw ShapeError("exempt_first: expects n x 1 vector");
        out.data[0] = 1.0;
        return push(std::move(out), [a](Tape& t, Var o) {
            const Matrix& g = t.grad_ro(o);
            Matrix& ga = t.grad(a);
            for (int i = 1; i < g.rows; ++i) ga.data[i] += g.data[i];
        });
    }

    /// -log softmax(logits)[label] for a 1 x N logits row, computed via the
    /// max-shifted log-sum-exp so extreme logits stay stable.
    Var cross_entropy(Var logits, int label) {
        const Matrix& z = value(logits);
        if (z.rows != 1) throw ShapeError("cross_entropy: logits must be a single row");
        if (label < 0 || label >= z.cols) throw ShapeError("cross_entropy: label out of range");
        double mx = z.data[0];
        for (int j = 1; j < z.cols; ++j) mx = std::max(mx, z.data[j]);
        double sum = 0.0;
        for (int j = 0; j < z.cols; ++j) sum += std::exp(z.data[j] - mx);
        Matrix out(1, 1);
        out.data[0] = std::log(sum) + mx - z.data[label];
        return push(std::move(out), [logits, label](Tape& t, Var o) {
            const double g = t.grad_ro(o).data[0];
            const Matrix p = la::softmax_rows(t.value(logits));
            Matrix& gl = t.grad(logits);
            for (int j = 0; j < p.cols; ++j)
                gl.data[j] += g * (p.data[j] - (j == label ? 1.0 : 0.0));
        });
    }

    /// KL(p || q_const) with the constant (detached) distribution in the
    /// second slot, clamped at 1e-12 before the division. p must be a valid
    /// distribution (rows of a softmax); zero entries contribute zero.
    Var kl_to_const(Var p, Matrix q) {
        const Matrix& pv = value(p);
        if (!pv.same_shape(q)) throw ShapeError("kl_to_const: shape mismatch");
        constexpr double clamp = 1e-12;
        double acc = 0.0;
        for (int i = 0; i < pv.size(); ++i) {
            const double pi = pv.data[i];
            if (pi > 0.0) acc += pi * std::log(pi / std::max(q.data[i], clamp));
        }
        Matrix out(1, 1);
        out.data[0] = acc;
        return push(std::move(out), [p, q = std::move(q)](Tape& t, Var o) {
            const double g = t.grad_ro(o).data[0];
            const Matrix& pv = t.value(p);
            Matrix& gp = t.grad(p);
            for (int i = 0; i < pv.size(); ++i) {
                const double pi = std::max(pv.data[i], 1e-300);
                gp.data[i] += g * (std::log(pi / std::max(q.data[i], 1e-12)) + 1.0);
            }
        });
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&)> back;
    };

    const Matrix& grad_ro(Var v) const { return nodes_[v.idx].grad; }

    Var push(Matrix value, std::function<void(Tape&, Var)> back) {
        Var v{static_cast<int>(nodes_.size())};
        Node n;
        n.value = std::move(value);
        if (back) n.back = [fn = std::move(back), v](Tape& t) { fn(t, v); };
        nodes_.push_back(std::move(n));
        return v;
    }

    std::vector<Node> nodes_;
};

} // namespace taper::ad
