#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "taper/errors.hpp"

namespace taper {

/// Dense row-major matrix of doubles. The one value type everything else is
/// built from; vectors are n x 1 (columns) or 1 x n (rows) as noted per use.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
    Matrix(int r, int c, std::initializer_list<double> init) : rows(r), cols(c), data(init) {
        if (static_cast<int>(data.size()) != r * c) throw ShapeError("Matrix init list size mismatch");
    }

    static Matrix filled(int r, int c, double v) {
        Matrix m(r, c);
        std::fill(m.data.begin(), m.data.end(), v);
        return m;
    }
    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    int size() const { return rows * cols; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool empty() const { return rows == 0 || cols == 0; }
};

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::equal(a.data.begin(), a.data.end(), b.data.begin());
}

// Raw kernels. Pure functions of their inputs; every kernel that can produce
// non-finite values verifies its output and throws NumericError.
namespace la {

inline void check_finite(const Matrix& m, const char* op) {
    for (double v : m.data) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dims " + std::to_string(a.cols) + " vs " + std::to_string(b.rows));
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        double* o = out.row(i);
        const double* ar = a.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            const double* br = b.row(k);
            for (int j = 0; j < b.cols; ++j) o[j] += aik * br[j];
        }
    }
    check_finite(out, "matmul");
    return out;
}

/// a * b^T without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw ShapeError("matmul_nt: inner dims " + std::to_string(a.cols) + " vs " + std::to_string(b.cols));
    Matrix out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* o = out.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* br = b.row(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
            o[j] = acc;
        }
    }
    check_finite(out, "matmul_nt");
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
    Matrix out = a;
    for (int i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    check_finite(out, "add");
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("sub: shape mismatch");
    Matrix out = a;
    for (int i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
    check_finite(out, "sub");
    return out;
}

inline Matrix mul(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("mul: shape mismatch");
    Matrix out = a;
    for (int i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
    check_finite(out, "mul");
    return out;
}

inline Matrix scale(const Matrix& a, double c) {
    Matrix out = a;
    for (double& v : out.data) v *= c;
    check_finite(out, "scale");
    return out;
}

/// Adds a 1 x c row vector to every row.
inline Matrix add_row_vec(const Matrix& a, const Matrix& v) {
    if (v.rows != 1 || v.cols != a.cols) throw ShapeError("add_row_vec: vector shape mismatch");
    Matrix out = a;
    for (int i = 0; i < a.rows; ++i) {
        double* o = out.row(i);
        for (int j = 0; j < a.cols; ++j) o[j] += v.data[j];
    }
    check_finite(out, "add_row_vec");
    return out;
}

/// Scales row i of a by s(i, 0); s is n x 1.
inline Matrix row_scale(const Matrix& a, const Matrix& s) {
    if (s.cols != 1 || s.rows != a.rows) throw ShapeError("row_scale: scale vector shape mismatch");
    Matrix out = a;
    for (int i = 0; i < a.rows; ++i) {
        double* o = out.row(i);
        const double f = s.data[i];
        for (int j = 0; j < a.cols; ++j) o[j] *= f;
    }
    check_finite(out, "row_scale");
    return out;
}

/// Row-wise softmax, stabilized by per-row max subtraction. Each output row
/// is non-negative and sums to 1.
inline Matrix softmax_rows(const Matrix& a) {
    Matrix out(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* x = a.row(i);
        double* y = out.row(i);
        double mx = x[0];
        for (int j = 1; j < a.cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < a.cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < a.cols; ++j) y[j] /= sum;
    }
    check_finite(out, "softmax_rows");
    return out;
}

constexpr double kLayerNormEps = 1e-5;

/// Per-row standardization (biased variance, epsilon 1e-5 inside the sqrt)
/// followed by the elementwise affine gain/bias. gain and bias are 1 x cols.
inline Matrix layer_norm(const Matrix& a, const Matrix& gain, const Matrix& bias) {
    if (gain.rows != 1 || gain.cols != a.cols || bias.rows != 1 || bias.cols != a.cols)
        throw ShapeError("layer_norm: gain/bias length must equal cols");
    Matrix out(a.rows, a.cols);
    const int d = a.cols;
    for (int i = 0; i < a.rows; ++i) {
        const double* x = a.row(i);
        double* y = out.row(i);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += x[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = x[j] - mean;
            var += c * c;
        }
        var /= d;
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        for (int j = 0; j < d; ++j) y[j] = (x[j] - mean) * inv_std * gain.data[j] + bias.data[j];
    }
    check_finite(out, "layer_norm");
    return out;
}

/// Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2))).
inline Matrix gelu(const Matrix& a) {
    Matrix out = a;
    for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
    check_finite(out, "gelu");
    return out;
}

inline Matrix tanh_m(const Matrix& a) {
    Matrix out = a;
    for (double& v : out.data) v = std::tanh(v);
    return out;
}

inline Matrix sigmoid_m(const Matrix& a) {
    Matrix out = a;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    check_finite(out, "sigmoid");
    return out;
}

inline Matrix abs_m(const Matrix& a) {
    Matrix out = a;
    for (double& v : out.data) v = std::fabs(v);
    return out;
}

inline Matrix select_rows(const Matrix& a, const std::vector<int>& idx) {
    Matrix out(static_cast<int>(idx.size()), a.cols);
    for (size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= a.rows) throw ShapeError("select_rows: index out of range");
        std::copy(a.row(idx[k]), a.row(idx[k]) + a.cols, out.row(static_cast<int>(k)));
    }
    return out;
}

inline Matrix slice_cols(const Matrix& a, int c0, int width) {
    if (c0 < 0 || c0 + width > a.cols) throw ShapeError("slice_cols: range out of bounds");
    Matrix out(a.rows, width);
    for (int i = 0; i < a.rows; ++i) std::copy(a.row(i) + c0, a.row(i) + c0 + width, out.row(i));
    return out;
}

inline Matrix concat_cols(const std::vector<Matrix>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty");
    int total = 0;
    for (const Matrix& p : parts) {
        if (p.rows != parts[0].rows) throw ShapeError("concat_cols: row mismatch");
        total += p.cols;
    }
    Matrix out(parts[0].rows, total);
    for (int i = 0; i < out.rows; ++i) {
        double* o = out.row(i);
        for (const Matrix& p : parts) {
            std::copy(p.row(i), p.row(i) + p.cols, o);
            o += p.cols;
        }
    }
    return out;
}

/// Column sums as a cols x 1 vector.
inline Matrix col_sum(const Matrix& a) {
    Matrix out(a.cols, 1);
    for (int i = 0; i < a.rows; ++i) {
        const double* r = a.row(i);
        for (int j = 0; j < a.cols; ++j) out.data[j] += r[j];
    }
    return out;
}

inline double sum_all(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v;
    return s;
}

/// dst += src, shapes must already match.
inline void accum(Matrix& dst, const Matrix& src) {
    for (int i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

inline int argmax_row(const Matrix& a, int r = 0) {
    int best = 0;
    for (int j = 1; j < a.cols; ++j)
        if (a(r, j) > a(r, best)) best = j;
    return best;
}

} // namespace la
} // namespace taper
