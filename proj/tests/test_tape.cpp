#include <catch2/catch.hpp>

#include <random>

#include "taper/gradcheck.hpp"
#include "taper/pruning.hpp"

using namespace taper;

namespace {

std::mt19937_64& rng() {
    static std::mt19937_64 g(2024);
    return g;
}

Matrix random_matrix(int r, int c, double lo = -1.5, double hi = 1.5) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(r, c);
    for (double& v : m.data) v = dist(rng());
    return m;
}

ParamTensor make_param(const char* name, Matrix value) {
    return ParamTensor{name, std::move(value), ParamGroup::backbone};
}

/// Reduces any matrix output to a scalar with fixed random weights so every
/// element influences the loss differently.
ad::Var weighted_sum(TapeExec& ex, ad::Var x, const Matrix& w) {
    return ex.sum_all(ex.mul(x, ex.constant(w)));
}

double max_fd_error(const std::vector<ParamTensor*>& ps,
                    const std::function<ad::Var(TapeExec&)>& loss) {
    return grad_check(ps, loss, 1e-4).max_rel_err;
}

} // namespace

TEST_CASE("quadratic loss gradient is analytic 2W") {
    ParamTensor w = make_param("w", random_matrix(3, 4));
    const auto loss = [&](TapeExec& ex) {
        ad::Var v = ex.param(w);
        return ex.sum_all(ex.mul(v, v));
    };
    // Central FD is exact for quadratics, so this bound is tight.
    REQUIRE(max_fd_error({&w}, loss) < 1e-8);
    ad::Tape tape;
    TapeExec ex(tape);
    tape.backward(loss(ex));
    const Matrix* g = ex.grad_of(w);
    REQUIRE(g != nullptr);
    for (int i = 0; i < g->size(); ++i)
        REQUIRE(g->data[i] == Approx(2.0 * w.value.data[i]).epsilon(1e-12));
}

TEST_CASE("matmul family gradients match finite differences") {
    ParamTensor a = make_param("a", random_matrix(3, 4));
    ParamTensor b = make_param("b", random_matrix(4, 2));
    const Matrix w = random_matrix(3, 2);
    REQUIRE(max_fd_error({&a, &b}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.matmul(ex.param(a), ex.param(b)), w);
            }) < 1e-6);

    ParamTensor c = make_param("c", random_matrix(5, 4));
    const Matrix w2 = random_matrix(3, 5);
    REQUIRE(max_fd_error({&a, &c}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.matmul_nt(ex.param(a), ex.param(c)), w2);
            }) < 1e-6);
}

TEST_CASE("elementwise op gradients match finite differences") {
    ParamTensor a = make_param("a", random_matrix(3, 3));
    ParamTensor b = make_param("b", random_matrix(3, 3));
    const Matrix w = random_matrix(3, 3);
    const std::vector<ParamTensor*> ps{&a, &b};

    REQUIRE(max_fd_error(ps, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.add(ex.param(a), ex.param(b)), w);
            }) < 1e-6);
    REQUIRE(max_fd_error(ps, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.sub(ex.param(a), ex.param(b)), w);
            }) < 1e-6);
    REQUIRE(max_fd_error(ps, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.mul(ex.param(a), ex.param(b)), w);
            }) < 1e-6);
    REQUIRE(max_fd_error({&a}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.scale(ex.param(a), -2.5), w);
            }) < 1e-6);
}

TEST_CASE("broadcast and row ops gradients") {
    ParamTensor x = make_param("x", random_matrix(4, 3));
    ParamTensor bias = make_param("bias", random_matrix(1, 3));
    ParamTensor gates = make_param("gates", random_matrix(4, 1, 0.1, 0.9));
    const Matrix w = random_matrix(4, 3);

    REQUIRE(max_fd_error({&x, &bias}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.add_row_vec(ex.param(x), ex.param(bias)), w);
            }) < 1e-6);
    REQUIRE(max_fd_error({&x, &gates}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.row_scale(ex.param(x), ex.param(gates)), w);
            }) < 1e-6);
}

TEST_CASE("softmax, layernorm and activation gradients") {
    ParamTensor x = make_param("x", random_matrix(3, 5));
    ParamTensor gain = make_param("gain", random_matrix(1, 5, 0.5, 1.5));
    ParamTensor bias = make_param("bias", random_matrix(1, 5));
    const Matrix w = random_matrix(3, 5);

    REQUIRE(max_fd_error({&x}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.softmax_rows(ex.param(x)), w);
            }) < 1e-4);
    REQUIRE(max_fd_error({&x, &gain, &bias}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.layer_norm(ex.param(x), ex.param(gain), ex.param(bias)), w);
            }) < 1e-4);
    REQUIRE(max_fd_error({&x}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.gelu(ex.param(x)), w);
            }) < 1e-5);
    REQUIRE(max_fd_error({&x}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.tanh_m(ex.param(x)), w);
            }) < 1e-5);
    REQUIRE(max_fd_error({&x}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.sigmoid_m(ex.param(x)), w);
            }) < 1e-5);
}

TEST_CASE("abs gradient away from the kink") {
    Matrix v = random_matrix(3, 3);
    for (double& e : v.data) e += (e >= 0 ? 0.5 : -0.5);
    ParamTensor x = make_param("x", std::move(v));
    const Matrix w = random_matrix(3, 3);
    REQUIRE(max_fd_error({&x}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.abs_m(ex.param(x)), w);
            }) < 1e-6);
}

TEST_CASE("row gather scatter-accumulates gradients for repeated rows") {
    ParamTensor table = make_param("table", random_matrix(5, 3));
    const Matrix w = random_matrix(4, 3);
    REQUIRE(max_fd_error({&table}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.select_rows(ex.param(table), {0, 2, 0, 4}), w);
            }) < 1e-6);
}

TEST_CASE("slice, concat and column-sum gradients") {
    ParamTensor x = make_param("x", random_matrix(3, 6));
    const Matrix w = random_matrix(3, 2);
    REQUIRE(max_fd_error({&x}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.slice_cols(ex.param(x), 2, 2), w);
            }) < 1e-6);

    ParamTensor y = make_param("y", random_matrix(3, 2));
    const Matrix w2 = random_matrix(3, 8);
    REQUIRE(max_fd_error({&x, &y}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.concat_cols({ex.param(y), ex.param(x)}), w2);
            }) < 1e-6);

    const Matrix w3 = random_matrix(6, 1);
    REQUIRE(max_fd_error({&x}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.col_sum(ex.param(x)), w3);
            }) < 1e-6);
}

TEST_CASE("scalar plumbing gradients: pick, sub_scalar, exempt_first, mean") {
    ParamTensor s = make_param("s", random_matrix(5, 1, 0.0, 1.0));
    ParamTensor d = make_param("d", random_matrix(1, 1, 0.2, 0.8));
    const Matrix w = random_matrix(5, 1);

    REQUIRE(max_fd_error({&s, &d}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.sub_scalar(ex.param(s), ex.param(d)), w);
            }) < 1e-6);
    REQUIRE(max_fd_error({&s}, [&](TapeExec& ex) {
                return weighted_sum(ex, ex.exempt_first(ex.param(s)), w);
            }) < 1e-6);
    REQUIRE(max_fd_error({&s}, [&](TapeExec& ex) { return ex.mean_all(ex.param(s)); }) < 1e-8);
    ParamTensor m = make_param("m", random_matrix(3, 3));
    REQUIRE(max_fd_error({&m}, [&](TapeExec& ex) {
                return ex.scale(ex.pick(ex.param(m), 1, 2), 3.0);
            }) < 1e-8);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    ParamTensor logits = make_param("logits", random_matrix(1, 4, -2.0, 2.0));
    for (int label = 0; label < 4; ++label) {
        REQUIRE(max_fd_error({&logits}, [&](TapeExec& ex) {
                    return ex.tape->cross_entropy(ex.param(logits), label);
                }) < 1e-6);
    }
}

TEST_CASE("kl against a detached teacher, through softmax") {
    ParamTensor z = make_param("z", random_matrix(1, 4, -1.0, 1.0));
    const Matrix q = la::softmax_rows(random_matrix(1, 4, -1.0, 1.0));
    REQUIRE(max_fd_error({&z}, [&](TapeExec& ex) {
                return ex.tape->kl_to_const(ex.softmax_rows(ex.param(z)), q);
            }) < 1e-5);
}

TEST_CASE("single soft-gate layer loss gradient") {
    // Gate a hidden-state block by sigma((s - delta)/T) and sum, in the
    // smooth test-regime temperature.
    ParamTensor h = make_param("h", random_matrix(5, 4));
    ParamTensor s = make_param("s", random_matrix(5, 1, 0.05, 0.4));
    ParamTensor delta = make_param("delta", Matrix(1, 1, {0.2}));
    const auto loss = [&](TapeExec& ex) {
        ad::Var gate = soft_gate(ex, ex.param(s), ex.param(delta), 0.01);
        return ex.sum_all(apply_soft_mask(ex, ex.param(h), gate));
    };
    REQUIRE(max_fd_error({&h, &s, &delta}, loss) < 1e-4);
}

TEST_CASE("grad_check validates its inputs") {
    ParamTensor w = make_param("w", random_matrix(2, 2));
    const auto quad = [&](TapeExec& ex) {
        ad::Var v = ex.param(w);
        return ex.sum_all(ex.mul(v, v));
    };
    REQUIRE_THROWS_AS(grad_check({&w}, quad, 1e-2), ConfigError);
    const auto bad = [&](TapeExec& ex) {
        ad::Var v = ex.param(w);
        return ex.scale(ex.sum_all(ex.mul(v, v)), std::numeric_limits<double>::quiet_NaN());
    };
    REQUIRE_THROWS_AS(grad_check({&w}, bad), NumericError);
}
