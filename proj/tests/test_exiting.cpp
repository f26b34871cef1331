#include <catch2/catch.hpp>

#include <cmath>
#include <random>

#include "taper/exiting.hpp"
#include "taper/pipeline.hpp"

using namespace taper;

namespace {

std::mt19937_64& rng() {
    static std::mt19937_64 g(271);
    return g;
}

Matrix random_distribution(int n) {
    std::uniform_real_distribution<double> dist(0.01, 1.0);
    Matrix p(1, n);
    double sum = 0.0;
    for (double& v : p.data) {
        v = dist(rng());
        sum += v;
    }
    for (double& v : p.data) v /= sum;
    return p;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.layers = 3;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.ffn = 16;
    cfg.classes = 4;
    cfg.vocab = 16;
    cfg.max_len = 10;
    cfg.sub_hidden = 4;
    return cfg;
}

} // namespace

TEST_CASE("uncertainty endpoints") {
    // Uniform at N=2 is exact by IEEE arithmetic; one-hot is exact for any N.
    REQUIRE(uncertainty(Matrix(1, 2, {0.5, 0.5}), 2) == 1.0);
    for (int n = 2; n <= 8; ++n) {
        Matrix onehot(1, n);
        onehot.data[0] = 1.0;
        REQUIRE(uncertainty(onehot, n) == 0.0);
        REQUIRE(uncertainty(Matrix::filled(1, n, 1.0 / n), n) == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("uncertainty reference value for (0.9, 0.1)") {
    const double u = uncertainty(Matrix(1, 2, {0.9, 0.1}), 2);
    REQUIRE(std::fabs(u - 0.4690) < 1e-3);
    REQUIRE(u == Approx(0.46899559358928134).epsilon(1e-10));
}

TEST_CASE("uncertainty stays in [0,1] and zero entries contribute nothing") {
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 6;
        const Matrix p = random_distribution(n);
        const double u = uncertainty(p, n);
        REQUIRE(u >= 0.0);
        REQUIRE(u <= 1.0);
    }
    REQUIRE(uncertainty(Matrix(1, 3, {0.5, 0.5, 0.0}), 3) ==
            Approx(uncertainty(Matrix(1, 2, {0.5, 0.5}), 3)).margin(1e-15));
}

TEST_CASE("should_exit is boundary inclusive") {
    REQUIRE(should_exit(0.3, 0.5));
    REQUIRE(should_exit(0.5, 0.5));  // u == tau exits
    REQUIRE_FALSE(should_exit(0.51, 0.5));
    REQUIRE_FALSE(should_exit(0.2, 0.0));  // tau = 0 with non-degenerate p never exits
    REQUIRE(should_exit(0.0, 0.0));
}

TEST_CASE("kd loss reference values and non-negativity") {
    const Matrix p(1, 2, {0.5, 0.5});
    const Matrix q(1, 2, {0.9, 0.1});
    REQUIRE(kd_loss(p, p) == 0.0);
    REQUIRE(std::fabs(kd_loss(p, q) - 0.5108) < 1e-3);
    REQUIRE(kd_loss(p, q) == Approx(0.5108256237659907).epsilon(1e-10));

    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 5;
        const Matrix a = random_distribution(n);
        const Matrix b = random_distribution(n);
        const double kl = kd_loss(a, b);
        REQUIRE(kl >= 0.0);
        if (kl < 1e-9) {
            for (int i = 0; i < n; ++i) REQUIRE(a.data[i] == Approx(b.data[i]).margin(1e-4));
        }
        REQUIRE(kd_loss(a, a) == 0.0);
    }
}

TEST_CASE("sub_forward emits a proper distribution") {
    Model m(tiny_config(), 3);
    RawExec ex;

    SECTION("zero projector weights give uniform") {
        std::fill(m.subs[0].head.proj_w.value.data.begin(), m.subs[0].head.proj_w.value.data.end(), 0.0);
        std::fill(m.subs[0].head.proj_b.value.data.begin(), m.subs[0].head.proj_b.value.data.end(), 0.0);
        Hidden<RawExec> h = embed(ex, m, std::vector<int>{3, 5, 7});
        h = block_forward(ex, m, 1, h).h;
        const ClassifierOut<RawExec> out = sub_forward(ex, m, 1, h);
        for (double v : out.probs.data) REQUIRE(v == Approx(0.25).margin(1e-12));
    }

    SECTION("works on the [CLS]-only degenerate state and always sums to 1") {
        Hidden<RawExec> h = embed(ex, m, std::span<const int>{});
        h = block_forward(ex, m, 1, h).h;
        const ClassifierOut<RawExec> out = sub_forward(ex, m, 1, h);
        double sum = 0.0;
        for (double v : out.probs.data) {
            REQUIRE(v >= 0.0);
            sum += v;
        }
        REQUIRE(std::fabs(sum - 1.0) < 1e-9);

        REQUIRE_THROWS_AS(sub_forward(ex, m, 3, h), ConfigError);  // no head after the last layer
    }
}

TEST_CASE("stage2 loss is the sum of per-head kd losses") {
    const Model m(tiny_config(), 9);
    const std::vector<int> ids{2, 4, 6, 8};
    const BackboneStates states = collect_backbone_states(m, ids, false);
    REQUIRE(states.per_layer.size() == 2);

    ad::Tape tape;
    TapeExec ex(tape);
    std::vector<ad::Var> students;
    std::vector<double> individual;
    for (size_t l = 0; l < states.per_layer.size(); ++l) {
        Hidden<TapeExec> hl;
        hl.values = ex.constant(states.per_layer[l].values);
        hl.positions = states.per_layer[l].positions;
        hl.layer = static_cast<int>(l) + 1;
        ad::Var probs = sub_forward(ex, m, hl.layer, hl).probs;
        students.push_back(probs);
        individual.push_back(kd_loss(ex.value(probs), states.teacher_probs));
    }
    const ad::Var total = stage2_loss(ex, students, states.teacher_probs);
    REQUIRE(ex.value(total).data[0] ==
            Approx(individual[0] + individual[1]).margin(1e-12));

    SECTION("zero when every student equals the teacher") {
        ad::Tape t2;
        TapeExec e2(t2);
        std::vector<ad::Var> same{e2.constant(states.teacher_probs), e2.constant(states.teacher_probs)};
        REQUIRE(e2.value(stage2_loss(e2, same, states.teacher_probs)).data[0] == 0.0);
    }

    SECTION("no gradient reaches backbone or main classifier") {
        tape.backward(total);
        for (const ParamTensor* p : m.params().all()) {
            const Matrix* g = ex.grad_of(*p);
            if (p->group == ParamGroup::backbone || p->group == ParamGroup::main_head ||
                p->group == ParamGroup::deltas) {
                // The teacher pass ran without a tape: these tensors never
                // even entered the graph.
                REQUIRE(g == nullptr);
            }
        }
        // And the heads did get gradients.
        const Matrix* g = ex.grad_of(m.subs[0].head.proj_w);
        REQUIRE(g != nullptr);
        double norm = 0.0;
        for (double v : g->data) norm += std::fabs(v);
        REQUIRE(norm > 0.0);
    }
}

TEST_CASE("exit state invariants under a synthetic uncertainty sequence") {
    // Exit layer is the first crossing; raising tau can only move it earlier.
    const std::vector<double> u{0.9, 0.55, 0.3, 0.1};
    auto exit_layer = [&](double tau) {
        for (size_t l = 0; l < u.size(); ++l)
            if (should_exit(u[l], tau)) return static_cast<int>(l) + 1;
        return static_cast<int>(u.size()) + 1;
    };
    int prev = exit_layer(0.0);
    for (double tau = 0.1; tau <= 1.0; tau += 0.1) {
        const int cur = exit_layer(tau);
        REQUIRE(cur <= prev);
        prev = cur;
    }
    REQUIRE(exit_layer(1.0) == 1);
}
