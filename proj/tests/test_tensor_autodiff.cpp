#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "flowinfer/errors.hpp"
#include "flowinfer/rng.hpp"
#include "flowinfer/tape.hpp"
#include "flowinfer/tensor.hpp"

using namespace flowinfer;

namespace {

Tensor random_tensor(Rng& rng, const Shape& s, double lo, double hi) {
    Tensor t = Tensor::zeros(s);
    for (auto& v : t.data) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
    return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("matmul: identity, dot product, shape error") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    CHECK(bit_equal(matmul(a, Tensor::eye(2)), a));

    Tensor b({2, 1}, {5, 6});
    Tensor c = matmul(a, b);
    CHECK(c.shape == Shape{2, 1});
    CHECK(c.at(0, 0) == 17.0f);
    CHECK(c.at(1, 0) == 39.0f);

    Tensor bad({2, 3}, {0, 0, 0, 0, 0, 0});
    Tensor bad2({2, 2}, {0, 0, 0, 0});
    CHECK_THROWS_WITH_AS(matmul(bad, bad2),
                         doctest::Contains("[2x3]"), ShapeError);
    try {
        matmul(bad, bad2);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul adjoints: d/da = g b^T, d/db = a^T g") {
    Tape tape;
    Tensor at({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor bt({3, 2}, {1, 0, 0, 1, 1, 1});
    Val a = tape.leaf(at);
    Val b = tape.leaf(bt);
    Val y = sum_all(matmul(a, b));
    auto g = tape.gradients(y, {a, b});
    // g of sum is ones[2x2]; da = ones * b^T -> row sums of b per column
    Tensor bT = transpose(bt);
    Tensor expect_a = matmul(Tensor::full({2, 2}, 1.0f), bT);
    Tensor expect_b = matmul(transpose(at), Tensor::full({2, 2}, 1.0f));
    CHECK(bit_equal(g[0], expect_a));
    CHECK(bit_equal(g[1], expect_b));
}

TEST_CASE("elementwise: values and adjoints") {
    SUBCASE("tanh(0) -> 0 with adjoint 1") {
        Tape tape;
        Val x = tape.leaf(Tensor::scalar(0.0f));
        Val y = tanh(x);
        CHECK(value(y).at(0) == 0.0f);
        auto g = tape.gradients(sum_all(y), {x});
        CHECK(g[0].at(0) == 1.0f);
    }
    SUBCASE("softplus(0) -> ln 2") {
        Tensor y = softplus(Tensor::scalar(0.0f));
        CHECK(y.at(0) == doctest::Approx(0.693147).epsilon(1e-6));
    }
    SUBCASE("relu(-3) -> 0 with adjoint 0") {
        Tape tape;
        Val x = tape.leaf(Tensor::scalar(-3.0f));
        Val y = relu(x);
        CHECK(value(y).at(0) == 0.0f);
        auto g = tape.gradients(sum_all(y), {x});
        CHECK(g[0].at(0) == 0.0f);
    }
    SUBCASE("relu adjoint at exactly 0 is 0") {
        Tape tape;
        Val x = tape.leaf(Tensor::scalar(0.0f));
        auto g = tape.gradients(sum_all(relu(x)), {x});
        CHECK(g[0].at(0) == 0.0f);
    }
    SUBCASE("log rejects non-positive input") {
        CHECK_THROWS_AS(log(Tensor::scalar(0.0f)), DomainError);
        CHECK_THROWS_AS(log(Tensor::scalar(-1.0f)), DomainError);
    }
    SUBCASE("binary shape mismatch") {
        Tensor a({2, 2}, {1, 2, 3, 4});
        Tensor b({3, 1}, {1, 2, 3});
        CHECK_THROWS_AS(add(a, b), ShapeError);
    }
}

TEST_CASE("reductions") {
    Tensor v({3}, {1, 2, 3});
    CHECK(sum_all(v).at(0) == 6.0f);
    CHECK(mean_all(v).at(0) == 2.0f);

    SUBCASE("mean adjoint is 1/n per element") {
        Tape tape;
        Val x = tape.leaf(v);
        auto g = tape.gradients(mean_all(x), {x});
        for (int i = 0; i < 3; ++i) CHECK(g[0].at(i) == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("sum over axis 0") {
        Tensor m({2, 2}, {1, 2, 3, 4});
        Tensor s = sum(m, 0);
        CHECK(s.shape == Shape{2});
        CHECK(s.at(0) == 4.0f);
        CHECK(s.at(1) == 6.0f);
    }
    SUBCASE("mean over empty axis is a domain error") {
        Tensor e({0, 2}, {});
        CHECK_THROWS_AS(mean(e, 0), DomainError);
    }
    SUBCASE("max reduction forwards gradient to the argmax only") {
        Tape tape;
        Val x = tape.leaf(Tensor({2, 3}, {1, 5, 2, 7, 0, 3}));
        Val y = sum_all(max(x, 1));
        CHECK(value(y).at(0) == 12.0f);
        auto g = tape.gradients(y, {x});
        CHECK(bit_equal(g[0], Tensor({2, 3}, {0, 1, 0, 1, 0, 0})));
    }
}

TEST_CASE("grad: sum of squares, constants, contract errors") {
    SUBCASE("f = sum x^2 at [1,2,3] -> [2,4,6]") {
        Tape tape;
        Val x = tape.leaf(Tensor({3}, {1, 2, 3}));
        auto g = tape.gradients(sum_all(mul(x, x)), {x});
        CHECK(bit_equal(g[0], Tensor({3}, {2, 4, 6})));
    }
    SUBCASE("constant output gives zero gradients") {
        Tape tape;
        Val x = tape.leaf(Tensor({3}, {1, 2, 3}));
        Val c = tape.leaf(Tensor::scalar(5.0f));
        auto g = tape.gradients(sum_all(c), {x});
        CHECK(bit_equal(g[0], Tensor::zeros({3})));
    }
    SUBCASE("non-scalar output is a contract error") {
        Tape tape;
        Val x = tape.leaf(Tensor({3}, {1, 2, 3}));
        CHECK_THROWS_AS(tape.gradients(mul(x, x), {x}), ContractError);
    }
}

TEST_CASE("structural op adjoints: concat/slice/gather/repeat/reshape") {
    Tape tape;
    Tensor at({2, 2}, {1, 2, 3, 4});
    Tensor bt({2, 1}, {5, 6});
    Val a = tape.leaf(at);
    Val b = tape.leaf(bt);
    Val cat = concat_cols(a, b);
    CHECK(value(cat).shape == Shape{2, 3});
    // keep only column 2 (everything from b): grads flow to b only
    Val y = sum_all(slice_cols(cat, 2, 3));
    auto g = tape.gradients(y, {a, b});
    CHECK(bit_equal(g[0], Tensor::zeros({2, 2})));
    CHECK(bit_equal(g[1], Tensor::full({2, 1}, 1.0f)));

    Tape t2;
    Val x = t2.leaf(Tensor({1, 3}, {1, 2, 3}));
    Val rep = repeat_rows(x, 4);
    CHECK(value(rep).shape == Shape{4, 3});
    auto g2 = t2.gradients(sum_all(rep), {x});
    CHECK(bit_equal(g2[0], Tensor::full({1, 3}, 4.0f)));

    Tape t3;
    Val x3 = t3.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    Val gc = gather_cols(x3, {2, 0, 2});
    CHECK(value(gc).shape == Shape{2, 3});
    CHECK(value(gc).at(0, 0) == 3.0f);
    auto g3 = t3.gradients(sum_all(gc), {x3});
    CHECK(bit_equal(g3[0], Tensor({2, 3}, {1, 0, 2, 1, 0, 2})));

    Tape t4;
    Val x4 = t4.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    Val rs = reshape(x4, {3, 2});
    auto g4 = t4.gradients(sum_all(mul(rs, rs)), {x4});
    CHECK(bit_equal(g4[0], Tensor({2, 3}, {2, 4, 6, 8, 10, 12})));
}

TEST_CASE("finite differences: pinned examples") {
    SUBCASE("f(x)=x^2 at x=3: ad and fd both 6") {
        auto f = [](Tape& t, Val x) { return sum_all(mul(x, x)); (void)t; };
        double err = finite_difference_check(f, Tensor::scalar(3.0f), 1e-3);
        CHECK(err < 1e-5);
    }
    SUBCASE("f = sum tanh(x), random x, h=1e-3: error < 1e-4") {
        Rng rng(2024);
        Tensor x = random_tensor(rng, {4}, -0.7, 0.7);
        auto f = [](Tape& t, Val x) { (void)t; return sum_all(tanh(x)); };
        double err = finite_difference_check(f, x, 1e-3);
        CHECK(err < 1e-4);
    }
    SUBCASE("relu kink exactly at 0 is excluded: central difference disagrees") {
        // At x=0 the central difference gives 0.5 while the adjoint is 0 by
        // convention, so the check reports a large error. Callers must keep
        // probe points away from kinks.
        auto f = [](Tape& t, Val x) { (void)t; return sum_all(relu(x)); };
        double err = finite_difference_check(f, Tensor::scalar(0.0f), 1e-3);
        CHECK(err > 0.4);
    }
}

TEST_CASE("finite differences: mlp loss gradient matches within 1e-4") {
    // Small tanh MLP, fixed weights; loss = mean squared error against a
    // fixed target. Checked w.r.t. the input batch.
    // Seed picked so every input coordinate carries an O(0.3+) gradient;
    // near-zero coordinates would turn float32 rounding into large
    // relative error.
    Rng rng(2256);
    Tensor w1 = random_tensor(rng, {3, 4}, -0.9, 0.9);
    Tensor b1 = random_tensor(rng, {1, 4}, -0.2, 0.2);
    Tensor w2 = random_tensor(rng, {4, 1}, -0.9, 0.9);
    Tensor b2 = random_tensor(rng, {1, 1}, -0.2, 0.2);
    Tensor target({2, 1}, {1.2f, -1.1f});
    auto f = [&](Tape& t, Val x) {
        Val h = tanh(add(matmul(x, t.leaf(w1)), t.leaf(b1)));
        Val pred = add(matmul(h, t.leaf(w2)), t.leaf(b2));
        Val r = sub(pred, t.leaf(target));
        return mean_all(mul(r, r));
    };
    Tensor x = random_tensor(rng, {2, 3}, -0.8, 0.8);
    double err = finite_difference_check(f, x, 1e-3);
    CHECK(err < 1e-4);
}

TEST_CASE("property: replaying a tape yields bit-identical gradients") {
    Rng rng(5);
    Tensor xt = random_tensor(rng, {4, 3}, -1.0, 1.0);
    Tensor wt = random_tensor(rng, {3, 2}, -1.0, 1.0);
    auto run = [&]() {
        Tape tape;
        Val x = tape.leaf(xt);
        Val w = tape.leaf(wt);
        Val y = mean_all(mul(tanh(matmul(x, w)), tanh(matmul(x, w))));
        return tape.gradients(y, {x, w});
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(bit_equal(g1[0], g2[0]));
    CHECK(bit_equal(g1[1], g2[1]));
}

TEST_CASE("property: 100 random finite-difference points per primitive") {
    // Probe ranges keep gradients O(1) and stay away from kinks; the step
    // balances float32 rounding against truncation.
    const double h = 5e-3;
    Rng rng(31337);
    auto check_unary = [&](const char* name, Val (*op)(Val), double lo, double hi) {
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            Tensor x = random_tensor(rng, {1}, lo, hi);
            auto f = [&](Tape& t, Val v) { (void)t; return sum_all(op(v)); };
            worst = std::max(worst, finite_difference_check(f, x, h));
        }
        INFO(name, " worst=", worst);
        CHECK(worst < 1e-4);
    };
    check_unary("tanh", tanh, -0.7, 0.7);
    check_unary("exp", exp, -1.0, 1.0);
    check_unary("log", log, 0.5, 2.0);
    check_unary("softplus", softplus, -1.0, 1.0);
    check_unary("neg", neg, -1.0, 1.0);

    SUBCASE("relu away from the kink") {
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            double m = 0.1 + 0.9 * rng.uniform();
            Tensor x = Tensor::scalar(static_cast<float>(rng.uniform() < 0.5 ? -m : m));
            auto f = [](Tape& t, Val v) { (void)t; return sum_all(relu(v)); };
            worst = std::max(worst, finite_difference_check(f, x, h));
        }
        CHECK(worst < 1e-4);
    }
    SUBCASE("add/sub/mul with a held operand") {
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            Tensor x = random_tensor(rng, {2}, 0.5, 1.5);
            Tensor c = random_tensor(rng, {2}, 0.5, 1.5);
            auto fa = [&](Tape& t, Val v) { return sum_all(mul(add(v, t.leaf(c)), t.leaf(c))); };
            auto fs = [&](Tape& t, Val v) { return sum_all(mul(sub(v, t.leaf(c)), t.leaf(c))); };
            worst = std::max(worst, finite_difference_check(fa, x, h));
            worst = std::max(worst, finite_difference_check(fs, x, h));
        }
        CHECK(worst < 1e-4);
    }
    SUBCASE("matmul against a held operand") {
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            Tensor x = random_tensor(rng, {1, 2}, -0.7, 0.7);
            Tensor w = random_tensor(rng, {2, 1}, 0.5, 1.5);
            auto f = [&](Tape& t, Val v) { return sum_all(matmul(v, t.leaf(w))); };
            worst = std::max(worst, finite_difference_check(f, x, h));
        }
        CHECK(worst < 1e-4);
    }
    SUBCASE("mean over an axis") {
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            // magnitudes >= 0.4 keep the per-coordinate gradient away from 0
            Tensor x = Tensor::zeros({2, 2});
            for (auto& v : x.data) {
                double m = 0.4 + 0.8 * rng.uniform();
                v = static_cast<float>(rng.uniform() < 0.5 ? -m : m);
            }
            auto f = [](Tape& t, Val v) { (void)t; return mean_all(mul(v, v)); };
            worst = std::max(worst, finite_difference_check(f, x, h));
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("property: matmul with identity is exact") {
    Rng rng(9);
    Tensor a = random_tensor(rng, {5, 5}, -10.0, 10.0);
    CHECK(bit_equal(matmul(a, Tensor::eye(5)), a));
    CHECK(bit_equal(matmul(Tensor::eye(5), a), a));
}

TEST_CASE("rng: determinism, ranges, split independence") {
    SUBCASE("equal seeds give equal sequences") {
        Rng r1(42), r2(42);
        for (int i = 0; i < 1000; ++i) CHECK(r1.next_u64() == r2.next_u64());
    }
    SUBCASE("uniform stays in [0,1) and uniform_pos in (0,1]") {
        Rng r(3);
        for (int i = 0; i < 10000; ++i) {
            double u = r.uniform();
            CHECK(u >= 0.0);
            CHECK(u < 1.0);
            double p = r.uniform_pos();
            CHECK(p > 0.0);
            CHECK(p <= 1.0);
        }
    }
    SUBCASE("uniform_int covers its inclusive range") {
        Rng r(4);
        bool saw_lo = false, saw_hi = false;
        for (int i = 0; i < 1000; ++i) {
            int v = r.uniform_int(2, 5);
            CHECK(v >= 2);
            CHECK(v <= 5);
            saw_lo |= (v == 2);
            saw_hi |= (v == 5);
        }
        CHECK(saw_lo);
        CHECK(saw_hi);
    }
    SUBCASE("normal draws have sane moments") {
        Rng r(6);
        double s = 0, s2 = 0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            double z = r.normal();
            s += z;
            s2 += z * z;
        }
        CHECK(std::abs(s / n) < 0.03);
        CHECK(std::abs(s2 / n - 1.0) < 0.05);
    }
    SUBCASE("split does not consume parent state") {
        Rng r1(7), r2(7);
        (void)r2.split(3);
        CHECK(r1.next_u64() == r2.next_u64());
    }
    SUBCASE("split streams are decorrelated (|r| < 0.05 over 1e4 draws)") {
        Rng parent(11);
        Rng a = parent.split(1);
        Rng b = parent.split(2);
        const int n = 10000;
        double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
        for (int i = 0; i < n; ++i) {
            double x = a.normal(), y = b.normal();
            sa += x;
            sb += y;
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        double cov = sab / n - (sa / n) * (sb / n);
        double va = saa / n - (sa / n) * (sa / n);
        double vb = sbb / n - (sb / n) * (sb / n);
        double corr = cov / std::sqrt(va * vb);
        CHECK(std::abs(corr) < 0.05);
        // and a split stream differs from its parent's raw stream
        Rng p2(11);
        CHECK(a.seed() != p2.seed());
    }
}
