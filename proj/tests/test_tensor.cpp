#include <doctest.h>

#include <cmath>

#include "sida/gradcheck.hpp"
#include "sida/tensor.hpp"

using namespace sida;

TEST_CASE("matmul identity and inner product") {
    Tape t;
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
    Tensor c = t.matmul(eye, b);
    CHECK(c.values() == std::vector<double>{3, 4, 5, 6});

    Tensor row = Tensor::from({1, 2}, {1, 2});
    Tensor col = Tensor::from({2, 1}, {3, 4});
    CHECK(t.matmul(row, col).value() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape t;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    try {
        t.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches central finite differences") {
    Rng rng(11);
    Tensor a = Tensor::randn({3, 3}, rng, 1.0, true);
    Tensor b = Tensor::randn({3, 3}, rng, 1.0, true);
    auto eval = [&]() {
        Tape t(false);
        return t.sum(t.matmul(a, b)).value();
    };
    Tape t;
    Tensor loss = t.sum(t.matmul(a, b));
    t.backward(loss);
    Tensor fd_a = finite_diff_grad(eval, a, 1e-5);
    Tensor fd_b = finite_diff_grad(eval, b, 1e-5);
    CHECK(max_rel_error(a.grad(), fd_a.values()) < 1e-6);
    CHECK(max_rel_error(b.grad(), fd_b.values()) < 1e-6);
}

TEST_CASE("softmax basics") {
    Tape t;
    Tensor x = Tensor::from({2}, {0.0, 0.0});
    Tensor s = t.softmax(x, 0);
    CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.at(1) == doctest::Approx(0.5).epsilon(1e-15));

    Tensor y = Tensor::from({2}, {std::log(1.0), std::log(3.0)});
    Tensor sy = t.softmax(y, 0);
    CHECK(sy.at(0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sy.at(1) == doctest::Approx(0.75).epsilon(1e-12));

    CHECK_THROWS_AS(t.softmax(y, 1), ShapeError);
}

TEST_CASE("softmax slices sum to one and are non-negative") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tape t;
        Tensor x = Tensor::randn({4, 7}, rng, 3.0);
        for (int axis = 0; axis < 2; ++axis) {
            Tensor s = t.softmax(x, axis);
            const int outer = axis == 0 ? 7 : 4;
            const int extent = axis == 0 ? 4 : 7;
            for (int o = 0; o < outer; ++o) {
                double total = 0.0;
                for (int k = 0; k < extent; ++k) {
                    double v = axis == 0 ? s.at(k, o) : s.at(o, k);
                    CHECK(v >= 0.0);
                    total += v;
                }
                CHECK(std::abs(total - 1.0) <= 1e-12);
            }
        }
    }
}

TEST_CASE("sigmoid, gelu, layernorm fixed points") {
    Tape t;
    CHECK(t.sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(t.gelu(Tensor::scalar(0.0)).value() == doctest::Approx(0.0).epsilon(1e-15));

    // Constant vector normalizes to zero before scale/shift.
    Tensor x = Tensor::full({1, 6}, 3.7);
    Tensor g = Tensor::full({6}, 1.0);
    Tensor b = Tensor::zeros({6});
    Tensor ln = t.layernorm(x, g, b);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(ln.at(i)) < 1e-9);
}

TEST_CASE("embedding lookup repeats rows and accumulates gradient") {
    Tape t;
    Tensor table = Tensor::from({4, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, true);
    Tensor out = t.embedding_lookup(table, {2, 2});
    CHECK(out.shape() == Shape{2, 3});
    for (int j = 0; j < 3; ++j) {
        CHECK(out.at(0, j) == doctest::Approx(6.0 + j));
        CHECK(out.at(1, j) == doctest::Approx(6.0 + j));
    }
    Tensor loss = t.sum(out);
    t.backward(loss);
    // Row 2 was used twice, so its gradient is 2 per entry.
    for (int j = 0; j < 3; ++j) CHECK(table.grad()[2 * 3 + j] == doctest::Approx(2.0));
    for (int j = 0; j < 3; ++j) CHECK(table.grad()[0 * 3 + j] == doctest::Approx(0.0));
}

TEST_CASE("backward on sum gives all-ones gradient") {
    Tape t;
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    t.backward(t.sum(x));
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward through x*x gives 2x") {
    Tape t;
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    t.backward(t.sum(t.mul(x, x)));
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape t;
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor y = t.mul(x, x);
    CHECK_THROWS_AS(t.backward(y), ShapeError);
}

TEST_CASE("finite differences: sum and square") {
    Tensor x = Tensor::from({4}, {0.3, -1.2, 2.0, 0.7});
    auto f_sum = [&]() {
        double s = 0.0;
        for (double v : x.values()) s += v;
        return s;
    };
    Tensor fd = finite_diff_grad(f_sum, x, 1e-5);
    for (double g : fd.values()) CHECK(std::abs(g - 1.0) < 1e-9);

    Tensor x3 = Tensor::scalar(3.0);
    auto f_sq = [&]() { return x3.value() * x3.value(); };
    Tensor fd2 = finite_diff_grad(f_sq, x3, 1e-5);
    CHECK(std::abs(fd2.value() - 6.0) < 1e-6);

    CHECK_THROWS(finite_diff_grad(f_sq, x3, 0.0));
}

TEST_CASE("gradient accumulates across branches") {
    Rng rng(3);
    Tensor c1 = Tensor::randn({5}, rng);
    Tensor c2 = Tensor::randn({5}, rng);
    Tensor x = Tensor::randn({5}, rng, 1.0, true);

    // Branch 1 alone.
    std::vector<double> g1;
    {
        Tape t;
        t.backward(t.sum(t.mul(x, c1)));
        g1 = x.grad();
        x.zero_grad();
    }
    std::vector<double> g2;
    {
        Tape t;
        t.backward(t.sum(t.mul(x, c2)));
        g2 = x.grad();
        x.zero_grad();
    }
    {
        Tape t;
        Tensor loss = t.add(t.sum(t.mul(x, c1)), t.sum(t.mul(x, c2)));
        t.backward(loss);
    }
    for (int i = 0; i < 5; ++i) {
        CHECK(x.grad()[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
    }
}

TEST_CASE("zero_grad then backward equals fresh backward") {
    Rng rng(17);
    Tensor x = Tensor::randn({4, 4}, rng, 1.0, true);
    std::vector<double> fresh;
    {
        Tape t;
        t.backward(t.sum(t.mul(x, x)));
        fresh = x.grad();
    }
    // Dirty the gradient, zero it, run again on a new tape.
    x.grad()[3] = 123.0;
    x.zero_grad();
    for (double g : x.grad()) CHECK(g == 0.0);
    {
        Tape t;
        t.backward(t.sum(t.mul(x, x)));
    }
    CHECK(x.grad() == fresh);
}

TEST_CASE("reshape and transpose round trips") {
    Tape t;
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = t.reshape(x, {3, 2});
    CHECK(r.shape() == Shape{3, 2});
    CHECK(r.values() == x.values());
    CHECK_THROWS_AS(t.reshape(x, {4, 2}), ShapeError);

    Tensor tr = t.transpose(x);
    CHECK(tr.shape() == Shape{3, 2});
    CHECK(tr.at(0, 1) == doctest::Approx(4.0));
    Tensor trtr = t.transpose(tr);
    CHECK(trtr.values() == x.values());
}

TEST_CASE("scalar-operand broadcasting is limited to exact shape or scalar") {
    Tape t;
    Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor s = Tensor::scalar(10.0);
    Tensor sum = t.add(m, s);
    CHECK(sum.values() == std::vector<double>{11, 12, 13, 14});
    Tensor bad = Tensor::zeros({2});
    CHECK_THROWS_AS(t.add(m, bad), ShapeError);
}

TEST_CASE("every primitive passes the finite-difference gate over 100 seeds") {
    // |analytic - fd| / max(1, |fd|) <= 1e-5 at eps = 1e-5.
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        GradCheckReport rep = run_gradcheck(1e-5, seed, false, false);
        worst = std::max(worst, rep.worst);
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("gradcheck fault injection trips the gate") {
    GradCheckReport rep = run_gradcheck(1e-5, 0, true, false);
    CHECK_FALSE(rep.pass(1e-4));
}
