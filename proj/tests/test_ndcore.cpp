// Copyright 2026 The tgmvae authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "tgmvae/adam.hpp"
#include "tgmvae/autodiff.hpp"
#include "tgmvae/matrix.hpp"
#include "test_util.hpp"

using tgmvae::nd::AdamConfig;
using tgmvae::nd::AdamState;
using tgmvae::nd::Graph;
using tgmvae::nd::Matrix;

TEST_CASE("matrix products against hand-computed values", "[ndcore][matrix]") {
    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    const Matrix b = Matrix::from_rows({{7, 8, 9}, {10, 11, 12}});
    const Matrix ab = tgmvae::nd::matmul(a, b);
    REQUIRE(ab.rows() == 3);
    REQUIRE(ab.cols() == 3);
    CHECK(ab(0, 0) == 27.0);
    CHECK(ab(2, 2) == 117.0);

    Matrix atb;
    tgmvae::nd::matmul_at_b_into(atb, a, a);
    CHECK(atb(0, 0) == 35.0);   // 1+9+25
    CHECK(atb(0, 1) == 44.0);   // 2+12+30
    CHECK(atb(1, 1) == 56.0);   // 4+16+36

    Matrix abt;
    tgmvae::nd::matmul_a_bt_into(abt, a, a);
    CHECK(abt(0, 0) == 5.0);
    CHECK(abt(0, 2) == 17.0);

    CHECK_THROWS_AS(tgmvae::nd::matmul(a, a), tgmvae::data_error);
}

TEST_CASE("forward matches closed forms on trivial graphs", "[ndcore][autodiff]") {
    SECTION("tanh of zero is zero") {
        Graph g;
        const int x = g.input("x", 1, 1);
        const int y = g.tanh_(x);
        g.bind(x, Matrix(1, 1, 0.0));
        g.forward();
        CHECK(g.value(y)(0, 0) == 0.0);
    }
    SECTION("softmax of a constant row is uniform") {
        Graph g;
        const int x = g.input("x", 1, 3);
        const int y = g.softmax(x);
        g.bind(x, Matrix(1, 3, 0.0));
        g.forward();
        for (int j = 0; j < 3; ++j) CHECK(g.value(y)(0, j) == Catch::Approx(1.0 / 3.0).margin(1e-15));
    }
    SECTION("affine identity passes the input through") {
        Graph g;
        const int x = g.input("x", 1, 2);
        const int w = g.param("w", 2, 2);
        const int b = g.param("b", 1, 2);
        const int y = g.affine(x, w, b);
        g.bind(x, Matrix::from_rows({{3, -1}}));
        g.bind(w, Matrix::from_rows({{1, 0}, {0, 1}}));
        g.bind(b, Matrix(1, 2, 0.0));
        g.forward();
        CHECK(g.value(y)(0, 0) == 3.0);
        CHECK(g.value(y)(0, 1) == -1.0);
    }
}

TEST_CASE("softmax rows are strictly positive and sum to one", "[ndcore][autodiff]") {
    std::mt19937_64 rng(7);
    Graph g;
    const int x = g.input("x", 16, 5);
    const int y = g.softmax(x);
    Matrix xv(16, 5);
    for (int rep = 0; rep < 20; ++rep) {
        testutil::fill_uniform(xv, rng, -30.0, 30.0);
        g.bind(x, xv);
        g.forward();
        for (std::size_t i = 0; i < 16; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                CHECK(g.value(y)(i, j) > 0.0);
                s += g.value(y)(i, j);
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("forward is pure", "[ndcore][autodiff]") {
    std::mt19937_64 rng(11);
    Graph g;
    const int x = g.input("x", 4, 6);
    const int w = g.param("w", 6, 3);
    const int b = g.param("b", 1, 3);
    const int y = g.softmax(g.tanh_(g.affine(x, w, b)));
    Matrix xv(4, 6), wv(6, 3), bv(1, 3);
    testutil::fill_uniform(xv, rng);
    testutil::fill_uniform(wv, rng);
    testutil::fill_uniform(bv, rng);
    g.bind(x, xv);
    g.bind(w, wv);
    g.bind(b, bv);
    g.forward();
    const Matrix first = g.value(y);
    g.forward();
    CHECK(first == g.value(y));
}

TEST_CASE("backward of x squared", "[ndcore][autodiff]") {
    Graph g;
    const int x = g.param("x", 1, 1);
    const int loss = g.sum(g.square(x));
    g.bind(x, Matrix(1, 1, 3.0));
    g.forward();
    g.backward(loss);
    CHECK(g.grad(x)(0, 0) == Catch::Approx(6.0).margin(1e-12));
}

TEST_CASE("softmax cross-entropy at uniform logits has the uniform-minus-onehot gradient", "[ndcore][autodiff]") {
    Graph g;
    const int x = g.param("x", 1, 3);
    const int lsm = g.log_softmax(x);
    const int loss = g.scale(g.col(lsm, 0), -1.0);  // -log p[target], target = argmax = index 0
    g.bind(x, Matrix(1, 3, 0.0));
    g.forward();
    g.backward(loss);
    CHECK(g.grad(x)(0, 0) == Catch::Approx(1.0 / 3.0 - 1.0).margin(1e-12));
    CHECK(g.grad(x)(0, 1) == Catch::Approx(1.0 / 3.0).margin(1e-12));
    CHECK(g.grad(x)(0, 2) == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("backward matches central finite differences on a random 3-layer tanh net", "[ndcore][autodiff]") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 3; ++rep) {
        Graph g;
        const int x = g.input("x", 4, 5);
        const int w1 = g.param("w1", 5, 7);
        const int b1 = g.param("b1", 1, 7);
        const int w2 = g.param("w2", 7, 6);
        const int b2 = g.param("b2", 1, 6);
        const int w3 = g.param("w3", 6, 2);
        const int b3 = g.param("b3", 1, 2);
        const int h1 = g.tanh_(g.affine(x, w1, b1));
        const int h2 = g.tanh_(g.affine(h1, w2, b2));
        const int out = g.tanh_(g.affine(h2, w3, b3));
        const int loss = g.mean(g.square(out));

        Matrix xv(4, 5), w1v(5, 7), b1v(1, 7), w2v(7, 6), b2v(1, 6), w3v(6, 2), b3v(1, 2);
        for (Matrix* m : {&xv, &w1v, &b1v, &w2v, &b2v, &w3v, &b3v}) testutil::fill_uniform(*m, rng);

        auto bind_all = [&]() {
            g.bind(x, xv);
            g.bind(w1, w1v);
            g.bind(b1, b1v);
            g.bind(w2, w2v);
            g.bind(b2, b2v);
            g.bind(w3, w3v);
            g.bind(b3, b3v);
        };
        bind_all();
        g.forward();
        g.backward(loss);

        auto eval = [&]() {
            bind_all();
            g.forward();
            return g.value(loss)(0, 0);
        };
        const struct {
            int id;
            Matrix* v;
        } checks[] = {{w1, &w1v}, {b1, &b1v}, {w2, &w2v}, {b2, &b2v}, {w3, &w3v}, {b3, &b3v}};
        for (const auto& c : checks) {
            const Matrix analytic = g.grad(c.id);
            const Matrix fd = testutil::fd_gradient(*c.v, eval);
            CHECK(testutil::max_coord_rel_error(analytic, fd) < 1e-4);
        }
    }
}

TEST_CASE("every remaining op kind passes a finite-difference check", "[ndcore][autodiff]") {
    // sigmoid, log_softmax, add, sub, mul, square, scale, sum, row_sum, col,
    // row, sub_rowvec, bce_logits composed into one scalar.
    std::mt19937_64 rng(33);
    Graph g;
    const int x = g.param("x", 3, 4);
    const int v = g.param("v", 1, 4);
    const int t = g.input("t", 3, 4);
    const int sig = g.sigmoid_(x);
    const int lsm = g.log_softmax(x);
    const int a = g.mul(sig, g.sub_rowvec(lsm, v));
    const int b = g.add(g.square(a), g.sub(sig, g.scale(lsm, 0.25)));
    const int c = g.mul(g.col(b, 1), g.row_sum(b));
    const int r = g.row(b, 2);
    const int bce = g.bce_logits(x, t);
    const int loss = g.add(g.add(g.mean(c), g.sum(r)), g.mean(bce));

    Matrix xv(3, 4), vv(1, 4), tv(3, 4);
    testutil::fill_uniform(xv, rng);
    testutil::fill_uniform(vv, rng);
    testutil::fill_uniform(tv, rng, 0.0, 1.0);
    auto eval = [&]() {
        g.bind(x, xv);
        g.bind(v, vv);
        g.bind(t, tv);
        g.forward();
        return g.value(loss)(0, 0);
    };
    eval();
    g.backward(loss);
    const Matrix gx = g.grad(x);
    const Matrix gv = g.grad(v);
    CHECK(testutil::max_coord_rel_error(gx, testutil::fd_gradient(xv, eval)) < 1e-4);
    CHECK(testutil::max_coord_rel_error(gv, testutil::fd_gradient(vv, eval)) < 1e-4);
}

TEST_CASE("unreached parameters keep a zero gradient", "[ndcore][autodiff]") {
    Graph g;
    const int x = g.param("x", 1, 1);
    const int orphan = g.param("orphan", 2, 2);
    const int loss = g.sum(g.square(x));
    g.bind(x, Matrix(1, 1, 2.0));
    g.bind(orphan, Matrix(2, 2, 5.0));
    g.forward();
    g.backward(loss);
    for (std::size_t i = 0; i < 4; ++i) CHECK(g.grad(orphan).data()[i] == 0.0);
}

TEST_CASE("graph error paths", "[ndcore][autodiff]") {
    SECTION("non-scalar loss") {
        Graph g;
        const int x = g.input("x", 2, 2);
        const int y = g.tanh_(x);
        g.bind(x, Matrix(2, 2, 0.5));
        g.forward();
        CHECK_THROWS_AS(g.backward(y), tgmvae::data_error);
    }
    SECTION("shape mismatch names the offending node") {
        Graph g;
        const int x = g.input("inputs", 2, 3);
        const int w = g.param("weights", 4, 2);
        const int b = g.param("bias", 1, 2);
        try {
            g.affine(x, w, b);
            FAIL("expected data_error");
        } catch (const tgmvae::data_error& e) {
            CHECK(std::string(e.what()).find("weights") != std::string::npos);
        }
    }
    SECTION("unbound input") {
        Graph g;
        const int x = g.input("x", 1, 1);
        g.tanh_(x);
        CHECK_THROWS_AS(g.forward(), tgmvae::data_error);
    }
    SECTION("binding with the wrong shape") {
        Graph g;
        g.input("x", 2, 3);
        CHECK_THROWS_AS(g.bind("x", Matrix(3, 2)), tgmvae::data_error);
    }
}

TEST_CASE("adam first step has learning-rate magnitude", "[ndcore][adam]") {
    AdamConfig cfg;
    cfg.lr = 0.05;
    cfg.eps = 1e-300;
    AdamState opt(cfg);
    Matrix p(2, 3, 1.0);
    Matrix g(2, 3);
    g(0, 0) = 4.0;
    g(0, 1) = -0.3;
    g(0, 2) = 17.0;
    g(1, 0) = -2.5;
    g(1, 1) = 0.01;
    g(1, 2) = 100.0;
    opt.begin_step();
    opt.update("p", p, g);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double step = std::abs(p.data()[i] - 1.0);
        CHECK(step == Catch::Approx(cfg.lr).epsilon(1e-9));
    }
}

TEST_CASE("adam leaves parameters unchanged on a zero gradient", "[ndcore][adam]") {
    AdamState opt;
    Matrix p(3, 1, 2.5);
    const Matrix g(3, 1, 0.0);
    opt.begin_step();
    opt.update("p", p, g);
    CHECK(opt.step_count() == 1);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.data()[i] == 2.5);
}

TEST_CASE("adam minimizes a quadratic and matches the scalar recurrence", "[ndcore][adam]") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    AdamState opt(cfg);
    Matrix p(1, 1, 0.0);

    // independent scalar recurrence as oracle
    double x = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 200; ++t) {
        const double grad = 2.0 * (p(0, 0) - 5.0);
        Matrix g(1, 1, grad);
        opt.begin_step();
        opt.update("p", p, g);

        const double go = 2.0 * (x - 5.0);
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * go;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * go * go;
        const double mhat = m / (1.0 - std::pow(cfg.beta1, t));
        const double vhat = v / (1.0 - std::pow(cfg.beta2, t));
        x -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        REQUIRE(p(0, 0) == Catch::Approx(x).margin(1e-12));
    }
    CHECK(std::abs(p(0, 0) - 5.0) < 0.1);
}

TEST_CASE("adam rejects non-finite gradients", "[ndcore][adam]") {
    AdamState opt;
    Matrix p(1, 2, 1.0);
    Matrix g(1, 2, 0.0);
    g(0, 1) = std::numeric_limits<double>::quiet_NaN();
    opt.begin_step();
    CHECK_THROWS_AS(opt.update("p", p, g), tgmvae::numeric_error);
    Matrix bad_shape(2, 1, 0.0);
    CHECK_THROWS_AS(opt.update("p", p, bad_shape), tgmvae::data_error);
}
