#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"

#include "aspectnmt/autodiff.hpp"
#include "aspectnmt/rng.hpp"

using namespace aspectnmt;
using ad::Param;
using ad::Tape;
using ad::Var;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, Rng& rng) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal() * 0.5;
    return m;
}

} // namespace

TEST_CASE("gradients accumulate when a value is used twice") {
    Param x("x", Eigen::MatrixXd::Constant(1, 1, 3.0));
    Tape t;
    Var xv = t.leaf(x);
    Var y = ad::add(t, ad::mul_scalar(t, xv, 2.0), ad::mul_scalar(t, xv, 3.0));
    t.backward(y);
    CHECK(y->value(0, 0) == doctest::Approx(15.0));
    CHECK(x.grad(0, 0) == doctest::Approx(5.0));
}

TEST_CASE("affine chain with relu and cross entropy passes finite differences") {
    Rng rng(7);
    Param w1("w1", random_matrix(5, 6, rng));
    Param b1("b1", random_matrix(1, 6, rng));
    Param w2("w2", random_matrix(6, 4, rng));
    Param b2("b2", random_matrix(1, 4, rng));
    Eigen::MatrixXd x = random_matrix(3, 5, rng);
    std::vector<int> targets = {2, 0, 3};
    std::vector<double> weights = {1.0, 2.0, 0.5};
    std::vector<Param*> params = {&w1, &b1, &w2, &b2};

    auto loss = [&](bool with_grad) {
        for (Param* p : params) p->zero_grad();
        Tape t;
        Var h = ad::relu(
            t, ad::add_rowvec(t, ad::matmul(t, t.constant(x), t.leaf(w1)), t.leaf(b1)));
        Var logits = ad::add_rowvec(t, ad::matmul(t, h, t.leaf(w2)), t.leaf(b2));
        Var l = ad::cross_entropy(t, logits, targets, weights);
        double out = l->value(0, 0);
        if (with_grad) t.backward(l);
        return out;
    };
    auto result = ad::grad_check(loss, params);
    CAPTURE(result.worst_param);
    CHECK(result.max_rel_err <= 1e-4);
}

TEST_CASE("cross entropy hits its analytic values") {
    Tape t;
    SUBCASE("uniform logits over 4 classes cost ln 4") {
        Var logits = t.constant(Eigen::MatrixXd::Zero(2, 4));
        Var l = ad::cross_entropy(t, logits, {1, 3}, {1.0, 1.0});
        CHECK(l->value(0, 0) == doctest::Approx(std::log(4.0)));
    }
    SUBCASE("saturated correct logits cost nearly zero") {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(1, 3);
        m(0, 2) = 50.0;
        Var l = ad::cross_entropy(t, t.constant(m), {2}, {1.0});
        CHECK(l->value(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("per-row weights scale each row's term") {
        Var logits = t.constant(Eigen::MatrixXd::Zero(2, 4));
        Var l = ad::cross_entropy(t, logits, {0, 1}, {2.0, 0.0});
        CHECK(l->value(0, 0) == doctest::Approx(std::log(4.0))); // (2*ln4 + 0)/2
    }
}

TEST_CASE("smoothed cross entropy reduces to plain at smoothing zero") {
    Rng rng(11);
    Eigen::MatrixXd logits = random_matrix(3, 5, rng);
    std::vector<int> targets = {0, 4, 2};
    Tape t;
    Var a = ad::smoothed_cross_entropy(t, t.constant(logits), targets, 0.0);
    Var b = ad::cross_entropy(t, t.constant(logits), targets, {1.0, 1.0, 1.0});
    CHECK(a->value(0, 0) == doctest::Approx(b->value(0, 0)));
}

TEST_CASE("smoothed cross entropy passes finite differences") {
    Rng rng(13);
    Param w("w", random_matrix(4, 6, rng));
    Eigen::MatrixXd x = random_matrix(3, 4, rng);
    std::vector<int> targets = {5, 0, 2};
    std::vector<Param*> params = {&w};
    auto loss = [&](bool with_grad) {
        w.zero_grad();
        Tape t;
        Var logits = ad::matmul(t, t.constant(x), t.leaf(w));
        Var l = ad::smoothed_cross_entropy(t, logits, targets, 0.1);
        double out = l->value(0, 0);
        if (with_grad) t.backward(l);
        return out;
    };
    CHECK(ad::grad_check(loss, params).max_rel_err <= 1e-4);
}

TEST_CASE("layer norm normalizes rows and passes finite differences") {
    Rng rng(3);
    Param x("x", random_matrix(4, 6, rng));
    Param gain("gain", Eigen::MatrixXd::Ones(1, 6) + 0.1 * random_matrix(1, 6, rng));
    Param bias("bias", 0.1 * random_matrix(1, 6, rng));
    Eigen::MatrixXd target = random_matrix(4, 6, rng);
    std::vector<Param*> params = {&x, &gain, &bias};

    {
        Tape t;
        Param unit_gain("g", Eigen::MatrixXd::Ones(1, 6));
        Param zero_bias("b", Eigen::MatrixXd::Zero(1, 6));
        Var y = ad::layer_norm(t, t.leaf(x), t.leaf(unit_gain), t.leaf(zero_bias));
        for (int r = 0; r < 4; ++r) {
            CHECK(y->value.row(r).mean() == doctest::Approx(0.0).epsilon(1e-9));
            CHECK(y->value.row(r).squaredNorm() / 6.0 == doctest::Approx(1.0).epsilon(1e-3));
        }
    }

    auto loss = [&](bool with_grad) {
        for (Param* p : params) p->zero_grad();
        Tape t;
        Var y = ad::layer_norm(t, t.leaf(x), t.leaf(gain), t.leaf(bias));
        Var l = ad::mean_row_sqdist(t, y, t.constant(target));
        double out = l->value(0, 0);
        if (with_grad) t.backward(l);
        return out;
    };
    auto result = ad::grad_check(loss, params);
    CAPTURE(result.worst_param);
    CHECK(result.max_rel_err <= 1e-4);
}

TEST_CASE("attention respects sentence boundaries and causal masking") {
    Rng rng(17);
    Eigen::MatrixXd x = random_matrix(5, 4, rng);
    std::vector<int> offsets = {0, 2, 5};

    Tape t;
    Var q = t.constant(x);
    Var out = ad::attention(t, q, q, q, 2, offsets, offsets, false);

    // perturbing sentence 2 must not move sentence 1's rows
    Eigen::MatrixXd x2 = x;
    x2.row(3).array() += 1.0;
    Var q2 = t.constant(x2);
    Var out2 = ad::attention(t, q2, q2, q2, 2, offsets, offsets, false);
    CHECK((out->value.topRows(2) - out2->value.topRows(2)).norm() ==
          doctest::Approx(0.0));
    CHECK((out->value.bottomRows(3) - out2->value.bottomRows(3)).norm() > 1e-6);

    // causal: position 0 of a sentence sees only itself
    Var c1 = ad::attention(t, q, q, q, 2, offsets, offsets, true);
    Var c2 = ad::attention(t, q2, q2, q2, 2, offsets, offsets, true);
    CHECK((c1->value.row(2) - c2->value.row(2)).norm() == doctest::Approx(0.0));
}

TEST_CASE("attention gradients pass finite differences") {
    Rng rng(23);
    Param q("q", random_matrix(5, 4, rng));
    Param k("k", random_matrix(7, 4, rng));
    Param v("v", random_matrix(7, 4, rng));
    Eigen::MatrixXd target = random_matrix(5, 4, rng);
    std::vector<int> q_off = {0, 2, 5};
    std::vector<int> kv_off = {0, 3, 7};
    std::vector<Param*> params = {&q, &k, &v};
    auto loss = [&](bool with_grad) {
        for (Param* p : params) p->zero_grad();
        Tape t;
        Var out = ad::attention(t, t.leaf(q), t.leaf(k), t.leaf(v), 2, q_off, kv_off,
                                false);
        Var l = ad::mean_row_sqdist(t, out, t.constant(target));
        double val = l->value(0, 0);
        if (with_grad) t.backward(l);
        return val;
    };
    auto result = ad::grad_check(loss, params);
    CAPTURE(result.worst_param);
    CHECK(result.max_rel_err <= 1e-4);

    // causal self-attention variant, q = k = v through one shared parameter
    Param x("x", random_matrix(5, 4, rng));
    std::vector<Param*> xonly = {&x};
    auto causal_loss = [&](bool with_grad) {
        x.zero_grad();
        Tape t;
        Var xv = t.leaf(x);
        Var out = ad::attention(t, xv, xv, xv, 2, q_off, q_off, true);
        Var l = ad::mean_row_sqdist(t, out, t.constant(target));
        double val = l->value(0, 0);
        if (with_grad) t.backward(l);
        return val;
    };
    CHECK(ad::grad_check(causal_loss, xonly).max_rel_err <= 1e-4);
}

TEST_CASE("gather, slice and concat route gradients to the right entries") {
    Rng rng(29);
    Param table("table", random_matrix(6, 4, rng));
    Eigen::MatrixXd target = random_matrix(3, 4, rng);
    std::vector<int> rows = {4, 0, 4}; // row 4 used twice
    std::vector<Param*> params = {&table};
    auto loss = [&](bool with_grad) {
        table.zero_grad();
        Tape t;
        Var g = ad::gather_rows(t, t.leaf(table), rows);
        Var left = ad::slice_cols(t, g, 0, 2);
        Var right = ad::slice_cols(t, g, 2, 2);
        Var back = ad::concat_cols(t, {left, right});
        Var l = ad::mean_row_sqdist(t, back, t.constant(target));
        double val = l->value(0, 0);
        if (with_grad) t.backward(l);
        return val;
    };
    CHECK(ad::grad_check(loss, params).max_rel_err <= 1e-4);

    Tape t;
    Var g = ad::gather_rows(t, t.leaf(table), rows);
    CHECK(g->value.row(0) == table.value.row(4));
    CHECK(g->value.row(1) == table.value.row(0));
}

TEST_CASE("scalar mix is a convex combination with correct gradients") {
    Rng rng(31);
    std::vector<Eigen::MatrixXd> stack;
    for (int j = 0; j < 3; ++j) stack.push_back(random_matrix(4, 5, rng));

    SUBCASE("equal logits average the layers") {
        Param logits("mix", Eigen::MatrixXd::Zero(3, 1));
        Tape t;
        Var e = ad::scalar_mix(t, t.leaf(logits), stack);
        Eigen::MatrixXd mean = (stack[0] + stack[1] + stack[2]) / 3.0;
        CHECK((e->value - mean).norm() == doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("a dominant logit selects its layer") {
        Param logits("mix", Eigen::MatrixXd::Zero(3, 1));
        logits.value(1, 0) = 40.0;
        Tape t;
        Var e = ad::scalar_mix(t, t.leaf(logits), stack);
        CHECK((e->value - stack[1]).cwiseAbs().maxCoeff() <= 1e-6);
    }

    SUBCASE("output stays in the coordinate-wise hull of the layers") {
        Param logits("mix", random_matrix(3, 1, rng));
        Tape t;
        Var e = ad::scalar_mix(t, t.leaf(logits), stack);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 5; ++c) {
                double lo = std::min({stack[0](r, c), stack[1](r, c), stack[2](r, c)});
                double hi = std::max({stack[0](r, c), stack[1](r, c), stack[2](r, c)});
                CHECK(e->value(r, c) >= lo - 1e-12);
                CHECK(e->value(r, c) <= hi + 1e-12);
            }
    }

    SUBCASE("logit gradients match finite differences") {
        Param logits("mix", random_matrix(3, 1, rng));
        Eigen::MatrixXd target = random_matrix(4, 5, rng);
        std::vector<Param*> params = {&logits};
        auto loss = [&](bool with_grad) {
            logits.zero_grad();
            Tape t;
            Var e = ad::scalar_mix(t, t.leaf(logits), stack);
            Var l = ad::mean_row_sqdist(t, e, t.constant(target));
            double val = l->value(0, 0);
            if (with_grad) t.backward(l);
            return val;
        };
        CHECK(ad::grad_check(loss, params).max_rel_err <= 1e-4);
    }
}

TEST_CASE("row distance identities") {
    Tape t;
    Eigen::MatrixXd a(1, 3);
    a << 1.0, 2.0, 3.0;
    Var same = ad::mean_row_sqdist(t, t.constant(a), t.constant(a));
    CHECK(same->value(0, 0) == doctest::Approx(0.0));

    Eigen::MatrixXd b = a;
    b(0, 0) += 1.0;
    b(0, 1) += 2.0;
    Var l = ad::mean_row_sqdist(t, t.constant(a), t.constant(b));
    CHECK(l->value(0, 0) == doctest::Approx(5.0));
}

TEST_CASE("similarity penalty identities and gradient") {
    Rng rng(37);
    SUBCASE("identical vectors score 1") {
        Eigen::MatrixXd h(1, 6);
        h << 1, 2, 3, 1, 2, 3; // two identical chunks of width 3
        Tape t;
        Var l = ad::similarity_penalty(t, t.constant(h), 2, 3);
        CHECK(l->value(0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("squared distance 1 scores 0") {
        Eigen::MatrixXd h(1, 6);
        h << 1, 2, 3, 1, 2, 4;
        Tape t;
        Var l = ad::similarity_penalty(t, t.constant(h), 2, 3);
        CHECK(l->value(0, 0) == doctest::Approx(0.0));
    }
    SUBCASE("permutation and common translation leave the value unchanged") {
        Eigen::MatrixXd h = random_matrix(2, 9, rng);
        Eigen::MatrixXd perm(2, 9);
        perm << h.middleCols(6, 3), h.middleCols(0, 3), h.middleCols(3, 3);
        Eigen::MatrixXd shifted = h;
        for (int i = 0; i < 3; ++i)
            shifted.middleCols(3 * i, 3).array() += 0.7;
        Tape t;
        double base = ad::similarity_penalty(t, t.constant(h), 3, 3)->value(0, 0);
        CHECK(ad::similarity_penalty(t, t.constant(perm), 3, 3)->value(0, 0) ==
              doctest::Approx(base));
        CHECK(ad::similarity_penalty(t, t.constant(shifted), 3, 3)->value(0, 0) ==
              doctest::Approx(base));
    }
    SUBCASE("fewer than two chunks yields zero") {
        Eigen::MatrixXd h = random_matrix(2, 4, rng);
        Tape t;
        CHECK(ad::similarity_penalty(t, t.constant(h), 1, 4)->value(0, 0) == 0.0);
    }
    SUBCASE("gradient ignores the trailing leftover chunk") {
        Param h("h", random_matrix(3, 9, rng));
        std::vector<Param*> params = {&h};
        auto loss = [&](bool with_grad) {
            h.zero_grad();
            Tape t;
            Var l = ad::similarity_penalty(t, t.leaf(h), 2, 3); // chunk 3 left over
            double val = l->value(0, 0);
            if (with_grad) t.backward(l);
            return val;
        };
        CHECK(ad::grad_check(loss, params).max_rel_err <= 1e-4);
        loss(true);
        CHECK(h.grad.middleCols(6, 3).norm() == doctest::Approx(0.0));
    }
}

TEST_CASE("dropout scales survivors and disappears at inference") {
    Rng rng(41);
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(50, 40);
    Tape t;
    Var xv = t.constant(x);
    Var off = ad::dropout(t, xv, 0.5, rng, false);
    CHECK(off == xv); // inference mode is a no-op

    Var on = ad::dropout(t, xv, 0.5, rng, true);
    int zeros = 0, twos = 0;
    for (int r = 0; r < 50; ++r)
        for (int c = 0; c < 40; ++c) {
            if (on->value(r, c) == 0.0) ++zeros;
            if (on->value(r, c) == doctest::Approx(2.0)) ++twos;
        }
    CHECK(zeros + twos == 2000);
    CHECK(zeros > 850); // ~1000 expected, 3-sigma-ish slack
    CHECK(zeros < 1150);
}
