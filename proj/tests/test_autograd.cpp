#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "helpers.hpp"
#include "vsmk/autograd.hpp"
#include "vsmk/gradcheck.hpp"
#include "vsmk/ops.hpp"

using vsmk::Rng;
using vsmk::ShapeError;
using vsmk::Tape;
using vsmk::Tensor;
using vsmk::Var;
namespace ops = vsmk::ops;

namespace {

using D = double;
using Build = std::function<Var<D>(Tape<D>&, const std::vector<Var<D>>&)>;

// Runs `build` once with gradients to get the analytic result, then verifies
// every input tensor against central differences.
void check_grads(const Build& build, std::vector<Tensor<D>> inputs, double tol = 1e-6,
                 size_t samples = 40) {
    Tape<D> tape;
    std::vector<Var<D>> vars;
    vars.reserve(inputs.size());
    for (auto& in : inputs) vars.push_back(tape.leaf(in, true));
    Var<D> loss = build(tape, vars);
    REQUIRE(tape.val(loss).size() == 1);
    tape.backward(loss);
    std::vector<Tensor<D>> grads;
    grads.reserve(vars.size());
    for (auto v : vars) grads.push_back(tape.grad(v));

    auto loss_fn = [&](const std::vector<Tensor<D>>& ps) {
        Tape<D> t2(false);
        std::vector<Var<D>> vs;
        vs.reserve(ps.size());
        for (const auto& in : ps) vs.push_back(t2.leaf(in));
        return t2.val(build(t2, vs)).item();
    };
    Rng rng(99);
    auto rep = vsmk::fd_check(loss_fn, std::move(inputs), grads, samples, rng);
    INFO(rep.describe());
    CHECK(rep.max_rel < tol);
}

// Scalarize by weighting with a fixed random projection so upstream gradients
// are non-constant.
Var<D> project(Tape<D>& t, Var<D> y, uint64_t seed = 7) {
    Rng rng(seed);
    Tensor<D> p(t.val(y).shape());
    for (size_t i = 0; i < p.size(); ++i) p[i] = rng.uniform(-1.0, 1.0);
    return ops::reduce_sum(ops::cmul(y, std::move(p)));
}

Tensor<D> rand_t(Rng& rng, typename Tensor<D>::Shape s, double lo = -1.0, double hi = 1.0) {
    return testutil::random_tensor<D>(rng, std::move(s), lo, hi);
}

}  // namespace

TEST_CASE("tape mechanics") {
    Tape<D> t;
    auto a = t.leaf(Tensor<D>::scalar(2.0), true);
    auto b = t.leaf(Tensor<D>::scalar(3.0), true);
    auto c = ops::mul(a, b);
    auto loss = ops::add(c, a);
    t.backward(loss);
    CHECK(t.grad(a).item() == doctest::Approx(4.0));  // b + 1
    CHECK(t.grad(b).item() == doctest::Approx(2.0));  // a

    // Non-scalar roots are rejected.
    Tape<D> t2;
    auto v = t2.leaf(Tensor<D>({3}), true);
    CHECK_THROWS_AS(t2.backward(v), ShapeError);

    // grad() on a non-tracked node throws.
    Tape<D> t3;
    auto w = t3.leaf(Tensor<D>::scalar(1.0), false);
    CHECK_THROWS_AS(t3.grad(w), std::logic_error);

    // A gradient-disabled tape tracks nothing and refuses backward().
    Tape<D> t4(false);
    auto x = t4.leaf(Tensor<D>::scalar(1.0), true);
    CHECK(!t4.needs_grad(x));
    auto y = ops::relu(x);
    CHECK(!t4.needs_grad(y));
    CHECK_THROWS_AS(t4.backward(y), std::logic_error);

    // Gradients flow only into leaves that ask for them.
    Tape<D> t5;
    auto p = t5.leaf(Tensor<D>::scalar(2.0), true);
    auto q = t5.leaf(Tensor<D>::scalar(5.0), false);
    auto z = ops::mul(p, q);
    t5.backward(z);
    CHECK(t5.grad(p).item() == doctest::Approx(5.0));

    // acc_grad validates shapes.
    Tape<D> t6;
    auto m = t6.leaf(Tensor<D>({2, 2}), true);
    CHECK_THROWS_AS(t6.acc_grad(m, Tensor<D>({3})), ShapeError);
}

TEST_CASE("elementwise op values and gradients") {
    Rng rng(1);
    auto A = rand_t(rng, {3, 4});
    auto B = rand_t(rng, {3, 4});

    Tape<D> t;
    auto a = t.leaf(A), b = t.leaf(B);
    CHECK(t.val(ops::add(a, b)).at(1, 2) == doctest::Approx(A.at(1, 2) + B.at(1, 2)));
    CHECK(t.val(ops::sub(a, b)).at(2, 3) == doctest::Approx(A.at(2, 3) - B.at(2, 3)));
    CHECK(t.val(ops::mul(a, b)).at(0, 1) == doctest::Approx(A.at(0, 1) * B.at(0, 1)));
    CHECK(t.val(ops::scale(a, 2.5)).at(1, 1) == doctest::Approx(2.5 * A.at(1, 1)));
    CHECK(t.val(ops::neg(a)).at(0, 0) == doctest::Approx(-A.at(0, 0)));
    CHECK_THROWS_AS(ops::add(a, t.leaf(Tensor<D>({2, 2}))), ShapeError);

    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::add(v[0], v[1]));
    }, {A, B});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::sub(v[0], v[1]));
    }, {A, B});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::mul(v[0], v[1]));
    }, {A, B});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::scale(v[0], -1.7));
    }, {A});

    Rng crng(2);
    auto C = rand_t(crng, {3, 4});
    check_grads([C](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::cmul(v[0], C));
    }, {A});
}

TEST_CASE("exp, log, relu, softplus") {
    Rng rng(3);
    auto X = rand_t(rng, {2, 5});
    auto P = rand_t(rng, {2, 5}, 0.3, 2.0);  // positive, for log

    Tape<D> t;
    auto x = t.leaf(X);
    CHECK(t.val(ops::vexp(x)).at(1, 3) == doctest::Approx(std::exp(X.at(1, 3))));
    CHECK(t.val(ops::softplus(x)).at(0, 2) ==
          doctest::Approx(std::log1p(std::exp(X.at(0, 2)))));
    CHECK(t.val(ops::softplus(t.leaf(Tensor<D>::scalar(50.0)))).item() ==
          doctest::Approx(50.0));

    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::vexp(v[0]));
    }, {X});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::vlog(v[0]));
    }, {P});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::softplus(v[0]));
    }, {X});

    // relu: keep inputs away from the kink.
    Tensor<D> R({4, 4});
    Rng rr(4);
    for (size_t i = 0; i < R.size(); ++i)
        R[i] = (rr.bernoulli(0.5) ? 1.0 : -1.0) * rr.uniform(0.2, 1.5);
    Tape<D> t2;
    auto xr = t2.leaf(R);
    auto yr = t2.val(ops::relu(xr));
    for (size_t i = 0; i < R.size(); ++i) CHECK(yr[i] == std::max(R[i], 0.0));
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::relu(v[0]));
    }, {R});
}

TEST_CASE("add_rowvec broadcasts bias over rows") {
    Rng rng(5);
    auto X = rand_t(rng, {4, 6});
    auto B = rand_t(rng, {6});
    Tape<D> t;
    auto y = t.val(ops::add_rowvec(t.leaf(X), t.leaf(B)));
    for (size_t r = 0; r < 4; ++r)
        for (size_t c = 0; c < 6; ++c) CHECK(y.at(r, c) == doctest::Approx(X.at(r, c) + B[c]));
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::add_rowvec(v[0], v[1]));
    }, {X, B});
}

TEST_CASE("matmul matches triple-loop reference") {
    Rng rng(6);
    const size_t m = 7, k = 5, n = 9;
    auto A = rand_t(rng, {m, k});
    auto B = rand_t(rng, {k, n});
    Tape<D> t;
    auto Y = t.val(ops::matmul(t.leaf(A), t.leaf(B)));
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            double want = 0;
            for (size_t q = 0; q < k; ++q) want += A.at(i, q) * B.at(q, j);
            CHECK(Y.at(i, j) == doctest::Approx(want).epsilon(1e-12));
        }
    CHECK_THROWS_AS(ops::matmul(t.leaf(A), t.leaf(Tensor<D>({k + 1, n}))), ShapeError);

    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::matmul(v[0], v[1]));
    }, {A, B});

    // Batched lhs with broadcast rhs, and fully batched.
    auto A3 = rand_t(rng, {3, 4, 5});
    auto B2 = rand_t(rng, {5, 2});
    auto B3 = rand_t(rng, {3, 5, 2});
    Tape<D> tb;
    auto Yb = tb.val(ops::matmul(tb.leaf(A3), tb.leaf(B3)));
    for (size_t b = 0; b < 3; ++b)
        for (size_t i = 0; i < 4; ++i)
            for (size_t j = 0; j < 2; ++j) {
                double want = 0;
                for (size_t q = 0; q < 5; ++q) want += A3.at(b, i, q) * B3.at(b, q, j);
                CHECK(Yb.at(b, i, j) == doctest::Approx(want).epsilon(1e-12));
            }
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::matmul(v[0], v[1]));
    }, {A3, B2});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::matmul(v[0], v[1]));
    }, {A3, B3});
}

TEST_CASE("linear y = x W^T + b") {
    Rng rng(7);
    auto X = rand_t(rng, {5, 4});
    auto W = rand_t(rng, {3, 4});
    auto B = rand_t(rng, {3});
    Tape<D> t;
    auto Y = t.val(ops::linear(t.leaf(X), t.leaf(W), t.leaf(B)));
    REQUIRE(Y.shape() == typename Tensor<D>::Shape{5, 3});
    for (size_t r = 0; r < 5; ++r)
        for (size_t o = 0; o < 3; ++o) {
            double want = B[o];
            for (size_t i = 0; i < 4; ++i) want += X.at(r, i) * W.at(o, i);
            CHECK(Y.at(r, o) == doctest::Approx(want).epsilon(1e-12));
        }
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::linear(v[0], v[1], v[2]));
    }, {X, W, B});

    // Leading dims fold: [2,5,4] x W[3,4] -> [2,5,3].
    auto X3 = rand_t(rng, {2, 5, 4});
    Tape<D> t2;
    auto Y3 = t2.val(ops::linear(t2.leaf(X3), t2.leaf(W), t2.leaf(B)));
    CHECK(Y3.shape() == typename Tensor<D>::Shape{2, 5, 3});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::linear(v[0], v[1], v[2]));
    }, {X3, W, B});
}

namespace {

// Direct six-loop convolution reference.
Tensor<D> conv_ref(const Tensor<D>& x, const Tensor<D>& w, const Tensor<D>& b, size_t stride,
                   size_t pad) {
    const size_t B = x.shape(0), Cin = x.shape(1), H = x.shape(2), W = x.shape(3);
    const size_t Cout = w.shape(0), kh = w.shape(2), kw = w.shape(3);
    const size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const size_t Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor<D> y({B, Cout, Ho, Wo});
    for (size_t bi = 0; bi < B; ++bi)
        for (size_t co = 0; co < Cout; ++co)
            for (size_t oy = 0; oy < Ho; ++oy)
                for (size_t ox = 0; ox < Wo; ++ox) {
                    double acc = b[co];
                    for (size_t ci = 0; ci < Cin; ++ci)
                        for (size_t dy = 0; dy < kh; ++dy)
                            for (size_t dx = 0; dx < kw; ++dx) {
                                const long iy = long(oy * stride + dy) - long(pad);
                                const long ix = long(ox * stride + dx) - long(pad);
                                if (iy >= 0 && iy < long(H) && ix >= 0 && ix < long(W))
                                    acc += x.at(bi, ci, size_t(iy), size_t(ix)) *
                                           w.at(co, ci, dy, dx);
                            }
                    y.at(bi, co, oy, ox) = acc;
                }
    return y;
}

}  // namespace

TEST_CASE("conv2d matches direct reference") {
    Rng rng(8);
    struct Case {
        size_t B, Cin, H, W, Cout, kh, kw, stride, pad;
    };
    for (const auto& cs : {Case{2, 3, 9, 7, 4, 3, 3, 1, 1}, Case{1, 2, 8, 8, 3, 3, 3, 2, 1},
                           Case{2, 1, 6, 5, 2, 2, 3, 1, 0}, Case{1, 4, 4, 4, 4, 1, 1, 1, 0}}) {
        auto X = rand_t(rng, {cs.B, cs.Cin, cs.H, cs.W});
        auto W = rand_t(rng, {cs.Cout, cs.Cin, cs.kh, cs.kw});
        auto Bs = rand_t(rng, {cs.Cout});
        Tape<D> t;
        auto Y = t.val(ops::conv2d(t.leaf(X), t.leaf(W), t.leaf(Bs), cs.stride, cs.pad));
        auto ref = conv_ref(X, W, Bs, cs.stride, cs.pad);
        REQUIRE(Y.same_shape(ref));
        CHECK(testutil::max_abs_diff(Y.data(), ref.data(), ref.size()) < 1e-12);

        const size_t stride = cs.stride, pad = cs.pad;
        check_grads([stride, pad](Tape<D>& tp, const std::vector<Var<D>>& v) {
            return project(tp, ops::conv2d(v[0], v[1], v[2], stride, pad));
        }, {X, W, Bs}, 1e-6, 30);
    }
    Tape<D> t;
    CHECK_THROWS_AS(ops::conv2d(t.leaf(Tensor<D>({1, 2, 4, 4})),
                                t.leaf(Tensor<D>({3, 3, 3, 3})), t.leaf(Tensor<D>({3})), 1, 1),
                    ShapeError);
}

TEST_CASE("softmax rows: normalization, shift invariance, gradient") {
    Rng rng(9);
    auto X = rand_t(rng, {6, 5}, -3.0, 3.0);
    Tape<D> t;
    auto Y = t.val(ops::softmax_rows(t.leaf(X)));
    for (size_t r = 0; r < 6; ++r) {
        double s = 0;
        for (size_t c = 0; c < 5; ++c) {
            CHECK(Y.at(r, c) > 0.0);
            s += Y.at(r, c);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    // Shifting logits by a constant leaves the distribution unchanged.
    Tensor<D> Xs = X;
    for (size_t i = 0; i < Xs.size(); ++i) Xs[i] += 100.0;
    auto Ys = t.val(ops::softmax_rows(t.leaf(Xs)));
    CHECK(testutil::max_abs_diff(Y.data(), Ys.data(), Y.size()) < 1e-12);

    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::softmax_rows(v[0]));
    }, {X});
}

TEST_CASE("layer_norm_rows normalizes and differentiates") {
    Rng rng(10);
    auto X = rand_t(rng, {7, 8}, -2.0, 2.0);
    Tensor<D> G = Tensor<D>::full({8}, 1.0);
    Tensor<D> Bt({8});
    Tape<D> t;
    auto Y = t.val(ops::layer_norm_rows(t.leaf(X), t.leaf(G), t.leaf(Bt)));
    for (size_t r = 0; r < 7; ++r) {
        double mu = 0, var = 0;
        for (size_t c = 0; c < 8; ++c) mu += Y.at(r, c);
        mu /= 8;
        for (size_t c = 0; c < 8; ++c) var += (Y.at(r, c) - mu) * (Y.at(r, c) - mu);
        var /= 8;
        CHECK(std::abs(mu) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // (C-1)/C effect absorbed by eps
    }
    auto Gr = rand_t(rng, {8}, 0.5, 1.5);
    auto Br = rand_t(rng, {8});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::layer_norm_rows(v[0], v[1], v[2]));
    }, {X, Gr, Br});
}

TEST_CASE("channel_norm normalizes each spatial plane") {
    Rng rng(11);
    auto X = rand_t(rng, {2, 3, 5, 4}, -2.0, 2.0);
    Tensor<D> G = Tensor<D>::full({3}, 1.0);
    Tensor<D> Bt({3});
    Tape<D> t;
    auto Y = t.val(ops::channel_norm(t.leaf(X), t.leaf(G), t.leaf(Bt)));
    for (size_t b = 0; b < 2; ++b)
        for (size_t c = 0; c < 3; ++c) {
            double mu = 0;
            for (size_t i = 0; i < 20; ++i) mu += Y.data()[(b * 3 + c) * 20 + i];
            CHECK(std::abs(mu / 20) < 1e-12);
        }
    auto Gr = rand_t(rng, {3}, 0.5, 1.5);
    auto Br = rand_t(rng, {3});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::channel_norm(v[0], v[1], v[2]));
    }, {X, Gr, Br});
}

TEST_CASE("reductions and pooling") {
    Rng rng(12);
    auto X = rand_t(rng, {3, 4});
    Tape<D> t;
    double s = 0;
    for (size_t i = 0; i < X.size(); ++i) s += X[i];
    CHECK(t.val(ops::reduce_sum(t.leaf(X))).item() == doctest::Approx(s).epsilon(1e-12));
    CHECK(t.val(ops::reduce_mean(t.leaf(X))).item() == doctest::Approx(s / 12).epsilon(1e-12));

    // Unique maximum for a well-defined subgradient.
    Tensor<D> M = X;
    M.at(1, 2) = 10.0;
    CHECK(t.val(ops::reduce_max(t.leaf(M))).item() == 10.0);

    check_grads([](Tape<D>&, const std::vector<Var<D>>& v) {
        return ops::reduce_sum(v[0]);
    }, {X});
    check_grads([](Tape<D>&, const std::vector<Var<D>>& v) {
        return ops::reduce_mean(v[0]);
    }, {X});
    check_grads([](Tape<D>&, const std::vector<Var<D>>& v) {
        return ops::reduce_max(v[0]);
    }, {M});

    auto X4 = rand_t(rng, {2, 3, 4, 5});
    Tape<D> t2;
    auto P = t2.val(ops::global_avg_pool(t2.leaf(X4)));
    for (size_t b = 0; b < 2; ++b)
        for (size_t c = 0; c < 3; ++c) {
            double mu = 0;
            for (size_t i = 0; i < 20; ++i) mu += X4.data()[(b * 3 + c) * 20 + i];
            CHECK(P.at(b, c) == doctest::Approx(mu / 20).epsilon(1e-12));
        }
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::global_avg_pool(v[0]));
    }, {X4});
}

TEST_CASE("dropout: identity in eval, inverted mask in train") {
    Rng rng(13);
    auto X = rand_t(rng, {50, 20}, 0.5, 1.5);
    Tape<D> t;
    auto x = t.leaf(X, true);
    Rng drng(100);
    auto ye = ops::dropout(x, 0.5, drng, /*train=*/false);
    CHECK(ye.id == x.id);  // eval mode is a true no-op
    auto y0 = ops::dropout(x, 0.0, drng, /*train=*/true);
    CHECK(y0.id == x.id);

    Rng drng2(100);
    auto yt = ops::dropout(x, 0.5, drng2, /*train=*/true);
    const auto& Y = t.val(yt);
    size_t zeros = 0;
    for (size_t i = 0; i < Y.size(); ++i) {
        const double ratio = Y[i] / X[i];
        const bool dropped = std::abs(ratio) < 1e-12;
        const bool kept = std::abs(ratio - 2.0) < 1e-12;
        CHECK((dropped || kept));
        zeros += dropped;
    }
    CHECK(zeros > 300);
    CHECK(zeros < 700);

    // Same seed => same mask, so FD is well-posed.
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        Rng r(555);
        return project(tp, ops::dropout(v[0], 0.4, r, true));
    }, {X});
}

TEST_CASE("permute, reshape, concat, slice, gather") {
    Rng rng(14);
    auto X = rand_t(rng, {2, 3, 4});
    Tape<D> t;
    auto Y = t.val(ops::permute(t.leaf(X), {2, 0, 1}));
    REQUIRE(Y.shape() == typename Tensor<D>::Shape{4, 2, 3});
    for (size_t i = 0; i < 2; ++i)
        for (size_t j = 0; j < 3; ++j)
            for (size_t k = 0; k < 4; ++k) CHECK(Y.at(k, i, j) == X.at(i, j, k));
    // Permuting there and back is the identity.
    auto back = t.val(ops::permute(ops::permute(t.leaf(X), {2, 0, 1}), {1, 2, 0}));
    CHECK(testutil::max_abs_diff(back.data(), X.data(), X.size()) == 0.0);
    CHECK_THROWS_AS(ops::permute(t.leaf(X), {0, 0, 1}), ShapeError);

    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::permute(v[0], {2, 0, 1}));
    }, {X});
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::reshape(v[0], {6, 4}));
    }, {X});

    auto A = rand_t(rng, {2, 2, 3});
    auto B = rand_t(rng, {2, 5, 3});
    Tape<D> tc;
    auto C = tc.val(ops::concat<D>({tc.leaf(A), tc.leaf(B)}, 1));
    REQUIRE(C.shape() == typename Tensor<D>::Shape{2, 7, 3});
    for (size_t i = 0; i < 2; ++i)
        for (size_t k = 0; k < 3; ++k) {
            CHECK(C.at(i, 1, k) == A.at(i, 1, k));
            CHECK(C.at(i, 4, k) == B.at(i, 2, k));
        }
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::concat<D>({v[0], v[1]}, 1));
    }, {A, B});

    // Slicing the concat recovers the parts exactly.
    Tape<D> ts;
    auto cc = ops::concat<D>({ts.leaf(A), ts.leaf(B)}, 1);
    auto sl = ts.val(ops::slice(cc, 1, 2, 7));
    CHECK(testutil::max_abs_diff(sl.data(), B.data(), B.size()) == 0.0);
    CHECK_THROWS_AS(ops::slice(cc, 1, 5, 3), ShapeError);
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::slice(v[0], 1, 1, 4));
    }, {B});

    // gather_rows with a repeated index: backward must scatter-add.
    auto M = rand_t(rng, {4, 3});
    auto idx = std::make_shared<const std::vector<size_t>>(std::vector<size_t>{0, 0, 2});
    Tape<D> tg;
    auto mv = tg.leaf(M, true);
    auto g = ops::gather_rows(mv, idx);
    CHECK(tg.val(g).at(1, 2) == M.at(0, 2));
    tg.backward(ops::reduce_sum(g));
    CHECK(tg.grad(mv).at(0, 0) == doctest::Approx(2.0));
    CHECK(tg.grad(mv).at(1, 0) == 0.0);
    CHECK(tg.grad(mv).at(2, 0) == doctest::Approx(1.0));
    check_grads([idx](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::gather_rows(v[0], idx));
    }, {M});
}

TEST_CASE("slot_scale weights feature groups") {
    Rng rng(15);
    const size_t B = 3, G = 4, Dd = 5;
    auto V = rand_t(rng, {B, G * Dd});
    auto A = rand_t(rng, {B, G}, 0.1, 0.9);
    Tape<D> t;
    auto Y = t.val(ops::slot_scale(t.leaf(V), t.leaf(A), G));
    for (size_t b = 0; b < B; ++b)
        for (size_t g = 0; g < G; ++g)
            for (size_t d = 0; d < Dd; ++d)
                CHECK(Y.at(b, g * Dd + d) ==
                      doctest::Approx(A.at(b, g) * V.at(b, g * Dd + d)).epsilon(1e-12));
    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::slot_scale(v[0], v[1], 4));
    }, {V, A});
}

TEST_CASE("masked weighted cross-entropy") {
    Rng rng(16);
    const size_t B = 5, K = 3;
    auto Z = rand_t(rng, {B, K}, -2.0, 2.0);
    auto labels = std::make_shared<const std::vector<int>>(std::vector<int>{1, -1, 0, 2, -1});
    Tensor<D> W({K}, {0.7, 1.3, 2.0});

    Tape<D> t;
    auto z = t.leaf(Z, true);
    auto l = ops::masked_weighted_ce(z, labels, W);
    const auto& L = t.val(l);

    for (size_t b = 0; b < B; ++b) {
        const int y = (*labels)[b];
        if (y < 0) {
            CHECK(L[b] == 0.0);  // exactly zero, not approximately
            continue;
        }
        double m = Z.at(b, 0);
        for (size_t j = 1; j < K; ++j) m = std::max(m, Z.at(b, j));
        double s = 0;
        for (size_t j = 0; j < K; ++j) s += std::exp(Z.at(b, j) - m);
        const double want = W[size_t(y)] * (m + std::log(s) - Z.at(b, size_t(y)));
        CHECK(L[b] == doctest::Approx(want).epsilon(1e-12));
        CHECK(L[b] > 0.0);
    }

    t.backward(ops::reduce_sum(l));
    for (size_t b = 0; b < B; ++b)
        if ((*labels)[b] < 0)
            for (size_t j = 0; j < K; ++j) CHECK(t.grad(z).at(b, j) == 0.0);  // bitwise zero

    check_grads([labels, W](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::masked_weighted_ce(v[0], labels, W));
    }, {Z});

    // Uniform logits cost w[y] * ln K.
    Tape<D> tu;
    auto zu = tu.leaf(Tensor<D>({1, 4}));
    auto lab1 = std::make_shared<const std::vector<int>>(std::vector<int>{2});
    auto lu = tu.val(ops::masked_weighted_ce(zu, lab1, Tensor<D>::full({4}, 1.0)));
    CHECK(lu[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    CHECK_THROWS_AS(
        ops::masked_weighted_ce(tu.leaf(Tensor<D>({1, 2})),
                                std::make_shared<const std::vector<int>>(std::vector<int>{5}),
                                Tensor<D>::full({2}, 1.0)),
        vsmk::DataError);
}

TEST_CASE("s6_scan gradients via finite differences") {
    Rng rng(17);
    const size_t L = 12, d = 3, N = 5;
    Tensor<D> A({N});
    for (size_t i = 0; i < N; ++i) A[i] = -rng.uniform(0.05, 1.5);
    auto Delta = rand_t(rng, {L, d}, 0.01, 0.3);
    auto Bm = rand_t(rng, {L, N});
    auto Cm = rand_t(rng, {L, N});
    auto X = rand_t(rng, {L, d});

    // Value agrees with an explicit recurrence written out locally.
    Tape<D> t;
    auto y = t.val(ops::s6_scan(t.leaf(A), t.leaf(Delta), t.leaf(Bm), t.leaf(Cm), t.leaf(X)));
    std::vector<double> h(d * N, 0.0);
    for (size_t tt = 0; tt < L; ++tt)
        for (size_t c = 0; c < d; ++c) {
            double acc = 0;
            for (size_t i = 0; i < N; ++i) {
                const double u = Delta.at(tt, c) * A[i];
                const double abar = std::exp(u);
                const double bbar = std::expm1(u) / A[i] * Bm.at(tt, i);
                h[c * N + i] = abar * h[c * N + i] + bbar * X.at(tt, c);
                acc += Cm.at(tt, i) * h[c * N + i];
            }
            CHECK(y.at(tt, c) == doctest::Approx(acc).epsilon(1e-9));
        }

    check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
        return project(tp, ops::s6_scan(v[0], v[1], v[2], v[3], v[4]));
    }, {A, Delta, Bm, Cm, X}, 1e-6, 30);

    Tape<D> tb;
    CHECK_THROWS_AS(ops::s6_scan(tb.leaf(A), tb.leaf(Delta), tb.leaf(Tensor<D>({L, N + 1})),
                                 tb.leaf(Cm), tb.leaf(X)),
                    ShapeError);
}

TEST_CASE("fft_convolve matches direct causal convolution and differentiates") {
    Rng rng(18);
    for (size_t L : {1u, 2u, 5u, 16u, 33u}) {
        const size_t C = 3;
        auto S = rand_t(rng, {L, C});
        auto K = rand_t(rng, {L, C});
        Tape<D> t;
        auto Y = t.val(ops::fft_convolve(t.leaf(S), t.leaf(K)));
        for (size_t c = 0; c < C; ++c)
            for (size_t tt = 0; tt < L; ++tt) {
                double want = 0;
                for (size_t i = 0; i <= tt; ++i) want += K.at(i, c) * S.at(tt - i, c);
                CHECK(Y.at(tt, c) == doctest::Approx(want).epsilon(1e-9));
            }
        check_grads([](Tape<D>& tp, const std::vector<Var<D>>& v) {
            return project(tp, ops::fft_convolve(v[0], v[1]));
        }, {S, K}, 1e-6, 25);
    }
}

TEST_CASE("whole-graph gradient: small composite network") {
    // A miniature end-to-end graph touching most ops at once.
    Rng rng(19);
    auto X = rand_t(rng, {2, 2, 6, 6});
    auto W1 = rand_t(rng, {3, 2, 3, 3}, -0.5, 0.5);
    auto B1 = rand_t(rng, {3}, -0.1, 0.1);
    auto G = rand_t(rng, {3}, 0.8, 1.2);
    auto Bn = rand_t(rng, {3}, -0.1, 0.1);
    auto W2 = rand_t(rng, {4, 3}, -0.5, 0.5);
    auto B2 = rand_t(rng, {4}, -0.1, 0.1);
    auto labels = std::make_shared<const std::vector<int>>(std::vector<int>{2, -1});
    Tensor<D> cw = Tensor<D>::full({4}, 1.0);

    check_grads([labels, cw](Tape<D>&, const std::vector<Var<D>>& v) {
        auto h = ops::conv2d(v[0], v[1], v[2], 1, 1);
        h = ops::channel_norm(h, v[3], v[4]);
        h = ops::relu(h);
        auto pooled = ops::global_avg_pool(h);
        auto logits = ops::linear(pooled, v[5], v[6]);
        auto ce = ops::masked_weighted_ce(logits, labels, cw);
        return ops::reduce_mean(ce);
    }, {X, W1, B1, G, Bn, W2, B2}, 1e-6, 25);
}
