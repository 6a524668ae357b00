#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "helpers.hpp"
#include "vsmk/errors.hpp"
#include "vsmk/fft.hpp"
#include "vsmk/rng.hpp"
#include "vsmk/tensor.hpp"

using vsmk::Rng;
using vsmk::ShapeError;
using vsmk::Tensor;

TEST_CASE("tensor construction and indexing") {
    Tensor<float> z({2, 3});
    CHECK(z.rank() == 2);
    CHECK(z.size() == 6);
    for (size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0f);

    Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.at(0, 0) == 1.0f);
    CHECK(t.at(0, 2) == 3.0f);
    CHECK(t.at(1, 0) == 4.0f);
    CHECK(t.at(1, 2) == 6.0f);

    Tensor<float> r4({2, 2, 2, 2});
    r4.at(1, 0, 1, 0) = 7.0f;
    CHECK(r4[(((1 * 2 + 0) * 2 + 1) * 2 + 0)] == 7.0f);

    CHECK(Tensor<float>::full({3}, 2.5f)[2] == 2.5f);
    CHECK(Tensor<double>::scalar(4.0).item() == 4.0);
    CHECK(Tensor<float>::count({}) == 0);
    CHECK(Tensor<float>::count({4, 0, 3}) == 0);

    CHECK_THROWS_AS(Tensor<float>({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor<float>({2, 2}).item(), ShapeError);
}

TEST_CASE("tensor reshape, cast, fill") {
    Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<float> r = t.reshaped({3, 2});
    CHECK(r.at(2, 1) == 6.0f);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);

    Tensor<double> d = t.cast<double>();
    CHECK(d.at(1, 1) == doctest::Approx(5.0));
    CHECK(d.same_shape(Tensor<double>({2, 3})));

    t.fill(9.0f);
    CHECK(t[5] == 9.0f);
    CHECK(t.shape_str() == "[2,3]");
}

TEST_CASE("rng determinism and distribution sanity") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.u64() == b.u64());

    Rng r(7);
    double lo = 1.0, hi = 0.0, sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 1.0);
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));

    double m = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double g = r.normal();
        m += g;
        m2 += g * g;
    }
    m /= n;
    m2 /= n;
    CHECK(std::abs(m) < 0.05);
    CHECK(m2 == doctest::Approx(1.0).epsilon(0.05));

    for (int i = 0; i < 1000; ++i) CHECK(r.uniform_int(13) < 13u);

    // Forked streams are decoupled from the parent and from each other.
    Rng p1(5), p2(5);
    Rng f1 = p1.fork(1), f2 = p1.fork(2);
    CHECK(f1.u64() != f2.u64());
    Rng g1 = p2.fork(1);
    CHECK(Rng(5).fork(1).u64() == g1.u64());
}

namespace {

// O(n^2) reference DFT.
template <typename T>
std::vector<std::complex<T>> dft(const std::vector<std::complex<T>>& x, bool inverse) {
    const size_t n = x.size();
    std::vector<std::complex<T>> y(n);
    for (size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0, 0);
        for (size_t t = 0; t < n; ++t) {
            const double ang = (inverse ? 2.0 : -2.0) * M_PI * double(k * t % n) / double(n);
            acc += std::complex<double>(x[t].real(), x[t].imag()) *
                   std::complex<double>(std::cos(ang), std::sin(ang));
        }
        if (inverse) acc /= double(n);
        y[k] = std::complex<T>(T(acc.real()), T(acc.imag()));
    }
    return y;
}

}  // namespace

TEST_CASE("fft matches direct DFT and round-trips") {
    Rng rng(11);
    for (size_t n : {1u, 2u, 8u, 64u, 256u}) {
        std::vector<std::complex<double>> x(n);
        for (auto& c : x) c = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        auto want = dft(x, false);
        auto got = x;
        vsmk::fft::fft_inplace(got, false);
        for (size_t i = 0; i < n; ++i) {
            CHECK(got[i].real() == doctest::Approx(want[i].real()).epsilon(1e-9));
            CHECK(got[i].imag() == doctest::Approx(want[i].imag()).epsilon(1e-9));
        }
        vsmk::fft::fft_inplace(got, true);
        for (size_t i = 0; i < n; ++i)
            CHECK(got[i].real() == doctest::Approx(x[i].real()).epsilon(1e-10));
    }
    std::vector<std::complex<double>> bad(3);
    CHECK_THROWS_AS(vsmk::fft::fft_inplace(bad, false), ShapeError);
}

TEST_CASE("fft convolution and correlation match direct sums") {
    Rng rng(13);
    for (auto [la, lb] : std::vector<std::pair<size_t, size_t>>{
             {1, 1}, {2, 3}, {5, 5}, {16, 16}, {33, 7}, {64, 64}}) {
        auto a = testutil::random_vec<double>(rng, la);
        auto b = testutil::random_vec<double>(rng, lb);

        const size_t lout = la;  // causal truncation, as used by the model
        std::vector<double> got(lout);
        vsmk::fft::convolve(a.data(), la, 1, b.data(), lb, 1, got.data(), lout, 1);
        for (size_t t = 0; t < lout; ++t) {
            double want = 0;
            for (size_t i = 0; i <= t; ++i)
                if (i < la && t - i < lb) want += a[i] * b[t - i];
            CHECK(got[t] == doctest::Approx(want).epsilon(1e-9));
        }

        std::vector<double> cor(la);
        vsmk::fft::correlate(a.data(), la, 1, b.data(), lb, 1, cor.data(), la, 1);
        for (size_t i = 0; i < la; ++i) {
            double want = 0;
            for (size_t t = i; t < la; ++t)
                if (t - i < lb) want += a[t] * b[t - i];
            CHECK(cor[i] == doctest::Approx(want).epsilon(1e-9));
        }
    }
}

TEST_CASE("fft convolution handles strided columns") {
    // Columns of a row-major [L,C] matrix, exercised exactly as the model does.
    Rng rng(17);
    const size_t L = 24, C = 3;
    auto sig = testutil::random_vec<double>(rng, L * C);
    auto ker = testutil::random_vec<double>(rng, L * C);
    std::vector<double> out(L * C);
    for (size_t c = 0; c < C; ++c)
        vsmk::fft::convolve(sig.data() + c, L, C, ker.data() + c, L, C, out.data() + c, L, C);
    for (size_t c = 0; c < C; ++c)
        for (size_t t = 0; t < L; ++t) {
            double want = 0;
            for (size_t i = 0; i <= t; ++i) want += sig[i * C + c] * ker[(t - i) * C + c];
            CHECK(out[t * C + c] == doctest::Approx(want).epsilon(1e-9));
        }
}
