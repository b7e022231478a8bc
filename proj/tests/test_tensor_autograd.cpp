#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "psycho/complex.hpp"
#include "psycho/conv.hpp"
#include "psycho/gradcheck.hpp"
#include "psycho/nn.hpp"

using namespace psycho;
using D = double;

namespace {

Tensor<D> randn(Rng& rng, Shape s) { return random_normal<D>(rng, std::move(s)); }

// direct quadruple-loop cross-correlation oracle
Tensor<D> conv_oracle(const Tensor<D>& x, const Tensor<D>& w, int64_t stride, int64_t pad, int64_t groups) {
    const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t O = w.shape[0], Cg = w.shape[1], K = w.shape[2];
    const int64_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
    const int64_t Og = O / groups;
    Tensor<D> out({N, O, OH, OW});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) {
            const int64_t g = o / Og;
            for (int64_t oh = 0; oh < OH; ++oh)
                for (int64_t ow = 0; ow < OW; ++ow) {
                    double s = 0;
                    for (int64_t c = 0; c < Cg; ++c)
                        for (int64_t kh = 0; kh < K; ++kh)
                            for (int64_t kw = 0; kw < K; ++kw) {
                                const int64_t ih = oh * stride + kh - pad, iw = ow * stride + kw - pad;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                s += x.at4(n, g * Cg + c, ih, iw) * w.at4(o, c, kh, kw);
                            }
                    out.at4(n, o, oh, ow) = s;
                }
        }
    return out;
}

double max_abs_diff(const Tensor<D>& a, const Tensor<D>& b) {
    REQUIRE(a.shape == b.shape);
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor<D> t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.all_finite());
    CHECK_THROWS(Tensor<D>({2, 3}, {1.0, 2.0}));
    CHECK_THROWS(t.reshaped({4, 2}));
    CHECK(t.reshaped({3, 2}).shape == Shape{3, 2});
}

TEST_CASE("complex multiply by i and magnitude") {
    auto a = constant(Tensor<D>::scalar(1));
    auto z = CVar<D>{a, constant(Tensor<D>::scalar(0))};       // 1+0i
    auto i = CVar<D>{constant(Tensor<D>::scalar(0)), constant(Tensor<D>::scalar(1))};
    auto zi = cmul(z, i);
    CHECK(zi.re->value.data[0] == doctest::Approx(0));
    CHECK(zi.im->value.data[0] == doctest::Approx(1));

    auto w = CVar<D>{constant(Tensor<D>::scalar(3)), constant(Tensor<D>::scalar(4))};
    CHECK(magnitude(w)->value.data[0] == doctest::Approx(5));
}

TEST_CASE("conj is an involution") {
    Rng rng(7);
    CVar<D> z{constant(randn(rng, {100})), constant(randn(rng, {100}))};
    auto zz = cconj(cconj(z));
    CHECK(max_abs_diff(zz.re->value, z.re->value) == 0);
    CHECK(max_abs_diff(zz.im->value, z.im->value) < 1e-15);
}

TEST_CASE("broadcasting rules") {
    Rng rng(1);
    auto x = constant(randn(rng, {2, 3, 4, 4}));
    auto c = constant(randn(rng, {1, 3, 1, 1}));
    auto y = add(x, c);
    CHECK(y->value.shape == x->value.shape);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t ch = 0; ch < 3; ++ch)
            CHECK(y->value.at4(n, ch, 2, 1) == doctest::Approx(x->value.at4(n, ch, 2, 1) + c->value[ch]));
    CHECK_THROWS_WITH_AS(add(constant(Tensor<D>::zeros({2, 3})), constant(Tensor<D>::zeros({2, 4}))),
                         doctest::Contains("(2,3)"), std::invalid_argument);
}

TEST_CASE("backward on sum gives ones") {
    Rng rng(2);
    auto x = leaf(randn(rng, {3, 5}));
    backward(sum_all(x));
    for (int64_t i = 0; i < x->value.numel(); ++i) CHECK(x->grad[i] == 1.0);
}

TEST_CASE("backward of sum |z|^2") {
    Rng rng(3);
    CVar<D> z{leaf(randn(rng, {8})), leaf(randn(rng, {8}))};
    auto m2 = add(mul(z.re, z.re), mul(z.im, z.im));
    backward(sum_all(m2));
    for (int64_t i = 0; i < 8; ++i) {
        CHECK(z.re->grad[i] == doctest::Approx(2 * z.re->value[i]));
        CHECK(z.im->grad[i] == doctest::Approx(2 * z.im->value[i]));
    }
}

TEST_CASE("fan-out accumulation is exact") {
    Rng rng(4);
    auto x = leaf(randn(rng, {6}));
    // y = 2x + 3x; grad must be exactly 5
    backward(sum_all(add(scale(x, 2.0), scale(x, 3.0))));
    for (int64_t i = 0; i < 6; ++i) CHECK(x->grad[i] == 5.0);
}

TEST_CASE("non-scalar loss rejected") {
    auto x = leaf(Tensor<D>::zeros({3}));
    CHECK_THROWS_AS(backward(x), std::invalid_argument);
}

TEST_CASE("conv2d trivial identities") {
    Rng rng(5);
    auto x = constant(randn(rng, {1, 1, 5, 5}));
    auto w1 = constant(Tensor<D>::full({1, 1, 1, 1}, 1.0));
    auto y = conv2d<D>(x, w1, nullptr, 1, 0);
    CHECK(max_abs_diff(y->value, x->value) == 0);

    auto ones = constant(Tensor<D>::full({1, 1, 5, 5}, 1.0));
    auto w3 = constant(Tensor<D>::full({1, 1, 3, 3}, 1.0));
    auto z = conv2d<D>(ones, w3, nullptr, 1, 1);
    CHECK(z->value.at4(0, 0, 2, 2) == doctest::Approx(9));
    CHECK(z->value.at4(0, 0, 0, 0) == doctest::Approx(4));  // corner sees a 2x2 window
}

TEST_CASE("conv2d matches quadruple-loop oracle") {
    Rng rng(6);
    for (auto [stride, pad] : {std::pair<int64_t, int64_t>{1, 1}, {2, 1}, {1, 0}}) {
        Tensor<D> xv = randn(rng, {1, 3, 8, 8});
        Tensor<D> wv = randn(rng, {4, 3, 3, 3});
        auto y = conv2d<D>(constant(xv), constant(wv), nullptr, stride, pad);
        CHECK(max_abs_diff(y->value, conv_oracle(xv, wv, stride, pad, 1)) < 1e-6);
    }
}

TEST_CASE("grouped conv equals per-channel convolution") {
    Rng rng(8);
    Tensor<D> xv = randn(rng, {2, 4, 6, 6});
    Tensor<D> wv = randn(rng, {4, 1, 3, 3});
    auto y = conv2d<D>(constant(xv), constant(wv), nullptr, 1, 1, 4);
    CHECK(max_abs_diff(y->value, conv_oracle(xv, wv, 1, 1, 4)) < 1e-6);
}

TEST_CASE("conv2d validation errors") {
    Rng rng(9);
    auto x = constant(randn(rng, {1, 3, 4, 4}));
    auto w = constant(randn(rng, {2, 3, 7, 7}));
    CHECK_THROWS_AS(conv2d<D>(x, w, nullptr, 1, 0), std::invalid_argument);  // kernel too large
    auto w2 = constant(randn(rng, {2, 2, 3, 3}));
    CHECK_THROWS_AS(conv2d<D>(x, w2, nullptr, 1, 1), std::invalid_argument);  // channel mismatch
}

TEST_CASE("softmax and cross-entropy trivia") {
    auto x = constant(Tensor<D>({1, 2}, {0.0, 0.0}));
    auto s = softmax(x, 1);
    CHECK(s->value[0] == doctest::Approx(0.5));
    CHECK(s->value[1] == doctest::Approx(0.5));

    auto logits = constant(Tensor<D>::zeros({1, 10}));
    auto ce = cross_entropy(logits, {3});
    CHECK(ce->value.data[0] == doctest::Approx(std::log(10.0)));
}

TEST_CASE("gelu at zero") {
    auto x = leaf(Tensor<D>::scalar(0));
    auto y = gelu(x);
    CHECK(y->value.data[0] == 0.0);
    backward(y);
    CHECK(x->grad.data[0] == doctest::Approx(0.5));
}

TEST_CASE("gradcheck sum of squares is tiny") {
    Rng rng(10);
    auto x = leaf(randn(rng, {7}));
    auto f = [&] { return sum_all(mul(x, x)); };
    CHECK(gradcheck<D>(f, {x}, 1e-5) < 1e-9);
}

TEST_CASE("gradcheck elementwise ops") {
    Rng rng(11);
    auto a = leaf(randn(rng, {2, 3, 4, 4}));
    auto b = leaf(randn(rng, {1, 3, 1, 1}));
    auto fsum = [&](Var<D> v) { return sum_all(mul(v, v)); };
    CHECK(gradcheck<D>([&] { return fsum(add(a, b)); }, {a, b}) < 1e-6);
    CHECK(gradcheck<D>([&] { return fsum(mul(a, b)); }, {a, b}) < 1e-6);
    CHECK(gradcheck<D>([&] { return fsum(div(a, add_scalar(mul(b, b), 1.0))); }, {a, b}) < 1e-6);
    CHECK(gradcheck<D>([&] { return fsum(gelu(a)); }, {a}) < 1e-4);
    CHECK(gradcheck<D>([&] { return fsum(exp_op(scale(a, 0.3))); }, {a}) < 1e-4);
    CHECK(gradcheck<D>([&] { return fsum(sqrt_op(add_scalar(mul(a, a), 0.5))); }, {a}) < 1e-4);
    CHECK(gradcheck<D>([&] { return fsum(pow_scalar(add_scalar(mul(a, a), 0.5), 0.8)); }, {a}) < 1e-4);
    CHECK(gradcheck<D>([&] { return fsum(log_op(add_scalar(mul(a, a), 1.0))); }, {a}) < 1e-4);
}

TEST_CASE("gradcheck matmul linear softmax") {
    Rng rng(12);
    auto x = leaf(randn(rng, {3, 4}));
    auto w = leaf(randn(rng, {5, 4}));
    auto b = leaf(randn(rng, {5}));
    CHECK(gradcheck<D>([&] { return sum_all(mul(linear(x, w, b), linear(x, w, b))); }, {x, w, b}) < 1e-6);
    auto m = leaf(randn(rng, {4, 3}));
    CHECK(gradcheck<D>([&] { return sum_all(mul(matmul(x, m), matmul(x, m))); }, {x, m}) < 1e-6);
    Tensor<D> probe = randn(rng, {3, 4});
    CHECK(gradcheck<D>([&] { return sum_all(mul(softmax(x, 1), constant(probe))); }, {x}) < 1e-4);
    std::vector<int> labels{1, 0, 4};
    CHECK(gradcheck<D>([&] { return cross_entropy(linear(x, w, b), labels); }, {x, w, b}) < 1e-6);
}

TEST_CASE("gradcheck conv and pools") {
    Rng rng(13);
    auto x = leaf(randn(rng, {2, 3, 6, 6}));
    auto w = leaf(randn(rng, {4, 3, 3, 3}));
    auto b = leaf(randn(rng, {4}));
    auto loss = [&](Var<D> v) { return sum_all(mul(v, v)); };
    CHECK(gradcheck<D>([&] { return loss(conv2d(x, w, b, 1, 1)); }, {x, w, b}) < 1e-6);
    CHECK(gradcheck<D>([&] { return loss(conv2d(x, w, b, 2, 1)); }, {x, w, b}) < 1e-6);
    auto wd = leaf(randn(rng, {3, 1, 3, 3}));
    CHECK(gradcheck<D>([&] { return loss(conv2d<D>(x, wd, nullptr, 1, 1, 3)); }, {x, wd}) < 1e-6);
    CHECK(gradcheck<D>([&] { return loss(avgpool_global(x)); }, {x}) < 1e-6);
    CHECK(gradcheck<D>([&] { return loss(maxpool2d(x, 2, 2)); }, {x}) < 1e-6);
}

TEST_CASE("gradcheck shaping ops") {
    Rng rng(14);
    auto a = leaf(randn(rng, {2, 3, 4, 4}));
    auto b = leaf(randn(rng, {2, 2, 4, 4}));
    auto loss = [&](Var<D> v) { return sum_all(mul(v, v)); };
    CHECK(gradcheck<D>([&] { return loss(concat<D>({a, b}, 1)); }, {a, b}) < 1e-6);
    CHECK(gradcheck<D>([&] { return loss(roll2(a, 2, 3)); }, {a}) < 1e-6);
    CHECK(gradcheck<D>([&] { return loss(crop2(a, 1, 1, 2, 2)); }, {a}) < 1e-6);
    CHECK(gradcheck<D>([&] { return loss(reshape(a, {2, 48})); }, {a}) < 1e-6);
    Tensor<D> mask = randn(rng, {2, 3, 4, 4});
    CHECK(gradcheck<D>([&] { return loss(mask_mul(a, mask)); }, {a}) < 1e-6);
}

TEST_CASE("batchnorm2d") {
    Rng rng(15);
    BatchNorm2d<D> bn(3);
    auto x = leaf(randn(rng, {4, 3, 5, 5}));

    SUBCASE("train-mode batch statistics are normalized") {
        auto y = bn.forward(x);
        for (int64_t c = 0; c < 3; ++c) {
            double m = 0, v = 0;
            for (int64_t n = 0; n < 4; ++n)
                for (int64_t h = 0; h < 5; ++h)
                    for (int64_t w = 0; w < 5; ++w) m += y->value.at4(n, c, h, w);
            m /= 100;
            for (int64_t n = 0; n < 4; ++n)
                for (int64_t h = 0; h < 5; ++h)
                    for (int64_t w = 0; w < 5; ++w) v += std::pow(y->value.at4(n, c, h, w) - m, 2);
            v /= 100;
            CHECK(m == doctest::Approx(0).epsilon(1e-10));
            CHECK(v == doctest::Approx(1).epsilon(1e-3));
        }
    }
    SUBCASE("batch of one rejected in train mode") {
        auto x1 = leaf(randn(rng, {1, 3, 5, 5}));
        CHECK_THROWS_AS(bn.forward(x1), std::invalid_argument);
    }
    SUBCASE("gradcheck, train and eval modes") {
        Rng rng2(99);
        Tensor<D> probe = randn(rng2, {4, 3, 5, 5});
        auto f = [&] { return sum_all(mul(bn.forward(x), constant(probe))); };
        CHECK(gradcheck<D>(f, {x, bn.gamma, bn.beta}) < 1e-4);
        bn.training = false;
        CHECK(gradcheck<D>(f, {x, bn.gamma, bn.beta}) < 1e-4);
    }
}

TEST_CASE("property: random op chains pass gradcheck over 20 seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        auto x = leaf(randn(rng, {2, 4, 4, 4}));
        auto w = leaf(randn(rng, {4, 4, 3, 3}));
        auto f = [&] {
            auto h = gelu(conv2d<D>(x, w, nullptr, 1, 1));
            auto p = softmax(reshape(avgpool_global(h), {2, 4}), 1);
            return cross_entropy(scale(p, 3.0), {static_cast<int>(seed % 4), 1});
        };
        CHECK(gradcheck<D>(f, {x, w}, 1e-4, 24) < 1e-4);
    }
}

TEST_CASE("finite assertions fire on non-finite forward") {
    auto x = constant(Tensor<D>::scalar(-1.0));
    CHECK_THROWS_AS(sqrt_op(x), std::runtime_error);
}
