#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "psycho/blocks.hpp"
#include "psycho/gradcheck.hpp"

using namespace psycho;
using D = double;

namespace {

CVar<D> rand_cvar(Rng& rng, Shape s, bool grad = false) {
    Tensor<D> re = random_normal<D>(rng, s);
    Tensor<D> im = random_normal<D>(rng, s);
    return grad ? CVar<D>{leaf(std::move(re)), leaf(std::move(im))}
                : CVar<D>{constant(std::move(re)), constant(std::move(im))};
}

double max_abs_diff(const Tensor<D>& a, const Tensor<D>& b) {
    REQUIRE(a.shape == b.shape);
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void collect_leaves(ParamList<D>& ps, std::vector<Var<D>>& out) {
    for (auto& p : ps) out.push_back(p.v);
}

void zero_params(ParamList<D>& ps, const std::string& prefix) {
    for (auto& p : ps)
        if (p.name.rfind(prefix, 0) == 0)
            for (auto& v : p.v->value.data) v = 0;
}

}  // namespace

TEST_CASE("sub-band validation") {
    CHECK_NOTHROW(validate_subbands({{8, 4}, {4, 1}}, 16));
    CHECK_NOTHROW(validate_subbands({{14, 8}, {8, 4}, {4, 1}}, 14));
    CHECK_THROWS_AS(validate_subbands({{8, 4}, {6, 1}}, 16), std::invalid_argument);   // overlap
    CHECK_THROWS_AS(validate_subbands({{18, 4}}, 16), std::invalid_argument);          // exceeds w
    CHECK_THROWS_AS(validate_subbands({{4, 4}}, 16), std::invalid_argument);           // drop >= crop
}

TEST_CASE("dropcrop identity when crop=w, drop=0") {
    Rng rng(60);
    auto x = rand_cvar(rng, {1, 2, 6, 6});
    Spectrum<D> S{x, Layout::centered};
    auto out = dropcrop(S, {6, 0});
    CHECK(max_abs_diff(out.z.re->value, x.re->value) == 0);
    CHECK(max_abs_diff(out.z.im->value, x.im->value) == 0);
}

TEST_CASE("dropcrop (4,1) on w=16 zeroes exactly the local DC") {
    // locate the DC of a constant image through the real pipeline
    Tensor<D> ones = Tensor<D>::full({1, 1, 16, 16}, 1.0);
    CVar<D> x{constant(ones), constant(Tensor<D>({1, 1, 16, 16}))};
    auto S = fftshift(fft2_spec(x));
    auto out = dropcrop(S, {4, 1});
    CHECK(out.z.re->value.shape == Shape{1, 1, 4, 4});
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t c = 0; c < 4; ++c) {
            // constant image: all energy at DC, which the drop removed
            CHECK(std::abs(out.z.re->value.at4(0, 0, r, c)) < 1e-9);
        }
    // without the drop the DC sits at local (2,2) with value w^2
    auto kept = dropcrop(S, {4, 0});
    CHECK(kept.z.re->value.at4(0, 0, 2, 2) == doctest::Approx(256));
}

TEST_CASE("dropcrop never increases energy") {
    Rng rng(61);
    auto x = rand_cvar(rng, {1, 3, 16, 16});
    Spectrum<D> S{x, Layout::centered};
    double ein = 0;
    for (int64_t i = 0; i < x.re->value.numel(); ++i)
        ein += x.re->value[i] * x.re->value[i] + x.im->value[i] * x.im->value[i];
    for (auto spec : std::vector<SubBandSpec>{{8, 4}, {4, 1}, {16, 8}}) {
        auto out = dropcrop(S, spec);
        double eout = 0;
        for (int64_t i = 0; i < out.z.re->value.numel(); ++i)
            eout += out.z.re->value[i] * out.z.re->value[i] + out.z.im->value[i] * out.z.im->value[i];
        CHECK(eout <= ein);
    }
}

TEST_CASE("sub-band coverage is disjoint and complete") {
    SUBCASE("[8,4]+[4,1] on w=16 covers the centered 8x8 window minus DC") {
        auto a = retained_indices({8, 4}, 16);
        auto b = retained_indices({4, 1}, 16);
        std::set<std::pair<int64_t, int64_t>> uni;
        for (auto& i : a) CHECK(b.count(i) == 0);
        uni.insert(a.begin(), a.end());
        uni.insert(b.begin(), b.end());
        std::set<std::pair<int64_t, int64_t>> expect;
        for (int64_t r = 4; r < 12; ++r)
            for (int64_t c = 4; c < 12; ++c)
                if (!(r == 8 && c == 8)) expect.insert({r, c});
        CHECK(uni == expect);
    }
    SUBCASE("[14,8]+[8,4]+[4,1] on w=14 covers all frequencies minus DC") {
        auto a = retained_indices({14, 8}, 14);
        auto b = retained_indices({8, 4}, 14);
        auto c = retained_indices({4, 1}, 14);
        std::set<std::pair<int64_t, int64_t>> uni;
        for (auto& i : a) CHECK((b.count(i) + c.count(i)) == 0);
        for (auto& i : b) CHECK(c.count(i) == 0);
        uni.insert(a.begin(), a.end());
        uni.insert(b.begin(), b.end());
        uni.insert(c.begin(), c.end());
        std::set<std::pair<int64_t, int64_t>> expect;
        for (int64_t r = 0; r < 14; ++r)
            for (int64_t cc = 0; cc < 14; ++cc)
                if (!(r == 7 && cc == 7)) expect.insert({r, cc});
        CHECK(uni == expect);
    }
}

TEST_CASE("gradcheck dropcrop") {
    Rng rng(62);
    auto x = rand_cvar(rng, {1, 2, 8, 8}, true);
    Tensor<D> pr = random_normal<D>(rng, {1, 2, 4, 4});
    auto f = [&] {
        auto out = dropcrop(Spectrum<D>{x, Layout::centered}, {4, 2});
        return add(sum_all(mul(out.z.re, constant(pr))), sum_all(mul(out.z.im, constant(pr))));
    };
    CHECK(gradcheck<D>(f, {x.re, x.im}) < 1e-6);
}

TEST_CASE("split softmax structure of the filtered spectrum") {
    Rng rng(63);
    // all-ones real filter, equal re values across 2 channels: softmax gives 0.5
    Tensor<D> xr({1, 2, 3, 3}), xi({1, 2, 3, 3});
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t i = 0; i < 9; ++i) {
            xr[c * 9 + i] = 0.3 * i;
            xi[c * 9 + i] = (c == 0 ? 1.0 : -1.0) * i;
        }
    CVar<D> X{constant(xr), constant(xi)};
    CVar<D> W{constant(Tensor<D>::full({2, 3, 3}, 1.0)), constant(Tensor<D>({2, 3, 3}))};
    auto filt = cmul(X, W);
    auto sm_re = softmax(filt.re, 1);
    for (int64_t i = 0; i < 9; ++i) {
        CHECK(sm_re->value[i] == doctest::Approx(0.5));
        CHECK(sm_re->value[9 + i] == doctest::Approx(0.5));
    }
    // channel sums are 1 for both components on random data
    auto y = cmul(rand_cvar(rng, {2, 4, 3, 3}), rand_cvar(rng, {4, 3, 3}));
    auto sr = softmax(y.re, 1);
    auto si = softmax(y.im, 1);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t i = 0; i < 9; ++i) {
            double tr = 0, ti = 0;
            for (int64_t c = 0; c < 4; ++c) {
                tr += sr->value[(n * 4 + c) * 9 + i];
                ti += si->value[(n * 4 + c) * 9 + i];
            }
            CHECK(tr == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(ti == doctest::Approx(1.0).epsilon(1e-6));
        }
}

TEST_CASE("single-channel softmax saturates to one") {
    Rng rng(64);
    HadamardBlock<D> hb(rng, 1, 3);
    auto X = rand_cvar(rng, {2, 1, 3, 3});
    // check the definitional property on the filtered product directly
    auto filt = cmul(X, CVar<D>{hb.w_re, hb.w_im});
    auto sr = softmax(filt.re, 1);
    auto si = softmax(filt.im, 1);
    for (int64_t i = 0; i < sr->value.numel(); ++i) {
        CHECK(sr->value[i] == doctest::Approx(1.0));
        CHECK(si->value[i] == doctest::Approx(1.0));
    }
}

TEST_CASE("hadamard block shape checks and gradcheck") {
    Rng rng(65);
    HadamardBlock<D> hb(rng, 3, 4);
    auto bad = rand_cvar(rng, {2, 3, 5, 5});
    CHECK_THROWS_AS(hb.forward(Spectrum<D>{bad, Layout::centered}), std::invalid_argument);

    auto X = rand_cvar(rng, {2, 3, 4, 4}, true);
    Tensor<D> pr = random_normal<D>(rng, {2, 3, 4, 4});
    auto f = [&] {
        auto y = hb.forward(Spectrum<D>{X, Layout::centered});
        return add(sum_all(mul(y.re, constant(pr))), sum_all(mul(y.im, constant(pr))));
    };
    ParamList<D> ps;
    hb.collect("hb", ps);
    std::vector<Var<D>> leaves{X.re, X.im};
    collect_leaves(ps, leaves);
    CHECK(gradcheck<D>(f, leaves, 1e-4, 16) < 1e-4);
}

TEST_CASE("frequency-coding module forward") {
    Rng rng(66);
    DVCModule<D> dvc(rng, 8, 4, {{8, 4}, {4, 1}});
    auto x = rand_cvar(rng, {3, 4, 8, 8});
    auto y = dvc.forward(x);
    CHECK(y.re->value.shape == Shape{3, 8});  // 2 branches x 4 filters
    CHECK(y.re->value.all_finite());
    CHECK(y.im->value.all_finite());

    SUBCASE("overlapping branch list rejected at construction") {
        CHECK_THROWS_AS(DVCModule<D>(rng, 8, 4, {{8, 2}, {4, 1}}), std::invalid_argument);
    }
    SUBCASE("single global branch (w, 0) works") {
        DVCModule<D> global(rng, 8, 4, {{8, 0}});
        auto yg = global.forward(x);
        CHECK(yg.re->value.shape == Shape{3, 4});
    }
}

TEST_CASE("frequency coding is equivariant to batch permutation") {
    Rng rng(67);
    DVCModule<D> dvc(rng, 6, 3, {{6, 2}, {2, 1}});
    dvc.set_training(false);  // per-sample computation only in eval mode
    Tensor<D> re = random_normal<D>(rng, {2, 3, 6, 6});
    Tensor<D> im = random_normal<D>(rng, {2, 3, 6, 6});
    auto y = dvc.forward(CVar<D>{constant(re), constant(im)});
    // swap the two samples
    Tensor<D> re2 = re, im2 = im;
    for (int64_t i = 0; i < re.numel() / 2; ++i) {
        std::swap(re2[i], re2[i + re.numel() / 2]);
        std::swap(im2[i], im2[i + im.numel() / 2]);
    }
    auto y2 = dvc.forward(CVar<D>{constant(re2), constant(im2)});
    for (int64_t c = 0; c < y.re->value.shape[1]; ++c) {
        CHECK(y.re->value.at2(0, c) == doctest::Approx(y2.re->value.at2(1, c)));
        CHECK(y.im->value.at2(1, c) == doctest::Approx(y2.im->value.at2(0, c)));
    }
}

TEST_CASE("gradcheck tiny frequency-coding module") {
    Rng rng(68);
    DVCModule<D> dvc(rng, 4, 2, {{4, 2}, {2, 1}});
    auto x = rand_cvar(rng, {2, 2, 4, 4}, true);
    Tensor<D> pr = random_normal<D>(rng, {2, 4});
    auto f = [&] {
        auto y = dvc.forward(x);
        return add(sum_all(mul(y.re, constant(pr))), sum_all(mul(y.im, constant(pr))));
    };
    ParamList<D> ps;
    dvc.collect("dvc", ps);
    std::vector<Var<D>> leaves{x.re, x.im};
    collect_leaves(ps, leaves);
    CHECK(gradcheck<D>(f, leaves, 1e-4, 12) < 1e-4);
}

TEST_CASE("phasor I shape contract and zeroed imaginary path") {
    Rng rng(69);
    PhasorI<D> pi(rng, 2, 4, 2);
    auto x = leaf(random_normal<D>(rng, {2, 2, 8, 8}));
    auto y = pi.forward(x);
    CHECK(y.re->value.shape == Shape{2, 4, 4, 4});
    CHECK(y.im->value.shape == Shape{2, 4, 4, 4});

    // zero the depthwise path: b = 0, so pre-norm im = conv(a, w_im)
    ParamList<D> ps;
    pi.collect("pi", ps);
    zero_params(ps, "pi.dwb1");
    zero_params(ps, "pi.dwb2");
    auto a = pi.cb2.forward(pi.cb1.forward(x));
    auto mixed = pi.mix.forward(CVar<D>{a, constant(Tensor<D>(a->value.shape))});
    auto expect_im = conv2d<D>(a, pi.mix.w_im, Var<D>{}, 1, 0);
    CHECK(max_abs_diff(mixed.im->value, expect_im->value) < 1e-9);
}

TEST_CASE("gradcheck phasor I") {
    Rng rng(70);
    PhasorI<D> pi(rng, 2, 4, 1);
    auto x = leaf(random_normal<D>(rng, {2, 2, 4, 4}));
    Tensor<D> pr = random_normal<D>(rng, {2, 4, 4, 4});
    auto f = [&] {
        auto y = pi.forward(x);
        return add(sum_all(mul(y.re, constant(pr))), sum_all(mul(y.im, constant(pr))));
    };
    ParamList<D> ps;
    pi.collect("pi", ps);
    std::vector<Var<D>> leaves{x};
    collect_leaves(ps, leaves);
    CHECK(gradcheck<D>(f, leaves, 1e-4, 8) < 1e-4);
}

TEST_CASE("phasor C shape and bottom branch alone") {
    Rng rng(71);
    PhasorC<D> pc(rng, 3, 3, 1);
    auto h = rand_cvar(rng, {2, 3, 6, 6});
    auto y = pc.forward(h);
    CHECK(y.re->value.shape == h.re->value.shape);

    // zero the top branches: output = cgelu(cbn(bottom(h)))
    ParamList<D> ps;
    pc.collect("pc", ps);
    zero_params(ps, "pc.cb1");
    zero_params(ps, "pc.cb2");
    zero_params(ps, "pc.dwb1");
    zero_params(ps, "pc.dwb2");
    pc.set_training(false);
    auto lhs = pc.forward(h);
    auto rhs = cgelu(pc.cbn.forward(pc.bottom.forward(h)));
    CHECK(max_abs_diff(lhs.re->value, rhs.re->value) < 1e-9);
    CHECK(max_abs_diff(lhs.im->value, rhs.im->value) < 1e-9);
}

TEST_CASE("phasor C stride halves spatial dims") {
    Rng rng(72);
    PhasorC<D> pc(rng, 2, 4, 2);
    auto h = rand_cvar(rng, {2, 2, 8, 8});
    auto y = pc.forward(h);
    CHECK(y.re->value.shape == Shape{2, 4, 4, 4});
}

TEST_CASE("gradcheck phasor C") {
    Rng rng(73);
    PhasorC<D> pc(rng, 2, 2, 1);
    auto h = rand_cvar(rng, {2, 2, 4, 4}, true);
    Tensor<D> pr = random_normal<D>(rng, {2, 2, 4, 4});
    auto f = [&] {
        auto y = pc.forward(h);
        return add(sum_all(mul(y.re, constant(pr))), sum_all(mul(y.im, constant(pr))));
    };
    ParamList<D> ps;
    pc.collect("pc", ps);
    std::vector<Var<D>> leaves{h.re, h.im};
    collect_leaves(ps, leaves);
    CHECK(gradcheck<D>(f, leaves, 1e-4, 8) < 1e-4);
}

TEST_CASE("residual block identity with zeroed residual path") {
    Rng rng(74);
    ResBlock<D> rb(rng, 3, 2, 3, 1);
    CHECK(!rb.has_proj);
    ParamList<D> ps;
    rb.collect("rb", ps);
    for (auto& p : ps)
        for (auto& v : p.v->value.data) v = 0;
    auto x = leaf(random_normal<D>(rng, {2, 3, 5, 5}));
    auto y = rb.forward(x);
    CHECK(max_abs_diff(y->value, x->value) < 1e-9);
}

TEST_CASE("residual block stride 2 halves spatial dims") {
    Rng rng(75);
    ResBlock<D> rb(rng, 3, 2, 6, 2);
    CHECK(rb.has_proj);
    auto x = leaf(random_normal<D>(rng, {2, 3, 8, 8}));
    CHECK(rb.forward(x)->value.shape == Shape{2, 6, 4, 4});
}

TEST_CASE("gradcheck residual block") {
    Rng rng(76);
    ResBlock<D> rb(rng, 2, 2, 4, 2);
    auto x = leaf(random_normal<D>(rng, {2, 2, 4, 4}));
    Tensor<D> pr = random_normal<D>(rng, {2, 4, 2, 2});
    auto f = [&] { return sum_all(mul(rb.forward(x), constant(pr))); };
    ParamList<D> ps;
    rb.collect("rb", ps);
    std::vector<Var<D>> leaves{x};
    collect_leaves(ps, leaves);
    CHECK(gradcheck<D>(f, leaves, 1e-4, 8) < 1e-4);
}

TEST_CASE("simple conv block") {
    Rng rng(77);
    SimpleConvBlock<D> sb(rng, 2, 4, 2);
    auto x = leaf(random_normal<D>(rng, {2, 2, 8, 8}));
    auto y = sb.forward(x);
    CHECK(y->value.shape == Shape{2, 4, 4, 4});
    Tensor<D> pr = random_normal<D>(rng, {2, 4, 4, 4});
    auto f = [&] { return sum_all(mul(sb.forward(x), constant(pr))); };
    ParamList<D> ps;
    sb.collect("sb", ps);
    std::vector<Var<D>> leaves{x};
    collect_leaves(ps, leaves);
    CHECK(gradcheck<D>(f, leaves, 1e-4, 8) < 1e-4);
}
