#pragma once

#include "psycho/autograd.hpp"
#include "psycho/fft.hpp"

namespace psycho {

/// Complex tensor in the graph: a pair of real nodes of equal shape.
template <typename T>
struct CVar {
    Var<T> re;
    Var<T> im;

    CVar() = default;
    CVar(Var<T> r, Var<T> i) : re(std::move(r)), im(std::move(i)) {
        if (re->value.shape != im->value.shape)
            throw std::invalid_argument("complex tensor: component shapes differ, " + shape_str(re->value.shape) +
                                        " vs " + shape_str(im->value.shape));
    }
    const Shape& shape() const { return re->value.shape; }
};

template <typename T>
CVar<T> cadd(const CVar<T>& a, const CVar<T>& b) {
    return {add(a.re, b.re), add(a.im, b.im)};
}

template <typename T>
CVar<T> csub(const CVar<T>& a, const CVar<T>& b) {
    return {sub(a.re, b.re), sub(a.im, b.im)};
}

/// Elementwise complex product: (a+ib)(c+id) = (ac-bd) + i(ad+bc).
template <typename T>
CVar<T> cmul(const CVar<T>& a, const CVar<T>& b) {
    return {sub(mul(a.re, b.re), mul(a.im, b.im)), add(mul(a.re, b.im), mul(a.im, b.re))};
}

template <typename T>
CVar<T> cconj(const CVar<T>& a) {
    return {a.re, neg(a.im)};
}

template <typename T>
CVar<T> cscale(const CVar<T>& a, double c) {
    return {scale(a.re, c), scale(a.im, c)};
}

/// |z| = sqrt(re^2 + im^2); subgradient 0 at z = 0.
template <typename T>
Var<T> magnitude(const CVar<T>& a) {
    return sqrt_op(add(mul(a.re, a.re), mul(a.im, a.im)));
}

/// atan2(im, re); gradient defined as 0 at the origin.
template <typename T>
Var<T> phase(const CVar<T>& a) {
    const Var<T>&re = a.re, &im = a.im;
    Tensor<T> out(re->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i)
        out[i] = static_cast<T>(std::atan2(static_cast<double>(im->value[i]), static_cast<double>(re->value[i])));
    return make_op<T>(std::move(out), {re, im},
                      [re, im](Node<T>& self) {
                          const int64_t m = self.grad.numel();
                          Tensor<T> gr(re->value.shape), gi(re->value.shape);
                          for (int64_t i = 0; i < m; ++i) {
                              const double x = re->value[i], y = im->value[i];
                              const double r2 = x * x + y * y;
                              if (r2 > 0) {
                                  gr[i] = static_cast<T>(-y / r2 * self.grad[i]);
                                  gi[i] = static_cast<T>(x / r2 * self.grad[i]);
                              }
                          }
                          if (re->needs_grad) accumulate_move(*re, std::move(gr));
                          if (im->needs_grad) accumulate_move(*im, std::move(gi));
                      },
                      "phase");
}

// ---------------------------------------------------------------------------
// differentiable 2D FFT

namespace detail {

// adjoint of the (linear) transform applied to the complex gradient
// forward (unscaled): adjoint = HW * scaled-inverse; inverse: adjoint = (1/HW) * forward
template <typename T>
void fft2_adjoint(Tensor<T>& gr, Tensor<T>& gi, bool of_inverse) {
    const int64_t HW = gr.shape[2] * gr.shape[3];
    if (of_inverse) {
        fft2_inplace(gr, gi, false);
        const double sc = 1.0 / static_cast<double>(HW);
        for (auto& v : gr.data) v = static_cast<T>(v * sc);
        for (auto& v : gi.data) v = static_cast<T>(v * sc);
    } else {
        fft2_inplace(gr, gi, true);
        const double sc = static_cast<double>(HW);
        for (auto& v : gr.data) v = static_cast<T>(v * sc);
        for (auto& v : gi.data) v = static_cast<T>(v * sc);
    }
}

}  // namespace detail

/// 2D FFT over the last two axes of a 4D complex pair; forward unscaled,
/// inverse carries 1/(H*W). Differentiable.
template <typename T>
CVar<T> fft2_c(const CVar<T>& x, bool inverse = false) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw std::invalid_argument("fft2: expected 4D complex tensor, got " + shape_str(s));
    Tensor<T> vr = x.re->value;
    Tensor<T> vi = x.im->value;
    fft2_inplace(vr, vi, inverse);
    const Var<T> xr = x.re, xi = x.im;
    // each output component back-propagates its own slice of the complex adjoint
    auto bwd_re = [xr, xi, inverse](Node<T>& self) {
        Tensor<T> gr = self.grad;
        Tensor<T> gi = Tensor<T>(self.grad.shape);
        detail::fft2_adjoint(gr, gi, inverse);
        if (xr->needs_grad) accumulate_move(*xr, std::move(gr));
        if (xi->needs_grad) accumulate_move(*xi, std::move(gi));
    };
    auto bwd_im = [xr, xi, inverse](Node<T>& self) {
        Tensor<T> gr = Tensor<T>(self.grad.shape);
        Tensor<T> gi = self.grad;
        detail::fft2_adjoint(gr, gi, inverse);
        if (xr->needs_grad) accumulate_move(*xr, std::move(gr));
        if (xi->needs_grad) accumulate_move(*xi, std::move(gi));
    };
    Var<T> outr = make_op<T>(std::move(vr), {xr, xi}, bwd_re, "fft2.re");
    Var<T> outi = make_op<T>(std::move(vi), {xr, xi}, bwd_im, "fft2.im");
    return {outr, outi};
}

template <typename T>
CVar<T> ifft2_c(const CVar<T>& x) {
    return fft2_c(x, true);
}

// ---------------------------------------------------------------------------
// centered-spectrum layout

enum class Layout { natural, centered };

/// A frequency map carrying its layout so shift bookkeeping cannot silently
/// go wrong. Centered layout puts DC at (w/2, w/2) (floor, 0-based).
template <typename T>
struct Spectrum {
    CVar<T> z;
    Layout layout = Layout::natural;

    int64_t size() const { return z.shape()[3]; }
};

template <typename T>
Spectrum<T> fft2_spec(const CVar<T>& x) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[2] != s[3])
        throw std::invalid_argument("fft2: spatial dims must be square, got " + shape_str(s));
    return {fft2_c(x, false), Layout::natural};
}

template <typename T>
Spectrum<T> fftshift(const Spectrum<T>& X) {
    if (X.layout != Layout::natural) throw std::invalid_argument("fftshift: input is already centered");
    const int64_t c = X.size() / 2;
    return {{roll2(X.z.re, c, c), roll2(X.z.im, c, c)}, Layout::centered};
}

template <typename T>
Spectrum<T> ifftshift(const Spectrum<T>& X) {
    if (X.layout != Layout::centered) throw std::invalid_argument("ifftshift: input is not centered");
    const int64_t w = X.size();
    const int64_t c = w - w / 2;
    return {{roll2(X.z.re, c, c), roll2(X.z.im, c, c)}, Layout::natural};
}

// ---------------------------------------------------------------------------
// companding

inline constexpr double kCompandExponent = 0.8;  // 1/1.25

namespace detail {

// out = z * |z|^(p-1), fused with its exact Jacobian; gradient 0 at z = 0
template <typename T>
CVar<T> compand_pointwise(const CVar<T>& x, double p) {
    const Var<T> xr = x.re, xi = x.im;
    const Shape& s = xr->value.shape;
    const int64_t n = xr->value.numel();
    Tensor<T> outr(s), outi(s);
    auto sfac = std::make_shared<Tensor<T>>(s);  // |z|^(p-1), reused in backward
    auto cfac = std::make_shared<Tensor<T>>(s);  // (p-1) |z|^(p-3)
    for (int64_t i = 0; i < n; ++i) {
        const double a = xr->value[i], b = xi->value[i];
        const double r = std::sqrt(a * a + b * b);
        if (r > 0) {
            const double sv = std::pow(r, p - 1.0);
            (*sfac)[i] = static_cast<T>(sv);
            (*cfac)[i] = static_cast<T>((p - 1.0) * std::pow(r, p - 3.0));
            outr[i] = static_cast<T>(a * sv);
            outi[i] = static_cast<T>(b * sv);
        }
    }
    // Jacobian rows: d(a*s)/da = s + c*a^2, d(a*s)/db = c*a*b (and symmetrically for b*s)
    auto bwd = [xr, xi, sfac, cfac](bool is_re) {
        return [xr, xi, sfac, cfac, is_re](Node<T>& self) {
            const int64_t m = self.grad.numel();
            Tensor<T> gr(xr->value.shape), gi(xr->value.shape);
            for (int64_t i = 0; i < m; ++i) {
                const double a = xr->value[i], b = xi->value[i];
                const double sv = (*sfac)[i], cv = (*cfac)[i];
                const double g = self.grad[i];
                if (is_re) {
                    gr[i] = static_cast<T>(g * (sv + cv * a * a));
                    gi[i] = static_cast<T>(g * cv * a * b);
                } else {
                    gr[i] = static_cast<T>(g * cv * a * b);
                    gi[i] = static_cast<T>(g * (sv + cv * b * b));
                }
            }
            if (xr->needs_grad) accumulate_move(*xr, std::move(gr));
            if (xi->needs_grad) accumulate_move(*xi, std::move(gi));
        };
    };
    Var<T> outr_n = make_op<T>(std::move(outr), {xr, xi}, bwd(true), "compand.re");
    Var<T> outi_n = make_op<T>(std::move(outi), {xr, xi}, bwd(false), "compand.im");
    return {outr_n, outi_n};
}

}  // namespace detail

/// Magnitude compression |z|^p with phase preserved; DC entry zeroed.
/// Input must be in centered layout.
template <typename T>
Spectrum<T> compand(const Spectrum<T>& X, double p = kCompandExponent) {
    if (X.layout != Layout::centered) throw std::invalid_argument("compand: spectrum must be centered");
    CVar<T> y = detail::compand_pointwise(X.z, p);
    const Shape& s = y.shape();
    const int64_t w = s[3], c = w / 2;
    Tensor<T> mask = Tensor<T>::full(s, T(1));
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t ch = 0; ch < s[1]; ++ch) mask.at4(n, ch, c, c) = T(0);
    return {{mask_mul(y.re, mask), mask_mul(y.im, mask)}, Layout::centered};
}

}  // namespace psycho
