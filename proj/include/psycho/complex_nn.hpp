#pragma once

#include "psycho/complex.hpp"
#include "psycho/nn.hpp"

namespace psycho {

/// Complex convolution as four real convolutions:
/// (Wr*a - Wi*b) + i(Wi*a + Wr*b).
template <typename T>
struct ComplexConv2d {
    Var<T> w_re, w_im;
    Var<T> b_re, b_im;  // null when bias-free
    int64_t stride = 1, pad = 0;

    ComplexConv2d() = default;
    ComplexConv2d(Rng& rng, int64_t c_in, int64_t c_out, int64_t k, int64_t stride_, int64_t pad_, bool bias)
        : stride(stride_), pad(pad_) {
        const double g = 1.0 / std::sqrt(2.0);  // split variance across components
        w_re = leaf(kaiming_normal<T>(rng, {c_out, c_in, k, k}, c_in * k * k, g));
        w_im = leaf(kaiming_normal<T>(rng, {c_out, c_in, k, k}, c_in * k * k, g));
        if (bias) {
            b_re = leaf(Tensor<T>::zeros({c_out}));
            b_im = leaf(Tensor<T>::zeros({c_out}));
        }
    }

    CVar<T> forward(const CVar<T>& h) const {
        Var<T> rr = conv2d(h.re, w_re, b_re, stride, pad);
        Var<T> ii = conv2d(h.im, w_im, Var<T>{}, stride, pad);
        Var<T> ri = conv2d(h.re, w_im, b_im, stride, pad);
        Var<T> ir = conv2d(h.im, w_re, Var<T>{}, stride, pad);
        return {sub(rr, ii), add(ri, ir)};
    }

    void collect(const std::string& p, ParamList<T>& out) {
        out.push_back({p + ".w_re", w_re, true});
        out.push_back({p + ".w_im", w_im, true});
        if (b_re) {
            out.push_back({p + ".b_re", b_re, false});
            out.push_back({p + ".b_im", b_im, false});
        }
    }
};

// ---------------------------------------------------------------------------

/// Complex batch normalization: per channel, center (re, im) and whiten by the
/// inverse square root of their 2x2 covariance, then apply a learnable 2x2
/// matrix (init I/sqrt(2)) and complex shift. Built from differentiable
/// primitives, so gradients flow through the batch statistics.
template <typename T>
struct ComplexBatchNorm {
    Var<T> g_rr, g_ri, g_ir, g_ii;  // 2x2 affine, each (1,C,1,1)
    Var<T> b_re, b_im;
    Tensor<T> run_mr, run_mi, run_vrr, run_vri, run_vii;
    double momentum = 0.1, eps = 1e-5;
    bool training = true;

    ComplexBatchNorm() = default;
    explicit ComplexBatchNorm(int64_t c) {
        const T isq = static_cast<T>(1.0 / std::sqrt(2.0));
        g_rr = leaf(Tensor<T>::full({1, c, 1, 1}, isq));
        g_ii = leaf(Tensor<T>::full({1, c, 1, 1}, isq));
        g_ri = leaf(Tensor<T>::zeros({1, c, 1, 1}));
        g_ir = leaf(Tensor<T>::zeros({1, c, 1, 1}));
        b_re = leaf(Tensor<T>::zeros({1, c, 1, 1}));
        b_im = leaf(Tensor<T>::zeros({1, c, 1, 1}));
        run_mr = Tensor<T>::zeros({c});
        run_mi = Tensor<T>::zeros({c});
        run_vrr = Tensor<T>::full({c}, T(1));
        run_vii = Tensor<T>::full({c}, T(1));
        run_vri = Tensor<T>::zeros({c});
    }

    /// The whitened (pre-affine) output; exposed for the statistics tests.
    CVar<T> whiten(const CVar<T>& h) {
        const Shape& s = h.shape();
        if (s.size() != 4) throw std::invalid_argument("complex_batchnorm: expected 4D, got " + shape_str(s));
        const int64_t C = s[1];
        if (C != run_mr.numel()) throw std::invalid_argument("complex_batchnorm: channel mismatch " + shape_str(s));

        Var<T> mr, mi, vrr, vri, vii;
        Var<T> cr, ci;
        if (training) {
            if (s[0] * s[2] * s[3] < 2)
                throw std::invalid_argument("complex_batchnorm: train mode requires >= 2 samples per channel");
            mr = mean_axes(h.re, {0, 2, 3});
            mi = mean_axes(h.im, {0, 2, 3});
            cr = sub(h.re, mr);
            ci = sub(h.im, mi);
            vrr = mean_axes(mul(cr, cr), {0, 2, 3});
            vri = mean_axes(mul(cr, ci), {0, 2, 3});
            vii = mean_axes(mul(ci, ci), {0, 2, 3});
            for (int64_t c = 0; c < C; ++c) {
                run_mr[c] = static_cast<T>((1.0 - momentum) * run_mr[c] + momentum * mr->value[c]);
                run_mi[c] = static_cast<T>((1.0 - momentum) * run_mi[c] + momentum * mi->value[c]);
                run_vrr[c] = static_cast<T>((1.0 - momentum) * run_vrr[c] + momentum * vrr->value[c]);
                run_vri[c] = static_cast<T>((1.0 - momentum) * run_vri[c] + momentum * vri->value[c]);
                run_vii[c] = static_cast<T>((1.0 - momentum) * run_vii[c] + momentum * vii->value[c]);
            }
        } else {
            mr = constant(run_mr.reshaped({1, C, 1, 1}));
            mi = constant(run_mi.reshaped({1, C, 1, 1}));
            vrr = constant(run_vrr.reshaped({1, C, 1, 1}));
            vri = constant(run_vri.reshaped({1, C, 1, 1}));
            vii = constant(run_vii.reshaped({1, C, 1, 1}));
            cr = sub(h.re, mr);
            ci = sub(h.im, mi);
        }
        // V = [[vrr+eps, vri], [vri, vii+eps]]; closed-form inverse square root
        // via s = sqrt(det V), t = sqrt(tr V + 2s): V^{-1/2} = (V + sI) / (s t)
        Var<T> a = add_scalar(vrr, eps);
        Var<T> d = add_scalar(vii, eps);
        Var<T> sdet = sqrt_op(sub(mul(a, d), mul(vri, vri)));
        Var<T> tr = sqrt_op(add(add(a, d), scale(sdet, 2.0)));
        Var<T> denom = mul(sdet, tr);
        Var<T> w_rr = div(add(d, sdet), denom);
        Var<T> w_ii = div(add(a, sdet), denom);
        Var<T> w_ri = neg(div(vri, denom));
        return {add(mul(w_rr, cr), mul(w_ri, ci)), add(mul(w_ri, cr), mul(w_ii, ci))};
    }

    CVar<T> forward(const CVar<T>& h) {
        CVar<T> y = whiten(h);
        Var<T> out_re = add(add(mul(g_rr, y.re), mul(g_ri, y.im)), b_re);
        Var<T> out_im = add(add(mul(g_ir, y.re), mul(g_ii, y.im)), b_im);
        return {out_re, out_im};
    }

    void collect(const std::string& p, ParamList<T>& out) {
        out.push_back({p + ".g_rr", g_rr, false});
        out.push_back({p + ".g_ri", g_ri, false});
        out.push_back({p + ".g_ir", g_ir, false});
        out.push_back({p + ".g_ii", g_ii, false});
        out.push_back({p + ".b_re", b_re, false});
        out.push_back({p + ".b_im", b_im, false});
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) {
        out.push_back({p + ".run_mr", &run_mr});
        out.push_back({p + ".run_mi", &run_mi});
        out.push_back({p + ".run_vrr", &run_vrr});
        out.push_back({p + ".run_vri", &run_vri});
        out.push_back({p + ".run_vii", &run_vii});
    }
};

// ---------------------------------------------------------------------------

/// GELU applied independently to real and imaginary channels.
template <typename T>
CVar<T> cgelu(const CVar<T>& h) {
    return {gelu(h.re), gelu(h.im)};
}

/// Complex matrix product Wh + b via four real matmuls. Input (N, d_in).
template <typename T>
struct ComplexLinear {
    Var<T> w_re, w_im;
    Var<T> b_re, b_im;

    ComplexLinear() = default;
    ComplexLinear(Rng& rng, int64_t d_in, int64_t d_out, bool bias = true) {
        const double g = 1.0 / std::sqrt(2.0);
        w_re = leaf(kaiming_normal<T>(rng, {d_out, d_in}, d_in, g));
        w_im = leaf(kaiming_normal<T>(rng, {d_out, d_in}, d_in, g));
        if (bias) {
            b_re = leaf(Tensor<T>::zeros({d_out}));
            b_im = leaf(Tensor<T>::zeros({d_out}));
        }
    }

    CVar<T> forward(const CVar<T>& h) const {
        Var<T> rr = linear(h.re, w_re, b_re);
        Var<T> ii = linear(h.im, w_im, Var<T>{});
        Var<T> ri = linear(h.re, w_im, b_im);
        Var<T> ir = linear(h.im, w_re, Var<T>{});
        return {sub(rr, ii), add(ri, ir)};
    }

    void collect(const std::string& p, ParamList<T>& out) {
        out.push_back({p + ".w_re", w_re, true});
        out.push_back({p + ".w_im", w_im, true});
        if (b_re) {
            out.push_back({p + ".b_re", b_re, false});
            out.push_back({p + ".b_im", b_im, false});
        }
    }
};

/// Spatial mean per component: (N,C,H,W) -> (N,C).
template <typename T>
CVar<T> complex_avgpool_global(const CVar<T>& h) {
    return {avgpool_global(h.re), avgpool_global(h.im)};
}

}  // namespace psycho
