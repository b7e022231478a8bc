#pragma once

#include <set>

#include "psycho/complex_nn.hpp"

namespace psycho {

// ---------------------------------------------------------------------------
// frequency sub-bands

/// Square-annulus sub-band of a centered spectrum: keep the central crop x crop
/// window, zero the central drop x drop window inside it.
struct SubBandSpec {
    int64_t crop = 0;
    int64_t drop = 0;
};

/// Centered-window start index: floor(w/2) - floor(c/2), 0-based.
inline int64_t centered_start(int64_t w, int64_t c) { return w / 2 - c / 2; }

/// Indices of the full w x w grid a sub-band retains.
inline std::set<std::pair<int64_t, int64_t>> retained_indices(const SubBandSpec& s, int64_t w) {
    std::set<std::pair<int64_t, int64_t>> out;
    const int64_t c0 = centered_start(w, s.crop);
    const int64_t d0 = centered_start(w, s.drop);
    for (int64_t r = c0; r < c0 + s.crop; ++r)
        for (int64_t c = c0; c < c0 + s.crop; ++c) {
            const bool dropped = s.drop > 0 && r >= d0 && r < d0 + s.drop && c >= d0 && c < d0 + s.drop;
            if (!dropped) out.insert({r, c});
        }
    return out;
}

inline void validate_subbands(const std::vector<SubBandSpec>& specs, int64_t w) {
    if (specs.empty()) throw std::invalid_argument("sub-bands: empty branch list");
    std::set<std::pair<int64_t, int64_t>> seen;
    for (const auto& s : specs) {
        if (s.drop < 0 || s.drop >= s.crop || s.crop > w)
            throw std::invalid_argument("sub-band [" + std::to_string(s.crop) + "," + std::to_string(s.drop) +
                                        "] invalid for spectrum size " + std::to_string(w));
        for (const auto& idx : retained_indices(s, w))
            if (!seen.insert(idx).second)
                throw std::invalid_argument("sub-bands overlap at frequency index (" + std::to_string(idx.first) +
                                            "," + std::to_string(idx.second) + ")");
    }
}

/// Crop the centered spectrum to crop x crop and zero its central drop x drop
/// window. Gradients scatter back; dropped entries get zero gradient.
template <typename T>
Spectrum<T> dropcrop(const Spectrum<T>& X, const SubBandSpec& s) {
    if (X.layout != Layout::centered) throw std::invalid_argument("dropcrop: spectrum must be centered");
    const int64_t w = X.size();
    if (s.drop < 0 || s.drop >= s.crop || s.crop > w)
        throw std::invalid_argument("dropcrop: sub-band [" + std::to_string(s.crop) + "," + std::to_string(s.drop) +
                                    "] invalid for spectrum size " + std::to_string(w));
    const int64_t c0 = centered_start(w, s.crop);
    Var<T> re = crop2(X.z.re, c0, c0, s.crop, s.crop);
    Var<T> im = crop2(X.z.im, c0, c0, s.crop, s.crop);
    if (s.drop > 0) {
        const Shape& sh = re->value.shape;
        const int64_t d0 = centered_start(s.crop, s.drop);
        Tensor<T> mask = Tensor<T>::full(sh, T(1));
        for (int64_t n = 0; n < sh[0]; ++n)
            for (int64_t c = 0; c < sh[1]; ++c)
                for (int64_t r = d0; r < d0 + s.drop; ++r)
                    for (int64_t cc = d0; cc < d0 + s.drop; ++cc) mask.at4(n, c, r, cc) = T(0);
        re = mask_mul(re, mask);
        im = mask_mul(im, mask);
    }
    return {{re, im}, Layout::centered};
}

// ---------------------------------------------------------------------------

/// Learnable elementwise complex filter, channel softmax on each component,
/// complex batch-norm, 1x1 complex channel mixing, complex GELU.
template <typename T>
struct HadamardBlock {
    Var<T> w_re, w_im;  // (d_in, crop, crop)
    ComplexBatchNorm<T> cbn;
    ComplexConv2d<T> mix;
    int64_t d = 0, d_out = 0, crop = 0;

    HadamardBlock() = default;
    HadamardBlock(Rng& rng, int64_t d_, int64_t crop_) : HadamardBlock(rng, d_, d_, crop_) {}
    HadamardBlock(Rng& rng, int64_t d_in, int64_t d_out_, int64_t crop_) : d(d_in), d_out(d_out_), crop(crop_) {
        w_re = leaf(random_normal<T>(rng, {d_in, crop_, crop_}, 0.02));
        w_im = leaf(random_normal<T>(rng, {d_in, crop_, crop_}, 0.02));
        cbn = ComplexBatchNorm<T>(d_in);
        mix = ComplexConv2d<T>(rng, d_in, d_out_, 1, 1, 0, false);
    }

    CVar<T> forward(const Spectrum<T>& Xi) {
        const Shape& s = Xi.z.shape();
        if (s[2] != crop || s[3] != crop)
            throw std::invalid_argument("hadamard_block: spatial dims " + shape_str(s) + " do not match crop " +
                                        std::to_string(crop));
        if (s[1] != d)
            throw std::invalid_argument("hadamard_block: channel count " + std::to_string(s[1]) +
                                        " does not match filter channels " + std::to_string(d));
        CVar<T> filt = cmul(Xi.z, CVar<T>{w_re, w_im});
        CVar<T> sm{softmax(filt.re, 1), softmax(filt.im, 1)};  // split softmax over channels
        return cgelu(mix.forward(cbn.forward(sm)));
    }

    void set_training(bool t) { cbn.training = t; }
    void collect(const std::string& p, ParamList<T>& out) {
        out.push_back({p + ".w_re", w_re, true});
        out.push_back({p + ".w_im", w_im, true});
        cbn.collect(p + ".cbn", out);
        mix.collect(p + ".mix", out);
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) { cbn.collect_buffers(p + ".cbn", out); }
};

// ---------------------------------------------------------------------------

/// The frequency-coding module: FFT, center, compand, per-branch
/// dropcrop + Hadamard block, global pooling, channel concatenation.
/// Each branch output passes through a gradient gate used by salience masking.
template <typename T>
struct DVCModule {
    std::vector<SubBandSpec> specs;
    std::vector<HadamardBlock<T>> blocks;
    std::vector<std::shared_ptr<GateState<T>>> gates;
    int64_t w = 0, d_filter = 0;
    double compand_p = kCompandExponent;
    bool capture = false;  // retain per-branch activations/gradients for analysis
    std::vector<CVar<T>> branch_out;  // last forward, when capture is on

    DVCModule() = default;
    DVCModule(Rng& rng, int64_t w_, int64_t d_, std::vector<SubBandSpec> specs_)
        : DVCModule(rng, w_, d_, d_, std::move(specs_)) {}
    DVCModule(Rng& rng, int64_t w_, int64_t d_in, int64_t d_filter_, std::vector<SubBandSpec> specs_)
        : specs(std::move(specs_)), w(w_), d_filter(d_filter_) {
        validate_subbands(specs, w_);
        for (const auto& s : specs) {
            blocks.emplace_back(rng, d_in, d_filter_, s.crop);
            gates.push_back(std::make_shared<GateState<T>>());
        }
    }

    /// x: spatial complex features (N, d, w, w) -> pooled (N, d * n_branches).
    CVar<T> forward(const CVar<T>& x) {
        Spectrum<T> S = compand(fftshift(fft2_spec(x)), compand_p);
        branch_out.clear();
        std::vector<Var<T>> res, ims;
        for (size_t i = 0; i < blocks.size(); ++i) {
            CVar<T> y = blocks[i].forward(dropcrop(S, specs[i]));
            CVar<T> g{grad_gate(y.re, gates[i]), grad_gate(y.im, gates[i])};
            if (capture) {
                g.re->retain_grad = true;
                g.im->retain_grad = true;
                branch_out.push_back(g);
            }
            CVar<T> pooled = complex_avgpool_global(g);
            res.push_back(pooled.re);
            ims.push_back(pooled.im);
        }
        return {concat(res, 1), concat(ims, 1)};
    }

    void set_training(bool t) {
        for (auto& b : blocks) b.set_training(t);
    }
    void collect(const std::string& p, ParamList<T>& out) {
        for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(p + ".branch" + std::to_string(i), out);
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) {
        for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect_buffers(p + ".branch" + std::to_string(i), out);
    }
};

// ---------------------------------------------------------------------------
// Phasor blocks

/// Creates complex features from real ones. Real path: two ConvBlocks
/// (d_in -> d_out/2 -> d_out, stride on the first). Imaginary path: two
/// DWConvBlocks. A 1x1 complex conv then mixes a+ib.
template <typename T>
struct PhasorI {
    ConvBlock<T> cb1, cb2;
    DWConvBlock<T> dwb1, dwb2;
    ComplexConv2d<T> mix;
    ComplexBatchNorm<T> cbn;
    bool efficient = false;

    PhasorI() = default;
    PhasorI(Rng& rng, int64_t d_in, int64_t d_out, int64_t stride, bool efficient_ = false) : efficient(efficient_) {
        if (efficient_) {
            cb1 = ConvBlock<T>(rng, d_in, d_out, 3, stride, 1);
            dwb1 = DWConvBlock<T>(rng, d_in, d_out, stride);
        } else {
            const int64_t d_mid = d_out / 2;
            cb1 = ConvBlock<T>(rng, d_in, d_mid, 3, stride, 1);
            cb2 = ConvBlock<T>(rng, d_mid, d_out, 3, 1, 1);
            dwb1 = DWConvBlock<T>(rng, d_in, d_out, stride);
            dwb2 = DWConvBlock<T>(rng, d_out, d_out, 1);
        }
        mix = ComplexConv2d<T>(rng, d_out, d_out, 1, 1, 0, false);
        cbn = ComplexBatchNorm<T>(d_out);
    }

    CVar<T> forward(const Var<T>& x) {
        Var<T> a = efficient ? cb1.forward(x) : cb2.forward(cb1.forward(x));
        Var<T> b = efficient ? dwb1.forward(x) : dwb2.forward(dwb1.forward(x));
        return cgelu(cbn.forward(mix.forward(CVar<T>{a, b})));
    }

    void set_training(bool t) {
        cb1.set_training(t);
        dwb1.set_training(t);
        if (!efficient) {
            cb2.set_training(t);
            dwb2.set_training(t);
        }
        cbn.training = t;
    }
    void collect(const std::string& p, ParamList<T>& out) {
        cb1.collect(p + ".cb1", out);
        dwb1.collect(p + ".dwb1", out);
        if (!efficient) {
            cb2.collect(p + ".cb2", out);
            dwb2.collect(p + ".dwb2", out);
        }
        mix.collect(p + ".mix", out);
        cbn.collect(p + ".cbn", out);
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) {
        cb1.collect_buffers(p + ".cb1", out);
        dwb1.collect_buffers(p + ".dwb1", out);
        if (!efficient) {
            cb2.collect_buffers(p + ".cb2", out);
            dwb2.collect_buffers(p + ".dwb2", out);
        }
        cbn.collect_buffers(p + ".cbn", out);
    }
};

/// Refines complex features. Top branch builds new real (two ConvBlocks on re)
/// and imaginary (two DWConvBlocks on im) features; the bottom branch
/// channel-mixes the original features with a strided 1x1 complex conv and the
/// two are summed, normalized and activated.
template <typename T>
struct PhasorC {
    ConvBlock<T> cb1, cb2;
    DWConvBlock<T> dwb1, dwb2;
    ComplexConv2d<T> bottom;
    ComplexBatchNorm<T> cbn;
    bool efficient = false;

    PhasorC() = default;
    PhasorC(Rng& rng, int64_t d_in, int64_t d_out, int64_t stride, bool efficient_ = false) : efficient(efficient_) {
        cb1 = ConvBlock<T>(rng, d_in, d_out, 3, stride, 1);
        dwb1 = DWConvBlock<T>(rng, d_in, d_out, stride);
        if (!efficient_) {
            cb2 = ConvBlock<T>(rng, d_out, d_out, 3, 1, 1);
            dwb2 = DWConvBlock<T>(rng, d_out, d_out, 1);
        }
        bottom = ComplexConv2d<T>(rng, d_in, d_out, 1, stride, 0, false);
        cbn = ComplexBatchNorm<T>(d_out);
    }

    CVar<T> forward(const CVar<T>& h) {
        Var<T> a = efficient ? cb1.forward(h.re) : cb2.forward(cb1.forward(h.re));
        Var<T> b = efficient ? dwb1.forward(h.im) : dwb2.forward(dwb1.forward(h.im));
        CVar<T> mixed = bottom.forward(h);
        return cgelu(cbn.forward(cadd(mixed, CVar<T>{a, b})));
    }

    void set_training(bool t) {
        cb1.set_training(t);
        dwb1.set_training(t);
        if (!efficient) {
            cb2.set_training(t);
            dwb2.set_training(t);
        }
        cbn.training = t;
    }
    void collect(const std::string& p, ParamList<T>& out) {
        cb1.collect(p + ".cb1", out);
        dwb1.collect(p + ".dwb1", out);
        if (!efficient) {
            cb2.collect(p + ".cb2", out);
            dwb2.collect(p + ".dwb2", out);
        }
        bottom.collect(p + ".bottom", out);
        cbn.collect(p + ".cbn", out);
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) {
        cb1.collect_buffers(p + ".cb1", out);
        dwb1.collect_buffers(p + ".dwb1", out);
        if (!efficient) {
            cb2.collect_buffers(p + ".cb2", out);
            dwb2.collect_buffers(p + ".dwb2", out);
        }
        cbn.collect_buffers(p + ".cbn", out);
    }
};

// ---------------------------------------------------------------------------

/// Bottleneck residual block: 1x1 reduce, 3x3 (stride), 1x1 expand, additive
/// skip with 1x1 projection when the shape changes. No activation after the
/// sum, so a zeroed residual path passes the input through untouched.
template <typename T>
struct ResBlock {
    ConvBlock<T> reduce, spatial;
    Conv2d<T> expand;
    BatchNorm2d<T> bn_out;
    Conv2d<T> proj;  // weight null when identity skip
    BatchNorm2d<T> bn_proj;
    bool has_proj = false;

    ResBlock() = default;
    ResBlock(Rng& rng, int64_t d_in, int64_t d_bottleneck, int64_t d_out, int64_t stride)
        : reduce(rng, d_in, d_bottleneck, 1, 1, 0),
          spatial(rng, d_bottleneck, d_bottleneck, 3, stride, 1),
          expand(rng, d_bottleneck, d_out, 1, 1, 0, false),
          bn_out(d_out) {
        if (stride != 1 || d_in != d_out) {
            has_proj = true;
            proj = Conv2d<T>(rng, d_in, d_out, 1, stride, 0, false);
            bn_proj = BatchNorm2d<T>(d_out);
        }
    }

    Var<T> forward(const Var<T>& x) {
        Var<T> r = bn_out.forward(expand.forward(spatial.forward(reduce.forward(x))));
        Var<T> skip = has_proj ? bn_proj.forward(proj.forward(x)) : x;
        return add(skip, r);
    }

    void set_training(bool t) {
        reduce.set_training(t);
        spatial.set_training(t);
        bn_out.training = t;
        if (has_proj) bn_proj.training = t;
    }
    void collect(const std::string& p, ParamList<T>& out) {
        reduce.collect(p + ".reduce", out);
        spatial.collect(p + ".spatial", out);
        expand.collect(p + ".expand", out);
        bn_out.collect(p + ".bn_out", out);
        if (has_proj) {
            proj.collect(p + ".proj", out);
            bn_proj.collect(p + ".bn_proj", out);
        }
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) {
        reduce.collect_buffers(p + ".reduce", out);
        spatial.collect_buffers(p + ".spatial", out);
        bn_out.collect_buffers(p + ".bn_out", out);
        if (has_proj) bn_proj.collect_buffers(p + ".bn_proj", out);
    }
};

/// Two stacks of 3x3 conv -> BN -> GELU (the plain-conv ablation block).
template <typename T>
struct SimpleConvBlock {
    ConvBlock<T> cb1, cb2;

    SimpleConvBlock() = default;
    SimpleConvBlock(Rng& rng, int64_t d_in, int64_t d_out, int64_t stride)
        : cb1(rng, d_in, d_out, 3, stride, 1), cb2(rng, d_out, d_out, 3, 1, 1) {}

    Var<T> forward(const Var<T>& x) { return cb2.forward(cb1.forward(x)); }

    void set_training(bool t) {
        cb1.set_training(t);
        cb2.set_training(t);
    }
    void collect(const std::string& p, ParamList<T>& out) {
        cb1.collect(p + ".cb1", out);
        cb2.collect(p + ".cb2", out);
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) {
        cb1.collect_buffers(p + ".cb1", out);
        cb2.collect_buffers(p + ".cb2", out);
    }
};

}  // namespace psycho
