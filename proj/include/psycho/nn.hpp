#pragma once

#include "psycho/conv.hpp"

namespace psycho {

template <typename T>
struct Param {
    std::string name;
    Var<T> v;
    bool decay = true;  // weight-decay eligibility (biases and norm params opt out)
};

template <typename T>
using ParamList = std::vector<Param<T>>;

/// Named persistent non-parameter state (running statistics).
template <typename T>
struct BufferRef {
    std::string name;
    Tensor<T>* t;
};

template <typename T>
using BufferList = std::vector<BufferRef<T>>;

template <typename T>
Tensor<T> kaiming_normal(Rng& rng, Shape s, int64_t fan_in, double gain = 1.0) {
    return random_normal<T>(rng, std::move(s), gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
}

// ---------------------------------------------------------------------------

template <typename T>
struct Conv2d {
    Var<T> w;
    Var<T> b;  // null when the layer is bias-free (a norm follows)
    int64_t stride = 1, pad = 0, groups = 1;

    Conv2d() = default;
    Conv2d(Rng& rng, int64_t c_in, int64_t c_out, int64_t k, int64_t stride_, int64_t pad_, bool bias,
           int64_t groups_ = 1)
        : stride(stride_), pad(pad_), groups(groups_) {
        w = leaf(kaiming_normal<T>(rng, {c_out, c_in / groups_, k, k}, (c_in / groups_) * k * k));
        if (bias) b = leaf(Tensor<T>::zeros({c_out}));
    }

    Var<T> forward(const Var<T>& x) const { return conv2d(x, w, b, stride, pad, groups); }

    void collect(const std::string& p, ParamList<T>& out) {
        out.push_back({p + ".w", w, true});
        if (b) out.push_back({p + ".b", b, false});
    }
};

template <typename T>
struct Linear {
    Var<T> w;
    Var<T> b;

    Linear() = default;
    Linear(Rng& rng, int64_t d_in, int64_t d_out, bool bias = true) {
        w = leaf(kaiming_normal<T>(rng, {d_out, d_in}, d_in));
        if (bias) b = leaf(Tensor<T>::zeros({d_out}));
    }

    Var<T> forward(const Var<T>& x) const { return linear(x, w, b); }

    void collect(const std::string& p, ParamList<T>& out) {
        out.push_back({p + ".w", w, true});
        if (b) out.push_back({p + ".b", b, false});
    }
};

// ---------------------------------------------------------------------------

/// Batch normalization over (N,H,W) per channel, fused forward/backward.
/// Train mode uses biased batch variance and updates running estimates;
/// eval mode uses the running estimates.
template <typename T>
struct BatchNorm2d {
    Var<T> gamma;
    Var<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    double momentum = 0.1, eps = 1e-5;
    bool training = true;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int64_t c) {
        gamma = leaf(Tensor<T>::full({c}, T(1)));
        beta = leaf(Tensor<T>::zeros({c}));
        running_mean = Tensor<T>::zeros({c});
        running_var = Tensor<T>::full({c}, T(1));
    }

    Var<T> forward(const Var<T>& x) {
        const Shape& s = x->value.shape;
        if (s.size() != 4) throw std::invalid_argument("batchnorm2d: expected 4D, got " + shape_str(s));
        const int64_t N = s[0], C = s[1], HW = s[2] * s[3];
        if (C != gamma->value.numel()) throw std::invalid_argument("batchnorm2d: channel mismatch " + shape_str(s));
        const int64_t M = N * HW;

        std::vector<double> mean(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
        if (training) {
            if (N < 2) throw std::invalid_argument("batchnorm2d: train mode requires batch size >= 2");
            for (int64_t c = 0; c < C; ++c) {
                double m = 0;
                for (int64_t n = 0; n < N; ++n) {
                    const T* p = x->value.ptr() + (n * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) m += p[i];
                }
                m /= static_cast<double>(M);
                double v = 0;
                for (int64_t n = 0; n < N; ++n) {
                    const T* p = x->value.ptr() + (n * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) {
                        const double d = p[i] - m;
                        v += d * d;
                    }
                }
                v /= static_cast<double>(M);
                mean[static_cast<size_t>(c)] = m;
                inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(v + eps);
                running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * m);
                running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * v);
            }
        } else {
            for (int64_t c = 0; c < C; ++c) {
                mean[static_cast<size_t>(c)] = running_mean[c];
                inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
            }
        }

        auto xhat = std::make_shared<Tensor<T>>(s);
        Tensor<T> out(s);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                const T* p = x->value.ptr() + (n * C + c) * HW;
                T* xh = xhat->ptr() + (n * C + c) * HW;
                T* o = out.ptr() + (n * C + c) * HW;
                const double m = mean[static_cast<size_t>(c)], is = inv_std[static_cast<size_t>(c)];
                const double g = gamma->value[c], bt = beta->value[c];
                for (int64_t i = 0; i < HW; ++i) {
                    const double h = (p[i] - m) * is;
                    xh[i] = static_cast<T>(h);
                    o[i] = static_cast<T>(g * h + bt);
                }
            }

        const Var<T> xp = x, gp = gamma, bp = beta;
        const bool batch_stats = training;
        return make_op<T>(std::move(out), {xp, gp, bp},
                          [xp, gp, bp, xhat, inv_std, N, C, HW, M, batch_stats](Node<T>& self) {
                              // per channel: sg = sum g, sgx = sum g*xhat
                              std::vector<double> sg(static_cast<size_t>(C), 0), sgx(static_cast<size_t>(C), 0);
                              for (int64_t n = 0; n < N; ++n)
                                  for (int64_t c = 0; c < C; ++c) {
                                      const T* g = self.grad.ptr() + (n * C + c) * HW;
                                      const T* xh = xhat->ptr() + (n * C + c) * HW;
                                      double a = 0, b2 = 0;
                                      for (int64_t i = 0; i < HW; ++i) {
                                          a += g[i];
                                          b2 += static_cast<double>(g[i]) * xh[i];
                                      }
                                      sg[static_cast<size_t>(c)] += a;
                                      sgx[static_cast<size_t>(c)] += b2;
                                  }
                              if (gp->needs_grad) {
                                  Tensor<T> gg(gp->value.shape);
                                  for (int64_t c = 0; c < C; ++c) gg[c] = static_cast<T>(sgx[static_cast<size_t>(c)]);
                                  accumulate_move(*gp, std::move(gg));
                              }
                              if (bp->needs_grad) {
                                  Tensor<T> gb(bp->value.shape);
                                  for (int64_t c = 0; c < C; ++c) gb[c] = static_cast<T>(sg[static_cast<size_t>(c)]);
                                  accumulate_move(*bp, std::move(gb));
                              }
                              if (xp->needs_grad) {
                                  Tensor<T> gx(xp->value.shape);
                                  for (int64_t n = 0; n < N; ++n)
                                      for (int64_t c = 0; c < C; ++c) {
                                          const T* g = self.grad.ptr() + (n * C + c) * HW;
                                          const T* xh = xhat->ptr() + (n * C + c) * HW;
                                          T* o = gx.ptr() + (n * C + c) * HW;
                                          const double gm = static_cast<double>(gp->value[c]) *
                                                            inv_std[static_cast<size_t>(c)];
                                          if (batch_stats) {
                                              const double mg = sg[static_cast<size_t>(c)] / static_cast<double>(M);
                                              const double mgx = sgx[static_cast<size_t>(c)] / static_cast<double>(M);
                                              for (int64_t i = 0; i < HW; ++i)
                                                  o[i] = static_cast<T>(gm * (g[i] - mg - xh[i] * mgx));
                                          } else {
                                              for (int64_t i = 0; i < HW; ++i) o[i] = static_cast<T>(gm * g[i]);
                                          }
                                      }
                                  accumulate_move(*xp, std::move(gx));
                              }
                          },
                          "batchnorm2d");
    }

    void collect(const std::string& p, ParamList<T>& out) {
        out.push_back({p + ".gamma", gamma, false});
        out.push_back({p + ".beta", beta, false});
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) {
        out.push_back({p + ".running_mean", &running_mean});
        out.push_back({p + ".running_var", &running_var});
    }
};

// ---------------------------------------------------------------------------

/// Conv -> BN -> GELU.
template <typename T>
struct ConvBlock {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;

    ConvBlock() = default;
    ConvBlock(Rng& rng, int64_t c_in, int64_t c_out, int64_t k, int64_t stride, int64_t pad)
        : conv(rng, c_in, c_out, k, stride, pad, false), bn(c_out) {}

    Var<T> forward(const Var<T>& x) { return gelu(bn.forward(conv.forward(x))); }

    void set_training(bool t) { bn.training = t; }
    void collect(const std::string& p, ParamList<T>& out) {
        conv.collect(p + ".conv", out);
        bn.collect(p + ".bn", out);
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) { bn.collect_buffers(p + ".bn", out); }
};

/// Depthwise 3x3 -> BN -> GELU -> pointwise 1x1 -> BN -> GELU.
/// Spatial and channel mixing are decoupled.
template <typename T>
struct DWConvBlock {
    Conv2d<T> dw;
    BatchNorm2d<T> bn1;
    Conv2d<T> pw;
    BatchNorm2d<T> bn2;

    DWConvBlock() = default;
    DWConvBlock(Rng& rng, int64_t c_in, int64_t c_out, int64_t stride)
        : dw(rng, c_in, c_in, 3, stride, 1, false, c_in), bn1(c_in), pw(rng, c_in, c_out, 1, 1, 0, false), bn2(c_out) {}

    Var<T> forward(const Var<T>& x) {
        return gelu(bn2.forward(pw.forward(gelu(bn1.forward(dw.forward(x))))));
    }

    void set_training(bool t) {
        bn1.training = t;
        bn2.training = t;
    }
    void collect(const std::string& p, ParamList<T>& out) {
        dw.collect(p + ".dw", out);
        bn1.collect(p + ".bn1", out);
        pw.collect(p + ".pw", out);
        bn2.collect(p + ".bn2", out);
    }
    void collect_buffers(const std::string& p, BufferList<T>& out) {
        bn1.collect_buffers(p + ".bn1", out);
        bn2.collect_buffers(p + ".bn2", out);
    }
};

}  // namespace psycho
