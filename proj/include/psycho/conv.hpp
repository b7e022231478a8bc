#pragma once

#include "psycho/autograd.hpp"

namespace psycho {

namespace detail {

// scatter/gather between an image (C,H,W) and column matrix (C*K*K, OH*OW)
template <typename T>
void im2col(const T* img, int64_t C, int64_t H, int64_t W, int64_t K, int64_t stride, int64_t pad, int64_t OH,
            int64_t OW, T* cols) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t kh = 0; kh < K; ++kh)
            for (int64_t kw = 0; kw < K; ++kw) {
                T* row = cols + ((c * K + kh) * K + kw) * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    const int64_t ih = oh * stride + kh - pad;
                    if (ih < 0 || ih >= H) {
                        std::fill(row + oh * OW, row + (oh + 1) * OW, T(0));
                        continue;
                    }
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const int64_t iw = ow * stride + kw - pad;
                        row[oh * OW + ow] = (iw < 0 || iw >= W) ? T(0) : img[(c * H + ih) * W + iw];
                    }
                }
            }
}

template <typename T>
void col2im_acc(const T* cols, int64_t C, int64_t H, int64_t W, int64_t K, int64_t stride, int64_t pad, int64_t OH,
                int64_t OW, T* img) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t kh = 0; kh < K; ++kh)
            for (int64_t kw = 0; kw < K; ++kw) {
                const T* row = cols + ((c * K + kh) * K + kw) * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    const int64_t ih = oh * stride + kh - pad;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const int64_t iw = ow * stride + kw - pad;
                        if (iw >= 0 && iw < W) img[(c * H + ih) * W + iw] += row[oh * OW + ow];
                    }
                }
            }
}

}  // namespace detail

/// Cross-correlation. x: (N,C,H,W), w: (O, C/groups, K, K), bias: (O) or null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride, int64_t pad, int64_t groups = 1) {
    const Shape& sx = x->value.shape;
    const Shape& sw = w->value.shape;
    if (sx.size() != 4 || sw.size() != 4)
        throw std::invalid_argument("conv2d: expected 4D input and kernel, got " + shape_str(sx) + " / " + shape_str(sw));
    const int64_t N = sx[0], C = sx[1], H = sx[2], W = sx[3];
    const int64_t O = sw[0], Cg = sw[1], K = sw[2];
    if (sw[3] != K) throw std::invalid_argument("conv2d: kernel must be square, got " + shape_str(sw));
    if (C % groups != 0 || O % groups != 0 || Cg != C / groups)
        throw std::invalid_argument("conv2d: channel/group mismatch, input " + shape_str(sx) + " kernel " + shape_str(sw) + " groups " + std::to_string(groups));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (K > H + 2 * pad || K > W + 2 * pad)
        throw std::invalid_argument("conv2d: kernel exceeds padded input " + shape_str(sx));
    const int64_t OH = (H + 2 * pad - K) / stride + 1;
    const int64_t OW = (W + 2 * pad - K) / stride + 1;
    const int64_t Og = O / groups;
    const int64_t ck = Cg * K * K;

    Tensor<T> out({N, O, OH, OW});
    std::vector<T> cols(static_cast<size_t>(ck * OH * OW));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t g = 0; g < groups; ++g) {
            detail::im2col(x->value.ptr() + (n * C + g * Cg) * H * W, Cg, H, W, K, stride, pad, OH, OW, cols.data());
            detail::MapM<T>(out.ptr() + (n * O + g * Og) * OH * OW, Og, OH * OW) =
                detail::CMapM<T>(w->value.ptr() + g * Og * ck, Og, ck) * detail::CMapM<T>(cols.data(), ck, OH * OW);
        }
    if (bias) {
        if (bias->value.numel() != O) throw std::invalid_argument("conv2d: bias size mismatch");
        T* o = out.ptr();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < O; ++c) {
                const T b = bias->value[c];
                T* p = o + (n * O + c) * OH * OW;
                for (int64_t i = 0; i < OH * OW; ++i) p[i] += b;
            }
    }
    std::vector<Var<T>> parents = bias ? std::vector<Var<T>>{x, w, bias} : std::vector<Var<T>>{x, w};
    return make_op<T>(std::move(out), parents,
                      [x, w, bias, stride, pad, groups, N, C, H, W, O, Cg, K, OH, OW, Og, ck](Node<T>& self) {
                          std::vector<T> cols2(static_cast<size_t>(ck * OH * OW));
                          Tensor<T> gx;
                          if (x->needs_grad) gx = Tensor<T>(x->value.shape);
                          Tensor<T> gw;
                          if (w->needs_grad) gw = Tensor<T>(w->value.shape);
                          for (int64_t n = 0; n < N; ++n)
                              for (int64_t g = 0; g < groups; ++g) {
                                  detail::CMapM<T> go(self.grad.ptr() + (n * O + g * Og) * OH * OW, Og, OH * OW);
                                  if (w->needs_grad || x->needs_grad)
                                      detail::im2col(x->value.ptr() + (n * C + g * Cg) * H * W, Cg, H, W, K, stride,
                                                     pad, OH, OW, cols2.data());
                                  if (w->needs_grad)
                                      detail::MapM<T>(gw.ptr() + g * Og * ck, Og, ck) +=
                                          go * detail::CMapM<T>(cols2.data(), ck, OH * OW).transpose();
                                  if (x->needs_grad) {
                                      detail::MapM<T>(cols2.data(), ck, OH * OW) =
                                          detail::CMapM<T>(w->value.ptr() + g * Og * ck, Og, ck).transpose() * go;
                                      detail::col2im_acc(cols2.data(), Cg, H, W, K, stride, pad, OH, OW,
                                                         gx.ptr() + (n * C + g * Cg) * H * W);
                                  }
                              }
                          if (x->needs_grad) accumulate_move(*x, std::move(gx));
                          if (w->needs_grad) accumulate_move(*w, std::move(gw));
                          if (bias && bias->needs_grad) {
                              Tensor<T> gb(bias->value.shape);
                              const T* sp = self.grad.ptr();
                              for (int64_t n = 0; n < N; ++n)
                                  for (int64_t c = 0; c < O; ++c) {
                                      T s = 0;
                                      const T* p = sp + (n * O + c) * OH * OW;
                                      for (int64_t i = 0; i < OH * OW; ++i) s += p[i];
                                      gb[c] += s;
                                  }
                              accumulate_move(*bias, std::move(gb));
                          }
                      },
                      "conv2d");
}

/// Max pooling with argmax routing on backward. x: (N,C,H,W).
template <typename T>
Var<T> maxpool2d(const Var<T>& x, int64_t k, int64_t stride, int64_t pad = 0) {
    const Shape& s = x->value.shape;
    if (s.size() != 4) throw std::invalid_argument("maxpool2d: expected 4D, got " + shape_str(s));
    const int64_t N = s[0], C = s[1], H = s[2], W = s[3];
    const int64_t OH = (H + 2 * pad - k) / stride + 1;
    const int64_t OW = (W + 2 * pad - k) / stride + 1;
    Tensor<T> out({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N * C * OH * OW));
    const T* p = x->value.ptr();
    T* o = out.ptr();
    for (int64_t b = 0; b < N * C; ++b)
        for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow) {
                T best = std::numeric_limits<T>::lowest();
                int64_t bi = -1;
                for (int64_t kh = 0; kh < k; ++kh)
                    for (int64_t kw = 0; kw < k; ++kw) {
                        const int64_t ih = oh * stride + kh - pad, iw = ow * stride + kw - pad;
                        if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                        const T v = p[(b * H + ih) * W + iw];
                        if (v > best) {
                            best = v;
                            bi = (b * H + ih) * W + iw;
                        }
                    }
                o[(b * OH + oh) * OW + ow] = bi >= 0 ? best : T(0);
                (*argmax)[static_cast<size_t>((b * OH + oh) * OW + ow)] = bi;
            }
    return make_op<T>(std::move(out), {x},
                      [x, argmax](Node<T>& self) {
                          if (!x->needs_grad) return;
                          Tensor<T> g(x->value.shape);
                          const T* sp = self.grad.ptr();
                          const int64_t n = self.grad.numel();
                          for (int64_t i = 0; i < n; ++i) {
                              const int64_t bi = (*argmax)[static_cast<size_t>(i)];
                              if (bi >= 0) g[bi] += sp[i];
                          }
                          accumulate_move(*x, std::move(g));
                      },
                      "maxpool2d");
}

/// Global spatial mean: (N,C,H,W) -> (N,C).
template <typename T>
Var<T> avgpool_global(const Var<T>& x) {
    const Shape& s = x->value.shape;
    if (s.size() != 4) throw std::invalid_argument("avgpool_global: expected 4D, got " + shape_str(s));
    return reshape(mean_axes(x, {2, 3}), {s[0], s[1]});
}

}  // namespace psycho
