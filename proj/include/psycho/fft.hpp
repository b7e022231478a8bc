#pragma once

#include <complex>
#include <vector>

#include "psycho/tensor.hpp"

namespace psycho {
namespace fftcore {

using cd = std::complex<double>;

constexpr double kPi = 3.14159265358979323846264338327950288;

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 transform; n must be a power of two.
/// Unscaled in both directions (caller applies 1/n for the inverse).
inline void fft_pow2(std::vector<cd>& a, bool inverse) {
    const size_t n = a.size();
    if (n <= 1) return;
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const cd wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                cd u = a[i + k];
                cd v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

/// Arbitrary-length transform via Bluestein's chirp-z algorithm.
/// Unscaled in both directions, matching fft_pow2's convention.
inline void fft_bluestein(std::vector<cd>& a, bool inverse) {
    const size_t n = a.size();
    if (n <= 1) return;
    const double sign = inverse ? 1.0 : -1.0;
    // chirp[k] = exp(sign * i*pi*k^2/n); use k^2 mod 2n to keep the angle small
    std::vector<cd> chirp(n);
    for (size_t k = 0; k < n; ++k) {
        const size_t k2 = (k * k) % (2 * n);
        const double ang = sign * kPi * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = cd(std::cos(ang), std::sin(ang));
    }
    size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    std::vector<cd> u(m, cd(0, 0)), v(m, cd(0, 0));
    for (size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
    v[0] = std::conj(chirp[0]);
    for (size_t k = 1; k < n; ++k) v[k] = v[m - k] = std::conj(chirp[k]);
    fft_pow2(u, false);
    fft_pow2(v, false);
    for (size_t k = 0; k < m; ++k) u[k] *= v[k];
    fft_pow2(u, true);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (size_t k = 0; k < n; ++k) a[k] = u[k] * inv_m * chirp[k];
}

inline void fft1d(std::vector<cd>& a, bool inverse) {
    if (is_pow2(a.size()))
        fft_pow2(a, inverse);
    else
        fft_bluestein(a, inverse);
}

}  // namespace fftcore

/// 2D transform over the last two axes of a 4D (N,C,H,W) complex pair.
/// Forward is unscaled; inverse applies 1/(H*W). Computed in 64-bit
/// regardless of T.
template <typename T>
void fft2_inplace(Tensor<T>& re, Tensor<T>& im, bool inverse) {
    const Shape& s = re.shape;
    if (s.size() != 4 || im.shape != s) throw std::invalid_argument("fft2: expected matching 4D pair, got " + shape_str(s) + " / " + shape_str(im.shape));
    const int64_t NC = s[0] * s[1], H = s[2], W = s[3];
    std::vector<fftcore::cd> buf(static_cast<size_t>(std::max(H, W)));
    std::vector<fftcore::cd> plane(static_cast<size_t>(H * W));
    for (int64_t b = 0; b < NC; ++b) {
        T* pr = re.ptr() + b * H * W;
        T* pi = im.ptr() + b * H * W;
        for (int64_t i = 0; i < H * W; ++i) plane[static_cast<size_t>(i)] = fftcore::cd(pr[i], pi[i]);
        for (int64_t h = 0; h < H; ++h) {
            buf.assign(plane.begin() + h * W, plane.begin() + (h + 1) * W);
            fftcore::fft1d(buf, inverse);
            std::copy(buf.begin(), buf.end(), plane.begin() + h * W);
        }
        buf.resize(static_cast<size_t>(H));
        for (int64_t w = 0; w < W; ++w) {
            for (int64_t h = 0; h < H; ++h) buf[static_cast<size_t>(h)] = plane[static_cast<size_t>(h * W + w)];
            fftcore::fft1d(buf, inverse);
            for (int64_t h = 0; h < H; ++h) plane[static_cast<size_t>(h * W + w)] = buf[static_cast<size_t>(h)];
        }
        buf.resize(static_cast<size_t>(std::max(H, W)));
        const double sc = inverse ? 1.0 / static_cast<double>(H * W) : 1.0;
        for (int64_t i = 0; i < H * W; ++i) {
            pr[i] = static_cast<T>(plane[static_cast<size_t>(i)].real() * sc);
            pi[i] = static_cast<T>(plane[static_cast<size_t>(i)].imag() * sc);
        }
    }
}

/// Direct O(w^4) double-sum 2D DFT (oracle). Forward unscaled; inverse 1/w^2.
template <typename T>
void dft2_naive(const Tensor<T>& re, const Tensor<T>& im, Tensor<T>& out_re, Tensor<T>& out_im, bool inverse = false) {
    const Shape& s = re.shape;
    if (s.size() != 4 || im.shape != s) throw std::invalid_argument("dft2_naive: expected matching 4D pair");
    const int64_t NC = s[0] * s[1], H = s[2], W = s[3];
    out_re = Tensor<T>(s);
    out_im = Tensor<T>(s);
    const double sign = inverse ? 1.0 : -1.0;
    for (int64_t b = 0; b < NC; ++b) {
        const T* pr = re.ptr() + b * H * W;
        const T* pi = im.ptr() + b * H * W;
        T* qr = out_re.ptr() + b * H * W;
        T* qi = out_im.ptr() + b * H * W;
        for (int64_t u = 0; u < H; ++u)
            for (int64_t v = 0; v < W; ++v) {
                double sr = 0, si = 0;
                for (int64_t m = 0; m < H; ++m)
                    for (int64_t n = 0; n < W; ++n) {
                        const double ang = 2.0 * fftcore::kPi *
                                           (static_cast<double>(u * m) / static_cast<double>(H) +
                                            static_cast<double>(v * n) / static_cast<double>(W));
                        const double c = std::cos(ang), sn = sign * std::sin(ang);
                        const double xr = pr[m * W + n], xi = pi[m * W + n];
                        sr += xr * c - xi * sn;
                        si += xr * sn + xi * c;
                    }
                const double sc = inverse ? 1.0 / static_cast<double>(H * W) : 1.0;
                qr[u * W + v] = static_cast<T>(sr * sc);
                qi[u * W + v] = static_cast<T>(si * sc);
            }
    }
}

}  // namespace psycho
