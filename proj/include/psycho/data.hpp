#pragma once

#include <fstream>

#include "psycho/tensor.hpp"

namespace psycho {

template <typename T>
struct Dataset {
    Tensor<T> images;  // (N, 3, 32, 32)
    std::vector<int> labels;
    std::string split;
};

template <typename T>
struct Cifar10 {
    Dataset<T> train, test;
    double mean[3], std_dev[3];  // training-split standardization constants
};

namespace detail {

// 3,073-byte records: 1 label byte then 1024 R, 1024 G, 1024 B
template <typename T>
void read_cifar_file(const std::string& path, std::vector<T>& pixels, std::vector<int>& labels) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cifar10: cannot open " + path);
    const int64_t size = static_cast<int64_t>(f.tellg());
    if (size % 3073 != 0)
        throw std::runtime_error("cifar10: " + path + " has " + std::to_string(size) +
                                 " bytes, not a multiple of the 3073-byte record size");
    f.seekg(0);
    const int64_t n = size / 3073;
    std::vector<unsigned char> rec(3073);
    for (int64_t i = 0; i < n; ++i) {
        f.read(reinterpret_cast<char*>(rec.data()), 3073);
        if (!f) throw std::runtime_error("cifar10: short read in " + path);
        if (rec[0] > 9)
            throw std::runtime_error("cifar10: " + path + " record " + std::to_string(i) + " has label " +
                                     std::to_string(rec[0]));
        labels.push_back(rec[0]);
        for (int64_t j = 0; j < 3072; ++j) pixels.push_back(static_cast<T>(rec[1 + j] / 255.0));
    }
}

}  // namespace detail

/// Load the 6 binary batch files, scale to [0,1] and standardize every channel
/// with statistics computed from the training split.
template <typename T>
Cifar10<T> load_cifar10(const std::string& dir) {
    Cifar10<T> out;
    std::vector<T> train_px, test_px;
    for (int b = 1; b <= 5; ++b)
        detail::read_cifar_file<T>(dir + "/data_batch_" + std::to_string(b) + ".bin", train_px, out.train.labels);
    detail::read_cifar_file<T>(dir + "/test_batch.bin", test_px, out.test.labels);

    const int64_t n_train = static_cast<int64_t>(out.train.labels.size());
    const int64_t n_test = static_cast<int64_t>(out.test.labels.size());
    for (int c = 0; c < 3; ++c) {
        double m = 0;
        for (int64_t i = 0; i < n_train; ++i) {
            const T* p = train_px.data() + i * 3072 + c * 1024;
            for (int64_t j = 0; j < 1024; ++j) m += p[j];
        }
        m /= static_cast<double>(n_train * 1024);
        double v = 0;
        for (int64_t i = 0; i < n_train; ++i) {
            const T* p = train_px.data() + i * 3072 + c * 1024;
            for (int64_t j = 0; j < 1024; ++j) v += (p[j] - m) * (p[j] - m);
        }
        out.mean[c] = m;
        out.std_dev[c] = std::sqrt(v / static_cast<double>(n_train * 1024)) + 1e-12;
    }

    auto standardize = [&](std::vector<T>& px, int64_t n) {
        Tensor<T> t({n, 3, 32, 32});
        for (int64_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) {
                const T* src = px.data() + i * 3072 + c * 1024;
                T* dst = t.ptr() + (i * 3 + c) * 1024;
                for (int64_t j = 0; j < 1024; ++j)
                    dst[j] = static_cast<T>((src[j] - out.mean[c]) / out.std_dev[c]);
            }
        return t;
    };
    out.train.images = standardize(train_px, n_train);
    out.train.split = "train";
    out.test.images = standardize(test_px, n_test);
    out.test.split = "test";
    return out;
}

/// Horizontal flip of one (3, H, W) image inside a batch tensor.
template <typename T>
void hflip_image(Tensor<T>& batch, int64_t n) {
    const int64_t C = batch.shape[1], H = batch.shape[2], W = batch.shape[3];
    for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < H; ++h) {
            T* row = batch.ptr() + ((n * C + c) * H + h) * W;
            for (int64_t w = 0; w < W / 2; ++w) std::swap(row[w], row[W - 1 - w]);
        }
}

/// Crop a (3, H, W) image from its 4-pixel zero-padded version at offset
/// (oy, ox), 0 <= oy, ox <= 8. Offset (4, 4) recovers the original.
template <typename T>
void crop_pad4_image(Tensor<T>& batch, int64_t n, int64_t oy, int64_t ox) {
    const int64_t C = batch.shape[1], H = batch.shape[2], W = batch.shape[3];
    Tensor<T> tmp({C, H, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) {
                const int64_t sy = h + oy - 4, sx = w + ox - 4;
                tmp.ptr()[(c * H + h) * W + w] =
                    (sy >= 0 && sy < H && sx >= 0 && sx < W) ? batch.at4(n, c, sy, sx) : T(0);
            }
    std::copy(tmp.ptr(), tmp.ptr() + C * H * W, batch.ptr() + n * C * H * W);
}

/// In-place train-time augmentation: random padded crop, then flip with p=0.5.
/// Consumes exactly 3 draws per image, so a fixed seed fixes the batch.
template <typename T>
void augment(Tensor<T>& batch, Rng& rng) {
    const int64_t N = batch.shape[0];
    for (int64_t n = 0; n < N; ++n) {
        const int64_t oy = rng.randint(9), ox = rng.randint(9);
        crop_pad4_image(batch, n, oy, ox);
        if (rng.uniform() < 0.5) hflip_image(batch, n);
    }
}

/// Gather a batch by index list.
template <typename T>
Tensor<T> gather_images(const Tensor<T>& images, const std::vector<int64_t>& idx) {
    const int64_t C = images.shape[1], H = images.shape[2], W = images.shape[3];
    Tensor<T> out({static_cast<int64_t>(idx.size()), C, H, W});
    const int64_t stride = C * H * W;
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(images.ptr() + idx[i] * stride, images.ptr() + (idx[i] + 1) * stride,
                  out.ptr() + static_cast<int64_t>(i) * stride);
    return out;
}

}  // namespace psycho
