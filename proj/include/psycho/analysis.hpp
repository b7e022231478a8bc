#pragma once

#include <Eigen/Dense>
#include <fstream>

#include "psycho/model.hpp"

namespace psycho {

// ---------------------------------------------------------------------------
// image emission

/// Binary 8-bit PGM. `map` is (H, W) with values in [0, 1].
template <typename T>
void emit_image(const Tensor<T>& map, const std::string& path) {
    if (map.shape.size() != 2) throw std::invalid_argument("emit_image: expected (H, W), got " + shape_str(map.shape));
    for (int64_t i = 0; i < map.numel(); ++i)
        if (!(map[i] >= T(-1e-9) && map[i] <= T(1 + 1e-9)))
            throw std::invalid_argument("emit_image: values must lie in [0, 1]");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("emit_image: cannot write " + path);
    f << "P5\n" << map.shape[1] << " " << map.shape[0] << "\n255\n";
    for (int64_t i = 0; i < map.numel(); ++i) {
        const double v = std::clamp(static_cast<double>(map[i]), 0.0, 1.0);
        f.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
    if (!f) throw std::runtime_error("emit_image: write failed for " + path);
}

template <typename T>
Tensor<T> read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
    std::string magic;
    int64_t w = 0, h = 0, maxv = 0;
    f >> magic >> w >> h >> maxv;
    if (magic != "P5" || maxv != 255) throw std::runtime_error("read_pgm: unsupported format in " + path);
    f.get();  // single whitespace after the header
    Tensor<T> out({h, w});
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(static_cast<unsigned char>(f.get()) / 255.0);
    if (!f) throw std::runtime_error("read_pgm: truncated " + path);
    return out;
}

// ---------------------------------------------------------------------------
// map post-processing

/// Min-max normalize to [0, 1]; a constant map becomes all zeros.
template <typename T>
Tensor<T> minmax01(const Tensor<T>& m) {
    T lo = m[0], hi = m[0];
    for (int64_t i = 0; i < m.numel(); ++i) {
        lo = std::min(lo, m[i]);
        hi = std::max(hi, m[i]);
    }
    Tensor<T> out(m.shape);
    if (hi - lo <= T(0)) return out;  // zeros
    for (int64_t i = 0; i < m.numel(); ++i) out[i] = (m[i] - lo) / (hi - lo);
    return out;
}

/// Bilinear upsample of an (H, W) map by an integer factor, corner-aligned.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& m, int64_t factor) {
    const int64_t H = m.shape[0], W = m.shape[1];
    const int64_t OH = H * factor, OW = W * factor;
    Tensor<T> out({OH, OW});
    for (int64_t y = 0; y < OH; ++y) {
        const double fy = OH > 1 ? static_cast<double>(y) * (H - 1) / (OH - 1) : 0.0;
        const int64_t y0 = static_cast<int64_t>(fy), y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - static_cast<double>(y0);
        for (int64_t x = 0; x < OW; ++x) {
            const double fx = OW > 1 ? static_cast<double>(x) * (W - 1) / (OW - 1) : 0.0;
            const int64_t x0 = static_cast<int64_t>(fx), x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - static_cast<double>(x0);
            const double v = (1 - wy) * ((1 - wx) * m.at2(y0, x0) + wx * m.at2(y0, x1)) +
                             wy * ((1 - wx) * m.at2(y1, x0) + wx * m.at2(y1, x1));
            out.at2(y, x) = static_cast<T>(v);
        }
    }
    return out;
}

template <typename T>
struct SalienceMap {
    Tensor<T> values;  // (H, W) in [0, 1]
    std::string source;
    std::string conditioning;
};

// ---------------------------------------------------------------------------
// principal components of a filter bank

template <typename T>
struct FilterPCA {
    std::vector<Tensor<T>> components;  // k loading maps (crop, crop); orthonormal when flattened
    std::vector<double> eigenvalues;
    std::vector<Tensor<T>> images;  // bilinear x4 upsampled, normalized to [0, 1]
};

/// PCA over the d channels of elementwise filter magnitudes |W_i|. Channels
/// are the samples, the crop x crop grid the feature space.
template <typename T>
FilterPCA<T> filter_pca(const Tensor<T>& w_re, const Tensor<T>& w_im, int64_t k) {
    if (w_re.shape.size() != 3 || w_re.shape != w_im.shape)
        throw std::invalid_argument("filter_pca: expected matching (d, crop, crop) filters");
    const int64_t d = w_re.shape[0], c = w_re.shape[1], p = c * c;
    if (k < 1 || k > d)
        throw std::invalid_argument("filter_pca: k=" + std::to_string(k) + " exceeds filter count " +
                                    std::to_string(d));
    Eigen::MatrixXd X(d, p);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = 0; j < p; ++j)
            X(i, j) = std::hypot(static_cast<double>(w_re[i * p + j]), static_cast<double>(w_im[i * p + j]));
    if (d > 1) X.rowwise() -= X.colwise().mean();  // a single sample stays uncentered

    Eigen::MatrixXd cov = X.transpose() * X / static_cast<double>(d);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);

    FilterPCA<T> out;
    for (int64_t q = 0; q < k; ++q) {
        const int64_t idx = p - 1 - q;  // eigenvalues ascend
        Eigen::VectorXd v = es.eigenvectors().col(idx);
        int64_t arg = 0;
        for (int64_t j = 1; j < p; ++j)
            if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
        if (v(arg) < 0) v = -v;
        Tensor<T> comp({c, c});
        for (int64_t j = 0; j < p; ++j) comp[j] = static_cast<T>(v(j));
        out.eigenvalues.push_back(std::max(0.0, es.eigenvalues()(idx)));
        out.images.push_back(minmax01(bilinear_upsample(comp, 4)));
        out.components.push_back(std::move(comp));
    }
    return out;
}

// ---------------------------------------------------------------------------
// kernel-PCA salience on layer activations

/// Treat the H*W positions of a (C, H, W) activation map as C-dim samples,
/// kernel-PCA them and visualize one component. `kernel` is "rbf" (bandwidth
/// from the median pairwise distance) or "linear".
template <typename T>
Tensor<T> kpca_cam(const Tensor<T>& act, int64_t component, const std::string& kernel = "rbf") {
    if (act.shape.size() != 3) throw std::invalid_argument("kpca_cam: expected (C, H, W), got " + shape_str(act.shape));
    const int64_t C = act.shape[0], H = act.shape[1], W = act.shape[2], n = H * W;
    if (component < 0 || component >= n) throw std::invalid_argument("kpca_cam: component out of range");

    Eigen::MatrixXd X(n, C);
    for (int64_t s = 0; s < n; ++s)
        for (int64_t ch = 0; ch < C; ++ch) X(s, ch) = act[ch * n + s];

    Eigen::MatrixXd K(n, n);
    if (kernel == "linear") {
        K = X * X.transpose();
    } else if (kernel == "rbf") {
        Eigen::MatrixXd d2(n, n);
        std::vector<double> pair;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) {
                d2(i, j) = (X.row(i) - X.row(j)).squaredNorm();
                if (j > i) pair.push_back(d2(i, j));
            }
        std::sort(pair.begin(), pair.end());
        double med = pair.empty() ? 0.0 : pair[pair.size() / 2];
        if (med <= 0.0) {  // duplicate-heavy maps: fall back to the positive distances
            auto first_pos = std::upper_bound(pair.begin(), pair.end(), 0.0);
            if (first_pos == pair.end()) return Tensor<T>({H, W});  // constant activations
            med = *(first_pos + (pair.end() - first_pos) / 2);
        }
        const double gamma = 1.0 / (static_cast<double>(C) * med);
        K = (-gamma * d2).array().exp();
    } else {
        throw std::invalid_argument("kpca_cam: unknown kernel \"" + kernel + "\"");
    }

    // double centering in feature space
    Eigen::MatrixXd ones = Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    Eigen::MatrixXd Kc = K - ones * K - K * ones + ones * K * ones;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Kc);
    const int64_t idx = n - 1 - component;
    const double lam = es.eigenvalues()(idx);
    if (lam <= 1e-12) return Tensor<T>({H, W});  // no variance along this component
    Eigen::VectorXd score = es.eigenvectors().col(idx) * std::sqrt(lam);
    int64_t arg = 0;
    for (int64_t j = 1; j < n; ++j)
        if (std::abs(score(j)) > std::abs(score(arg))) arg = j;
    if (score(arg) < 0) score = -score;

    Tensor<T> map({H, W});
    for (int64_t s = 0; s < n; ++s) map[s] = static_cast<T>(score(s));
    return minmax01(map);
}

// ---------------------------------------------------------------------------
// gradient-masked salience

/// Gradient-mask selector for the filter-bank branches: keep everything, one
/// sub-band, one channel of a sub-band, or nothing.
struct CamMask {
    std::string kind = "all";  // all | subband | channel | none
    int branch = -1;
    int64_t channel = -1;
};

/// Raw activation-times-gradient map at a phasor layer, summed over channels
/// and both complex components, with branch gradients masked per `mask`.
/// No clamping or normalization; callers rely on its additivity.
template <typename T>
Tensor<T> hirescam_raw(Model<T>& model, const Tensor<T>& image, int label, int layer_index, const CamMask& mask) {
    if (!model.cfg.dvc.enabled) throw std::invalid_argument("hirescam: model has no filter-bank stage");
    if (layer_index < 0 || layer_index >= static_cast<int>(model.layers.size()))
        throw std::invalid_argument("hirescam: layer index " + std::to_string(layer_index) + " out of range");
    const std::string& lt = model.layers[static_cast<size_t>(layer_index)].cfg.type;
    if (lt != "phasor_i" && lt != "phasor_c")
        throw std::invalid_argument("hirescam: target layer " + std::to_string(layer_index) + " is " + lt +
                                    ", expected a phasor block");
    const int nb = static_cast<int>(model.dvc.gates.size());
    if (mask.kind == "subband" || mask.kind == "channel") {
        if (mask.branch < 0 || mask.branch >= nb)
            throw std::invalid_argument("hirescam: sub-band index " + std::to_string(mask.branch) + " out of range");
        if (mask.kind == "channel" && (mask.channel < 0 || mask.channel >= model.dvc.d_filter))
            throw std::invalid_argument("hirescam: channel " + std::to_string(mask.channel) + " out of range");
    } else if (mask.kind != "all" && mask.kind != "none") {
        throw std::invalid_argument("hirescam: unknown mask kind \"" + mask.kind + "\"");
    }

    for (int j = 0; j < nb; ++j) {
        auto& g = *model.dvc.gates[static_cast<size_t>(j)];
        if (mask.kind == "all") {
            g.pass_through = true;
        } else if (mask.kind == "subband" && j == mask.branch) {
            g.pass_through = true;
        } else if (mask.kind == "channel" && j == mask.branch) {
            g.pass_through = false;
            g.channel_mask = Tensor<T>::zeros({model.dvc.d_filter});
            g.channel_mask[mask.channel] = T(1);
        } else {
            g.pass_through = false;
            g.channel_mask = Tensor<T>::zeros({model.dvc.d_filter});
        }
    }

    model.set_training(false);
    model.capture_layer = layer_index;
    Tensor<T> input = image;
    if (input.shape.size() == 3) input = input.reshaped({1, image.shape[0], image.shape[1], image.shape[2]});
    Var<T> logits = model.forward(leaf(std::move(input)));
    if (label < 0 || label >= logits->value.shape[1]) throw std::invalid_argument("hirescam: label out of range");
    Tensor<T> onehot = Tensor<T>::zeros(logits->value.shape);
    onehot[label] = T(1);
    Var<T> score = sum_all(mask_mul(logits, std::move(onehot)));
    backward(score);
    model.capture_layer = -1;
    for (auto& g : model.dvc.gates) g->pass_through = true;

    CVar<T> a = model.captured_act;
    const Shape& s = a.shape();
    Tensor<T> raw({s[2], s[3]});
    const int64_t hw = s[2] * s[3];
    for (int64_t c = 0; c < s[1]; ++c)
        for (int64_t i = 0; i < hw; ++i) {
            double v = 0;
            if (a.re->grad_set) v += static_cast<double>(a.re->grad[c * hw + i]) * a.re->value[c * hw + i];
            if (a.im->grad_set) v += static_cast<double>(a.im->grad[c * hw + i]) * a.im->value[c * hw + i];
            raw[i] += static_cast<T>(v);
        }
    model.captured_act = CVar<T>{};
    return raw;
}

/// The presentable map: clamp negative evidence, normalize to [0, 1].
template <typename T>
SalienceMap<T> hirescam_masked(Model<T>& model, const Tensor<T>& image, int label, int layer_index,
                               const CamMask& mask) {
    Tensor<T> raw = hirescam_raw(model, image, label, layer_index, mask);
    for (int64_t i = 0; i < raw.numel(); ++i) raw[i] = std::max(raw[i], T(0));
    SalienceMap<T> out;
    out.values = minmax01(raw);
    out.source = "layer" + std::to_string(layer_index);
    out.conditioning = mask.kind == "subband"  ? "sub-band " + std::to_string(mask.branch)
                       : mask.kind == "channel" ? "channel " + std::to_string(mask.channel)
                                                : mask.kind;
    return out;
}

// ---------------------------------------------------------------------------
// 2D feature projection

/// PCA to two dimensions on concatenated (re, im) pooled features (N, d).
template <typename T>
Tensor<T> feature_projection(const Tensor<T>& re, const Tensor<T>& im) {
    if (re.shape.size() != 2 || re.shape != im.shape)
        throw std::invalid_argument("feature_projection: expected matching (N, d) components");
    const int64_t N = re.shape[0], d = re.shape[1];
    if (N < 3) throw std::invalid_argument("feature_projection: need at least 3 samples");
    Eigen::MatrixXd X(N, 2 * d);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < d; ++j) {
            X(i, j) = re[i * d + j];
            X(i, d + j) = im[i * d + j];
        }
    X.rowwise() -= X.colwise().mean();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Tensor<T> out({N, 2});
    for (int64_t comp = 0; comp < 2; ++comp) {
        Eigen::VectorXd score = X * svd.matrixV().col(comp);
        int64_t arg = 0;
        for (int64_t i = 1; i < N; ++i)
            if (std::abs(score(i)) > std::abs(score(arg))) arg = i;
        if (score(arg) < 0) score = -score;
        for (int64_t i = 0; i < N; ++i) out[i * 2 + comp] = static_cast<T>(score(i));
    }
    return out;
}

}  // namespace psycho
