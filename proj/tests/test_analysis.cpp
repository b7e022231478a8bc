#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "psycho/analysis.hpp"

using namespace psycho;
using D = double;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    fs::path p = fs::temp_directory_path() / "psycho_analysis_test";
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("pgm emission: exact header and payload bytes") {
    Tensor<D> m({2, 2});
    m[0] = 0.0; m[1] = 1.0; m[2] = 1.0; m[3] = 0.0;
    const std::string path = (scratch() / "checker.pgm").string();
    emit_image(m, path);

    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(bytes.substr(0, header.size()) == header);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 0);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 255);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 255);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 0);
}

TEST_CASE("pgm roundtrip within quantization") {
    Rng rng(4);
    Tensor<D> m = random_uniform<D>(rng, {5, 7});
    const std::string path = (scratch() / "roundtrip.pgm").string();
    emit_image(m, path);
    Tensor<D> back = read_pgm<D>(path);
    REQUIRE(back.shape == m.shape);
    for (int64_t i = 0; i < m.numel(); ++i) CHECK(std::abs(back[i] - m[i]) <= 1.0 / 255.0 + 1e-12);

    Tensor<D> bad({2, 2});
    bad[0] = 1.5;
    CHECK_THROWS_AS(emit_image(bad, path), std::invalid_argument);
}

TEST_CASE("minmax normalization degenerates to zeros") {
    Tensor<D> m = Tensor<D>::full({3, 3}, 0.7);
    Tensor<D> z = minmax01(m);
    for (int64_t i = 0; i < 9; ++i) CHECK(z[i] == 0.0);

    m[4] = 1.7;
    z = minmax01(m);
    CHECK(z[4] == 1.0);
    CHECK(z[0] == 0.0);
}

TEST_CASE("filter pca: single filter returns itself normalized") {
    Rng rng(5);
    Tensor<D> wr = random_normal<D>(rng, {1, 4, 4});
    Tensor<D> wi = random_normal<D>(rng, {1, 4, 4});
    FilterPCA<D> pca = filter_pca(wr, wi, 1);
    REQUIRE(pca.components.size() == 1);
    // component is proportional to the magnitude map, unit norm
    double dot = 0, n1 = 0, n2 = 0;
    for (int64_t j = 0; j < 16; ++j) {
        const double mag = std::hypot(wr[j], wi[j]);
        dot += pca.components[0][j] * mag;
        n1 += pca.components[0][j] * pca.components[0][j];
        n2 += mag * mag;
    }
    CHECK(n1 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(dot) / std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("filter pca: orthonormal components, gram-oracle eigenvalues") {
    Rng rng(6);
    const int64_t d = 8, c = 4, k = 4;
    Tensor<D> wr = random_normal<D>(rng, {d, c, c});
    Tensor<D> wi = random_normal<D>(rng, {d, c, c});
    FilterPCA<D> pca = filter_pca(wr, wi, k);
    REQUIRE(pca.components.size() == k);
    for (int64_t a = 0; a < k; ++a)
        for (int64_t b = 0; b < k; ++b) {
            double dot = 0;
            for (int64_t j = 0; j < c * c; ++j) dot += pca.components[a][j] * pca.components[b][j];
            CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-6);
        }
    for (auto& img : pca.images) {
        CHECK(img.shape == Shape{16, 16});
        for (int64_t j = 0; j < img.numel(); ++j) CHECK((img[j] >= 0.0 && img[j] <= 1.0));
    }

    // dual eigenproblem on the d x d Gram matrix shares the nonzero spectrum
    Eigen::MatrixXd X(d, c * c);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = 0; j < c * c; ++j) X(i, j) = std::hypot(wr[i * c * c + j], wi[i * c * c + j]);
    X.rowwise() -= X.colwise().mean();
    Eigen::MatrixXd gram = X * X.transpose() / static_cast<double>(d);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    for (int64_t q = 0; q < k; ++q)
        CHECK(std::abs(pca.eigenvalues[static_cast<size_t>(q)] - es.eigenvalues()(d - 1 - q)) < 1e-6);

    CHECK_THROWS_AS(filter_pca(wr, wi, d + 1), std::invalid_argument);
}

TEST_CASE("kpca-cam: constant activations give a zero map") {
    Tensor<D> act = Tensor<D>::full({3, 4, 4}, 0.25);
    Tensor<D> map = kpca_cam(act, 0);
    REQUIRE(map.shape == Shape{4, 4});
    for (int64_t i = 0; i < map.numel(); ++i) CHECK(map[i] == 0.0);
}

TEST_CASE("kpca-cam linear kernel equals a direct pca of positions") {
    Rng rng(7);
    Tensor<D> act = random_normal<D>(rng, {3, 4, 4});
    Tensor<D> map = kpca_cam(act, 0, "linear");

    const int64_t C = 3, n = 16;
    Eigen::MatrixXd X(n, C);
    for (int64_t s = 0; s < n; ++s)
        for (int64_t ch = 0; ch < C; ++ch) X(s, ch) = act[ch * n + s];
    X.rowwise() -= X.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X.transpose() * X);
    Eigen::VectorXd score = X * es.eigenvectors().col(C - 1);
    int64_t arg = 0;
    for (int64_t i = 1; i < n; ++i)
        if (std::abs(score(i)) > std::abs(score(arg))) arg = i;
    if (score(arg) < 0) score = -score;
    const double lo = score.minCoeff(), hi = score.maxCoeff();
    for (int64_t s = 0; s < n; ++s) CHECK(std::abs(map[s] - (score(s) - lo) / (hi - lo)) < 1e-6);
}

TEST_CASE("kpca-cam: blob activation localizes") {
    Tensor<D> act({2, 8, 8});
    for (int64_t y = 2; y < 5; ++y)
        for (int64_t x = 2; x < 5; ++x) act[y * 8 + x] = 5.0;  // channel 0 blob
    Tensor<D> map = kpca_cam(act, 0);
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 8; ++x) {
            const bool inside = y >= 2 && y < 5 && x >= 2 && x < 5;
            if (inside)
                CHECK(map.at2(y, x) >= 0.9);
            else
                CHECK(map.at2(y, x) <= 0.1);
        }
}

TEST_CASE("kpca-cam is invariant to channel permutation") {
    Rng rng(9);
    Tensor<D> act = random_normal<D>(rng, {4, 5, 5});
    Tensor<D> perm({4, 5, 5});
    const int order[4] = {2, 0, 3, 1};
    for (int c = 0; c < 4; ++c)
        for (int64_t i = 0; i < 25; ++i) perm[c * 25 + i] = act[order[c] * 25 + i];
    Tensor<D> m1 = kpca_cam(act, 0);
    Tensor<D> m2 = kpca_cam(perm, 0);
    for (int64_t i = 0; i < 25; ++i) CHECK(std::abs(m1[i] - m2[i]) < 1e-9);
}

TEST_CASE("gradient-masked salience: additivity and edge cases") {
    Rng rng(13);
    Model<D> m(rng, preset_config("model-i-micro"));
    m.set_training(false);

    for (int img = 0; img < 3; ++img) {
        Tensor<D> x = random_normal<D>(rng, {3, 8, 8});
        const int label = img % 2;
        for (int layer = 0; layer <= 1; ++layer) {
            Tensor<D> full = hirescam_raw(m, x, label, layer, {"all"});
            Tensor<D> none = hirescam_raw(m, x, label, layer, {"none"});
            Tensor<D> b0 = hirescam_raw(m, x, label, layer, {"subband", 0});
            Tensor<D> b1 = hirescam_raw(m, x, label, layer, {"subband", 1});
            double mx = 0;
            for (int64_t i = 0; i < full.numel(); ++i) {
                CHECK(none[i] == 0.0);
                mx = std::max(mx, std::abs(full[i] - b0[i] - b1[i]));
            }
            CHECK(mx < 1e-5);

            // channel masks of one branch sum back to that branch's map
            Tensor<D> chan_sum(b0.shape);
            for (int64_t c = 0; c < 16; ++c) {
                Tensor<D> mc = hirescam_raw(m, x, label, layer, {"channel", 0, c});
                for (int64_t i = 0; i < chan_sum.numel(); ++i) chan_sum[i] += mc[i];
            }
            for (int64_t i = 0; i < chan_sum.numel(); ++i) CHECK(std::abs(chan_sum[i] - b0[i]) < 1e-5);
        }
    }
}

TEST_CASE("gradient-masked salience: presentation map and selector errors") {
    Rng rng(14);
    Model<D> m(rng, preset_config("model-i-micro"));
    Tensor<D> x = random_normal<D>(rng, {3, 8, 8});

    SalienceMap<D> sm = hirescam_masked(m, x, 0, 1, {"subband", 1});
    CHECK(sm.conditioning == "sub-band 1");
    for (int64_t i = 0; i < sm.values.numel(); ++i) CHECK((sm.values[i] >= 0.0 && sm.values[i] <= 1.0));

    CHECK_THROWS_WITH_AS(hirescam_raw(m, x, 0, 7, {"all"}), doctest::Contains("out of range"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(hirescam_raw(m, x, 0, 1, {"subband", 5}), doctest::Contains("sub-band"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(hirescam_raw(m, x, 0, 1, {"channel", 0, 99}), doctest::Contains("channel"),
                         std::invalid_argument);
    CHECK_THROWS_AS(hirescam_raw(m, x, 0, 1, {"frequency"}), std::invalid_argument);

    Rng rng2(2);
    Model<D> plain(rng2, preset_config("model-ii"));
    Tensor<D> x32 = random_normal<D>(rng2, {3, 32, 32});
    CHECK_THROWS_AS(hirescam_raw(plain, x32, 0, 1, {"all"}), std::invalid_argument);
}

TEST_CASE("feature projection: collinear data collapses the second axis") {
    Tensor<D> re({5, 3}), im({5, 3});
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 3; ++j) {
            re[i * 3 + j] = static_cast<double>(i) * (j + 1);
            im[i * 3 + j] = -2.0 * i;
        }
    Tensor<D> coords = feature_projection(re, im);
    REQUIRE(coords.shape == Shape{5, 2});
    double var2 = 0, mean2 = 0;
    for (int64_t i = 0; i < 5; ++i) mean2 += coords[i * 2 + 1];
    mean2 /= 5;
    for (int64_t i = 0; i < 5; ++i) var2 += (coords[i * 2 + 1] - mean2) * (coords[i * 2 + 1] - mean2);
    CHECK(var2 < 1e-12);
}

TEST_CASE("feature projection is an isometry for intrinsically 2d data") {
    Rng rng(21);
    // plant 2d points, embed into 8 dims with an orthonormal map
    const int64_t N = 12;
    Eigen::MatrixXd P(N, 2);
    for (int64_t i = 0; i < N; ++i) {
        P(i, 0) = rng.normal();
        P(i, 1) = rng.normal();
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Random(8, 2);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(8, 2);
    Eigen::MatrixXd X = P * Q.transpose();  // (N, 8)

    Tensor<D> re({N, 4}), im({N, 4});
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < 4; ++j) {
            re[i * 4 + j] = X(i, j);
            im[i * 4 + j] = X(i, 4 + j);
        }
    Tensor<D> coords = feature_projection(re, im);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = i + 1; j < N; ++j) {
            const double orig = (P.row(i) - P.row(j)).norm();
            const double dx = coords[i * 2] - coords[j * 2], dy = coords[i * 2 + 1] - coords[j * 2 + 1];
            CHECK(std::abs(std::sqrt(dx * dx + dy * dy) - orig) < 1e-6);
        }

    Tensor<D> tiny({2, 4});
    CHECK_THROWS_AS(feature_projection(tiny, tiny), std::invalid_argument);
}
