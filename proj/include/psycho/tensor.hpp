#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace psycho {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

/// Dense row-major N-dimensional array of scalars.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("tensor: data size does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t ndim() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(int64_t i) const { return shape[static_cast<size_t>(i)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // NCHW accessor
    T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    T at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    T& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    T at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    Tensor reshaped(Shape s) const {
        if (numel_of(s) != numel())
            throw std::invalid_argument("reshape: numel mismatch " + shape_str(shape) + " -> " + shape_str(s));
        Tensor t;
        t.shape = std::move(s);
        t.data = data;
        return t;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t.shape = shape;
        t.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<U>(data[i]);
        return t;
    }
};

/// Deterministic generator used for every random decision in the toolkit.
/// Distributions are implemented locally so sampled streams do not depend on
/// the standard library vendor.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64() {
        // xorshift* variant; period 2^64-1
        uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    double uniform() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    int64_t randint(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) {
        state_ = s;
        have_spare_ = false;
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
Tensor<T> random_normal(Rng& rng, Shape s, double stddev = 1.0, double mean = 0.0) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(mean + stddev * rng.normal());
    return t;
}

template <typename T>
Tensor<T> random_uniform(Rng& rng, Shape s, double lo = 0.0, double hi = 1.0) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
    return t;
}

}  // namespace psycho
