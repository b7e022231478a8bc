#pragma once

#include "psycho/nn.hpp"

namespace psycho {

/// One-cycle schedule: cosine warmup from max_lr/div_start to max_lr over the
/// first warmup_frac of steps, cosine anneal to max_lr/div_final after.
struct OneCycle {
    double max_lr = 1e-3;
    int64_t total_steps = 0;
    double warmup_frac = 0.3;
    double div_start = 25.0;
    double div_final = 1e4;

    double lr(int64_t step) const {
        if (step < 0 || step >= total_steps) throw std::invalid_argument("onecycle: step out of range");
        const int64_t ws = static_cast<int64_t>(warmup_frac * static_cast<double>(total_steps));
        auto cosine = [](double lo, double hi, double t) { return lo + (hi - lo) * 0.5 * (1.0 + std::cos(M_PI * t)); };
        if (step <= ws) {
            const double t = ws > 0 ? static_cast<double>(ws - step) / static_cast<double>(ws) : 0.0;
            return cosine(max_lr / div_start, max_lr, t);
        }
        const int64_t rest = total_steps - 1 - ws;
        const double t = rest > 0 ? static_cast<double>(step - ws) / static_cast<double>(rest) : 1.0;
        return cosine(max_lr / div_final, max_lr, t);
    }
};

/// AdamW with decoupled weight decay. Parameters flagged decay=false (biases,
/// normalization affines) skip the decay term.
template <typename T>
struct AdamW {
    ParamList<T> params;
    std::vector<Tensor<T>> m, v;
    int64_t step_count = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, wd = 0.05;

    AdamW() = default;
    explicit AdamW(ParamList<T> params_, double wd_ = 0.05) : params(std::move(params_)), wd(wd_) {
        for (auto& p : params) {
            m.push_back(Tensor<T>::zeros(p.v->value.shape));
            v.push_back(Tensor<T>::zeros(p.v->value.shape));
        }
    }

    void zero_grad() {
        for (auto& p : params) {
            p.v->grad = Tensor<T>();
            p.v->grad_set = false;
        }
    }

    void step(double lr) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            Param<T>& p = params[i];
            const int64_t n = p.v->value.numel();
            const bool has_grad = p.v->grad_set && p.v->grad.numel() == n;
            T* w = p.v->value.ptr();
            const T* g = has_grad ? p.v->grad.ptr() : nullptr;
            T* mi = m[i].ptr();
            T* vi = v[i].ptr();
            for (int64_t j = 0; j < n; ++j) {
                const double gj = g ? static_cast<double>(g[j]) : 0.0;
                if (!std::isfinite(gj))
                    throw std::runtime_error("adamw: non-finite gradient in parameter " + p.name);
                if (p.decay) w[j] = static_cast<T>(w[j] * (1.0 - lr * wd));
                mi[j] = static_cast<T>(beta1 * mi[j] + (1.0 - beta1) * gj);
                vi[j] = static_cast<T>(beta2 * vi[j] + (1.0 - beta2) * gj * gj);
                const double mhat = mi[j] / bc1;
                const double vhat = vi[j] / bc2;
                w[j] = static_cast<T>(w[j] - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

}  // namespace psycho
