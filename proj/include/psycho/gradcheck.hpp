#pragma once

#include "psycho/autograd.hpp"

namespace psycho {

/// Central finite-difference check. `f` rebuilds the scalar loss from the
/// current leaf values. Returns the max relative error over all checked
/// coordinates; `max_coords` > 0 subsamples each leaf evenly.
template <typename T>
double gradcheck(const std::function<Var<T>()>& f, const std::vector<Var<T>>& leaves, double eps = 1e-4,
                 int64_t max_coords = 0) {
    Var<T> loss = f();
    if (!std::isfinite(static_cast<double>(loss->value.data[0]))) throw std::runtime_error("gradcheck: non-finite loss");
    backward(loss);
    std::vector<Tensor<T>> analytic;
    for (const auto& l : leaves) {
        if (!l->grad_set) {
            analytic.push_back(Tensor<T>::zeros(l->value.shape));
        } else {
            analytic.push_back(l->grad);
        }
        l->grad = Tensor<T>();
        l->grad_set = false;
    }

    double max_err = 0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& l = leaves[li];
        const int64_t n = l->value.numel();
        const int64_t step = (max_coords > 0 && n > max_coords) ? n / max_coords : 1;
        for (int64_t i = 0; i < n; i += step) {
            const T orig = l->value[i];
            l->value[i] = static_cast<T>(orig + eps);
            double fp;
            {
                NoGrad ng;
                fp = static_cast<double>(f()->value.data[0]);
            }
            l->value[i] = static_cast<T>(orig - eps);
            double fm;
            {
                NoGrad ng;
                fm = static_cast<double>(f()->value.data[0]);
            }
            l->value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = static_cast<double>(analytic[li][i]);
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace psycho
