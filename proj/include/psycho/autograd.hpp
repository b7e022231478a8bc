#pragma once

#include <Eigen/Core>
#include <cassert>
#include <functional>
#include <memory>
#include <unordered_set>

#include "psycho/tensor.hpp"

namespace psycho {

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/// One value in the computation graph. Gradients of interior nodes are
/// released as soon as they have been propagated; set retain_grad to keep one.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool grad_set = false;
    bool requires_grad = false;  // leaf parameter marker
    bool needs_grad = false;     // on the path to some leaf parameter
    bool retain_grad = false;
    std::vector<Var<T>> parents;
    std::function<void(Node<T>&)> backward_fn;
};

/// Scope guard disabling graph construction (pure inference).
class NoGrad {
public:
    NoGrad() { ++depth(); }
    ~NoGrad() { --depth(); }
    NoGrad(const NoGrad&) = delete;
    static bool enabled() { return depth() == 0; }

private:
    static int& depth() {
        thread_local int d = 0;
        return d;
    }
};

template <typename T>
Var<T> constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return n;
}

template <typename T>
Var<T> leaf(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->needs_grad = true;
    return n;
}

namespace detail {

template <typename T>
inline bool any_needs(const std::vector<Var<T>>& ps) {
    if (!NoGrad::enabled()) return false;
    for (const auto& p : ps)
        if (p->needs_grad) return true;
    return false;
}

#ifndef NDEBUG
template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite()) throw std::runtime_error(std::string("non-finite forward output in ") + op);
}
#else
template <typename T>
inline void check_finite(const Tensor<T>&, const char*) {}
#endif

}  // namespace detail

/// Create an op node. backward_fn may be empty for linear leaves handled elsewhere.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward_fn,
               const char* name = "op") {
    detail::check_finite(value, name);
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    if (detail::any_needs(parents)) {
        n->needs_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

template <typename T>
void accumulate(Node<T>& p, const Tensor<T>& g) {
    if (!p.grad_set) {
        p.grad = g;
        p.grad_set = true;
    } else {
        T* a = p.grad.ptr();
        const T* b = g.ptr();
        const int64_t n = p.grad.numel();
        for (int64_t i = 0; i < n; ++i) a[i] += b[i];
    }
}

template <typename T>
void accumulate_move(Node<T>& p, Tensor<T>&& g) {
    if (!p.grad_set) {
        p.grad = std::move(g);
        p.grad_set = true;
    } else {
        accumulate(p, g);
    }
}

/// Reverse-mode sweep from a scalar loss. Single use per graph: closures are
/// released as the sweep consumes them.
template <typename T>
void backward(const Var<T>& loss) {
    if (loss->value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->value.shape));
    if (!std::isfinite(static_cast<double>(loss->value.data[0]))) throw std::runtime_error("backward: loss is not finite");

    // iterative post-order topological sort; order keeps shared ownership so
    // releasing parent links during the sweep cannot destroy pending nodes
    std::vector<Var<T>> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Var<T>, size_t>> stack;
    stack.push_back({loss, 0});
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Var<T> p = node->parents[idx++];
            if (p->needs_grad && !visited.count(p.get())) {
                visited.insert(p.get());
                stack.push_back({std::move(p), 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->grad = Tensor<T>::full(loss->value.shape, T(1));
    loss->grad_set = true;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = it->get();
        if (n->grad_set && n->backward_fn) n->backward_fn(*n);
        n->backward_fn = nullptr;
        n->parents.clear();
        if (!n->requires_grad && !n->retain_grad) {
            n->grad = Tensor<T>();
            n->grad_set = false;
        }
    }
}

// ---------------------------------------------------------------------------
// broadcasting helpers

namespace detail {

// right-aligned numpy-style compatibility; returns output shape
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const size_t na = a.size(), nb = b.size();
    const size_t n = std::max(na, nb);
    Shape out(n);
    for (size_t i = 0; i < n; ++i) {
        int64_t da = i < n - na ? 1 : a[i - (n - na)];
        int64_t db = i < n - nb ? 1 : b[i - (n - nb)];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument(std::string(op) + ": shapes not broadcastable " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// strides of `s` viewed as shape `out` (0 stride on broadcast axes)
inline std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    const size_t n = out.size(), ns = s.size();
    std::vector<int64_t> st(n, 0);
    int64_t acc = 1;
    for (size_t i = ns; i-- > 0;) {
        size_t oi = i + (n - ns);
        st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : acc;
        acc *= s[i];
    }
    return st;
}

// sum g down to `target` shape (inverse of broadcast)
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
    if (g.shape == target) return g;
    Tensor<T> out(target);
    const auto st = broadcast_strides(target, g.shape);
    const size_t nd = g.shape.size();
    std::vector<int64_t> idx(nd, 0);
    const T* gp = g.ptr();
    T* op = out.ptr();
    const int64_t n = g.numel();
    int64_t off = 0;
    for (int64_t i = 0; i < n; ++i) {
        op[off] += gp[i];
        for (size_t d = nd; d-- > 0;) {
            if (++idx[d] < g.shape[d]) {
                off += st[d];
                break;
            }
            idx[d] = 0;
            off -= st[d] * (g.shape[d] - 1);
        }
    }
    return out;
}

enum class BinKind { Add, Sub, Mul, Div };

template <typename T>
inline T bin_eval(BinKind k, T a, T b) {
    switch (k) {
        case BinKind::Add: return a + b;
        case BinKind::Sub: return a - b;
        case BinKind::Mul: return a * b;
        default: return a / b;
    }
}

// general broadcast binary forward
template <typename T>
Tensor<T> bin_forward(BinKind k, const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape == b.shape) {
        Tensor<T> out(a.shape);
        const T* pa = a.ptr();
        const T* pb = b.ptr();
        T* po = out.ptr();
        const int64_t n = a.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = bin_eval(k, pa[i], pb[i]);
        return out;
    }
    Shape os = broadcast_shape(a.shape, b.shape, op);
    Tensor<T> out(os);
    const auto sa = broadcast_strides(a.shape, os);
    const auto sb = broadcast_strides(b.shape, os);
    const size_t nd = os.size();
    std::vector<int64_t> idx(nd, 0);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    const int64_t n = out.numel();
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < n; ++i) {
        po[i] = bin_eval(k, pa[oa], pb[ob]);
        for (size_t d = nd; d-- > 0;) {
            if (++idx[d] < os[d]) {
                oa += sa[d];
                ob += sb[d];
                break;
            }
            idx[d] = 0;
            oa -= sa[d] * (os[d] - 1);
            ob -= sb[d] * (os[d] - 1);
        }
    }
    return out;
}

// broadcast b over output shape (used in backward of div/mul)
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& b, const Shape& os) {
    if (b.shape == os) return b;
    Tensor<T> one = Tensor<T>::zeros(os);
    return bin_forward(BinKind::Add, one, b, "broadcast");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = detail::bin_forward(detail::BinKind::Add, a->value, b->value, "add");
    return make_op<T>(std::move(out), {a, b},
                      [a, b](Node<T>& self) {
                          if (a->needs_grad) accumulate(*a, detail::reduce_to_shape(self.grad, a->value.shape));
                          if (b->needs_grad) accumulate(*b, detail::reduce_to_shape(self.grad, b->value.shape));
                      },
                      "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = detail::bin_forward(detail::BinKind::Sub, a->value, b->value, "sub");
    return make_op<T>(std::move(out), {a, b},
                      [a, b](Node<T>& self) {
                          if (a->needs_grad) accumulate(*a, detail::reduce_to_shape(self.grad, a->value.shape));
                          if (b->needs_grad) {
                              Tensor<T> neg = self.grad;
                              for (auto& v : neg.data) v = -v;
                              accumulate_move(*b, detail::reduce_to_shape(neg, b->value.shape));
                          }
                      },
                      "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = detail::bin_forward(detail::BinKind::Mul, a->value, b->value, "mul");
    return make_op<T>(std::move(out), {a, b},
                      [a, b](Node<T>& self) {
                          if (a->needs_grad) {
                              Tensor<T> ga = detail::bin_forward(detail::BinKind::Mul, self.grad, b->value, "mul.bwd");
                              accumulate_move(*a, detail::reduce_to_shape(ga, a->value.shape));
                          }
                          if (b->needs_grad) {
                              Tensor<T> gb = detail::bin_forward(detail::BinKind::Mul, self.grad, a->value, "mul.bwd");
                              accumulate_move(*b, detail::reduce_to_shape(gb, b->value.shape));
                          }
                      },
                      "mul");
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = detail::bin_forward(detail::BinKind::Div, a->value, b->value, "div");
    return make_op<T>(std::move(out), {a, b},
                      [a, b](Node<T>& self) {
                          if (a->needs_grad) {
                              Tensor<T> ga = detail::bin_forward(detail::BinKind::Div, self.grad, b->value, "div.bwd");
                              accumulate_move(*a, detail::reduce_to_shape(ga, a->value.shape));
                          }
                          if (b->needs_grad) {
                              // -g * a / b^2
                              Tensor<T> t = detail::bin_forward(detail::BinKind::Mul, self.grad, a->value, "div.bwd");
                              Tensor<T> b2 = detail::bin_forward(detail::BinKind::Mul, b->value, b->value, "div.bwd");
                              Tensor<T> gb = detail::bin_forward(detail::BinKind::Div, t, b2, "div.bwd");
                              for (auto& v : gb.data) v = -v;
                              accumulate_move(*b, detail::reduce_to_shape(gb, b->value.shape));
                          }
                      },
                      "div");
}

template <typename T>
Var<T> scale(const Var<T>& a, double c) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = static_cast<T>(v * c);
    return make_op<T>(std::move(out), {a},
                      [a, c](Node<T>& self) {
                          if (!a->needs_grad) return;
                          Tensor<T> g = self.grad;
                          for (auto& v : g.data) v = static_cast<T>(v * c);
                          accumulate_move(*a, std::move(g));
                      },
                      "scale");
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double c) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = static_cast<T>(v + c);
    return make_op<T>(std::move(out), {a},
                      [a](Node<T>& self) {
                          if (a->needs_grad) accumulate(*a, self.grad);
                      },
                      "add_scalar");
}

template <typename T>
Var<T> neg(const Var<T>& a) {
    return scale(a, -1.0);
}

// elementwise unary with analytic derivative computed from the input value
template <typename T, typename F, typename DF>
Var<T> unary_op(const Var<T>& a, F f, DF df, const char* name) {
    Tensor<T> out(a->value.shape);
    const T* p = a->value.ptr();
    T* o = out.ptr();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) o[i] = f(p[i]);
    return make_op<T>(std::move(out), {a},
                      [a, df](Node<T>& self) {
                          if (!a->needs_grad) return;
                          Tensor<T> g(a->value.shape);
                          const T* x = a->value.ptr();
                          const T* gr = self.grad.ptr();
                          T* gp = g.ptr();
                          const int64_t m = g.numel();
                          for (int64_t i = 0; i < m; ++i) gp[i] = gr[i] * df(x[i]);
                          accumulate_move(*a, std::move(g));
                      },
                      name);
}

template <typename T>
Var<T> sqrt_op(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return static_cast<T>(std::sqrt(static_cast<double>(x))); },
        [](T x) {
            double s = std::sqrt(static_cast<double>(x));
            return s > 0 ? static_cast<T>(0.5 / s) : T(0);
        },
        "sqrt");
}

template <typename T>
Var<T> exp_op(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return static_cast<T>(std::exp(static_cast<double>(x))); },
        [](T x) { return static_cast<T>(std::exp(static_cast<double>(x))); }, "exp");
}

template <typename T>
Var<T> log_op(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return static_cast<T>(std::log(static_cast<double>(x))); },
        [](T x) { return static_cast<T>(1.0 / static_cast<double>(x)); }, "log");
}

/// x^p for x >= 0; subgradient 0 at x = 0.
template <typename T>
Var<T> pow_scalar(const Var<T>& a, double p) {
    return unary_op(
        a, [p](T x) { return x > 0 ? static_cast<T>(std::pow(static_cast<double>(x), p)) : T(0); },
        [p](T x) { return x > 0 ? static_cast<T>(p * std::pow(static_cast<double>(x), p - 1.0)) : T(0); }, "pow");
}

/// Exact erf-form GELU: x * Phi(x).
template <typename T>
Var<T> gelu(const Var<T>& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary_op(
        a,
        [](T x) {
            double xd = static_cast<double>(x);
            return static_cast<T>(xd * 0.5 * (1.0 + std::erf(xd * inv_sqrt2)));
        },
        [](T x) {
            double xd = static_cast<double>(x);
            double phi = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
            return static_cast<T>(phi + xd * pdf);
        },
        "gelu");
}

// ---------------------------------------------------------------------------
// reductions / shaping

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    for (T v : a->value.data) s += v;
    return make_op<T>(Tensor<T>::scalar(s), {a},
                      [a](Node<T>& self) {
                          if (!a->needs_grad) return;
                          accumulate_move(*a, Tensor<T>::full(a->value.shape, self.grad.data[0]));
                      },
                      "sum_all");
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel()));
}

/// Sum over a set of axes, keeping reduced dims as size 1.
template <typename T>
Var<T> sum_axes(const Var<T>& a, const std::vector<int>& axes) {
    const Shape& is = a->value.shape;
    Shape os = is;
    for (int ax : axes) os[static_cast<size_t>(ax)] = 1;
    Tensor<T> out = detail::reduce_to_shape(a->value, os);
    return make_op<T>(std::move(out), {a},
                      [a](Node<T>& self) {
                          if (!a->needs_grad) return;
                          accumulate_move(*a, detail::broadcast_to(self.grad, a->value.shape));
                      },
                      "sum_axes");
}

template <typename T>
Var<T> mean_axes(const Var<T>& a, const std::vector<int>& axes) {
    int64_t cnt = 1;
    for (int ax : axes) cnt *= a->value.shape[static_cast<size_t>(ax)];
    return scale(sum_axes(a, axes), 1.0 / static_cast<double>(cnt));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
    Tensor<T> out = a->value.reshaped(std::move(s));
    return make_op<T>(std::move(out), {a},
                      [a](Node<T>& self) {
                          if (a->needs_grad) accumulate_move(*a, self.grad.reshaped(a->value.shape));
                      },
                      "reshape");
}

/// Concatenate along `axis`.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    Shape os = xs[0]->value.shape;
    int64_t total = 0;
    for (const auto& x : xs) total += x->value.shape[static_cast<size_t>(axis)];
    os[static_cast<size_t>(axis)] = total;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < os.size(); ++i) inner *= os[i];

    Tensor<T> out(os);
    T* op = out.ptr();
    const int64_t ostride = total * inner;
    int64_t off = 0;
    for (const auto& x : xs) {
        const int64_t c = x->value.shape[static_cast<size_t>(axis)];
        const T* xp = x->value.ptr();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(xp + o * c * inner, xp + (o + 1) * c * inner, op + o * ostride + off);
        off += c * inner;
    }
    std::vector<Var<T>> parents = xs;
    return make_op<T>(std::move(out), parents,
                      [xs, axis, outer, inner, ostride](Node<T>& self) {
                          int64_t off2 = 0;
                          for (const auto& x : xs) {
                              const int64_t c = x->value.shape[static_cast<size_t>(axis)];
                              if (x->needs_grad) {
                                  Tensor<T> g(x->value.shape);
                                  T* gp = g.ptr();
                                  const T* sp = self.grad.ptr();
                                  for (int64_t o = 0; o < outer; ++o)
                                      std::copy(sp + o * ostride + off2, sp + o * ostride + off2 + c * inner,
                                                gp + o * c * inner);
                                  accumulate_move(*x, std::move(g));
                              }
                              off2 += c * inner;
                          }
                      },
                      "concat");
}

// ---------------------------------------------------------------------------
// linear algebra (Eigen-backed)

namespace detail {
template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;
}  // namespace detail

/// (M,K) x (K,N) -> (M,N)
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const Shape& sa = a->value.shape;
    const Shape& sb = b->value.shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
    const int64_t M = sa[0], K = sa[1], N = sb[1];
    Tensor<T> out({M, N});
    detail::MapM<T>(out.ptr(), M, N) = detail::CMapM<T>(a->value.ptr(), M, K) * detail::CMapM<T>(b->value.ptr(), K, N);
    return make_op<T>(std::move(out), {a, b},
                      [a, b, M, K, N](Node<T>& self) {
                          detail::CMapM<T> g(self.grad.ptr(), M, N);
                          if (a->needs_grad) {
                              Tensor<T> ga({M, K});
                              detail::MapM<T>(ga.ptr(), M, K) = g * detail::CMapM<T>(b->value.ptr(), K, N).transpose();
                              accumulate_move(*a, std::move(ga));
                          }
                          if (b->needs_grad) {
                              Tensor<T> gb({K, N});
                              detail::MapM<T>(gb.ptr(), K, N) = detail::CMapM<T>(a->value.ptr(), M, K).transpose() * g;
                              accumulate_move(*b, std::move(gb));
                          }
                      },
                      "matmul");
}

/// x:(N,Din), w:(Dout,Din), optional bias:(Dout) -> (N,Dout)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = nullptr) {
    const Shape& sx = x->value.shape;
    const Shape& sw = w->value.shape;
    if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[1])
        throw std::invalid_argument("linear: incompatible shapes " + shape_str(sx) + " vs " + shape_str(sw));
    const int64_t N = sx[0], Din = sx[1], Dout = sw[0];
    Tensor<T> out({N, Dout});
    detail::MapM<T> o(out.ptr(), N, Dout);
    o = detail::CMapM<T>(x->value.ptr(), N, Din) * detail::CMapM<T>(w->value.ptr(), Dout, Din).transpose();
    if (b) {
        if (b->value.numel() != Dout)
            throw std::invalid_argument("linear: bias size mismatch " + shape_str(b->value.shape));
        for (int64_t i = 0; i < N; ++i)
            for (int64_t j = 0; j < Dout; ++j) out[i * Dout + j] += b->value[j];
    }
    std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
    return make_op<T>(std::move(out), parents,
                      [x, w, b, N, Din, Dout](Node<T>& self) {
                          detail::CMapM<T> g(self.grad.ptr(), N, Dout);
                          if (x->needs_grad) {
                              Tensor<T> gx({N, Din});
                              detail::MapM<T>(gx.ptr(), N, Din) = g * detail::CMapM<T>(w->value.ptr(), Dout, Din);
                              accumulate_move(*x, std::move(gx));
                          }
                          if (w->needs_grad) {
                              Tensor<T> gw({Dout, Din});
                              detail::MapM<T>(gw.ptr(), Dout, Din) =
                                  g.transpose() * detail::CMapM<T>(x->value.ptr(), N, Din);
                              accumulate_move(*w, std::move(gw));
                          }
                          if (b && b->needs_grad) {
                              Tensor<T> gb(b->value.shape);
                              for (int64_t i = 0; i < N; ++i)
                                  for (int64_t j = 0; j < Dout; ++j) gb[j] += self.grad[i * Dout + j];
                              accumulate_move(*b, std::move(gb));
                          }
                      },
                      "linear");
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy

/// Softmax along `axis` (fused backward using the stored output).
template <typename T>
Var<T> softmax(const Var<T>& a, int axis) {
    const Shape& s = a->value.shape;
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw std::invalid_argument("softmax: axis out of range for " + shape_str(s));
    const int64_t C = s[static_cast<size_t>(axis)];
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];

    Tensor<T> out(s);
    const T* p = a->value.ptr();
    T* o = out.ptr();
    for (int64_t u = 0; u < outer; ++u)
        for (int64_t v = 0; v < inner; ++v) {
            const int64_t base = u * C * inner + v;
            T mx = p[base];
            for (int64_t c = 1; c < C; ++c) mx = std::max(mx, p[base + c * inner]);
            double z = 0;
            for (int64_t c = 0; c < C; ++c) {
                double e = std::exp(static_cast<double>(p[base + c * inner] - mx));
                o[base + c * inner] = static_cast<T>(e);
                z += e;
            }
            const double iz = 1.0 / z;
            for (int64_t c = 0; c < C; ++c) o[base + c * inner] = static_cast<T>(o[base + c * inner] * iz);
        }
    Tensor<T> saved = out;  // needed by backward
    return make_op<T>(std::move(out), {a},
                      [a, saved, C, outer, inner](Node<T>& self) {
                          if (!a->needs_grad) return;
                          Tensor<T> g(a->value.shape);
                          const T* y = saved.ptr();
                          const T* gr = self.grad.ptr();
                          T* gp = g.ptr();
                          for (int64_t u = 0; u < outer; ++u)
                              for (int64_t v = 0; v < inner; ++v) {
                                  const int64_t base = u * C * inner + v;
                                  double dot = 0;
                                  for (int64_t c = 0; c < C; ++c)
                                      dot += static_cast<double>(gr[base + c * inner]) * y[base + c * inner];
                                  for (int64_t c = 0; c < C; ++c) {
                                      const int64_t i = base + c * inner;
                                      gp[i] = static_cast<T>(y[i] * (static_cast<double>(gr[i]) - dot));
                                  }
                              }
                          accumulate_move(*a, std::move(g));
                      },
                      "softmax");
}

/// Mean cross-entropy of logits (N,K) against integer labels.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    const Shape& s = logits->value.shape;
    if (s.size() != 2 || static_cast<size_t>(s[0]) != labels.size())
        throw std::invalid_argument("cross_entropy: logits " + shape_str(s) + " vs " + std::to_string(labels.size()) + " labels");
    const int64_t N = s[0], K = s[1];
    Tensor<T> probs({N, K});
    double loss = 0;
    const T* p = logits->value.ptr();
    T* q = probs.ptr();
    for (int64_t i = 0; i < N; ++i) {
        T mx = p[i * K];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, p[i * K + k]);
        double z = 0;
        for (int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(p[i * K + k] - mx));
        const double lz = std::log(z);
        for (int64_t k = 0; k < K; ++k)
            q[i * K + k] = static_cast<T>(std::exp(static_cast<double>(p[i * K + k] - mx) - lz));
        loss -= static_cast<double>(p[i * K + labels[static_cast<size_t>(i)]] - mx) - lz;
    }
    loss /= static_cast<double>(N);
    return make_op<T>(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                      [logits, probs, labels, N, K](Node<T>& self) {
                          if (!logits->needs_grad) return;
                          Tensor<T> g({N, K});
                          const T gscale = self.grad.data[0] / static_cast<T>(N);
                          const T* q2 = probs.ptr();
                          T* gp = g.ptr();
                          for (int64_t i = 0; i < N; ++i)
                              for (int64_t k = 0; k < K; ++k) {
                                  T v = q2[i * K + k];
                                  if (k == labels[static_cast<size_t>(i)]) v -= T(1);
                                  gp[i * K + k] = v * gscale;
                              }
                          accumulate_move(*logits, std::move(g));
                      },
                      "cross_entropy");
}

// ---------------------------------------------------------------------------
// spatial shaping ops used by the spectral pipeline

/// Cyclic shift of the last two axes of a 4D tensor.
template <typename T>
Var<T> roll2(const Var<T>& a, int64_t sh, int64_t sw) {
    const Shape& s = a->value.shape;
    if (s.size() != 4) throw std::invalid_argument("roll2: expected 4D, got " + shape_str(s));
    const int64_t NC = s[0] * s[1], H = s[2], W = s[3];
    auto do_roll = [NC, H, W](const Tensor<T>& x, int64_t rh, int64_t rw) {
        Tensor<T> out(x.shape);
        const T* p = x.ptr();
        T* o = out.ptr();
        for (int64_t b = 0; b < NC; ++b)
            for (int64_t h = 0; h < H; ++h) {
                const int64_t h2 = (h + rh) % H;
                for (int64_t w = 0; w < W; ++w) o[(b * H + h2) * W + (w + rw) % W] = p[(b * H + h) * W + w];
            }
        return out;
    };
    const int64_t rh = ((sh % H) + H) % H, rw = ((sw % W) + W) % W;
    return make_op<T>(do_roll(a->value, rh, rw), {a},
                      [a, do_roll, rh, rw, H, W](Node<T>& self) {
                          if (a->needs_grad) accumulate_move(*a, do_roll(self.grad, (H - rh) % H, (W - rw) % W));
                      },
                      "roll2");
}

/// Extract window [r0, r0+hh) x [c0, c0+ww) from the last two axes of a 4D tensor.
template <typename T>
Var<T> crop2(const Var<T>& a, int64_t r0, int64_t c0, int64_t hh, int64_t ww) {
    const Shape& s = a->value.shape;
    if (s.size() != 4) throw std::invalid_argument("crop2: expected 4D, got " + shape_str(s));
    if (r0 < 0 || c0 < 0 || r0 + hh > s[2] || c0 + ww > s[3])
        throw std::invalid_argument("crop2: window exceeds input " + shape_str(s));
    const int64_t NC = s[0] * s[1], H = s[2], W = s[3];
    Tensor<T> out({s[0], s[1], hh, ww});
    const T* p = a->value.ptr();
    T* o = out.ptr();
    for (int64_t b = 0; b < NC; ++b)
        for (int64_t h = 0; h < hh; ++h)
            std::copy(p + (b * H + r0 + h) * W + c0, p + (b * H + r0 + h) * W + c0 + ww, o + (b * hh + h) * ww);
    return make_op<T>(std::move(out), {a},
                      [a, r0, c0, hh, ww, NC, H, W](Node<T>& self) {
                          if (!a->needs_grad) return;
                          Tensor<T> g(a->value.shape);  // zero elsewhere
                          const T* sp = self.grad.ptr();
                          T* gp = g.ptr();
                          for (int64_t b = 0; b < NC; ++b)
                              for (int64_t h = 0; h < hh; ++h)
                                  std::copy(sp + (b * hh + h) * ww, sp + (b * hh + h + 1) * ww,
                                            gp + (b * H + r0 + h) * W + c0);
                          accumulate_move(*a, std::move(g));
                      },
                      "crop2");
}

/// Multiply by a fixed (non-learnable) mask.
template <typename T>
Var<T> mask_mul(const Var<T>& a, Tensor<T> mask) {
    if (mask.shape != a->value.shape)
        throw std::invalid_argument("mask_mul: mask " + shape_str(mask.shape) + " vs " + shape_str(a->value.shape));
    Tensor<T> out(a->value.shape);
    const T* p = a->value.ptr();
    const T* m = mask.ptr();
    T* o = out.ptr();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) o[i] = p[i] * m[i];
    return make_op<T>(std::move(out), {a},
                      [a, mask](Node<T>& self) {
                          if (!a->needs_grad) return;
                          Tensor<T> g(a->value.shape);
                          const T* m2 = mask.ptr();
                          const T* gr = self.grad.ptr();
                          T* gp = g.ptr();
                          const int64_t n2 = g.numel();
                          for (int64_t i = 0; i < n2; ++i) gp[i] = gr[i] * m2[i];
                          accumulate_move(*a, std::move(g));
                      },
                      "mask_mul");
}

// ---------------------------------------------------------------------------
// gradient gate (identity forward; backward scaled by a runtime mask)

template <typename T>
struct GateState {
    bool pass_through = true;
    Tensor<T> channel_mask;  // shape (C); used when !pass_through
};

/// Identity whose backward multiplies the incoming gradient by a per-channel
/// mask held in shared state. The basis of salience-map gradient masking.
template <typename T>
Var<T> grad_gate(const Var<T>& a, std::shared_ptr<GateState<T>> state) {
    Tensor<T> out = a->value;
    return make_op<T>(std::move(out), {a},
                      [a, state](Node<T>& self) {
                          if (!a->needs_grad) return;
                          if (state->pass_through) {
                              accumulate(*a, self.grad);
                              return;
                          }
                          const Shape& s = a->value.shape;
                          const int64_t C = s.size() > 1 ? s[1] : s[0];
                          if (state->channel_mask.numel() != C)
                              throw std::runtime_error("grad_gate: mask size mismatch");
                          Tensor<T> g = self.grad;
                          const int64_t inner = g.numel() / (s[0] * C);
                          T* gp = g.ptr();
                          for (int64_t n = 0; n < s[0]; ++n)
                              for (int64_t c = 0; c < C; ++c) {
                                  const T m = state->channel_mask[c];
                                  T* row = gp + (n * C + c) * inner;
                                  for (int64_t i = 0; i < inner; ++i) row[i] *= m;
                              }
                          accumulate_move(*a, std::move(g));
                      },
                      "grad_gate");
}

}  // namespace psycho
