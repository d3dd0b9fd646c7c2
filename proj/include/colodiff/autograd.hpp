#pragma once

#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "colodiff/kernels.hpp"
#include "colodiff/tensor.hpp"

// Tape-based reverse-mode differentiation. Ops compute eagerly and, when a
// tape is supplied, push a backprop closure; replaying the tape in reverse
// accumulates gradients into every node exactly once. A null tape means
// inference: no gradients are allocated, intermediates die with their
// shared_ptr.
namespace colodiff {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool is_leaf = false;

    void ensure_grad() {
        if (!has_grad) {
            grad = Tensor<T>(value.shape);
            has_grad = true;
        }
    }
    void zero_grad() {
        if (has_grad) grad.fill(T(0));
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> leaf(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->is_leaf = true;
    return n;
}

template <typename T>
class Tape {
public:
    // A recorded primitive: the non-leaf output it produced plus the closure
    // that routes its output gradient to its operands.
    void record(Var<T> out, std::function<void()> backprop) {
        steps_.push_back(Step{std::move(out), std::move(backprop)});
    }

    // Accumulates d(loss)/d(leaf) into every leaf grad. Repeated calls
    // accumulate; intermediate (recorded) grads are transient per call.
    void backward(const Var<T>& loss) {
        if (loss->value.numel() != 1)
            throw_contract("backward requires a scalar loss, got shape ",
                           shape_str(loss->value.shape));
        for (auto& s : steps_) s.out->zero_grad();
        loss->ensure_grad();
        loss->grad[0] += T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->backprop();
    }

    size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

private:
    struct Step {
        Var<T> out;
        std::function<void()> backprop;
    };
    std::vector<Step> steps_;
};

namespace detail {

template <typename T>
Var<T> make_out(Tensor<T> value, const char* op) {
    ensure_finite(value, op);
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return n;
}

template <typename T, typename... Vars>
void prep_grads(Tape<T>* tape, Vars&... vars) {
    if (!tape) return;
    (vars->ensure_grad(), ...);
}

}  // namespace detail

// ------------------------------------------------------------ elementwise --

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (!same_shape(a->value.shape, b->value.shape))
        throw_dim("add shape mismatch ", shape_str(a->value.shape), " vs ",
                  shape_str(b->value.shape));
    Tensor<T> v(a->value.shape);
    kern::map2(a->value.ptr(), b->value.ptr(), v.ptr(), v.numel(),
               [](T x, T y) { return x + y; });
    auto out = detail::make_out(std::move(v), "add");
    if (tape) {
        detail::prep_grads(tape, a, b, out);
        tape->record(out, [a, b, out] {
            const int64_t n = out->grad.numel();
            kern::axpy_acc(T(1), out->grad.ptr(), a->grad.ptr(), n);
            kern::axpy_acc(T(1), out->grad.ptr(), b->grad.ptr(), n);
        });
    }
    return out;
}

template <typename T>
Var<T> sub(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (!same_shape(a->value.shape, b->value.shape))
        throw_dim("sub shape mismatch ", shape_str(a->value.shape), " vs ",
                  shape_str(b->value.shape));
    Tensor<T> v(a->value.shape);
    kern::map2(a->value.ptr(), b->value.ptr(), v.ptr(), v.numel(),
               [](T x, T y) { return x - y; });
    auto out = detail::make_out(std::move(v), "sub");
    if (tape) {
        detail::prep_grads(tape, a, b, out);
        tape->record(out, [a, b, out] {
            const int64_t n = out->grad.numel();
            kern::axpy_acc(T(1), out->grad.ptr(), a->grad.ptr(), n);
            kern::axpy_acc(T(-1), out->grad.ptr(), b->grad.ptr(), n);
        });
    }
    return out;
}

template <typename T>
Var<T> mul(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (!same_shape(a->value.shape, b->value.shape))
        throw_dim("mul shape mismatch ", shape_str(a->value.shape), " vs ",
                  shape_str(b->value.shape));
    Tensor<T> v(a->value.shape);
    kern::map2(a->value.ptr(), b->value.ptr(), v.ptr(), v.numel(),
               [](T x, T y) { return x * y; });
    auto out = detail::make_out(std::move(v), "mul");
    if (tape) {
        detail::prep_grads(tape, a, b, out);
        tape->record(out, [a, b, out] {
            const int64_t n = out->grad.numel();
            const T* g = out->grad.ptr();
            const T* av = a->value.ptr();
            const T* bv = b->value.ptr();
            T* da = a->grad.ptr();
            T* db = b->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t i = 0; i < n; ++i) {
                da[i] += g[i] * bv[i];
                db[i] += g[i] * av[i];
            }
        });
    }
    return out;
}

template <typename T>
Var<T> scale(Tape<T>* tape, const Var<T>& a, T c) {
    Tensor<T> v(a->value.shape);
    const T* av = a->value.ptr();
    T* vp = v.ptr();
    const int64_t n = v.numel();
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < n; ++i) vp[i] = c * av[i];
    auto out = detail::make_out(std::move(v), "scale");
    if (tape) {
        detail::prep_grads(tape, a, out);
        tape->record(out, [a, out, c] {
            kern::axpy_acc(c, out->grad.ptr(), a->grad.ptr(), out->grad.numel());
        });
    }
    return out;
}

// out = a + lambda * b, lambda a 1-element parameter (the value-stream
// injection weight).
template <typename T>
Var<T> add_scaled(Tape<T>* tape, const Var<T>& a, const Var<T>& b, const Var<T>& lambda) {
    if (!same_shape(a->value.shape, b->value.shape))
        throw_dim("add_scaled shape mismatch");
    if (lambda->value.numel() != 1) throw_dim("add_scaled lambda must be scalar");
    const T lam = lambda->value[0];
    Tensor<T> v(a->value.shape);
    kern::map2(a->value.ptr(), b->value.ptr(), v.ptr(), v.numel(),
               [lam](T x, T y) { return x + lam * y; });
    auto out = detail::make_out(std::move(v), "add_scaled");
    if (tape) {
        detail::prep_grads(tape, a, b, lambda, out);
        tape->record(out, [a, b, lambda, out, lam] {
            const int64_t n = out->grad.numel();
            kern::axpy_acc(T(1), out->grad.ptr(), a->grad.ptr(), n);
            kern::axpy_acc(lam, out->grad.ptr(), b->grad.ptr(), n);
            T dot = T(0);
            const T* g = out->grad.ptr();
            const T* bv = b->value.ptr();
            for (int64_t i = 0; i < n; ++i) dot += g[i] * bv[i];
            lambda->grad[0] += dot;
        });
    }
    return out;
}

template <typename T>
Var<T> gelu(Tape<T>* tape, const Var<T>& x) {
    Tensor<T> v(x->value.shape);
    kern::gelu_forward(x->value.ptr(), v.ptr(), v.numel());
    auto out = detail::make_out(std::move(v), "gelu");
    if (tape) {
        detail::prep_grads(tape, x, out);
        tape->record(out, [x, out] {
            kern::gelu_backward(x->value.ptr(), out->grad.ptr(), x->grad.ptr(),
                                out->grad.numel());
        });
    }
    return out;
}

// ----------------------------------------------------------------- matmul --

template <typename T>
Var<T> matmul(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2)
        throw_dim("matmul expects rank-2 operands");
    const int64_t m = a->value.extent(0), k = a->value.extent(1);
    if (b->value.extent(0) != k)
        throw_dim("matmul inner extents disagree: ", k, " vs ", b->value.extent(0));
    const int64_t n = b->value.extent(1);
    Tensor<T> v({m, n});
    kern::gemm(a->value.ptr(), b->value.ptr(), v.ptr(), m, k, n);
    auto out = detail::make_out(std::move(v), "matmul");
    if (tape) {
        detail::prep_grads(tape, a, b, out);
        tape->record(out, [a, b, out, m, k, n] {
            Tensor<T> bt({n, k});
            kern::transpose2d(b->value.ptr(), bt.ptr(), k, n);
            kern::gemm(out->grad.ptr(), bt.ptr(), a->grad.ptr(), m, n, k, true);
            kern::gemm_tn(a->value.ptr(), out->grad.ptr(), b->grad.ptr(), m, k, n, true);
        });
    }
    return out;
}

// y[..., n] = x[..., k] · w[k, n] (+ bias). Leading axes are flattened into
// rows.
template <typename T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    if (x->value.rank() < 1 || w->value.rank() != 2) throw_dim("linear operand ranks");
    const int64_t k = x->value.shape.back();
    if (w->value.extent(0) != k)
        throw_dim("linear: input dim ", k, " vs weight rows ", w->value.extent(0));
    const int64_t n = w->value.extent(1);
    const int64_t rows = x->value.numel() / k;
    Shape out_shape = x->value.shape;
    out_shape.back() = n;
    Tensor<T> v(out_shape);
    kern::gemm(x->value.ptr(), w->value.ptr(), v.ptr(), rows, k, n);
    if (bias) {
        if (bias->value.numel() != n) throw_dim("linear bias size");
        T* vp = v.ptr();
        const T* bp = bias->value.ptr();
        COLODIFF_OMP_FOR
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < n; ++j) vp[r * n + j] += bp[j];
    }
    auto out = detail::make_out(std::move(v), "linear");
    if (tape) {
        detail::prep_grads(tape, x, w, out);
        if (bias) bias->ensure_grad();
        tape->record(out, [x, w, bias, out, rows, k, n] {
            Tensor<T> wt({n, k});
            kern::transpose2d(w->value.ptr(), wt.ptr(), k, n);
            kern::gemm(out->grad.ptr(), wt.ptr(), x->grad.ptr(), rows, n, k, true);
            kern::gemm_tn(x->value.ptr(), out->grad.ptr(), w->grad.ptr(), rows, k, n, true);
            if (bias) {
                const T* g = out->grad.ptr();
                T* db = bias->grad.ptr();
                COLODIFF_OMP_FOR
                for (int64_t j = 0; j < n; ++j) {
                    T s = T(0);
                    for (int64_t r = 0; r < rows; ++r) s += g[r * n + j];
                    db[j] += s;
                }
            }
        });
    }
    return out;
}

template <typename T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& w) {
    return linear(tape, x, w, Var<T>{});
}

// --------------------------------------------------------- batched matmul --

// c[g] = s · a[g] · b[g]ᵀ with a [G,m,k], b [G,n,k]. Attention scores.
template <typename T>
Var<T> bmm_nt(Tape<T>* tape, const Var<T>& a, const Var<T>& b, T s) {
    if (a->value.rank() != 3 || b->value.rank() != 3) throw_dim("bmm_nt expects rank-3");
    const int64_t G = a->value.extent(0), m = a->value.extent(1), k = a->value.extent(2);
    if (b->value.extent(0) != G || b->value.extent(2) != k) throw_dim("bmm_nt shape mismatch");
    const int64_t n = b->value.extent(1);
    Tensor<T> v({G, m, n});
    {
        const T* ap = a->value.ptr();
        const T* bp = b->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t g = 0; g < G; ++g) {
            const T* ag = ap + g * m * k;
            const T* bg = bp + g * n * k;
            T* vg = vp + g * m * n;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    T acc = T(0);
                    for (int64_t c = 0; c < k; ++c) acc += ag[i * k + c] * bg[j * k + c];
                    vg[i * n + j] = s * acc;
                }
        }
    }
    auto out = detail::make_out(std::move(v), "bmm_nt");
    if (tape) {
        detail::prep_grads(tape, a, b, out);
        tape->record(out, [a, b, out, G, m, n, k, s] {
            const T* gp = out->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t g = 0; g < G; ++g) {
                const T* dcg = gp + g * m * n;
                const T* ag = a->value.ptr() + g * m * k;
                const T* bg = b->value.ptr() + g * n * k;
                T* dag = a->grad.ptr() + g * m * k;
                T* dbg = b->grad.ptr() + g * n * k;
                // da += s · dC · b ; db += s · dCᵀ · a
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) {
                        const T d = s * dcg[i * n + j];
                        for (int64_t c = 0; c < k; ++c) dag[i * k + c] += d * bg[j * k + c];
                    }
                for (int64_t j = 0; j < n; ++j)
                    for (int64_t i = 0; i < m; ++i) {
                        const T d = s * dcg[i * n + j];
                        for (int64_t c = 0; c < k; ++c) dbg[j * k + c] += d * ag[i * k + c];
                    }
            }
        });
    }
    return out;
}

// c[g] = a[g] · b[g] with a [G,m,k], b [G,k,n]. Attention context.
template <typename T>
Var<T> bmm_nn(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (a->value.rank() != 3 || b->value.rank() != 3) throw_dim("bmm_nn expects rank-3");
    const int64_t G = a->value.extent(0), m = a->value.extent(1), k = a->value.extent(2);
    if (b->value.extent(0) != G || b->value.extent(1) != k) throw_dim("bmm_nn shape mismatch");
    const int64_t n = b->value.extent(2);
    Tensor<T> v({G, m, n});
    {
        const T* ap = a->value.ptr();
        const T* bp = b->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t g = 0; g < G; ++g) {
            const T* ag = ap + g * m * k;
            const T* bg = bp + g * k * n;
            T* vg = vp + g * m * n;
            for (int64_t i = 0; i < m; ++i) kern::gemm_row(ag + i * k, bg, vg + i * n, k, n, false);
        }
    }
    auto out = detail::make_out(std::move(v), "bmm_nn");
    if (tape) {
        detail::prep_grads(tape, a, b, out);
        tape->record(out, [a, b, out, G, m, n, k] {
            const T* gp = out->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t g = 0; g < G; ++g) {
                const T* dcg = gp + g * m * n;
                const T* ag = a->value.ptr() + g * m * k;
                const T* bg = b->value.ptr() + g * k * n;
                T* dag = a->grad.ptr() + g * m * k;
                T* dbg = b->grad.ptr() + g * k * n;
                // da += dC · bᵀ
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t c = 0; c < k; ++c) {
                        T acc = T(0);
                        for (int64_t j = 0; j < n; ++j) acc += dcg[i * n + j] * bg[c * n + j];
                        dag[i * k + c] += acc;
                    }
                // db += aᵀ · dC
                kern::gemm_tn(ag, dcg, dbg, m, k, n, true);
            }
        });
    }
    return out;
}

// ------------------------------------------------------- softmax / norm ----

template <typename T>
Var<T> softmax_last(Tape<T>* tape, const Var<T>& x) {
    if (x->value.rank() < 1) throw_dim("softmax_last needs rank >= 1");
    const int64_t n = x->value.shape.back();
    const int64_t rows = x->value.numel() / n;
    Tensor<T> v(x->value.shape);
    kern::softmax_rows(x->value.ptr(), v.ptr(), rows, n);
    auto out = detail::make_out(std::move(v), "softmax_last");
    if (tape) {
        detail::prep_grads(tape, x, out);
        tape->record(out, [x, out, rows, n] {
            kern::softmax_backward_rows(out->value.ptr(), out->grad.ptr(), x->grad.ptr(),
                                        rows, n);
        });
    }
    return out;
}

// Pure per-slice normalization (Eq.-style mean/variance over the last axis,
// no affine part).
template <typename T>
Var<T> normalize_last(Tape<T>* tape, const Var<T>& x, T eps) {
    if (eps <= T(0)) throw_param("normalize_last eps must be > 0");
    const int64_t d = x->value.shape.back();
    const int64_t rows = x->value.numel() / d;
    Tensor<T> v(x->value.shape);
    auto inv_std = std::make_shared<Tensor<T>>(Shape{rows});
    kern::norm_rows(x->value.ptr(), v.ptr(), inv_std->ptr(), rows, d, eps);
    auto out = detail::make_out(std::move(v), "normalize_last");
    if (tape) {
        detail::prep_grads(tape, x, out);
        tape->record(out, [x, out, inv_std, rows, d] {
            kern::norm_backward_rows(out->value.ptr(), inv_std->ptr(), out->grad.ptr(),
                                     x->grad.ptr(), rows, d);
        });
    }
    return out;
}

// Last-axis affine broadcast: y = x * g[d]  /  y = x + b[d].
template <typename T>
Var<T> scale_channels(Tape<T>* tape, const Var<T>& x, const Var<T>& g) {
    const int64_t d = x->value.shape.back();
    if (g->value.numel() != d) throw_dim("scale_channels size mismatch");
    const int64_t rows = x->value.numel() / d;
    Tensor<T> v(x->value.shape);
    {
        const T* xp = x->value.ptr();
        const T* gp = g->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j) vp[r * d + j] = xp[r * d + j] * gp[j];
    }
    auto out = detail::make_out(std::move(v), "scale_channels");
    if (tape) {
        detail::prep_grads(tape, x, g, out);
        tape->record(out, [x, g, out, rows, d] {
            const T* dy = out->grad.ptr();
            const T* xp = x->value.ptr();
            const T* gp = g->value.ptr();
            T* dx = x->grad.ptr();
            T* dg = g->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < d; ++j) dx[r * d + j] += dy[r * d + j] * gp[j];
            COLODIFF_OMP_FOR
            for (int64_t j = 0; j < d; ++j) {
                T s = T(0);
                for (int64_t r = 0; r < rows; ++r) s += dy[r * d + j] * xp[r * d + j];
                dg[j] += s;
            }
        });
    }
    return out;
}

template <typename T>
Var<T> shift_channels(Tape<T>* tape, const Var<T>& x, const Var<T>& b) {
    const int64_t d = x->value.shape.back();
    if (b->value.numel() != d) throw_dim("shift_channels size mismatch");
    const int64_t rows = x->value.numel() / d;
    Tensor<T> v(x->value.shape);
    {
        const T* xp = x->value.ptr();
        const T* bp = b->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j) vp[r * d + j] = xp[r * d + j] + bp[j];
    }
    auto out = detail::make_out(std::move(v), "shift_channels");
    if (tape) {
        detail::prep_grads(tape, x, b, out);
        tape->record(out, [x, b, out, rows, d] {
            const T* dy = out->grad.ptr();
            T* dx = x->grad.ptr();
            T* db = b->grad.ptr();
            kern::axpy_acc(T(1), dy, dx, rows * d);
            COLODIFF_OMP_FOR
            for (int64_t j = 0; j < d; ++j) {
                T s = T(0);
                for (int64_t r = 0; r < rows; ++r) s += dy[r * d + j];
                db[j] += s;
            }
        });
    }
    return out;
}

// Per-example channel modulation: x [B, ..., d], g [B, d].
template <typename T>
Var<T> scale_by_example(Tape<T>* tape, const Var<T>& x, const Var<T>& g) {
    const int64_t d = x->value.shape.back();
    const int64_t B = x->value.extent(0);
    if (g->value.rank() != 2 || g->value.extent(0) != B || g->value.extent(1) != d)
        throw_dim("scale_by_example expects g [B,d]");
    const int64_t mid = x->value.numel() / (B * d);
    Tensor<T> v(x->value.shape);
    {
        const T* xp = x->value.ptr();
        const T* gp = g->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t b = 0; b < B; ++b)
            for (int64_t m = 0; m < mid; ++m) {
                const int64_t off = (b * mid + m) * d;
                for (int64_t j = 0; j < d; ++j) vp[off + j] = xp[off + j] * gp[b * d + j];
            }
    }
    auto out = detail::make_out(std::move(v), "scale_by_example");
    if (tape) {
        detail::prep_grads(tape, x, g, out);
        tape->record(out, [x, g, out, B, mid, d] {
            const T* dy = out->grad.ptr();
            const T* xp = x->value.ptr();
            const T* gp = g->value.ptr();
            T* dx = x->grad.ptr();
            T* dg = g->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t m = 0; m < mid; ++m) {
                    const int64_t off = (b * mid + m) * d;
                    for (int64_t j = 0; j < d; ++j) {
                        dx[off + j] += dy[off + j] * gp[b * d + j];
                        dg[b * d + j] += dy[off + j] * xp[off + j];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Var<T> shift_by_example(Tape<T>* tape, const Var<T>& x, const Var<T>& b) {
    const int64_t d = x->value.shape.back();
    const int64_t B = x->value.extent(0);
    if (b->value.rank() != 2 || b->value.extent(0) != B || b->value.extent(1) != d)
        throw_dim("shift_by_example expects b [B,d]");
    const int64_t mid = x->value.numel() / (B * d);
    Tensor<T> v(x->value.shape);
    {
        const T* xp = x->value.ptr();
        const T* bp = b->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t m = 0; m < mid; ++m) {
                const int64_t off = (bi * mid + m) * d;
                for (int64_t j = 0; j < d; ++j) vp[off + j] = xp[off + j] + bp[bi * d + j];
            }
    }
    auto out = detail::make_out(std::move(v), "shift_by_example");
    if (tape) {
        detail::prep_grads(tape, x, b, out);
        tape->record(out, [x, b, out, B, mid, d] {
            const T* dy = out->grad.ptr();
            T* dx = x->grad.ptr();
            T* db = b->grad.ptr();
            kern::axpy_acc(T(1), dy, dx, B * mid * d);
            COLODIFF_OMP_FOR
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t m = 0; m < mid; ++m) {
                    const int64_t off = (bi * mid + m) * d;
                    for (int64_t j = 0; j < d; ++j) db[bi * d + j] += dy[off + j];
                }
        });
    }
    return out;
}

// --------------------------------------------------------- permutations ----

namespace detail {

// out[b, l, a, :] = x[b, a, l, :]
template <typename T>
void swap_mid_axes(const T* x, T* out, int64_t B, int64_t A, int64_t L, int64_t D) {
    COLODIFF_OMP_FOR
    for (int64_t b = 0; b < B; ++b)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t l = 0; l < L; ++l) {
                const T* src = x + ((b * A + a) * L + l) * D;
                T* dst = out + ((b * L + l) * A + a) * D;
                for (int64_t j = 0; j < D; ++j) dst[j] = src[j];
            }
}

template <typename T>
void swap_mid_axes_acc(const T* dy, T* dx, int64_t B, int64_t A, int64_t L, int64_t D) {
    COLODIFF_OMP_FOR
    for (int64_t b = 0; b < B; ++b)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t l = 0; l < L; ++l) {
                const T* src = dy + ((b * L + l) * A + a) * D;
                T* dst = dx + ((b * A + a) * L + l) * D;
                for (int64_t j = 0; j < D; ++j) dst[j] += src[j];
            }
}

}  // namespace detail

// z [F,P,D] -> [P,F,D]; its own inverse up to the axis swap.
template <typename T>
Var<T> transpose_time_space(Tape<T>* tape, const Var<T>& z) {
    if (z->value.rank() != 3) throw_dim("transpose_time_space expects rank-3");
    const int64_t F = z->value.extent(0), P = z->value.extent(1), D = z->value.extent(2);
    Tensor<T> v({P, F, D});
    detail::swap_mid_axes(z->value.ptr(), v.ptr(), 1, F, P, D);
    auto out = detail::make_out(std::move(v), "transpose_time_space");
    if (tape) {
        detail::prep_grads(tape, z, out);
        tape->record(out, [z, out, F, P, D] {
            detail::swap_mid_axes_acc(out->grad.ptr(), z->grad.ptr(), 1, F, P, D);
        });
    }
    return out;
}

// x [B,A,L,D] -> [B,L,A,D]; batched form used to flip between frame-major
// and patch-major token layouts.
template <typename T>
Var<T> transpose_frames_patches(Tape<T>* tape, const Var<T>& x) {
    if (x->value.rank() != 4) throw_dim("transpose_frames_patches expects rank-4");
    const int64_t B = x->value.extent(0), A = x->value.extent(1), L = x->value.extent(2),
                  D = x->value.extent(3);
    Tensor<T> v({B, L, A, D});
    detail::swap_mid_axes(x->value.ptr(), v.ptr(), B, A, L, D);
    auto out = detail::make_out(std::move(v), "transpose_frames_patches");
    if (tape) {
        detail::prep_grads(tape, x, out);
        tape->record(out, [x, out, B, A, L, D] {
            detail::swap_mid_axes_acc(out->grad.ptr(), x->grad.ptr(), B, A, L, D);
        });
    }
    return out;
}

// x [..., L, D] -> [G*H, L, D/H] with G the product of the leading axes.
template <typename T>
Var<T> split_heads(Tape<T>* tape, const Var<T>& x, int heads) {
    if (x->value.rank() < 3) throw_dim("split_heads needs rank >= 3");
    const int64_t D = x->value.shape.back();
    const int64_t L = x->value.shape[x->value.shape.size() - 2];
    if (D % heads != 0) throw_param("split_heads: dim ", D, " not divisible by heads ", heads);
    const int64_t G = x->value.numel() / (L * D);
    const int64_t H = heads, dk = D / H;
    Tensor<T> v({G * H, L, dk});
    {
        const T* xp = x->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t g = 0; g < G; ++g)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t l = 0; l < L; ++l) {
                    const T* src = xp + (g * L + l) * D + h * dk;
                    T* dst = vp + ((g * H + h) * L + l) * dk;
                    for (int64_t c = 0; c < dk; ++c) dst[c] = src[c];
                }
    }
    auto out = detail::make_out(std::move(v), "split_heads");
    if (tape) {
        detail::prep_grads(tape, x, out);
        tape->record(out, [x, out, G, H, L, dk] {
            const int64_t D = H * dk;
            const T* dy = out->grad.ptr();
            T* dx = x->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t g = 0; g < G; ++g)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t l = 0; l < L; ++l) {
                        const T* src = dy + ((g * H + h) * L + l) * dk;
                        T* dst = dx + (g * L + l) * D + h * dk;
                        for (int64_t c = 0; c < dk; ++c) dst[c] += src[c];
                    }
        });
    }
    return out;
}

// Inverse of split_heads; lead_shape is the original leading+L prefix
// (everything but the channel axis).
template <typename T>
Var<T> merge_heads(Tape<T>* tape, const Var<T>& x, const Shape& out_shape, int heads) {
    if (x->value.rank() != 3) throw_dim("merge_heads expects rank-3 input");
    const int64_t dk = x->value.shape.back();
    const int64_t L = x->value.shape[1];
    const int64_t H = heads;
    const int64_t D = H * dk;
    if (out_shape.back() != D) throw_dim("merge_heads output channel mismatch");
    const int64_t G = x->value.extent(0) / H;
    if (shape_numel(out_shape) != G * L * D) throw_dim("merge_heads output shape mismatch");
    Tensor<T> v(out_shape);
    {
        const T* xp = x->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t g = 0; g < G; ++g)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t l = 0; l < L; ++l) {
                    const T* src = xp + ((g * H + h) * L + l) * dk;
                    T* dst = vp + (g * L + l) * D + h * dk;
                    for (int64_t c = 0; c < dk; ++c) dst[c] = src[c];
                }
    }
    auto out = detail::make_out(std::move(v), "merge_heads");
    if (tape) {
        detail::prep_grads(tape, x, out);
        tape->record(out, [x, out, G, H, L, dk] {
            const int64_t D = H * dk;
            const T* dy = out->grad.ptr();
            T* dx = x->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t g = 0; g < G; ++g)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t l = 0; l < L; ++l) {
                        const T* src = dy + (g * L + l) * D + h * dk;
                        T* dst = dx + ((g * H + h) * L + l) * dk;
                        for (int64_t c = 0; c < dk; ++c) dst[c] += src[c];
                    }
        });
    }
    return out;
}

template <typename T>
Var<T> slice_last(Tape<T>* tape, const Var<T>& x, int64_t offset, int64_t len) {
    const int64_t n = x->value.shape.back();
    if (offset < 0 || len <= 0 || offset + len > n) throw_dim("slice_last out of range");
    const int64_t rows = x->value.numel() / n;
    Shape out_shape = x->value.shape;
    out_shape.back() = len;
    Tensor<T> v(out_shape);
    {
        const T* xp = x->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < len; ++j) vp[r * len + j] = xp[r * n + offset + j];
    }
    auto out = detail::make_out(std::move(v), "slice_last");
    if (tape) {
        detail::prep_grads(tape, x, out);
        tape->record(out, [x, out, rows, n, offset, len] {
            const T* dy = out->grad.ptr();
            T* dx = x->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < len; ++j) dx[r * n + offset + j] += dy[r * len + j];
        });
    }
    return out;
}

// --------------------------------------------------------- video <-> grid --

// x [B,F,C,h,w] -> tokens [B,F,P,p*p*C] with P = (h/p)*(w/p); channel-major
// within a patch.
template <typename T>
Var<T> extract_patches(Tape<T>* tape, const Var<T>& x, int p) {
    if (x->value.rank() != 5) throw_dim("extract_patches expects [B,F,C,h,w]");
    const int64_t B = x->value.extent(0), F = x->value.extent(1), C = x->value.extent(2),
                  h = x->value.extent(3), w = x->value.extent(4);
    if (p <= 0 || h % p != 0 || w % p != 0)
        throw_param("patch size ", p, " must divide extents ", h, "x", w);
    const int64_t gh = h / p, gw = w / p, P = gh * gw, pd = int64_t(p) * p * C;
    Tensor<T> v({B, F, P, pd});
    {
        const T* xp = x->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t bf = 0; bf < B * F; ++bf)
            for (int64_t gi = 0; gi < gh; ++gi)
                for (int64_t gj = 0; gj < gw; ++gj) {
                    T* dst = vp + (bf * P + gi * gw + gj) * pd;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t oi = 0; oi < p; ++oi)
                            for (int64_t oj = 0; oj < p; ++oj)
                                dst[(c * p + oi) * p + oj] =
                                    xp[((bf * C + c) * h + gi * p + oi) * w + gj * p + oj];
                }
    }
    auto out = detail::make_out(std::move(v), "extract_patches");
    if (tape) {
        detail::prep_grads(tape, x, out);
        tape->record(out, [x, out, B, F, C, h, w, p, gh, gw, P, pd] {
            const T* dy = out->grad.ptr();
            T* dx = x->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t bf = 0; bf < B * F; ++bf)
                for (int64_t gi = 0; gi < gh; ++gi)
                    for (int64_t gj = 0; gj < gw; ++gj) {
                        const T* src = dy + (bf * P + gi * gw + gj) * pd;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t oi = 0; oi < p; ++oi)
                                for (int64_t oj = 0; oj < p; ++oj)
                                    dx[((bf * C + c) * h + gi * p + oi) * w + gj * p + oj] +=
                                        src[(c * p + oi) * p + oj];
                    }
        });
    }
    return out;
}

// tokens [B,F,P,p*p*C] -> x [B,F,C,h,w]; exact inverse of extract_patches.
template <typename T>
Var<T> merge_patches(Tape<T>* tape, const Var<T>& tokens, int64_t C, int64_t h, int64_t w,
                     int p) {
    if (tokens->value.rank() != 4) throw_dim("merge_patches expects [B,F,P,pd]");
    const int64_t B = tokens->value.extent(0), F = tokens->value.extent(1),
                  P = tokens->value.extent(2), pd = tokens->value.extent(3);
    const int64_t gh = h / p, gw = w / p;
    if (gh * gw != P || int64_t(p) * p * C != pd) throw_dim("merge_patches geometry mismatch");
    Tensor<T> v({B, F, C, h, w});
    {
        const T* tp = tokens->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t bf = 0; bf < B * F; ++bf)
            for (int64_t gi = 0; gi < gh; ++gi)
                for (int64_t gj = 0; gj < gw; ++gj) {
                    const T* src = tp + (bf * P + gi * gw + gj) * pd;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t oi = 0; oi < p; ++oi)
                            for (int64_t oj = 0; oj < p; ++oj)
                                vp[((bf * C + c) * h + gi * p + oi) * w + gj * p + oj] =
                                    src[(c * p + oi) * p + oj];
                }
    }
    auto out = detail::make_out(std::move(v), "merge_patches");
    if (tape) {
        detail::prep_grads(tape, tokens, out);
        tape->record(out, [tokens, out, B, F, C, h, w, p, gh, gw, P, pd] {
            const T* dy = out->grad.ptr();
            T* dt = tokens->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t bf = 0; bf < B * F; ++bf)
                for (int64_t gi = 0; gi < gh; ++gi)
                    for (int64_t gj = 0; gj < gw; ++gj) {
                        T* dst = dt + (bf * P + gi * gw + gj) * pd;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t oi = 0; oi < p; ++oi)
                                for (int64_t oj = 0; oj < p; ++oj)
                                    dst[(c * p + oi) * p + oj] +=
                                        dy[((bf * C + c) * h + gi * p + oi) * w + gj * p + oj];
                    }
        });
    }
    return out;
}

// ----------------------------------------------------------- embeddings ----

template <typename T>
Var<T> embedding_rows(Tape<T>* tape, const Var<T>& table, std::span<const int> ids) {
    if (table->value.rank() != 2) throw_dim("embedding_rows expects [C,d] table");
    const int64_t C = table->value.extent(0), d = table->value.extent(1);
    const int64_t B = static_cast<int64_t>(ids.size());
    for (int id : ids)
        if (id < 0 || id >= C) throw_param("embedding id ", id, " out of range [0,", C, ")");
    Tensor<T> v({B, d});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < d; ++j) v[b * d + j] = table->value[ids[b] * d + j];
    auto out = detail::make_out(std::move(v), "embedding_rows");
    if (tape) {
        detail::prep_grads(tape, table, out);
        std::vector<int> ids_copy(ids.begin(), ids.end());
        tape->record(out, [table, out, ids_copy, d] {
            const T* dy = out->grad.ptr();
            T* dt = table->grad.ptr();
            for (size_t b = 0; b < ids_copy.size(); ++b)
                for (int64_t j = 0; j < d; ++j) dt[ids_copy[b] * d + j] += dy[b * d + j];
        });
    }
    return out;
}

// x + t where t's shape is a trailing suffix of x's shape (positional
// encodings, broadcast over the leading axes).
template <typename T>
Var<T> add_tail(Tape<T>* tape, const Var<T>& x, const Var<T>& t) {
    const int64_t tn = t->value.numel();
    if (x->value.numel() % tn != 0) throw_dim("add_tail: suffix does not tile input");
    const size_t xr = x->value.shape.size(), tr = t->value.shape.size();
    if (tr > xr) throw_dim("add_tail: suffix rank exceeds input rank");
    for (size_t i = 0; i < tr; ++i)
        if (t->value.shape[tr - 1 - i] != x->value.shape[xr - 1 - i])
            throw_dim("add_tail: shape suffix mismatch");
    const int64_t reps = x->value.numel() / tn;
    Tensor<T> v(x->value.shape);
    {
        const T* xp = x->value.ptr();
        const T* tp = t->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t r = 0; r < reps; ++r)
            for (int64_t j = 0; j < tn; ++j) vp[r * tn + j] = xp[r * tn + j] + tp[j];
    }
    auto out = detail::make_out(std::move(v), "add_tail");
    if (tape) {
        detail::prep_grads(tape, x, t, out);
        tape->record(out, [x, t, out, reps, tn] {
            const T* dy = out->grad.ptr();
            kern::axpy_acc(T(1), dy, x->grad.ptr(), reps * tn);
            T* dt = t->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t j = 0; j < tn; ++j) {
                T s = T(0);
                for (int64_t r = 0; r < reps; ++r) s += dy[r * tn + j];
                dt[j] += s;
            }
        });
    }
    return out;
}

// x [B,A,L,D] + e [A,D] broadcast over B and L (per-frame encodings).
template <typename T>
Var<T> add_axis_embed(Tape<T>* tape, const Var<T>& x, const Var<T>& e) {
    if (x->value.rank() != 4 || e->value.rank() != 2) throw_dim("add_axis_embed ranks");
    const int64_t B = x->value.extent(0), A = x->value.extent(1), L = x->value.extent(2),
                  D = x->value.extent(3);
    if (e->value.extent(0) != A || e->value.extent(1) != D)
        throw_dim("add_axis_embed shape mismatch");
    Tensor<T> v(x->value.shape);
    {
        const T* xp = x->value.ptr();
        const T* ep = e->value.ptr();
        T* vp = v.ptr();
        COLODIFF_OMP_FOR
        for (int64_t b = 0; b < B; ++b)
            for (int64_t a = 0; a < A; ++a)
                for (int64_t l = 0; l < L; ++l) {
                    const int64_t off = ((b * A + a) * L + l) * D;
                    for (int64_t j = 0; j < D; ++j) vp[off + j] = xp[off + j] + ep[a * D + j];
                }
    }
    auto out = detail::make_out(std::move(v), "add_axis_embed");
    if (tape) {
        detail::prep_grads(tape, x, e, out);
        tape->record(out, [x, e, out, B, A, L, D] {
            const T* dy = out->grad.ptr();
            kern::axpy_acc(T(1), dy, x->grad.ptr(), B * A * L * D);
            T* de = e->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t a = 0; a < A; ++a)
                for (int64_t j = 0; j < D; ++j) {
                    T s = T(0);
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t l = 0; l < L; ++l) s += dy[((b * A + a) * L + l) * D + j];
                    de[a * D + j] += s;
                }
        });
    }
    return out;
}

// ------------------------------------------------------------ reductions ---

template <typename T>
Var<T> sum_all(Tape<T>* tape, const Var<T>& x) {
    T s = T(0);
    for (int64_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
    auto out = detail::make_out(Tensor<T>::scalar(s), "sum_all");
    if (tape) {
        detail::prep_grads(tape, x, out);
        tape->record(out, [x, out] {
            const T g = out->grad[0];
            T* dx = x->grad.ptr();
            const int64_t n = x->value.numel();
            COLODIFF_OMP_FOR
            for (int64_t i = 0; i < n; ++i) dx[i] += g;
        });
    }
    return out;
}

template <typename T>
Var<T> mse_mean(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (!same_shape(a->value.shape, b->value.shape)) throw_dim("mse_mean shape mismatch");
    const int64_t n = a->value.numel();
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T d = a->value[i] - b->value[i];
        s += d * d;
    }
    s /= static_cast<T>(n);
    auto out = detail::make_out(Tensor<T>::scalar(s), "mse_mean");
    if (tape) {
        detail::prep_grads(tape, a, b, out);
        tape->record(out, [a, b, out, n] {
            const T g = out->grad[0] * T(2) / static_cast<T>(n);
            const T* av = a->value.ptr();
            const T* bv = b->value.ptr();
            T* da = a->grad.ptr();
            T* db = b->grad.ptr();
            COLODIFF_OMP_FOR
            for (int64_t i = 0; i < n; ++i) {
                const T d = g * (av[i] - bv[i]);
                da[i] += d;
                db[i] -= d;
            }
        });
    }
    return out;
}

// Mean softmax cross-entropy over rows of logits [B,C].
template <typename T>
Var<T> cross_entropy_mean(Tape<T>* tape, const Var<T>& logits, std::span<const int> labels) {
    if (logits->value.rank() != 2) throw_dim("cross_entropy_mean expects [B,C]");
    const int64_t B = logits->value.extent(0), C = logits->value.extent(1);
    if (static_cast<int64_t>(labels.size()) != B) throw_dim("cross_entropy label count");
    for (int y : labels)
        if (y < 0 || y >= C) throw_param("cross_entropy label ", y, " out of range");
    auto probs = std::make_shared<Tensor<T>>(Shape{B, C});
    kern::softmax_rows(logits->value.ptr(), probs->ptr(), B, C);
    T loss = T(0);
    for (int64_t b = 0; b < B; ++b) {
        const T* row = logits->value.ptr() + b * C;
        T m = row[0];
        for (int64_t j = 1; j < C; ++j) m = std::max(m, row[j]);
        T lse = T(0);
        for (int64_t j = 0; j < C; ++j) lse += std::exp(row[j] - m);
        loss += std::log(lse) + m - row[labels[b]];
    }
    loss /= static_cast<T>(B);
    auto out = detail::make_out(Tensor<T>::scalar(loss), "cross_entropy_mean");
    if (tape) {
        detail::prep_grads(tape, logits, out);
        std::vector<int> lab(labels.begin(), labels.end());
        tape->record(out, [logits, out, probs, lab, B, C] {
            const T g = out->grad[0] / static_cast<T>(B);
            T* dl = logits->grad.ptr();
            const T* pp = probs->ptr();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t j = 0; j < C; ++j)
                    dl[b * C + j] += g * (pp[b * C + j] - (j == lab[b] ? T(1) : T(0)));
        });
    }
    return out;
}

// ---------------------------------------------------------- composed ops ---

// layer_norm per the normalize-then-affine scheme: gamma is the literal
// scale, beta the shift.
template <typename T>
Var<T> layer_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps) {
    auto n = normalize_last(tape, x, eps);
    return shift_channels(tape, scale_channels(tape, n, gamma), beta);
}

}  // namespace colodiff
