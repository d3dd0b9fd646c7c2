#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>

#include "colodiff/tensor.hpp"

#if defined(_OPENMP)
#include <omp.h>
#define COLODIFF_OMP_FOR \
    _Pragma("omp parallel for schedule(static) if (::colodiff::kern::parallel_enabled())")
#else
#define COLODIFF_OMP_FOR
#endif

// Data-parallel kernels behind the autograd ops. Every kernel assigns each
// output element to exactly one thread and keeps inner accumulation order
// fixed, so results are bit-identical across serial/parallel modes and any
// thread count. kern::ref holds independent naive implementations used as
// test oracles and as the benchmark baseline.
namespace colodiff::kern {

inline std::atomic<bool>& parallel_flag() {
    static std::atomic<bool> flag{true};
    return flag;
}

inline bool parallel_enabled() { return parallel_flag().load(std::memory_order_relaxed); }
inline void set_parallel(bool on) { parallel_flag().store(on, std::memory_order_relaxed); }

// ---------------------------------------------------------------- gemm ----

// One output row of C = A·B. Kept as the single shared routine so serial and
// parallel paths execute identical code per row.
template <typename T>
inline void gemm_row(const T* a_row, const T* b, T* c_row, int64_t k, int64_t n, bool accumulate) {
    if (!accumulate)
        for (int64_t j = 0; j < n; ++j) c_row[j] = T(0);
    for (int64_t l = 0; l < k; ++l) {
        const T alv = a_row[l];
        const T* b_row = b + l * n;
        for (int64_t j = 0; j < n; ++j) c_row[j] += alv * b_row[j];
    }
}

// C[m,n] (+)= A[m,k] · B[k,n]
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < m; ++i) gemm_row(a + i * k, b, c + i * n, k, n, accumulate);
}

// C[k,n] (+)= Aᵀ · B with A[m,k], B[m,n]. Row i of C accumulates column i of A
// against the rows of B, in row order.
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
             bool accumulate = false) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < k; ++i) {
        T* c_row = c + i * n;
        if (!accumulate)
            for (int64_t j = 0; j < n; ++j) c_row[j] = T(0);
        for (int64_t r = 0; r < m; ++r) {
            const T ari = a[r * k + i];
            const T* b_row = b + r * n;
            for (int64_t j = 0; j < n; ++j) c_row[j] += ari * b_row[j];
        }
    }
}

template <typename T>
void transpose2d(const T* a, T* out, int64_t rows, int64_t cols) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
}

// ------------------------------------------------------------- softmax ----

template <typename T>
inline void softmax_row(const T* x, T* y, int64_t n) {
    T m = x[0];
    for (int64_t j = 1; j < n; ++j) m = std::max(m, x[j]);
    T sum = T(0);
    for (int64_t j = 0; j < n; ++j) {
        y[j] = std::exp(x[j] - m);
        sum += y[j];
    }
    const T inv = T(1) / sum;
    for (int64_t j = 0; j < n; ++j) y[j] *= inv;
}

template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t n) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * n, y + i * n, n);
}

// dx += y ⊙ (dy − <dy, y>)
template <typename T>
void softmax_backward_rows(const T* y, const T* dy, T* dx, int64_t rows, int64_t n) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < rows; ++i) {
        const T* yr = y + i * n;
        const T* dyr = dy + i * n;
        T* dxr = dx + i * n;
        T dot = T(0);
        for (int64_t j = 0; j < n; ++j) dot += dyr[j] * yr[j];
        for (int64_t j = 0; j < n; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    }
}

// ---------------------------------------------------------- layer norm ----

// y = (x − μ) / √(σ² + eps) per row; inv_std saved for the backward pass.
template <typename T>
void norm_rows(const T* x, T* y, T* inv_std, int64_t rows, int64_t d, T eps) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < rows; ++i) {
        const T* xr = x + i * d;
        T* yr = y + i * d;
        T mean = T(0);
        for (int64_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[i] = is;
        for (int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * is;
    }
}

// dx += inv_std ⊙ (dy − mean(dy) − y ⊙ mean(dy ⊙ y))
template <typename T>
void norm_backward_rows(const T* y, const T* inv_std, const T* dy, T* dx, int64_t rows,
                        int64_t d) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < rows; ++i) {
        const T* yr = y + i * d;
        const T* dyr = dy + i * d;
        T* dxr = dx + i * d;
        T mean_dy = T(0), mean_dyy = T(0);
        for (int64_t j = 0; j < d; ++j) {
            mean_dy += dyr[j];
            mean_dyy += dyr[j] * yr[j];
        }
        mean_dy /= static_cast<T>(d);
        mean_dyy /= static_cast<T>(d);
        const T is = inv_std[i];
        for (int64_t j = 0; j < d; ++j)
            dxr[j] += is * (dyr[j] - mean_dy - yr[j] * mean_dyy);
    }
}

// ----------------------------------------------------------------- gelu ----

// tanh-approximation GELU
template <typename T>
inline T gelu_scalar(T x) {
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    const T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
    const T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
void gelu_forward(const T* x, T* y, int64_t n) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, int64_t n) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_grad_scalar(x[i]);
}

// ---------------------------------------------------------- elementwise ----

template <typename T, typename F>
void map2(const T* a, const T* b, T* out, int64_t n, F f) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
}

template <typename T>
void axpy_acc(T alpha, const T* x, T* y, int64_t n) {
    COLODIFF_OMP_FOR
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// ----------------------------------------------------- naive references ----

// Independent implementations kept for testing the kernels above and as the
// benchmark baseline. Plain textbook loops, no dispatch.
namespace ref {

template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (int64_t l = 0; l < k; ++l) acc += a[i * k + l] * b[l * n + j];
            c[i * n + j] = acc;
        }
}

template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t n) {
    for (int64_t i = 0; i < rows; ++i) {
        const T* xr = x + i * n;
        T* yr = y + i * n;
        T m = xr[0];
        for (int64_t j = 1; j < n; ++j)
            if (xr[j] > m) m = xr[j];
        T sum = T(0);
        for (int64_t j = 0; j < n; ++j) sum += std::exp(xr[j] - m);
        for (int64_t j = 0; j < n; ++j) yr[j] = std::exp(xr[j] - m) / sum;
    }
}

template <typename T>
void gelu(const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        const double xi = static_cast<double>(x[i]);
        const double u = std::sqrt(2.0 / 3.14159265358979323846) *
                         (xi + 0.044715 * xi * xi * xi);
        y[i] = static_cast<T>(0.5 * xi * (1.0 + std::tanh(u)));
    }
}

}  // namespace ref

}  // namespace colodiff::kern
