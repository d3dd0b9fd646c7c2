#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "colodiff/error.hpp"

namespace colodiff {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw_dim("tensor extent must be positive, got ", e);
        n *= e;
    }
    return n;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += "x";
    }
    return out + "]";
}

// Dense row-major N-d array. Default scalar type is float; double is used
// for gradient checking.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}

    Tensor(Shape s, T fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw_dim("tensor data size ", data.size(), " does not match shape ", shape_str(shape));
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t extent(int axis) const { return shape[static_cast<size_t>(axis)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    T& at(std::initializer_list<int64_t> idx) { return data[static_cast<size_t>(flat_index(idx))]; }
    const T& at(std::initializer_list<int64_t> idx) const {
        return data[static_cast<size_t>(flat_index(idx))];
    }

    int64_t flat_index(std::initializer_list<int64_t> idx) const {
        if (static_cast<int>(idx.size()) != rank())
            throw_dim("index rank ", idx.size(), " vs tensor rank ", rank());
        int64_t flat = 0;
        int axis = 0;
        for (int64_t i : idx) {
            flat = flat * shape[static_cast<size_t>(axis)] + i;
            ++axis;
        }
        return flat;
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite()) throw_numeric("non-finite value produced by ", op);
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!same_shape(a.shape, b.shape))
        throw_dim("max_abs_diff shape mismatch ", shape_str(a.shape), " vs ", shape_str(b.shape));
    T m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace colodiff
