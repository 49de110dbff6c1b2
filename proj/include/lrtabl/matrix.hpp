#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lrtabl {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major 2-D matrix. Every layer quantity (inputs, weights,
// attention masks) is carried by this type.
template <typename T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::initializer_list<std::initializer_list<T>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_) throw ShapeError("ragged initializer list");
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_string() const {
        return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
    }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Matrix2D = Matrix<float>;
using Matrix2Dd = Matrix<double>;

enum class Activation { identity, relu };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

namespace detail {
inline void require_same_shape(const char* op, std::string_view a, std::string_view b, bool ok) {
    if (!ok) {
        throw ShapeError(std::string(op) + ": shape mismatch " + std::string(a) + " vs " + std::string(b));
    }
}
}  // namespace detail

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
    }
    Matrix<T> out(a.rows(), b.cols());
    const std::size_t n = a.cols(), m = b.cols();
    // i-k-j order keeps the inner loop contiguous in both b and out.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T* orow = out.data() + i * m;
        for (std::size_t k = 0; k < n; ++k) {
            const T aik = a(i, k);
            const T* brow = b.data() + k * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require_same_shape("hadamard", a.shape_string(), b.shape_string(), a.same_shape(b));
    Matrix<T> out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require_same_shape("add", a.shape_string(), b.shape_string(), a.same_shape(b));
    Matrix<T> out = a;
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

template <typename T>
Matrix<T> scale(const Matrix<T>& a, T s) {
    Matrix<T> out = a;
    for (auto& v : out.values()) v *= s;
    return out;
}

template <typename T>
bool all_finite(const Matrix<T>& a) {
    return std::all_of(a.values().begin(), a.values().end(), [](T v) { return std::isfinite(v); });
}

// Softmax over each row, with the row maximum subtracted before exp.
template <typename T>
Matrix<T> row_softmax(const Matrix<T>& e) {
    if (!all_finite(e)) throw NumericalError("row_softmax: non-finite input");
    Matrix<T> out(e.rows(), e.cols());
    for (std::size_t i = 0; i < e.rows(); ++i) {
        T mx = e(i, 0);
        for (std::size_t j = 1; j < e.cols(); ++j) mx = std::max(mx, e(i, j));
        T sum{0};
        for (std::size_t j = 0; j < e.cols(); ++j) {
            out(i, j) = std::exp(e(i, j) - mx);
            sum += out(i, j);
        }
        for (std::size_t j = 0; j < e.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

template <typename T>
T apply_activation(Activation fn, T x) {
    switch (fn) {
        case Activation::identity: return x;
        case Activation::relu: return x > T{0} ? x : T{0};
    }
    throw std::invalid_argument("unknown activation id " + std::to_string(static_cast<int>(fn)));
}

// Derivative evaluated at the pre-activation value.
template <typename T>
T activation_derivative(Activation fn, T z) {
    switch (fn) {
        case Activation::identity: return T{1};
        case Activation::relu: return z > T{0} ? T{1} : T{0};
    }
    throw std::invalid_argument("unknown activation id " + std::to_string(static_cast<int>(fn)));
}

template <typename T>
Matrix<T> apply_elementwise(const Matrix<T>& a, Activation fn) {
    if (fn != Activation::identity && fn != Activation::relu) {
        throw std::invalid_argument("unknown activation id " + std::to_string(static_cast<int>(fn)));
    }
    Matrix<T> out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = apply_activation(fn, a.data()[i]);
    return out;
}

template <typename T>
T frobenius_norm(const Matrix<T>& a) {
    T s{0};
    for (T v : a.values()) s += v * v;
    return std::sqrt(s);
}

template <typename T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require_same_shape("max_abs_diff", a.shape_string(), b.shape_string(), a.same_shape(b));
    T m{0};
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace lrtabl
