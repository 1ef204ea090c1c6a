// Copyright 2025 the ampp authors
// Row-major dense matrix plus the handful of kernels the model needs.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ampp/common.hpp"
#include "ampp/rng.hpp"

namespace ampp {

template <class Real>
class Matrix {
  public:
    Matrix() = default;
    Matrix(index_t rows, index_t cols, Real fill = Real(0))
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), fill) {
        require(rows >= 0 && cols >= 0, "Matrix: negative dims");
    }

    static Matrix zeros(index_t rows, index_t cols) { return Matrix(rows, cols); }

    index_t rows() const { return rows_; }
    index_t cols() const { return cols_; }
    index_t size() const { return rows_ * cols_; }
    bool empty() const { return data_.empty(); }

    Real &operator()(index_t i, index_t j) { return data_[static_cast<std::size_t>(i * cols_ + j)]; }
    Real operator()(index_t i, index_t j) const { return data_[static_cast<std::size_t>(i * cols_ + j)]; }

    Real *data() { return data_.data(); }
    const Real *data() const { return data_.data(); }
    Real *row(index_t i) { return data_.data() + i * cols_; }
    const Real *row(index_t i) const { return data_.data() + i * cols_; }

    bool same_shape(const Matrix &o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (Real v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    template <class Other>
    Matrix<Other> cast() const {
        Matrix<Other> out(rows_, cols_);
        for (index_t i = 0; i < size(); ++i) out.data()[i] = static_cast<Other>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

  private:
    index_t rows_ = 0;
    index_t cols_ = 0;
    std::vector<Real> data_;
};

namespace detail {
inline std::string shape_msg(const char *op, index_t ar, index_t ac, index_t br, index_t bc) {
    return std::string(op) + ": shape mismatch [" + std::to_string(ar) + "x" + std::to_string(ac) +
           "] vs [" + std::to_string(br) + "x" + std::to_string(bc) + "]";
}
} // namespace detail

// C = A * B
template <class Real>
Matrix<Real> matmul(const Matrix<Real> &a, const Matrix<Real> &b) {
    require(a.cols() == b.rows(), detail::shape_msg("matmul", a.rows(), a.cols(), b.rows(), b.cols()));
    Matrix<Real> c(a.rows(), b.cols());
    const index_t m = a.rows(), k = a.cols(), n = b.cols();
    for (index_t i = 0; i < m; ++i) {
        Real *__restrict ci = c.row(i);
        const Real *__restrict ai = a.row(i);
        for (index_t p = 0; p < k; ++p) {
            const Real av = ai[p];
            const Real *__restrict bp = b.row(p);
            for (index_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
    return c;
}

// C += A * B
template <class Real>
void matmul_acc(Matrix<Real> &c, const Matrix<Real> &a, const Matrix<Real> &b) {
    require(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols(),
            detail::shape_msg("matmul_acc", a.rows(), a.cols(), b.rows(), b.cols()));
    const index_t m = a.rows(), k = a.cols(), n = b.cols();
    for (index_t i = 0; i < m; ++i) {
        Real *__restrict ci = c.row(i);
        const Real *__restrict ai = a.row(i);
        for (index_t p = 0; p < k; ++p) {
            const Real av = ai[p];
            const Real *__restrict bp = b.row(p);
            for (index_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C = A * B^T  (rows of B are the right-hand vectors)
template <class Real>
Matrix<Real> matmul_nt(const Matrix<Real> &a, const Matrix<Real> &b) {
    require(a.cols() == b.cols(), detail::shape_msg("matmul_nt", a.rows(), a.cols(), b.rows(), b.cols()));
    Matrix<Real> c(a.rows(), b.rows());
    const index_t m = a.rows(), k = a.cols(), n = b.rows();
    for (index_t i = 0; i < m; ++i) {
        const Real *__restrict ai = a.row(i);
        Real *__restrict ci = c.row(i);
        for (index_t j = 0; j < n; ++j) {
            const Real *__restrict bj = b.row(j);
            Real acc = Real(0);
            for (index_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
    return c;
}

// C += A * B^T
template <class Real>
void matmul_nt_acc(Matrix<Real> &c, const Matrix<Real> &a, const Matrix<Real> &b) {
    require(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows(),
            detail::shape_msg("matmul_nt_acc", a.rows(), a.cols(), b.rows(), b.cols()));
    const index_t m = a.rows(), k = a.cols(), n = b.rows();
    for (index_t i = 0; i < m; ++i) {
        const Real *__restrict ai = a.row(i);
        Real *__restrict ci = c.row(i);
        for (index_t j = 0; j < n; ++j) {
            const Real *__restrict bj = b.row(j);
            Real acc = Real(0);
            for (index_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C += A^T * B
template <class Real>
void matmul_tn_acc(Matrix<Real> &c, const Matrix<Real> &a, const Matrix<Real> &b) {
    require(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(),
            detail::shape_msg("matmul_tn_acc", a.rows(), a.cols(), b.rows(), b.cols()));
    const index_t k = a.rows(), m = a.cols(), n = b.cols();
    for (index_t p = 0; p < k; ++p) {
        const Real *__restrict ap = a.row(p);
        const Real *__restrict bp = b.row(p);
        for (index_t i = 0; i < m; ++i) {
            const Real av = ap[i];
            Real *__restrict ci = c.row(i);
            for (index_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

template <class Real>
Matrix<Real> transpose(const Matrix<Real> &a) {
    Matrix<Real> t(a.cols(), a.rows());
    for (index_t i = 0; i < a.rows(); ++i)
        for (index_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

template <class Real>
void add_in_place(Matrix<Real> &dst, const Matrix<Real> &src) {
    require(dst.same_shape(src), detail::shape_msg("add_in_place", dst.rows(), dst.cols(), src.rows(), src.cols()));
    Real *__restrict d = dst.data();
    const Real *__restrict s = src.data();
    for (index_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <class Real>
Matrix<Real> random_matrix(index_t rows, index_t cols, Rng &rng, Real scale = Real(1)) {
    Matrix<Real> m(rows, cols);
    for (index_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(rng.normal()) * scale;
    return m;
}

template <class Real>
Real max_abs_diff(const Matrix<Real> &a, const Matrix<Real> &b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    Real best = Real(0);
    for (index_t i = 0; i < a.size(); ++i) {
        const Real d = std::abs(a.data()[i] - b.data()[i]);
        if (d > best) best = d;
    }
    return best;
}

} // namespace ampp
