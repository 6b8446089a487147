#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace detkit {

/// Dense row-major matrix of doubles. Small and simple: the optimizer works on
/// toy-model layers and the classification loss on instance x class grids.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        detail::require(data_.size() == rows_ * cols_,
                        "Matrix: data length " + std::to_string(data_.size()) + " != " +
                            std::to_string(rows_) + "x" + std::to_string(cols_));
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            detail::require(r.size() == cols_, "Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    static Matrix diagonal(std::initializer_list<double> d) {
        Matrix m(d.size(), d.size());
        std::size_t i = 0;
        for (double v : d) {
            m(i, i) = v;
            ++i;
        }
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r) {
            for (std::size_t c = 0; c < cols_; ++c) {
                t(c, r) = (*this)(r, c);
            }
        }
        return t;
    }

    double frobenius_norm() const noexcept {
        double s = 0.0;
        for (double v : data_) {
            s += v * v;
        }
        return std::sqrt(s);
    }

    double max_abs() const noexcept {
        double m = 0.0;
        for (double v : data_) {
            m = std::max(m, std::abs(v));
        }
        return m;
    }

    Matrix& operator+=(const Matrix& o) {
        check_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] += o.data_[i];
        }
        return *this;
    }

    Matrix& operator-=(const Matrix& o) {
        check_shape(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] -= o.data_[i];
        }
        return *this;
    }

    Matrix& operator*=(double k) noexcept {
        for (double& v : data_) {
            v *= k;
        }
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double k) { return a *= k; }
    friend Matrix operator*(double k, Matrix a) { return a *= k; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

    std::string shape_string() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

private:
    void check_shape(const Matrix& o, const char* op) const {
        detail::require(same_shape(o), std::string("Matrix ") + op + ": shape mismatch " +
                                           shape_string() + " vs " + o.shape_string());
    }

    std::size_t rows_{0};
    std::size_t cols_{0};
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    detail::require(a.cols() == b.rows(),
                    "matmul: inner dimensions differ (" + a.shape_string() + " * " +
                        b.shape_string() + ")");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

// a^T * b without materialising the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    detail::require(a.rows() == b.rows(), "matmul_tn: row counts differ (" + a.shape_string() +
                                              " vs " + b.shape_string() + ")");
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += aki * b(k, j);
            }
        }
    }
    return out;
}

} // namespace detkit
