#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace ma3e {

/// Dense row-major matrix of doubles. Also used for token sequences (rows = tokens).
class Matrix {
   public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Matrix&, const Matrix&) = default;

   private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// out = x * w^T + bias, with x: n x in, w: out x in, bias: out (may be empty).
void linear_forward(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out);

// Accumulates dw += dy^T x and dbias += colsum(dy); writes dx = dy * w when dx is non-null.
void linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw,
                     std::span<double> dbias);

// out = a * b^T, a: n x k, b: m x k.
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
// out = a * b, a: n x k, b: k x m.
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out);
// out += a^T * b, a: k x n, b: k x m.
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);

}  // namespace ma3e
