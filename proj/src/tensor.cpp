#include "ma3e/tensor.hpp"

#include <cassert>

namespace ma3e {

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
    assert(a.cols() == b.cols());
    out = Matrix(a.rows(), b.rows());
    const std::size_t k = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i).data();
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* bj = b.row(j).data();
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += ai[t] * bj[t];
            out(i, j) = s;
        }
    }
}

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out) {
    assert(a.cols() == b.rows());
    out = Matrix(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* oi = out.row(i).data();
        for (std::size_t t = 0; t < a.cols(); ++t) {
            const double ait = a(i, t);
            const double* bt = b.row(t).data();
            for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += ait * bt[j];
        }
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    assert(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols());
    for (std::size_t t = 0; t < a.rows(); ++t) {
        const double* at = a.row(t).data();
        const double* bt = b.row(t).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ati = at[i];
            double* oi = out.row(i).data();
            for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += ati * bt[j];
        }
    }
}

void linear_forward(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out) {
    matmul_nt(x, w, out);
    if (bias.empty()) return;
    assert(bias.size() == w.rows());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* oi = out.row(i).data();
        for (std::size_t j = 0; j < out.cols(); ++j) oi[j] += bias[j];
    }
}

void linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw,
                     std::span<double> dbias) {
    assert(dy.rows() == x.rows() && dy.cols() == w.rows());
    matmul_tn_acc(dy, x, dw);
    if (!dbias.empty()) {
        for (std::size_t i = 0; i < dy.rows(); ++i) {
            const double* di = dy.row(i).data();
            for (std::size_t j = 0; j < dy.cols(); ++j) dbias[j] += di[j];
        }
    }
    if (dx != nullptr) matmul_nn(dy, w, *dx);
}

}  // namespace ma3e
