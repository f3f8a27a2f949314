#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace causaltf {

using Vec = std::vector<double>;

// Dense row-major matrix. Everything in this project is desk-scale, so we
// keep a single flat buffer and index arithmetic; no views, no expression
// templates.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

    double& operator()(int i, int j) {
        assert(i >= 0 && i < rows && j >= 0 && j < cols);
        return data[static_cast<size_t>(i) * cols + j];
    }
    double operator()(int i, int j) const {
        assert(i >= 0 && i < rows && j >= 0 && j < cols);
        return data[static_cast<size_t>(i) * cols + j];
    }
    std::span<double> row(int i) { return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)}; }
    std::span<const double> row(int i) const {
        return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)};
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    assert(a.rows == b.rows && a.cols == b.cols);
    Matrix c = a;
    for (size_t k = 0; k < c.data.size(); ++k) c.data[k] += b.data[k];
    return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    assert(a.rows == b.rows && a.cols == b.cols);
    Matrix c = a;
    for (size_t k = 0; k < c.data.size(); ++k) c.data[k] -= b.data[k];
    return c;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix c = a;
    for (double& v : c.data) v *= s;
    return c;
}

// c = a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    assert(a.cols == b.rows);
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
            double* crow = &c.data[static_cast<size_t>(i) * c.cols];
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// c = a^T * b
inline Matrix matTmul(const Matrix& a, const Matrix& b) {
    assert(a.rows == b.rows);
    Matrix c(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double* arow = &a.data[static_cast<size_t>(k) * a.cols];
        const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
        for (int i = 0; i < a.cols; ++i) {
            double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = &c.data[static_cast<size_t>(i) * c.cols];
            for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

// c = a * b^T
inline Matrix matmulT(const Matrix& a, const Matrix& b) {
    assert(a.cols == b.cols);
    Matrix c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i) * a.cols];
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = &b.data[static_cast<size_t>(j) * b.cols];
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c(i, j) = s;
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix c(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) c(j, i) = a(i, j);
    return c;
}

inline Vec matvec(const Matrix& a, std::span<const double> x) {
    assert(static_cast<int>(x.size()) == a.cols);
    Vec y(a.rows, 0.0);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i) * a.cols];
        double s = 0.0;
        for (int j = 0; j < a.cols; ++j) s += arow[j] * x[j];
        y[i] = s;
    }
    return y;
}

inline Vec matTvec(const Matrix& a, std::span<const double> x) {
    assert(static_cast<int>(x.size()) == a.rows);
    Vec y(a.cols, 0.0);
    for (int i = 0; i < a.rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* arow = &a.data[static_cast<size_t>(i) * a.cols];
        for (int j = 0; j < a.cols; ++j) y[j] += xi * arow[j];
    }
    return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double frobenius_norm_sq(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return s;
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    assert(a.rows == b.rows && a.cols == b.cols);
    double m = 0.0;
    for (size_t k = 0; k < a.data.size(); ++k) m = std::max(m, std::abs(a.data[k] - b.data[k]));
    return m;
}

// Numerically stable softmax over the first n entries of v, written to out.
inline void softmax_inplace(std::span<double> v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double z = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        z += x;
    }
    for (double& x : v) x /= z;
}

inline Vec softmax(std::span<const double> v) {
    Vec out(v.begin(), v.end());
    softmax_inplace(out);
    return out;
}

// J(v) u with J(v) = diag(v) - v v^T, the softmax Jacobian at softmax output v.
inline Vec softmax_jacobian_apply(std::span<const double> v, std::span<const double> u) {
    double vu = dot(v, u);
    Vec out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] * (u[i] - vu);
    return out;
}

}  // namespace causaltf
