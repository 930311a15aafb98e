#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace petd {

using real = double;

// Dense row-major matrix. Vectors are 1xN or Nx1 as context demands.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<real> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}
    Mat(int r, int c, std::vector<real> data) : rows(r), cols(c), a(std::move(data)) {
        assert(a.size() == static_cast<size_t>(r) * c);
    }

    real& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    real operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    real* row_ptr(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const real* row_ptr(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return a.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(real v) { std::fill(a.begin(), a.end(), v); }
    void zero() { fill(0.0); }

    bool all_finite() const {
        for (real v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }

    real norm() const {
        real s = 0.0;
        for (real v : a) s += v * v;
        return std::sqrt(s);
    }
};

// C += A * B
inline void matmul_acc(const Mat& A, const Mat& B, Mat& C) {
    assert(A.cols == B.rows && C.rows == A.rows && C.cols == B.cols);
    for (int i = 0; i < A.rows; ++i) {
        const real* arow = A.row_ptr(i);
        real* crow = C.row_ptr(i);
        for (int k = 0; k < A.cols; ++k) {
            const real aik = arow[k];
            if (aik == 0.0) continue;
            const real* brow = B.row_ptr(k);
            for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

inline Mat matmul(const Mat& A, const Mat& B) {
    Mat C(A.rows, B.cols);
    matmul_acc(A, B, C);
    return C;
}

// C += A * B^T
inline void matmul_nt_acc(const Mat& A, const Mat& B, Mat& C) {
    assert(A.cols == B.cols && C.rows == A.rows && C.cols == B.rows);
    for (int i = 0; i < A.rows; ++i) {
        const real* arow = A.row_ptr(i);
        real* crow = C.row_ptr(i);
        for (int j = 0; j < B.rows; ++j) {
            const real* brow = B.row_ptr(j);
            real s = 0.0;
            for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
            crow[j] += s;
        }
    }
}

inline Mat matmul_nt(const Mat& A, const Mat& B) {
    Mat C(A.rows, B.rows);
    matmul_nt_acc(A, B, C);
    return C;
}

// C += A^T * B
inline void matmul_tn_acc(const Mat& A, const Mat& B, Mat& C) {
    assert(A.rows == B.rows && C.rows == A.cols && C.cols == B.cols);
    for (int k = 0; k < A.rows; ++k) {
        const real* arow = A.row_ptr(k);
        const real* brow = B.row_ptr(k);
        for (int i = 0; i < A.cols; ++i) {
            const real aki = arow[i];
            if (aki == 0.0) continue;
            real* crow = C.row_ptr(i);
            for (int j = 0; j < B.cols; ++j) crow[j] += aki * brow[j];
        }
    }
}

inline void axpy(real alpha, const Mat& X, Mat& Y) {
    assert(X.same_shape(Y));
    for (size_t i = 0; i < X.a.size(); ++i) Y.a[i] += alpha * X.a[i];
}

inline real dot(const Mat& A, const Mat& B) {
    assert(A.same_shape(B));
    real s = 0.0;
    for (size_t i = 0; i < A.a.size(); ++i) s += A.a[i] * B.a[i];
    return s;
}

inline Mat identity(int n) {
    Mat I(n, n);
    for (int i = 0; i < n; ++i) I(i, i) = 1.0;
    return I;
}

inline real cosine(const Mat& x, const Mat& y) {
    real nx = x.norm(), ny = y.norm();
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return dot(x, y) / (nx * ny);
}

}  // namespace petd
