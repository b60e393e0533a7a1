#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fedra {

/// Dense row-major matrix of doubles. The simulator is desk-scale, so all
/// numerics are plain loops over contiguous storage; double precision
/// throughout to support the tight aggregation tolerances.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;  // size rows*cols, row-major

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

    static Matrix zeros(int r, int c) { return Matrix(r, c); }

    double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

    std::span<const double> row(int r) const {
        return {v.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }
    std::span<double> row(int r) {
        return {v.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    std::size_t size() const { return v.size(); }
};

/// y = m * x
std::vector<double> matvec(const Matrix& m, std::span<const double> x);

/// y = m^T * x
std::vector<double> matvec_t(const Matrix& m, std::span<const double> x);

/// acc += s * (y outer x), i.e. acc[r][c] += s * y[r] * x[c]
void add_outer(Matrix& acc, std::span<const double> y, std::span<const double> x, double s = 1.0);

/// y += a * x, elementwise
void axpy(double a, const Matrix& x, Matrix& y);
void axpy(double a, std::span<const double> x, std::span<double> y);

void scale(Matrix& m, double s);
void scale(std::span<double> x, double s);

double dot(std::span<const double> a, std::span<const double> b);

/// Squared Frobenius / Euclidean norm.
double norm2(const Matrix& m);
double norm2(std::span<const double> x);

bool all_finite(const Matrix& m);
bool all_finite(std::span<const double> x);

/// Max |a - b| over entries; shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(std::span<const double> a, std::span<const double> b);

}  // namespace fedra
