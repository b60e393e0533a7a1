#include "fedra/matrix.hpp"

#include <cmath>

#include "fedra/errors.hpp"

namespace fedra {

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    if (static_cast<int>(x.size()) != m.cols)
        throw ShapeError("matvec: vector length " + std::to_string(x.size()) +
                         " != cols " + std::to_string(m.cols));
    std::vector<double> y(static_cast<std::size_t>(m.rows), 0.0);
    const double* p = m.v.data();
    for (int r = 0; r < m.rows; ++r) {
        double acc = 0.0;
        for (int c = 0; c < m.cols; ++c) acc += p[c] * x[c];
        y[r] = acc;
        p += m.cols;
    }
    return y;
}

std::vector<double> matvec_t(const Matrix& m, std::span<const double> x) {
    if (static_cast<int>(x.size()) != m.rows)
        throw ShapeError("matvec_t: vector length " + std::to_string(x.size()) +
                         " != rows " + std::to_string(m.rows));
    std::vector<double> y(static_cast<std::size_t>(m.cols), 0.0);
    const double* p = m.v.data();
    for (int r = 0; r < m.rows; ++r) {
        const double xr = x[r];
        for (int c = 0; c < m.cols; ++c) y[c] += p[c] * xr;
        p += m.cols;
    }
    return y;
}

void add_outer(Matrix& acc, std::span<const double> y, std::span<const double> x, double s) {
    if (static_cast<int>(y.size()) != acc.rows || static_cast<int>(x.size()) != acc.cols)
        throw ShapeError("add_outer: operand sizes do not match accumulator");
    double* p = acc.v.data();
    for (int r = 0; r < acc.rows; ++r) {
        const double yr = s * y[r];
        for (int c = 0; c < acc.cols; ++c) p[c] += yr * x[c];
        p += acc.cols;
    }
}

void axpy(double a, const Matrix& x, Matrix& y) {
    if (!x.same_shape(y)) throw ShapeError("axpy: matrix shapes differ");
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] += a * x.v[i];
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw ShapeError("axpy: vector sizes differ");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

void scale(Matrix& m, double s) {
    for (double& e : m.v) e *= s;
}

void scale(std::span<double> x, double s) {
    for (double& e : x) e *= s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: vector sizes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(const Matrix& m) {
    return norm2(std::span<const double>(m.v));
}

double norm2(std::span<const double> x) {
    double acc = 0.0;
    for (double e : x) acc += e * e;
    return acc;
}

bool all_finite(const Matrix& m) {
    return all_finite(std::span<const double>(m.v));
}

bool all_finite(std::span<const double> x) {
    for (double e : x)
        if (!std::isfinite(e)) return false;
    return true;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: matrix shapes differ");
    return max_abs_diff(std::span<const double>(a.v), std::span<const double>(b.v));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_diff: vector sizes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace fedra
