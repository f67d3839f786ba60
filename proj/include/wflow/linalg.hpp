#pragma once

// Small fixed-capacity vectors and symmetric matrices for state spaces of
// dimension 1 or 2, plus the SPD primitives the integrators need.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace wflow {

inline constexpr int kMaxDim = 2;

struct Vec {
    std::array<double, kMaxDim> a{0.0, 0.0};
    int n = 1;

    Vec() = default;
    explicit Vec(double x) : a{x, 0.0}, n(1) {}
    Vec(double x, double y) : a{x, y}, n(2) {}

    double& operator[](int i) { return a[static_cast<size_t>(i)]; }
    double operator[](int i) const { return a[static_cast<size_t>(i)]; }

    Vec& operator+=(const Vec& o) {
        for (int i = 0; i < n; ++i) a[i] += o.a[i];
        return *this;
    }
    Vec& operator-=(const Vec& o) {
        for (int i = 0; i < n; ++i) a[i] -= o.a[i];
        return *this;
    }
    Vec& operator*=(double c) {
        for (int i = 0; i < n; ++i) a[i] *= c;
        return *this;
    }

    friend Vec operator+(Vec l, const Vec& r) { return l += r; }
    friend Vec operator-(Vec l, const Vec& r) { return l -= r; }
    friend Vec operator*(double c, Vec v) { return v *= c; }

    double norm2() const {
        double s = 0;
        for (int i = 0; i < n; ++i) s += a[i] * a[i];
        return s;
    }
    double norm() const { return std::sqrt(norm2()); }
    bool finite() const {
        for (int i = 0; i < n; ++i)
            if (!std::isfinite(a[i])) return false;
        return true;
    }

    static Vec zero(int dim) {
        Vec v;
        v.n = dim;
        v.a = {0.0, 0.0};
        return v;
    }
};

inline double dot(const Vec& x, const Vec& y) {
    double s = 0;
    for (int i = 0; i < x.n; ++i) s += x[i] * y[i];
    return s;
}

// Symmetric matrix, stored as (xx, xy, yy); xy unused when n == 1.
struct Mat {
    double xx = 1.0, xy = 0.0, yy = 1.0;
    int n = 1;

    Mat() = default;
    explicit Mat(double m) : xx(m), n(1) {}
    Mat(double mxx, double mxy, double myy) : xx(mxx), xy(mxy), yy(myy), n(2) {}

    static Mat identity(int dim) {
        Mat m;
        m.n = dim;
        return m;
    }
    static Mat diag(double dx, double dy) { return Mat(dx, 0.0, dy); }

    Vec apply(const Vec& v) const {
        if (n == 1) return Vec(xx * v[0]);
        return Vec(xx * v[0] + xy * v[1], xy * v[0] + yy * v[1]);
    }

    double quad(const Vec& v) const { return dot(v, apply(v)); }

    double trace() const { return n == 1 ? xx : xx + yy; }
    double det() const { return n == 1 ? xx : xx * yy - xy * xy; }

    Mat scaled(double c) const {
        Mat m = *this;
        m.xx *= c;
        m.xy *= c;
        m.yy *= c;
        return m;
    }

    Mat mul(const Mat& o) const {  // product of symmetric inputs; caller
                                   // guarantees the result is symmetric
        if (n == 1) return Mat(xx * o.xx);
        Mat r;
        r.n = 2;
        r.xx = xx * o.xx + xy * o.xy;
        r.xy = xx * o.xy + xy * o.yy;
        r.yy = xy * o.xy + yy * o.yy;
        return r;
    }

    bool isDiagonal(double tol = 1e-14) const { return n == 1 || std::abs(xy) <= tol; }
};

// Eigenvalues of a symmetric matrix, ascending.
inline std::array<double, 2> sym_eigenvalues(const Mat& m) {
    if (m.n == 1) return {m.xx, m.xx};
    const double mean = 0.5 * (m.xx + m.yy);
    const double d = std::hypot(0.5 * (m.xx - m.yy), m.xy);
    return {mean - d, mean + d};
}

class NotSpdError : public std::runtime_error {
  public:
    double min_eigenvalue;
    explicit NotSpdError(double lam)
        : std::runtime_error("matrix is not symmetric positive definite "
                             "(smallest eigenvalue " +
                             std::to_string(lam) + ")"),
          min_eigenvalue(lam) {}
};

// Unique SPD square root. Closed form for n <= 2:
// sqrt(M) = (M + sqrt(det) I) / sqrt(tr M + 2 sqrt(det)).
inline Mat sqrt_spd(const Mat& m) {
    const auto lam = sym_eigenvalues(m);
    if (!(lam[0] > 0.0)) throw NotSpdError(lam[0]);
    if (m.n == 1) return Mat(std::sqrt(m.xx));
    const double sd = std::sqrt(m.det());
    const double denom = std::sqrt(m.trace() + 2.0 * sd);
    Mat r;
    r.n = 2;
    r.xx = (m.xx + sd) / denom;
    r.xy = m.xy / denom;
    r.yy = (m.yy + sd) / denom;
    return r;
}

inline Mat inverse_spd(const Mat& m) {
    const auto lam = sym_eigenvalues(m);
    if (!(lam[0] > 0.0)) throw NotSpdError(lam[0]);
    if (m.n == 1) return Mat(1.0 / m.xx);
    const double d = m.det();
    Mat r;
    r.n = 2;
    r.xx = m.yy / d;
    r.xy = -m.xy / d;
    r.yy = m.xx / d;
    return r;
}

}  // namespace wflow
