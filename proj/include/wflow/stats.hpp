#pragma once

// Statistical helpers: two-sample energy-distance permutation test, ordinary
// least squares with coefficient standard errors, and running mean/stderr.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "wflow/linalg.hpp"
#include "wflow/rng.hpp"

namespace wflow {

struct MeanStderr {
    double mean = 0;
    double stderr_ = 0;
    int count = 0;
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
    MeanStderr r;
    r.count = static_cast<int>(xs.size());
    if (r.count == 0) return r;
    r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / r.count;
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    if (r.count > 1)
        r.stderr_ = std::sqrt(ss / (r.count - 1) / r.count);
    return r;
}

struct EnergyDistanceResult {
    double statistic = 0;  // 2 E|X-Y| - E|X-X'| - E|Y-Y'|
    double p_value = 1.0;
    int permutations = 0;
};

// Permutation test of equality in distribution. Pairwise distances over the
// pooled sample are cached, so memory is O((n+m)^2).
inline EnergyDistanceResult energy_distance_test(const std::vector<Vec>& xs,
                                                 const std::vector<Vec>& ys,
                                                 int permutations,
                                                 uint64_t seed) {
    const int n = static_cast<int>(xs.size());
    const int m = static_cast<int>(ys.size());
    if (n < 2 || m < 2)
        throw std::invalid_argument("energy_distance_test: need >= 2 samples");
    const int total = n + m;
    std::vector<Vec> pool;
    pool.reserve(total);
    pool.insert(pool.end(), xs.begin(), xs.end());
    pool.insert(pool.end(), ys.begin(), ys.end());

    std::vector<float> dist(static_cast<size_t>(total) * total);
    for (int i = 0; i < total; ++i)
        for (int j = i + 1; j < total; ++j) {
            const float d = static_cast<float>((pool[i] - pool[j]).norm());
            dist[static_cast<size_t>(i) * total + j] = d;
            dist[static_cast<size_t>(j) * total + i] = d;
        }

    auto statistic = [&](const std::vector<int>& idx) {
        double sxy = 0, sxx = 0, syy = 0;
        for (int i = 0; i < n; ++i) {
            const size_t row = static_cast<size_t>(idx[i]) * total;
            for (int j = 0; j < n; ++j) sxx += dist[row + idx[j]];
            for (int j = n; j < total; ++j) sxy += dist[row + idx[j]];
        }
        for (int i = n; i < total; ++i) {
            const size_t row = static_cast<size_t>(idx[i]) * total;
            for (int j = n; j < total; ++j) syy += dist[row + idx[j]];
        }
        return 2.0 * sxy / (static_cast<double>(n) * m) -
               sxx / (static_cast<double>(n) * n) -
               syy / (static_cast<double>(m) * m);
    };

    std::vector<int> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    EnergyDistanceResult result;
    result.statistic = statistic(idx);
    result.permutations = permutations;

    CounterRng rng(seed, 0);
    int at_least = 1;  // observed statistic counts itself
    for (int p = 0; p < permutations; ++p) {
        for (int i = total - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.uniform() * (i + 1));
            std::swap(idx[i], idx[std::min(j, i)]);
        }
        if (statistic(idx) >= result.statistic) ++at_least;
    }
    result.p_value = static_cast<double>(at_least) / (permutations + 1);
    return result;
}

struct OlsFit {
    std::vector<double> coefficients;
    std::vector<double> stderrs;  // heteroskedasticity-robust if requested
    double residual_variance = 0;
};

// OLS of y on the columns of X (row-major, rows x cols). With robust = true
// the standard errors use the White/HC0 sandwich, which stays valid when the
// noise variance depends on the regressors. cols must be small (normal
// equations + Cholesky).
inline OlsFit ols_fit(const std::vector<double>& X, const std::vector<double>& y,
                      int cols, bool robust = false) {
    const int rows = static_cast<int>(y.size());
    if (rows < cols + 1) throw std::invalid_argument("ols_fit: too few rows");
    std::vector<double> xtx(static_cast<size_t>(cols) * cols, 0.0);
    std::vector<double> xty(cols, 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* xr = &X[static_cast<size_t>(r) * cols];
        for (int i = 0; i < cols; ++i) {
            xty[i] += xr[i] * y[r];
            for (int j = i; j < cols; ++j) xtx[i * cols + j] += xr[i] * xr[j];
        }
    }
    for (int i = 0; i < cols; ++i)
        for (int j = 0; j < i; ++j) xtx[i * cols + j] = xtx[j * cols + i];

    // Cholesky factorization xtx = L L^T
    std::vector<double> L(xtx);
    for (int i = 0; i < cols; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = L[i * cols + j];
            for (int k = 0; k < j; ++k) s -= L[i * cols + k] * L[j * cols + k];
            if (i == j) {
                if (s <= 0)
                    throw std::runtime_error("ols_fit: singular design matrix");
                L[i * cols + i] = std::sqrt(s);
            } else {
                L[i * cols + j] = s / L[j * cols + j];
            }
        }
        for (int j = i + 1; j < cols; ++j) L[i * cols + j] = 0;
    }
    auto solve = [&](std::vector<double> b) {
        for (int i = 0; i < cols; ++i) {
            for (int k = 0; k < i; ++k) b[i] -= L[i * cols + k] * b[k];
            b[i] /= L[i * cols + i];
        }
        for (int i = cols - 1; i >= 0; --i) {
            for (int k = i + 1; k < cols; ++k) b[i] -= L[k * cols + i] * b[k];
            b[i] /= L[i * cols + i];
        }
        return b;
    };

    OlsFit fit;
    fit.coefficients = solve(xty);
    double rss = 0;
    for (int r = 0; r < rows; ++r) {
        double pred = 0;
        const double* xr = &X[static_cast<size_t>(r) * cols];
        for (int i = 0; i < cols; ++i) pred += xr[i] * fit.coefficients[i];
        rss += (y[r] - pred) * (y[r] - pred);
    }
    fit.residual_variance = rss / (rows - cols);
    fit.stderrs.resize(cols);
    if (!robust) {
        for (int i = 0; i < cols; ++i) {
            std::vector<double> e(cols, 0.0);
            e[i] = 1.0;
            fit.stderrs[i] = std::sqrt(fit.residual_variance * solve(e)[i]);
        }
        return fit;
    }
    // sandwich: (X^T X)^-1 (sum e_r^2 x_r x_r^T) (X^T X)^-1
    std::vector<double> meat(static_cast<size_t>(cols) * cols, 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* xr = &X[static_cast<size_t>(r) * cols];
        double pred = 0;
        for (int i = 0; i < cols; ++i) pred += xr[i] * fit.coefficients[i];
        const double e2 = (y[r] - pred) * (y[r] - pred);
        for (int i = 0; i < cols; ++i)
            for (int j = i; j < cols; ++j)
                meat[i * cols + j] += e2 * xr[i] * xr[j];
    }
    for (int i = 0; i < cols; ++i)
        for (int j = 0; j < i; ++j) meat[i * cols + j] = meat[j * cols + i];
    std::vector<std::vector<double>> inv_cols(cols);
    for (int i = 0; i < cols; ++i) {
        std::vector<double> e(cols, 0.0);
        e[i] = 1.0;
        inv_cols[i] = solve(e);
    }
    for (int i = 0; i < cols; ++i) {
        double v = 0;
        for (int a = 0; a < cols; ++a)
            for (int b = 0; b < cols; ++b)
                v += inv_cols[i][a] * meat[a * cols + b] * inv_cols[i][b];
        fit.stderrs[i] = std::sqrt(std::max(0.0, v));
    }
    return fit;
}

// Trapezoidal quadrature of samples (t_k, f_k).
inline double trapezoid(const std::vector<double>& t,
                        const std::vector<double>& f) {
    double s = 0;
    for (size_t k = 0; k + 1 < t.size(); ++k)
        s += 0.5 * (f[k] + f[k + 1]) * (t[k + 1] - t[k]);
    return s;
}

}  // namespace wflow
