// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the autodiff engine.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "cure/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline cure::Tensor random_tensor(cure::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = false)
{
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(cure::shape_size(shape));
    for (auto& x : v) x = u(rng);
    return cure::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Central differences of f at x, one coordinate at a time.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-6)
{
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// ||a - b|| / max(||a||, ||b||), with a small floor so all-zero gradients compare equal.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b)
{
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

inline Matrix to_matrix(const cure::Tensor& t)
{
    Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
    return m;
}

inline Matrix gram(const Matrix& f)
{
    const std::size_t n = f.size();
    Matrix k(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < f[i].size(); ++c) k[i][j] += f[i][c] * f[j][c];
    return k;
}

inline Matrix mat_mul(const Matrix& a, const Matrix& b)
{
    Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

/// HSIC form: K_i = F_i F_i^T, optionally H K_i H with H = I - 11^T/n, then
/// <K1,K2>_F / (|K1|_F |K2|_F). O(n^2 d + n^3); only for small fixtures.
inline double cka_gram(const Matrix& f1, const Matrix& f2, bool centered)
{
    const std::size_t n = f1.size();
    Matrix k1 = gram(f1), k2 = gram(f2);
    if (centered) {
        Matrix h(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) h[i][j] = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(n);
        k1 = mat_mul(mat_mul(h, k1), h);
        k2 = mat_mul(mat_mul(h, k2), h);
    }
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            dot += k1[i][j] * k2[i][j];
            n1 += k1[i][j] * k1[i][j];
            n2 += k2[i][j] * k2[i][j];
        }
    return dot / std::sqrt(n1 * n2);
}

/// Random orthogonal d x d matrix via Gram-Schmidt on Gaussian columns.
inline Matrix random_orthogonal(std::size_t d, std::mt19937_64& rng)
{
    std::normal_distribution<double> g;
    Matrix q(d, std::vector<double>(d));
    for (auto& row : q)
        for (auto& v : row) v = g(rng);
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t p = 0; p < c; ++p) {
            double dot = 0.0;
            for (std::size_t r = 0; r < d; ++r) dot += q[r][c] * q[r][p];
            for (std::size_t r = 0; r < d; ++r) q[r][c] -= dot * q[r][p];
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < d; ++r) norm += q[r][c] * q[r][c];
        norm = std::sqrt(norm);
        for (std::size_t r = 0; r < d; ++r) q[r][c] /= norm;
    }
    return q;
}

/// Softmax cross-entropy of one row of logits, computed directly.
inline double row_ce(const std::vector<double>& z, int label)
{
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (const double v : z) s += std::exp(v - m);
    return -(z[static_cast<std::size_t>(label)] - m - std::log(s));
}

/// Linear logits W x + b for W [c x d].
inline std::vector<double> linear_logits(const Matrix& w, const std::vector<double>& b, const std::vector<double>& x)
{
    std::vector<double> z(b);
    for (std::size_t c = 0; c < w.size(); ++c)
        for (std::size_t j = 0; j < x.size(); ++j) z[c] += w[c][j] * x[j];
    return z;
}

/// Largest CE over the 2^d corners of the box x0 + {-eps, +eps}^d clipped to [lo, hi].
/// CE of a linear model is convex in x, so the box maximum sits at a corner.
inline double corner_max_ce(const Matrix& w, const std::vector<double>& b, const std::vector<double>& x0, int label,
                            double eps, double lo, double hi)
{
    const std::size_t d = x0.size();
    double best = -1e300;
    std::vector<double> x(d);
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << d); ++mask) {
        for (std::size_t j = 0; j < d; ++j) {
            const double v = x0[j] + (((mask >> j) & 1U) ? eps : -eps);
            x[j] = std::clamp(v, lo, hi);
        }
        best = std::max(best, row_ce(linear_logits(w, b, x), label));
    }
    return best;
}

/// Indices masked by a percentile rule, by explicit sort of (value, index) pairs.
inline std::vector<std::size_t> lowest_k(const std::vector<double>& scores, std::size_t k)
{
    std::vector<std::pair<double, std::size_t>> v;
    for (std::size_t i = 0; i < scores.size(); ++i) v.emplace_back(scores[i], i);
    std::sort(v.begin(), v.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(v[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

inline double harmonic(double a, double b)
{
    return 2.0 / (1.0 / a + 1.0 / b);
}

} // namespace oracle
