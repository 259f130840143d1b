#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "diffcal/errors.hpp"

// Small dense helpers on row-major std::vector<double> buffers. Everything at
// this scale is tiny (tens of rows), so clarity wins over blocking.
namespace diffcal::linalg {

// Lower Cholesky factor of an SPD matrix. Throws NumericError when a pivot
// is not strictly positive.
inline std::vector<double> cholesky(std::vector<double> a, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (d <= 0.0 || !std::isfinite(d))
            throw NumericError("cholesky: matrix not positive definite");
        const double lj = std::sqrt(d);
        a[j * n + j] = lj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k)
                s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / lj;
        }
        for (std::size_t k = j + 1; k < n; ++k) a[j * n + k] = 0.0;
    }
    return a;
}

// Solve (L L^T) x = b given the lower factor.
inline std::vector<double> chol_solve(const std::vector<double>& L,
                                      std::size_t n, std::vector<double> b) {
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= L[i * n + k] * b[k];
        b[i] = s / L[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= L[k * n + ii] * b[k];
        b[ii] = s / L[ii * n + ii];
    }
    return b;
}

inline double chol_logdet(const std::vector<double>& L, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::log(L[i * n + i]);
    return 2.0 * s;
}

// log|det A| by partial-pivot LU; sign returned separately. Throws on exact
// singularity.
inline double lu_logabsdet(std::vector<double> a, std::size_t n,
                           double& sign) {
    sign = 1.0;
    double logdet = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::fabs(a[r * n + c]) > std::fabs(a[piv * n + c])) piv = r;
        if (a[piv * n + c] == 0.0)
            throw NumericError("lu_logabsdet: singular matrix");
        if (piv != c) {
            for (std::size_t k = 0; k < n; ++k)
                std::swap(a[piv * n + k], a[c * n + k]);
            sign = -sign;
        }
        const double p = a[c * n + c];
        sign *= (p < 0.0) ? -1.0 : 1.0;
        logdet += std::log(std::fabs(p));
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r * n + c] / p;
            if (f == 0.0) continue;
            for (std::size_t k = c + 1; k < n; ++k)
                a[r * n + k] -= f * a[c * n + k];
            a[r * n + c] = 0.0;
        }
    }
    return logdet;
}

inline std::vector<double> matmul_nn(const std::vector<double>& a,
                                     std::size_t m, std::size_t k,
                                     const std::vector<double>& b,
                                     std::size_t n) {
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = a[i * k + kk];
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j)
                out[i * n + j] += aik * b[kk * n + j];
        }
    return out;
}

inline std::vector<double> matvec(const std::vector<double>& a, std::size_t m,
                                  std::size_t k,
                                  const std::vector<double>& x) {
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) out[i] += a[i * k + kk] * x[kk];
    return out;
}

inline std::vector<double> transpose(const std::vector<double>& a,
                                     std::size_t m, std::size_t n) {
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

} // namespace diffcal::linalg
