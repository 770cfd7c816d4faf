#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cardlab/errors.hpp"
#include "cardlab/rng.hpp"

namespace cardlab::ad {

// Dense row-major matrix of f64. Scalars are 1x1, row vectors 1xN.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Tensor(std::size_t r, std::size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols) throw ShapeMismatchError("tensor data length != rows*cols");
    }

    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double item() const {
        if (size() != 1) throw ShapeMismatchError("item() on non-scalar tensor");
        return data[0];
    }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    std::string shape_str() const {
        return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
    }

    void fill_uniform(Rng& rng, double lo, double hi) {
        for (double& v : data) v = rng.uniform(lo, hi);
    }

    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void check_finite(const Tensor& t, const char* where) {
    if (!t.finite()) throw NonFiniteValueError(std::string("non-finite value in ") + where);
}

// --- raw matmul kernels; `acc` keeps the existing contents of `out` -----------

inline void mm_nn(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
                  std::size_t m, bool acc) {
    if (!acc) std::fill(out, out + n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* orow = out + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b + kk * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

// out(n x m) = A(n x k) * B(m x k)^T
inline void mm_nt(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
                  std::size_t m, bool acc) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* orow = out + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            orow[j] = acc ? orow[j] + s : s;
        }
    }
}

// out(k x m) = A(n x k)^T * B(n x m)
inline void mm_tn(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
                  std::size_t m, bool acc) {
    if (!acc) std::fill(out, out + k * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            double* orow = out + kk * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

}  // namespace cardlab::ad
