// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "skv/common.hpp"

namespace skv {

using Vector = std::vector<double>;
using IndexList = std::vector<std::size_t>;

// Dense row-major matrix of doubles. The only numeric carrier in the library.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }

    void append_row(std::span<const double> v) {
        require(v.size() == cols || rows == 0, "append_row: width mismatch");
        if (rows == 0) {
            cols = v.size();
        }
        data.insert(data.end(), v.begin(), v.end());
        ++rows;
    }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(),
                           [](double v) { return std::isfinite(v); });
    }
};

// Deterministic generator: std::mt19937_64 is fully specified by the C++
// standard, so an identical seed yields an identical integer stream on every
// platform. Floating transforms below are explicit (no std::*_distribution,
// whose output is implementation-defined).
class SeededRng {
  public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller. Consumes two uniforms per pair; caches the second draw.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double ang = 6.283185307179586476925286766559 * u2;
        spare_ = mag * std::sin(ang);
        has_spare_ = true;
        return mag * std::cos(ang);
    }

    // Uniform integer in [0, bound) via rejection sampling.
    std::uint64_t integer(std::uint64_t bound) {
        require(bound > 0, "integer: bound must be positive");
        const std::uint64_t limit =
            std::numeric_limits<std::uint64_t>::max() -
            std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x = next_u64();
        while (x >= limit) {
            x = next_u64();
        }
        return x % bound;
    }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols == b.rows, "matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < b.cols; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            out.at(j, i) = m.at(i, j);
        }
    }
    return out;
}

// Row-wise softmax with per-row max subtraction. Rows containing -inf logits
// get exact zeros at those positions; at least one finite entry per row is
// required.
inline Matrix softmax_rows(const Matrix& m) {
    require(m.rows > 0 && m.cols > 0, "softmax_rows: empty matrix");
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m.cols; ++j) {
            mx = std::max(mx, m.at(i, j));
        }
        require(std::isfinite(mx), "softmax_rows: row has no finite entry");
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            const double l = m.at(i, j);
            const double e = std::isinf(l) ? 0.0 : std::exp(l - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < m.cols; ++j) {
            out.at(i, j) /= sum;
        }
    }
    return out;
}

// Indices of the k largest values; ties break toward the lower index.
// Result sorted ascending.
inline IndexList top_k_indices(std::span<const double> v, std::size_t k) {
    require(k <= v.size(), "top_k_indices: k exceeds length");
    IndexList idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                      idx.end(), [&](std::size_t a, std::size_t b) {
                          if (v[a] != v[b]) {
                              return v[a] > v[b];
                          }
                          return a < b;
                      });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Average ranks (1-based), ties share the mean of their rank positions.
inline Vector average_ranks(std::span<const double> v) {
    IndexList order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    Vector ranks(v.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) {
            ranks[order[t]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

// Spearman rank correlation: Pearson correlation of average-rank transforms.
inline double spearman(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "spearman: length mismatch");
    require(a.size() >= 2, "spearman: need at least two samples");
    const Vector ra = average_ranks(a);
    const Vector rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = (n + 1.0) / 2.0;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double dx = ra[i] - mean;
        const double dy = rb[i] - mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw UndefinedCorrelation("spearman: constant input has no rank variance");
    }
    return sxy / std::sqrt(sxx * syy);
}

} // namespace skv
