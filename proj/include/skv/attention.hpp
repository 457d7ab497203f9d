// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "skv/common.hpp"
#include "skv/matrix.hpp"

namespace skv {

enum class AttentionVariant { Dense, Swa, Local, Strided };

struct SparsityConfig {
    AttentionVariant variant = AttentionVariant::Dense;
    double ratio = 1.0;       // caching ratio r in (0, 1]
    std::size_t stride = 0;   // strided only; 0 = derive from ratio
};

// Token positions kept by one sparse decode step. local_indices are the k
// most recent positions (always kept), global_indices the k prior positions
// with the largest accumulated attention mass. Disjoint by construction.
struct SparseSelection {
    IndexList local_indices;
    IndexList global_indices;
    std::size_t k = 0;

    IndexList all() const {
        IndexList out;
        out.reserve(local_indices.size() + global_indices.size());
        out.insert(out.end(), global_indices.begin(), global_indices.end());
        out.insert(out.end(), local_indices.begin(), local_indices.end());
        std::sort(out.begin(), out.end());
        return out;
    }
};

// Per-layer decode state: per-head K/V caches plus the per-head running
// attention-mass accumulator that drives global token selection. The
// accumulator covers every token attended so far; it gains the current
// token's slot when the step's attention row is scattered back.
struct AttentionState {
    std::size_t head_count = 0;
    std::size_t head_dim = 0;
    std::vector<Matrix> keys;               // per head, tokens x head_dim
    std::vector<Matrix> values;             // per head, tokens x head_dim
    std::vector<Vector> attention_accum;    // per head

    AttentionState() = default;
    AttentionState(std::size_t heads, std::size_t dim)
        : head_count(heads), head_dim(dim), keys(heads), values(heads),
          attention_accum(heads) {
        for (std::size_t h = 0; h < heads; ++h) {
            keys[h] = Matrix(0, dim);
            values[h] = Matrix(0, dim);
        }
    }

    std::size_t tokens() const { return keys.empty() ? 0 : keys[0].rows; }

    // k_rows/v_rows: head_count x head_dim, one row per head.
    void append_token(const Matrix& k_rows, const Matrix& v_rows) {
        require(k_rows.rows == head_count && k_rows.cols == head_dim,
                "append_token: key shape mismatch");
        require(v_rows.rows == head_count && v_rows.cols == head_dim,
                "append_token: value shape mismatch");
        for (std::size_t h = 0; h < head_count; ++h) {
            keys[h].append_row(k_rows.row(h));
            values[h].append_row(v_rows.row(h));
        }
    }

    // Sum of per-head accumulators; the head-reduced importance signal.
    Vector head_summed_accum() const {
        Vector out(attention_accum.empty() ? 0 : attention_accum[0].size(), 0.0);
        for (const auto& acc : attention_accum) {
            for (std::size_t i = 0; i < acc.size(); ++i) {
                out[i] += acc[i];
            }
        }
        return out;
    }
};

// Scaled dot-product attention over full matrices. With mask_causal, query
// row i may attend key j only when j <= i + (k.rows - q.rows), i.e. masks
// align to the bottom-right corner. Returns (attention output, weights).
inline std::pair<Matrix, Matrix> dense_attention(const Matrix& q, const Matrix& k,
                                                 const Matrix& v, bool mask_causal) {
    require(q.cols == k.cols && k.cols == v.cols, "dense_attention: head_dim mismatch");
    require(k.rows == v.rows, "dense_attention: key/value length mismatch");
    require(q.rows > 0 && k.rows > 0, "dense_attention: empty input");
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
    Matrix logits(q.rows, k.rows);
    const auto offset = static_cast<std::ptrdiff_t>(k.rows) -
                        static_cast<std::ptrdiff_t>(q.rows);
    for (std::size_t i = 0; i < q.rows; ++i) {
        for (std::size_t j = 0; j < k.rows; ++j) {
            if (mask_causal &&
                static_cast<std::ptrdiff_t>(j) > static_cast<std::ptrdiff_t>(i) + offset) {
                logits.at(i, j) = -std::numeric_limits<double>::infinity();
                continue;
            }
            double dot = 0.0;
            for (std::size_t d = 0; d < q.cols; ++d) {
                dot += q.at(i, d) * k.at(j, d);
            }
            logits.at(i, j) = dot * scale;
        }
    }
    Matrix aw = softmax_rows(logits);
    Matrix attn = matmul(aw, v);
    return {std::move(attn), std::move(aw)};
}

// Window half-width k = round-half-even(n*r/2), clamped to at least 1. At
// r == 1 the half-even tie at odd n would drop a token, so k is forced to
// ceil(n/2) to keep the full-ratio case exactly dense.
inline std::size_t swa_window_k(std::size_t n, double r) {
    require(r > 0.0 && r <= 1.0, "swa_window_k: ratio out of (0,1]");
    if (n < 2) {
        return 1;
    }
    if (r >= 1.0) {
        return (n + 1) / 2;
    }
    const auto rounded = round_half_even(static_cast<double>(n) * r / 2.0);
    return rounded < 1 ? 1 : static_cast<std::size_t>(rounded);
}

// Tokens kept per step at sequence length n: both halves of the window,
// capped by the sequence itself.
inline std::size_t swa_keep_count(std::size_t n, double r) {
    return std::min(2 * swa_window_k(n, r), n);
}

// Sparse window selection over n total tokens (position n-1 is the current
// token). importance holds accumulated attention mass for positions 0..n-2.
inline SparseSelection swa_select(std::span<const double> importance, std::size_t n,
                                  double r) {
    SparseSelection sel;
    const std::size_t k = swa_window_k(n, r);
    if (n < 2) {
        sel.k = k;
        for (std::size_t i = 0; i < n; ++i) {
            sel.local_indices.push_back(i);
        }
        return sel;
    }
    sel.k = k;
    if (2 * k >= n) {
        // Degenerate near sequence start: keep everything.
        const std::size_t window = std::min(k, n);
        for (std::size_t i = n - window; i < n; ++i) {
            sel.local_indices.push_back(i);
        }
        for (std::size_t i = 0; i < n - window; ++i) {
            sel.global_indices.push_back(i);
        }
        return sel;
    }
    require(importance.size() == n - 1, "swa_select: importance length must be n-1");
    for (std::size_t i = n - k; i < n; ++i) {
        sel.local_indices.push_back(i);
    }
    sel.global_indices = top_k_indices(importance.subspan(0, n - k), k);
    return sel;
}

struct StepAttentionResult {
    Matrix attn;            // head_count x head_dim
    Vector new_aw_row;      // head-summed, full length n, zeros off-selection
    SparseSelection selection;
};

// One decode step of attention restricted to `indices` (must include the
// current token n-1). Gathers the selected K/V rows into dense matrices,
// attends, scatters the weights back to full-length rows and folds them
// into the per-head accumulators.
inline StepAttentionResult attend_over_indices(AttentionState& state, const Matrix& q_step,
                                               const IndexList& indices) {
    const std::size_t n = state.tokens();
    require(n >= 1, "attend_over_indices: empty cache");
    require(q_step.rows == state.head_count && q_step.cols == state.head_dim,
            "attend_over_indices: query shape mismatch");
    require(!indices.empty(), "attend_over_indices: empty selection");
    for (const std::size_t idx : indices) {
        require(idx < n, "attend_over_indices: index out of range");
    }

    StepAttentionResult res;
    res.attn = Matrix(state.head_count, state.head_dim);
    res.new_aw_row = Vector(n, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(state.head_dim));

    for (std::size_t h = 0; h < state.head_count; ++h) {
        const Matrix& keys = state.keys[h];
        const Matrix& vals = state.values[h];
        Vector logits(indices.size(), 0.0);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < indices.size(); ++t) {
            double dot = 0.0;
            const auto krow = keys.row(indices[t]);
            for (std::size_t d = 0; d < state.head_dim; ++d) {
                dot += q_step.at(h, d) * krow[d];
            }
            logits[t] = dot * scale;
            mx = std::max(mx, logits[t]);
        }
        double sum = 0.0;
        for (double& l : logits) {
            l = std::exp(l - mx);
            sum += l;
        }
        Vector& acc = state.attention_accum[h];
        acc.resize(n, 0.0);
        for (std::size_t t = 0; t < indices.size(); ++t) {
            const double w = logits[t] / sum;
            const auto vrow = vals.row(indices[t]);
            for (std::size_t d = 0; d < state.head_dim; ++d) {
                res.attn.at(h, d) += w * vrow[d];
            }
            acc[indices[t]] += w;
            res.new_aw_row[indices[t]] += w;
        }
    }
    return res;
}

// Sparse Window Attention decode step: select via the head-reduced
// accumulator, then attend over the gathered rows only.
inline StepAttentionResult swa_attention(AttentionState& state, const Matrix& q_step,
                                         const SparsityConfig& cfg) {
    const std::size_t n = state.tokens();
    require(n >= 1, "swa_attention: empty cache");
    const Vector importance = state.head_summed_accum();
    SparseSelection sel = swa_select(importance, n, cfg.ratio);
    StepAttentionResult res = attend_over_indices(state, q_step, sel.all());
    res.selection = std::move(sel);
    return res;
}

// Most recent `window` positions of an n-token sequence.
inline IndexList local_attention_mask(std::size_t n, std::size_t window) {
    require(window >= 1, "local_attention_mask: window must be >= 1");
    IndexList out;
    const std::size_t w = std::min(window, n);
    for (std::size_t i = n - w; i < n; ++i) {
        out.push_back(i);
    }
    return out;
}

// Every stride-th position, phased so the current token n-1 is included.
inline IndexList strided_attention_mask(std::size_t n, std::size_t stride) {
    require(stride >= 1, "strided_attention_mask: stride must be >= 1");
    IndexList out;
    if (n == 0) {
        return out;
    }
    const std::size_t phase = (n - 1) % stride;
    for (std::size_t i = phase; i < n; i += stride) {
        out.push_back(i);
    }
    return out;
}

// Fraction of entries below rel_threshold times the row maximum. With
// causal_masked, entries above the (bottom-right aligned) diagonal are
// excluded from both the maximum and the count. All-zero rows count as
// fully sparse.
inline double attention_sparsity(const Matrix& aw, double rel_threshold = 0.01,
                                 bool causal_masked = false) {
    require(aw.rows > 0 && aw.cols > 0, "attention_sparsity: empty matrix");
    const auto offset = static_cast<std::ptrdiff_t>(aw.cols) -
                        static_cast<std::ptrdiff_t>(aw.rows);
    std::size_t counted = 0;
    std::size_t sparse = 0;
    for (std::size_t i = 0; i < aw.rows; ++i) {
        double mx = 0.0;
        std::size_t row_cells = 0;
        for (std::size_t j = 0; j < aw.cols; ++j) {
            if (causal_masked &&
                static_cast<std::ptrdiff_t>(j) > static_cast<std::ptrdiff_t>(i) + offset) {
                continue;
            }
            mx = std::max(mx, aw.at(i, j));
            ++row_cells;
        }
        counted += row_cells;
        if (mx == 0.0) {
            sparse += row_cells;
            continue;
        }
        const double thr = rel_threshold * mx;
        for (std::size_t j = 0; j < aw.cols; ++j) {
            if (causal_masked &&
                static_cast<std::ptrdiff_t>(j) > static_cast<std::ptrdiff_t>(i) + offset) {
                continue;
            }
            if (aw.at(i, j) < thr) {
                ++sparse;
            }
        }
    }
    return counted == 0 ? 0.0 : static_cast<double>(sparse) / static_cast<double>(counted);
}

// Spearman correlation between two aligned score distributions.
inline double score_distribution_correlation(std::span<const double> dense_scores,
                                             std::span<const double> sparse_scores) {
    return spearman(dense_scores, sparse_scores);
}

} // namespace skv
