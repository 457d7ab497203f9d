// SPDX-License-Identifier: Apache-2.0
// Test-only reference implementations, kept independent of the library
// code paths they are used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "skv/attention.hpp"
#include "skv/engine.hpp"
#include "skv/matrix.hpp"
#include "skv/scheduler.hpp"

namespace oracle {

// Plain i-j-k triple loop, no reordering or zero skipping.
inline skv::Matrix matmul_naive(const skv::Matrix& a, const skv::Matrix& b) {
    skv::Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

// Full stable sort by (value desc, index asc), then take k.
inline skv::IndexList top_k_sorted(const std::vector<double>& v, std::size_t k) {
    skv::IndexList idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (v[a] != v[b]) {
            return v[a] > v[b];
        }
        return a < b;
    });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Classic rank-difference formula; valid only when neither input has ties.
inline double spearman_no_ties(const std::vector<double>& a,
                               const std::vector<double>& b) {
    const auto ranks = [](const std::vector<double>& v) {
        skv::IndexList order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            r[order[i]] = static_cast<double>(i + 1);
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    double sum_d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = ra[i] - rb[i];
        sum_d2 += d * d;
    }
    const double n = static_cast<double>(a.size());
    return 1.0 - 6.0 * sum_d2 / (n * (n * n - 1.0));
}

// Scaled dot-product attention with explicit elementwise loops and its own
// softmax, independent of skv::dense_attention.
inline std::pair<skv::Matrix, skv::Matrix>
attention_loops(const skv::Matrix& q, const skv::Matrix& k, const skv::Matrix& v,
                bool causal) {
    const std::size_t m = q.rows;
    const std::size_t t = k.rows;
    const std::size_t d = q.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const std::ptrdiff_t offset =
        static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(m);
    skv::Matrix aw(m, t);
    skv::Matrix attn(m, v.cols);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> logit(t, -std::numeric_limits<double>::infinity());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < t; ++j) {
            if (causal && static_cast<std::ptrdiff_t>(j) >
                              static_cast<std::ptrdiff_t>(i) + offset) {
                continue;
            }
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                dot += q.at(i, c) * k.at(j, c);
            }
            logit[j] = dot * scale;
            mx = std::max(mx, logit[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
            if (std::isinf(logit[j])) {
                continue;
            }
            denom += std::exp(logit[j] - mx);
        }
        for (std::size_t j = 0; j < t; ++j) {
            const double w = std::isinf(logit[j]) ? 0.0 : std::exp(logit[j] - mx) / denom;
            aw.at(i, j) = w;
            for (std::size_t c = 0; c < v.cols; ++c) {
                attn.at(i, c) += w * v.at(j, c);
            }
        }
    }
    return {attn, aw};
}

// Dense attention over one head's full cache with -inf logits at
// unselected positions: the reference for gather-based sparse attention.
inline std::pair<std::vector<double>, std::vector<double>>
masked_dense_head(const skv::Matrix& keys, const skv::Matrix& values,
                  std::span<const double> q, const skv::IndexList& selected) {
    const std::size_t t = keys.rows;
    const std::size_t d = keys.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<bool> keep(t, false);
    for (const std::size_t i : selected) {
        keep[i] = true;
    }
    std::vector<double> logit(t, -std::numeric_limits<double>::infinity());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < t; ++j) {
        if (!keep[j]) {
            continue;
        }
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dot += q[c] * keys.at(j, c);
        }
        logit[j] = dot * scale;
        mx = std::max(mx, logit[j]);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
        if (!std::isinf(logit[j])) {
            denom += std::exp(logit[j] - mx);
        }
    }
    std::vector<double> aw(t, 0.0);
    std::vector<double> attn(d, 0.0);
    for (std::size_t j = 0; j < t; ++j) {
        if (std::isinf(logit[j])) {
            continue;
        }
        aw[j] = std::exp(logit[j] - mx) / denom;
        for (std::size_t c = 0; c < d; ++c) {
            attn[c] += aw[j] * values.at(j, c);
        }
    }
    return {attn, aw};
}

// Brute-force sparsity count mirroring the metric's definition.
inline double sparsity_count(const skv::Matrix& aw, double thr, bool causal) {
    std::size_t total = 0;
    std::size_t below = 0;
    const std::ptrdiff_t offset =
        static_cast<std::ptrdiff_t>(aw.cols) - static_cast<std::ptrdiff_t>(aw.rows);
    for (std::size_t i = 0; i < aw.rows; ++i) {
        double mx = 0.0;
        for (std::size_t j = 0; j < aw.cols; ++j) {
            if (causal &&
                static_cast<std::ptrdiff_t>(j) > static_cast<std::ptrdiff_t>(i) + offset) {
                continue;
            }
            mx = std::max(mx, aw.at(i, j));
        }
        for (std::size_t j = 0; j < aw.cols; ++j) {
            if (causal &&
                static_cast<std::ptrdiff_t>(j) > static_cast<std::ptrdiff_t>(i) + offset) {
                continue;
            }
            ++total;
            if (mx == 0.0 || aw.at(i, j) < thr * mx) {
                ++below;
            }
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(below) / static_cast<double>(total);
}

// From-scratch model forward: embeds the whole sequence and runs every
// layer densely, no KV reuse. Rebuilt here with explicit loops so the
// engine's incremental path is checked against an independent route.
inline skv::Vector logits_from_scratch(const skv::ToyModel& model,
                                       const std::vector<std::int64_t>& tokens) {
    const std::size_t h = model.shape.hidden();
    const std::size_t heads = model.shape.heads;
    const std::size_t d = model.shape.head_dim;
    const std::size_t t = tokens.size();

    skv::Matrix x(t, h);
    for (std::size_t i = 0; i < t; ++i) {
        const skv::Vector pe = skv::positional_term(i, h);
        for (std::size_t c = 0; c < h; ++c) {
            x.at(i, c) =
                model.embedding.at(static_cast<std::size_t>(tokens[i]), c) + pe[c];
        }
    }

    for (const skv::LayerWeights& lw : model.layers) {
        skv::Matrix xn(t, h);
        for (std::size_t i = 0; i < t; ++i) {
            const skv::Vector row = skv::layer_norm(x.row(i), lw.ln1_gain, lw.ln1_bias);
            std::copy(row.begin(), row.end(), xn.row(i).begin());
        }
        const skv::Matrix q = matmul_naive(xn, lw.wq);
        const skv::Matrix k = matmul_naive(xn, lw.wk);
        const skv::Matrix v = matmul_naive(xn, lw.wv);
        skv::Matrix concat(t, h);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            skv::Matrix qh(t, d);
            skv::Matrix kh(t, d);
            skv::Matrix vh(t, d);
            for (std::size_t i = 0; i < t; ++i) {
                for (std::size_t c = 0; c < d; ++c) {
                    qh.at(i, c) = q.at(i, hd * d + c);
                    kh.at(i, c) = k.at(i, hd * d + c);
                    vh.at(i, c) = v.at(i, hd * d + c);
                }
            }
            const auto [attn, aw] = attention_loops(qh, kh, vh, true);
            for (std::size_t i = 0; i < t; ++i) {
                for (std::size_t c = 0; c < d; ++c) {
                    concat.at(i, hd * d + c) = attn.at(i, c);
                }
            }
        }
        const skv::Matrix proj = matmul_naive(concat, lw.wo);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            x.data[i] += proj.data[i];
        }
        for (std::size_t i = 0; i < t; ++i) {
            const skv::Vector xf = skv::layer_norm(x.row(i), lw.ln2_gain, lw.ln2_bias);
            skv::Matrix xfm(1, h);
            std::copy(xf.begin(), xf.end(), xfm.row(0).begin());
            skv::Matrix h1 = matmul_naive(xfm, lw.ffn_in);
            for (double& val : h1.data) {
                val = skv::gelu(val);
            }
            const skv::Matrix h2 = matmul_naive(h1, lw.ffn_out);
            for (std::size_t c = 0; c < h; ++c) {
                x.at(i, c) += h2.at(0, c);
            }
        }
    }

    const skv::Vector last =
        skv::layer_norm(x.row(t - 1), model.final_ln_gain, model.final_ln_bias);
    skv::Matrix rowm(1, h);
    std::copy(last.begin(), last.end(), rowm.row(0).begin());
    const skv::Matrix logits = matmul_naive(rowm, model.output_proj);
    return skv::Vector(logits.row(0).begin(), logits.row(0).end());
}

// Exhaustive (alpha, beta, p2) grid search over the same objective.
struct BestPlan {
    skv::SchedulePlan plan;
    double seconds = std::numeric_limits<double>::infinity();
    bool found = false;
};

inline BestPlan exhaustive_plan(const skv::CostParams& p) {
    BestPlan best;
    const std::size_t p1 = skv::phase1_limit(p);
    const std::size_t n = p.output_len;
    if (p1 == n) {
        skv::SchedulePlan plan;
        plan.p1 = plan.p2 = n;
        best.plan = plan;
        best.seconds = skv::predict_total_time(plan, p);
        best.found = true;
        return best;
    }
    for (int ai = 1; ai <= 19; ++ai) {
        for (int bi = 1; bi <= 19; ++bi) {
            for (std::size_t p2 = p1 + 1; p2 <= n; ++p2) {
                skv::SchedulePlan plan;
                plan.alpha = 0.05 * ai;
                plan.beta = 0.05 * bi;
                plan.p1 = p1;
                plan.p2 = p2;
                const skv::PlanPrediction pred = skv::predict_plan(plan, p);
                if (!pred.feasible) {
                    continue;
                }
                if (pred.total_seconds < best.seconds) {
                    best.seconds = pred.total_seconds;
                    best.plan = plan;
                    best.found = true;
                }
            }
        }
    }
    return best;
}

} // namespace oracle
