// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "skv/attention.hpp"
#include "skv/common.hpp"
#include "skv/matrix.hpp"
#include "skv/memsim.hpp"
#include "skv/quant.hpp"
#include "skv/scheduler.hpp"

namespace skv {

struct ModelShape {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t head_dim = 8;
    std::size_t vocab = 64;
    std::size_t ffn_mult = 4;

    std::size_t hidden() const { return heads * head_dim; }
};

struct LayerWeights {
    Matrix wq, wk, wv, wo;    // hidden x hidden
    Matrix ffn_in, ffn_out;   // hidden x ffn, ffn x hidden
    Vector ln1_gain, ln1_bias;
    Vector ln2_gain, ln2_bias;
};

// Seeded decoder-only toy transformer. Deterministic from (shape, seed,
// skewed): weights are drawn in a fixed order from one generator. The
// skewed initializer gives token embeddings heavy-tailed norms and raises
// the attention logit gain, so dense attention mass concentrates on a few
// content-determined tokens (an approximate power-law row distribution).
struct ToyModel {
    ModelShape shape;
    std::uint64_t seed = 0;
    bool skewed = false;
    Matrix embedding;         // vocab x hidden
    std::vector<LayerWeights> layers;
    Vector final_ln_gain, final_ln_bias;
    Matrix output_proj;       // hidden x vocab

    static ToyModel create(const ModelShape& shape, std::uint64_t seed, bool skewed) {
        require(shape.layers > 0 && shape.heads > 0 && shape.head_dim > 0 &&
                    shape.vocab > 1 && shape.ffn_mult > 0,
                "ToyModel: degenerate shape");
        ToyModel m;
        m.shape = shape;
        m.seed = seed;
        m.skewed = skewed;
        SeededRng rng(seed);
        const std::size_t h = shape.hidden();
        const double wscale = 1.0 / std::sqrt(static_cast<double>(h));
        const double fscale = 1.0 / std::sqrt(static_cast<double>(h * shape.ffn_mult));
        const double qgain = skewed ? 6.0 : 1.0;
        const double emb_sigma = skewed ? 1.25 : 0.0;

        auto draw = [&](std::size_t r, std::size_t c, double scale) {
            Matrix w(r, c);
            for (double& v : w.data) {
                v = rng.normal() * scale;
            }
            return w;
        };

        m.embedding = draw(shape.vocab, h, 1.0);
        for (std::size_t t = 0; t < shape.vocab; ++t) {
            const double mult = std::exp(emb_sigma * rng.normal());
            for (std::size_t d = 0; d < h; ++d) {
                m.embedding.at(t, d) *= mult;
            }
        }

        m.layers.resize(shape.layers);
        for (auto& lw : m.layers) {
            lw.wq = draw(h, h, wscale * qgain);
            lw.wk = draw(h, h, wscale);
            lw.wv = draw(h, h, wscale);
            lw.wo = draw(h, h, wscale);
            lw.ffn_in = draw(h, h * shape.ffn_mult, wscale);
            lw.ffn_out = draw(h * shape.ffn_mult, h, fscale);
            lw.ln1_gain.assign(h, 1.0);
            lw.ln1_bias.assign(h, 0.0);
            lw.ln2_gain.assign(h, 1.0);
            lw.ln2_bias.assign(h, 0.0);
            for (std::size_t d = 0; d < h; ++d) {
                lw.ln1_gain[d] += 0.05 * rng.normal();
                lw.ln2_gain[d] += 0.05 * rng.normal();
            }
        }
        m.final_ln_gain.assign(h, 1.0);
        m.final_ln_bias.assign(h, 0.0);
        m.output_proj = draw(h, shape.vocab, wscale);
        return m;
    }
};

inline Vector layer_norm(std::span<const double> x, const Vector& gain,
                         const Vector& bias) {
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (const double v : x) {
        mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (const double v : x) {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    Vector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
    }
    return out;
}

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

// Sinusoidal positional term; keeps each token's input independent of
// later tokens so cached decode can match a from-scratch recompute.
inline Vector positional_term(std::size_t pos, std::size_t h) {
    Vector out(h, 0.0);
    for (std::size_t i = 0; i < h; i += 2) {
        const double freq =
            std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(h));
        out[i] = std::sin(static_cast<double>(pos) * freq);
        if (i + 1 < h) {
            out[i + 1] = std::cos(static_cast<double>(pos) * freq);
        }
    }
    return out;
}

enum class ScheduleMode { Dynamic, AllDevice, StaticSplit };

struct QuantSettings {
    bool enabled = false;
    std::uint32_t bits = 8;
};

struct EngineConfig {
    ModelShape shape;
    std::uint64_t seed = 0;
    bool skewed_init = false;
    std::size_t prompt_len = 8;
    std::size_t gen_len = 16;
    std::int64_t eos_id = -1; // negative: never emitted
    SparsityConfig sparsity;
    CostParams cost;
    ScheduleMode mode = ScheduleMode::Dynamic;
    double static_fraction = 0.5;
    bool recompute_enabled = true;
    QuantSettings quant;

    void validate() const {
        require(prompt_len >= 1, "EngineConfig: empty prompt");
        require(cost.input_len == prompt_len && cost.output_len == gen_len,
                "EngineConfig: cost params workload mismatch");
        const std::size_t expect_bpe = quant.enabled ? 1 : 2;
        require(cost.bytes_per_element == expect_bpe,
                "EngineConfig: bytes_per_element inconsistent with quant setting");
        require(cost.hidden == shape.hidden() && cost.layers == shape.layers,
                "EngineConfig: cost params shape mismatch");
        if (mode == ScheduleMode::StaticSplit) {
            require(static_fraction > 0.0 && static_fraction < 1.0,
                    "EngineConfig: static_fraction out of (0,1)");
        }
    }
};

struct StepMetrics {
    std::size_t step = 0;
    int phase = 1;
    std::int64_t token_id = 0;
    double compute_seconds = 0.0;
    double transfer_seconds = 0.0;
    double recompute_seconds = 0.0;
    std::uint64_t device_bytes = 0;
    std::uint64_t host_bytes = 0;
    std::size_t kept_tokens = 0;
    double d2h_tokens = 0.0;
    double h2d_tokens = 0.0;
    std::size_t recomputed = 0;
    std::size_t deleted = 0;
    double sparsity_mean = 0.0;
    Vector sparsity_per_layer;
};

struct RunMetrics {
    std::size_t prompt_tokens = 0;
    std::size_t sequence_tokens = 0;    // decode steps actually run
    std::uint64_t generated_tokens = 0; // batch-aggregated: b * sequence_tokens
    bool hit_eos = false;
    double total_seconds = 0.0;
    double prefill_seconds = 0.0;
    double compute_seconds = 0.0;
    double transfer_seconds = 0.0;
    double recompute_seconds = 0.0;
    double throughput_tokens_per_second = 0.0;
    double seconds_per_token = 0.0;
    std::uint64_t peak_device_bytes = 0;
    std::uint64_t peak_host_bytes = 0;
    std::uint64_t transferred_bytes = 0;
    Vector prefill_sparsity_per_layer;
    std::vector<StepMetrics> steps;
    std::vector<std::int64_t> prompt_ids;
    std::vector<std::int64_t> generated_ids;
    Vector mean_logits; // empty unless requested
    SchedulePlan plan;
};

struct RunOptions {
    // Teacher forcing: consume these ids instead of argmax picks.
    std::vector<std::int64_t> forced_tokens;
    bool record_mean_logits = false;
};

// One simulated inference: prefill then token-by-token decode with the
// configured attention variant, schedule and KV precision. Single-owner,
// single-threaded; create one engine per run.
class Engine {
  public:
    explicit Engine(const EngineConfig& cfg)
        : cfg_(cfg), model_(ToyModel::create(cfg.shape, cfg.seed, cfg.skewed_init)),
          ledger_(cfg.shape.layers, cfg.cost.device_capacity) {
        cfg_.cost.validate();
        cfg_.validate();
        plan_ = make_plan();
        const std::size_t h = cfg_.shape.hidden();
        layer_states_.assign(cfg_.shape.layers,
                             AttentionState(cfg_.shape.heads, cfg_.shape.head_dim));
        layer_inputs_.assign(cfg_.shape.layers, Matrix(0, h));
    }

    const SchedulePlan& plan() const { return plan_; }
    const ToyModel& model() const { return model_; }

    RunMetrics run(const RunOptions& opts = {}) {
        RunMetrics metrics;
        metrics.plan = plan_;
        metrics.prompt_tokens = cfg_.prompt_len;

        std::vector<std::int64_t> prompt = make_prompt();
        metrics.prompt_ids = prompt;

        Vector logits = prefill(prompt, metrics);
        Vector logit_sum(cfg_.shape.vocab, 0.0);

        std::int64_t next = argmax_token(logits);
        for (std::size_t j = 0; j < cfg_.gen_len; ++j) {
            std::int64_t input_token = next;
            if (j < opts.forced_tokens.size()) {
                input_token = opts.forced_tokens[j];
            }
            logits = decode_step(j, input_token, metrics);
            if (opts.record_mean_logits) {
                for (std::size_t v = 0; v < logit_sum.size(); ++v) {
                    logit_sum[v] += logits[v];
                }
            }
            next = argmax_token(logits);
            metrics.generated_ids.push_back(input_token);
            metrics.sequence_tokens = j + 1;
            if (cfg_.eos_id >= 0 && next == cfg_.eos_id) {
                metrics.hit_eos = true;
                break;
            }
        }

        if (opts.record_mean_logits && metrics.sequence_tokens > 0) {
            metrics.mean_logits = logit_sum;
            for (double& v : metrics.mean_logits) {
                v /= static_cast<double>(metrics.sequence_tokens);
            }
        }

        metrics.generated_tokens =
            static_cast<std::uint64_t>(cfg_.cost.batch) * metrics.sequence_tokens;
        metrics.compute_seconds = clock_.compute_seconds();
        metrics.transfer_seconds = clock_.transfer_seconds();
        metrics.recompute_seconds = clock_.recompute_seconds();
        metrics.total_seconds = clock_.total_seconds();
        metrics.transferred_bytes = clock_.transferred_bytes();
        if (metrics.generated_tokens > 0 && metrics.total_seconds > 0.0) {
            metrics.throughput_tokens_per_second =
                static_cast<double>(metrics.generated_tokens) / metrics.total_seconds;
            metrics.seconds_per_token =
                metrics.total_seconds / static_cast<double>(metrics.generated_tokens);
        }
        return metrics;
    }

    // Full forward pass over a token sequence; returns last-position logits.
    // Shared by prefill; the kv cache never participates.
    Vector full_forward_logits(const std::vector<std::int64_t>& tokens) const {
        Matrix x = embed(tokens);
        for (const auto& lw : model_.layers) {
            x = layer_forward_dense(x, lw, nullptr, nullptr);
        }
        Vector last = layer_norm(x.row(x.rows - 1), model_.final_ln_gain,
                                 model_.final_ln_bias);
        return project_logits(last);
    }

  private:
    SchedulePlan make_plan() const {
        const std::size_t n = cfg_.gen_len;
        SchedulePlan plan;
        switch (cfg_.mode) {
        case ScheduleMode::Dynamic:
            plan = solve_plan(cfg_.cost);
            plan.recompute_enabled = cfg_.recompute_enabled;
            break;
        case ScheduleMode::AllDevice:
            plan.p1 = plan.p2 = n;
            break;
        case ScheduleMode::StaticSplit:
            plan.alpha = cfg_.static_fraction;
            plan.beta = 0.05;
            plan.p1 = 0;
            plan.p2 = n;
            plan.recompute_enabled = false;
            if (n == 0) {
                plan.p1 = plan.p2 = 0;
            }
            break;
        }
        return plan;
    }

    std::vector<std::int64_t> make_prompt() const {
        SeededRng rng(cfg_.seed ^ 0x9e3779b97f4a7c15ull);
        std::vector<std::int64_t> prompt(cfg_.prompt_len);
        for (auto& t : prompt) {
            t = static_cast<std::int64_t>(rng.integer(cfg_.shape.vocab));
        }
        return prompt;
    }

    Matrix embed(const std::vector<std::int64_t>& tokens) const {
        const std::size_t h = cfg_.shape.hidden();
        Matrix x(tokens.size(), h);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            require(tokens[t] >= 0 &&
                        tokens[t] < static_cast<std::int64_t>(cfg_.shape.vocab),
                    "embed: token id out of range");
            const Vector pe = positional_term(t, h);
            for (std::size_t d = 0; d < h; ++d) {
                x.at(t, d) = model_.embedding.at(static_cast<std::size_t>(tokens[t]), d) +
                             pe[d];
            }
        }
        return x;
    }

    Vector embed_one(std::int64_t token, std::size_t pos) const {
        const std::size_t h = cfg_.shape.hidden();
        require(token >= 0 && token < static_cast<std::int64_t>(cfg_.shape.vocab),
                "embed: token id out of range");
        Vector x(h);
        const Vector pe = positional_term(pos, h);
        for (std::size_t d = 0; d < h; ++d) {
            x[d] = model_.embedding.at(static_cast<std::size_t>(token), d) + pe[d];
        }
        return x;
    }

    // Dense causal block used by prefill and the full-forward path. When
    // aw_out / normed_out are set, per-head attention maps and the post-LN1
    // rows are captured for cache seeding.
    Matrix layer_forward_dense(const Matrix& x, const LayerWeights& lw,
                               std::vector<Matrix>* aw_out, Matrix* normed_out) const {
        const std::size_t h = cfg_.shape.hidden();
        const std::size_t heads = cfg_.shape.heads;
        const std::size_t d = cfg_.shape.head_dim;

        Matrix xn(x.rows, h);
        for (std::size_t t = 0; t < x.rows; ++t) {
            Vector row = layer_norm(x.row(t), lw.ln1_gain, lw.ln1_bias);
            std::copy(row.begin(), row.end(), xn.row(t).begin());
        }
        if (normed_out != nullptr) {
            *normed_out = xn;
        }
        const Matrix q = matmul(xn, lw.wq);
        const Matrix k = matmul(xn, lw.wk);
        const Matrix v = matmul(xn, lw.wv);

        Matrix attn_concat(x.rows, h);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            Matrix qh(x.rows, d);
            Matrix kh(x.rows, d);
            Matrix vh(x.rows, d);
            for (std::size_t t = 0; t < x.rows; ++t) {
                for (std::size_t c = 0; c < d; ++c) {
                    qh.at(t, c) = q.at(t, hd * d + c);
                    kh.at(t, c) = k.at(t, hd * d + c);
                    vh.at(t, c) = v.at(t, hd * d + c);
                }
            }
            auto [attn, aw] = dense_attention(qh, kh, vh, true);
            for (std::size_t t = 0; t < x.rows; ++t) {
                for (std::size_t c = 0; c < d; ++c) {
                    attn_concat.at(t, hd * d + c) = attn.at(t, c);
                }
            }
            if (aw_out != nullptr) {
                aw_out->push_back(std::move(aw));
            }
        }

        Matrix out = x;
        const Matrix proj = matmul(attn_concat, lw.wo);
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] += proj.data[i];
        }

        for (std::size_t t = 0; t < out.rows; ++t) {
            Vector xf = layer_norm(out.row(t), lw.ln2_gain, lw.ln2_bias);
            Matrix xfm(1, h);
            std::copy(xf.begin(), xf.end(), xfm.row(0).begin());
            Matrix h1 = matmul(xfm, lw.ffn_in);
            for (double& val : h1.data) {
                val = gelu(val);
            }
            const Matrix h2 = matmul(h1, lw.ffn_out);
            for (std::size_t c = 0; c < h; ++c) {
                out.at(t, c) += h2.at(0, c);
            }
        }
        return out;
    }

    Vector project_logits(const Vector& final_row) const {
        Matrix rowm(1, final_row.size());
        std::copy(final_row.begin(), final_row.end(), rowm.row(0).begin());
        const Matrix logits = matmul(rowm, model_.output_proj);
        Vector out(logits.row(0).begin(), logits.row(0).end());
        for (const double v : out) {
            require(std::isfinite(v), "logits: non-finite value");
        }
        return out;
    }

    static std::int64_t argmax_token(const Vector& logits) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > logits[best]) {
                best = i;
            }
        }
        return static_cast<std::int64_t>(best);
    }

    // Split a 1 x hidden row into per-head rows, with optional fake-quant
    // storage precision applied per head_dim channel group.
    Matrix head_rows(const Vector& row, bool apply_quant) const {
        const std::size_t heads = cfg_.shape.heads;
        const std::size_t d = cfg_.shape.head_dim;
        Vector stored = row;
        if (apply_quant && cfg_.quant.enabled) {
            stored = quantize_roundtrip(row, cfg_.quant.bits, d);
        }
        Matrix out(heads, d);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            for (std::size_t c = 0; c < d; ++c) {
                out.at(hd, c) = stored[hd * d + c];
            }
        }
        return out;
    }

    Vector prefill(const std::vector<std::int64_t>& prompt, RunMetrics& metrics) {
        require(!prompt.empty(), "prefill: empty prompt");
        const std::size_t s = prompt.size();
        clock_.begin_step(0);

        Matrix x = embed(prompt);
        for (std::size_t l = 0; l < cfg_.shape.layers; ++l) {
            std::vector<Matrix> aw_heads;
            Matrix normed;
            x = layer_forward_dense(x, model_.layers[l], &aw_heads, &normed);

            // Cache every prompt token's KV and seed the accumulator with
            // the final attention row.
            const Matrix k = matmul(normed, model_.layers[l].wk);
            const Matrix v = matmul(normed, model_.layers[l].wv);
            AttentionState& state = layer_states_[l];
            for (std::size_t t = 0; t < s; ++t) {
                Vector krow(k.row(t).begin(), k.row(t).end());
                Vector vrow(v.row(t).begin(), v.row(t).end());
                state.append_token(head_rows(krow, true), head_rows(vrow, true));
                layer_inputs_[l].append_row(normed.row(t));
                ledger_.store_new(l, t, layer_kv_bytes(cfg_.cost));
            }
            for (std::size_t hd = 0; hd < cfg_.shape.heads; ++hd) {
                const Matrix& aw = aw_heads[hd];
                Vector seed_row(aw.row(s - 1).begin(), aw.row(s - 1).end());
                state.attention_accum[hd] = seed_row;
            }
            double sp = 0.0;
            for (const Matrix& aw : aw_heads) {
                sp += attention_sparsity(aw, 0.01, true);
            }
            metrics.prefill_sparsity_per_layer.push_back(
                sp / static_cast<double>(cfg_.shape.heads));
        }

        clock_.charge_compute(compute_time(cfg_.cost, s * (s + 1) / 2));
        metrics.prefill_seconds = clock_.compute_seconds();
        clock_.end_step(ledger_.device_bytes(), ledger_.host_bytes());
        metrics.peak_device_bytes =
            std::max(metrics.peak_device_bytes, ledger_.device_bytes());

        Vector last = layer_norm(x.row(s - 1), model_.final_ln_gain, model_.final_ln_bias);
        return project_logits(last);
    }

    SparseSelection variant_selection(const AttentionState& state,
                                      std::size_t n_tot) const {
        SparseSelection sel;
        switch (cfg_.sparsity.variant) {
        case AttentionVariant::Dense: {
            Vector imp = state.head_summed_accum();
            sel = swa_select(imp, n_tot, 1.0);
            break;
        }
        case AttentionVariant::Swa: {
            Vector imp = state.head_summed_accum();
            sel = swa_select(imp, n_tot, cfg_.sparsity.ratio);
            break;
        }
        case AttentionVariant::Local: {
            const std::size_t w = swa_keep_count(n_tot, cfg_.sparsity.ratio);
            sel.local_indices = local_attention_mask(n_tot, w);
            sel.k = sel.local_indices.size();
            break;
        }
        case AttentionVariant::Strided: {
            std::size_t stride = cfg_.sparsity.stride;
            if (stride == 0) {
                const std::size_t budget = swa_keep_count(n_tot, cfg_.sparsity.ratio);
                stride = std::max<std::size_t>(1, (n_tot + budget - 1) / budget);
            }
            IndexList mask = strided_attention_mask(n_tot, stride);
            sel.local_indices.push_back(n_tot - 1);
            for (const std::size_t t : mask) {
                if (t != n_tot - 1) {
                    sel.global_indices.push_back(t);
                }
            }
            sel.k = 1;
            break;
        }
        }
        return sel;
    }

    Vector decode_step(std::size_t j, std::int64_t token, RunMetrics& metrics) {
        const std::size_t pos = cfg_.prompt_len + j;
        require(pos < cfg_.prompt_len + cfg_.gen_len, "decode_step: context overflow");
        const std::size_t h = cfg_.shape.hidden();
        const std::uint64_t lb = layer_kv_bytes(cfg_.cost);

        clock_.begin_step(j + 1);
        StepMetrics sm;
        sm.step = j;
        sm.token_id = token;
        sm.phase = phase_of_step(plan_, j);

        const double compute_before = clock_.compute_seconds();
        const double transfer_before = clock_.transfer_seconds();
        const double recompute_before = clock_.recompute_seconds();
        const double d2h_before = step_d2h_;
        const double h2d_before = step_h2d_;

        Vector x = embed_one(token, pos);
        std::size_t kept = 0;

        for (std::size_t l = 0; l < cfg_.shape.layers; ++l) {
            const LayerWeights& lw = model_.layers[l];
            AttentionState& state = layer_states_[l];
            const std::size_t n_tot = state.tokens() + 1;

            const Vector xn = layer_norm(x, lw.ln1_gain, lw.ln1_bias);
            Matrix xnm(1, h);
            std::copy(xn.begin(), xn.end(), xnm.row(0).begin());
            const Matrix qrow = matmul(xnm, lw.wq);
            const Matrix krow = matmul(xnm, lw.wk);
            const Matrix vrow = matmul(xnm, lw.wv);

            SparseSelection sel = variant_selection(state, n_tot);
            kept = std::max(kept, sel.all().size());

            const StepActions actions =
                step_actions(plan_, j, sel, ledger_, l, cfg_.cost);
            apply_actions(l, actions, sm);

            // Store the new token's KV, then attend over the selection.
            Vector kvec(krow.row(0).begin(), krow.row(0).end());
            Vector vvec(vrow.row(0).begin(), vrow.row(0).end());
            state.append_token(head_rows(kvec, true), head_rows(vvec, true));
            layer_inputs_[l].append_row(xn);
            ledger_.store_new(l, pos, lb);

            Matrix qheads(cfg_.shape.heads, cfg_.shape.head_dim);
            for (std::size_t hd = 0; hd < cfg_.shape.heads; ++hd) {
                for (std::size_t c = 0; c < cfg_.shape.head_dim; ++c) {
                    qheads.at(hd, c) = qrow.at(0, hd * cfg_.shape.head_dim + c);
                }
            }
            const IndexList gather = sel.all();
            for (const std::size_t t : gather) {
                require(ledger_.tier(l, t) == Tier::Device,
                        "decode_step: gathered token not device-resident");
            }
            const StepAttentionResult res = attend_over_indices(state, qheads, gather);

            Matrix aw_row(1, res.new_aw_row.size());
            std::copy(res.new_aw_row.begin(), res.new_aw_row.end(), aw_row.row(0).begin());
            sm.sparsity_per_layer.push_back(attention_sparsity(aw_row, 0.01, false));

            Matrix concat(1, h);
            for (std::size_t hd = 0; hd < cfg_.shape.heads; ++hd) {
                for (std::size_t c = 0; c < cfg_.shape.head_dim; ++c) {
                    concat.at(0, hd * cfg_.shape.head_dim + c) = res.attn.at(hd, c);
                }
            }
            const Matrix proj = matmul(concat, lw.wo);
            for (std::size_t d = 0; d < h; ++d) {
                x[d] += proj.at(0, d);
            }

            const Vector xf = layer_norm(x, lw.ln2_gain, lw.ln2_bias);
            Matrix xfm(1, h);
            std::copy(xf.begin(), xf.end(), xfm.row(0).begin());
            Matrix h1 = matmul(xfm, lw.ffn_in);
            for (double& val : h1.data) {
                val = gelu(val);
            }
            const Matrix h2 = matmul(h1, lw.ffn_out);
            for (std::size_t d = 0; d < h; ++d) {
                x[d] += h2.at(0, d);
            }
        }

        clock_.charge_compute(compute_time(cfg_.cost, kept));
        sm.kept_tokens = kept;
        sm.compute_seconds = clock_.compute_seconds() - compute_before;
        sm.transfer_seconds = clock_.transfer_seconds() - transfer_before;
        sm.recompute_seconds = clock_.recompute_seconds() - recompute_before;
        sm.d2h_tokens = step_d2h_ - d2h_before;
        sm.h2d_tokens = step_h2d_ - h2d_before;
        sm.device_bytes = ledger_.device_bytes();
        sm.host_bytes = ledger_.host_bytes();
        if (!sm.sparsity_per_layer.empty()) {
            double total = 0.0;
            for (const double v : sm.sparsity_per_layer) {
                total += v;
            }
            sm.sparsity_mean = total / static_cast<double>(sm.sparsity_per_layer.size());
        }
        clock_.end_step(ledger_.device_bytes(), ledger_.host_bytes());
        metrics.peak_device_bytes =
            std::max(metrics.peak_device_bytes, ledger_.device_bytes());
        metrics.peak_host_bytes =
            std::max(metrics.peak_host_bytes, ledger_.host_bytes());
        metrics.steps.push_back(std::move(sm));

        const Vector last = layer_norm(x, model_.final_ln_gain, model_.final_ln_bias);
        return project_logits(last);
    }

    void apply_actions(std::size_t layer, const StepActions& actions, StepMetrics& sm) {
        const double layers_d = static_cast<double>(cfg_.shape.layers);
        if (!actions.offload.empty()) {
            const std::uint64_t bytes = ledger_.offload(layer, actions.offload);
            const double tokens = static_cast<double>(actions.offload.size()) / layers_d;
            clock_.charge_transfer(bytes, tokens, 0.0, cfg_.cost.bandwidth);
            step_d2h_ += tokens;
        }
        if (!actions.delete_tokens.empty()) {
            ledger_.erase(layer, actions.delete_tokens);
            sm.deleted += actions.delete_tokens.size();
        }
        if (!actions.reload.empty()) {
            const std::uint64_t bytes = ledger_.reload(layer, actions.reload);
            const double tokens = static_cast<double>(actions.reload.size()) / layers_d;
            clock_.charge_transfer(bytes, 0.0, tokens, cfg_.cost.bandwidth);
            step_h2d_ += tokens;
        }
        for (const std::size_t t : actions.recompute) {
            // Re-derive this token's KV from its retained layer input; the
            // projection path is identical, so the values are bit-identical.
            recompute_kv(layer, t);
            ledger_.restore(layer, t, layer_kv_bytes(cfg_.cost));
        }
        if (!actions.recompute.empty()) {
            const double per_layer =
                recompute_time(cfg_.cost, actions.recompute.size()) / layers_d;
            clock_.charge_recompute(per_layer);
            sm.recomputed += actions.recompute.size();
        }
    }

    void recompute_kv(std::size_t layer, std::size_t token) {
        const LayerWeights& lw = model_.layers[layer];
        const std::size_t h = cfg_.shape.hidden();
        Matrix xnm(1, h);
        const auto stored = layer_inputs_[layer].row(token);
        std::copy(stored.begin(), stored.end(), xnm.row(0).begin());
        const Matrix krow = matmul(xnm, lw.wk);
        const Matrix vrow = matmul(xnm, lw.wv);
        Vector kvec(krow.row(0).begin(), krow.row(0).end());
        Vector vvec(vrow.row(0).begin(), vrow.row(0).end());
        const Matrix kh = head_rows(kvec, true);
        const Matrix vh = head_rows(vvec, true);
        AttentionState& state = layer_states_[layer];
        for (std::size_t hd = 0; hd < cfg_.shape.heads; ++hd) {
            for (std::size_t c = 0; c < cfg_.shape.head_dim; ++c) {
                state.keys[hd].at(token, c) = kh.at(hd, c);
                state.values[hd].at(token, c) = vh.at(hd, c);
            }
        }
    }

    EngineConfig cfg_;
    ToyModel model_;
    std::vector<AttentionState> layer_states_;
    std::vector<Matrix> layer_inputs_; // post-LN1 rows per layer, for recompute
    KvLedger ledger_;
    TransferLedger clock_;
    SchedulePlan plan_;
    double step_d2h_ = 0.0;
    double step_h2d_ = 0.0;
};

// Convenience wrapper mirroring the run_inference operation.
inline RunMetrics run_inference(const EngineConfig& cfg, const RunOptions& opts = {}) {
    Engine engine(cfg);
    return engine.run(opts);
}

} // namespace skv
