// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "skv/common.hpp"
#include "skv/config.hpp"
#include "skv/engine.hpp"

namespace skv {

struct VariantResult {
    std::string name;
    double rho = 0.0; // Spearman of mean output distribution vs dense
    RunMetrics metrics;
};

struct AnalyzeReport {
    RunMetrics dense;
    std::vector<VariantResult> variants;
};

// Paired attention-quality analysis: one dense reference run, then each
// sparse variant replaying the dense token sequence (teacher forcing) on
// the same seed, so per-step distributions stay aligned. rho compares the
// run-averaged output logit distribution over the vocabulary. Scheduling
// is disabled (unbounded device) so only attention quality differs.
inline AnalyzeReport analyze_run(const RunConfig& base) {
    RunConfig cfg = base;
    cfg.mode = ScheduleMode::AllDevice;
    cfg.device_capacity = ~0ull;
    cfg.quant.enabled = false;
    cfg.eos_id = -1;

    require(cfg.gen_len >= 2, "analyze: needs at least two decode steps");

    AnalyzeReport report;
    RunOptions dense_opts;
    dense_opts.record_mean_logits = true;
    {
        RunConfig dense_cfg = cfg;
        dense_cfg.sparsity.variant = AttentionVariant::Dense;
        dense_cfg.sparsity.ratio = 1.0;
        report.dense = run_inference(dense_cfg.engine_config(), dense_opts);
    }

    RunOptions forced;
    forced.record_mean_logits = true;
    forced.forced_tokens = report.dense.generated_ids;

    const AttentionVariant variants[] = {AttentionVariant::Swa, AttentionVariant::Local,
                                         AttentionVariant::Strided};
    const char* names[] = {"swa", "local", "strided"};
    for (std::size_t i = 0; i < 3; ++i) {
        RunConfig vcfg = cfg;
        vcfg.sparsity.variant = variants[i];
        VariantResult res;
        res.name = names[i];
        res.metrics = run_inference(vcfg.engine_config(), forced);
        res.rho = score_distribution_correlation(report.dense.mean_logits,
                                                 res.metrics.mean_logits);
        report.variants.push_back(std::move(res));
    }
    return report;
}

} // namespace skv
