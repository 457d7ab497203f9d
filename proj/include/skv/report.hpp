// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <string>

#include <json.hpp>

#include "skv/config.hpp"
#include "skv/engine.hpp"
#include "skv/scheduler.hpp"

namespace skv {

inline constexpr const char* kStepsCsvSchema = "skvsim.steps.v1";
inline constexpr const char* kSweepCsvSchema = "skvsim.sweep.v1";
inline constexpr const char* kSparsityCsvSchema = "skvsim.sparsity.v1";
inline constexpr const char* kMetricsJsonSchema = "skvsim.metrics.v1";
inline constexpr const char* kPlanJsonSchema = "skvsim.plan.v1";
inline constexpr const char* kAnalyzeJsonSchema = "skvsim.analyze.v1";
inline constexpr const char* kBenchJsonSchema = "skvsim.bench.v1";

// Locale-independent shortest-roundtrip double formatting for CSV cells.
inline std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["model"] = {{"layers", cfg.shape.layers},
                  {"heads", cfg.shape.heads},
                  {"head_dim", cfg.shape.head_dim},
                  {"vocab", cfg.shape.vocab},
                  {"ffn_mult", cfg.shape.ffn_mult},
                  {"skewed_init", cfg.skewed_init}};
    j["workload"] = {{"batch", cfg.batch},
                     {"prompt_tokens", cfg.prompt_len},
                     {"generate_tokens", cfg.gen_len},
                     {"seed", cfg.seed},
                     {"eos_id", cfg.eos_id}};
    const char* variant = "dense";
    switch (cfg.sparsity.variant) {
    case AttentionVariant::Dense: variant = "dense"; break;
    case AttentionVariant::Swa: variant = "swa"; break;
    case AttentionVariant::Local: variant = "local"; break;
    case AttentionVariant::Strided: variant = "strided"; break;
    }
    j["sparsity"] = {{"variant", variant},
                     {"ratio", cfg.sparsity.ratio},
                     {"stride", cfg.sparsity.stride}};
    const char* mode = "dynamic";
    switch (cfg.mode) {
    case ScheduleMode::Dynamic: mode = "dynamic"; break;
    case ScheduleMode::AllDevice: mode = "all_device"; break;
    case ScheduleMode::StaticSplit: mode = "static_split"; break;
    }
    j["schedule"] = {{"mode", mode},
                     {"device_capacity_bytes", cfg.device_capacity},
                     {"bandwidth_bytes_per_sec", cfg.bandwidth},
                     {"mac_rate", cfg.mac_rate},
                     {"recompute_overhead", cfg.recompute_overhead},
                     {"static_fraction", cfg.static_fraction},
                     {"recompute_enabled", cfg.recompute_enabled}};
    j["quant"] = {{"enabled", cfg.quant.enabled}, {"bits", cfg.quant.bits}};
    return j;
}

inline nlohmann::json plan_to_json(const SchedulePlan& plan) {
    nlohmann::json j;
    j["alpha"] = plan.alpha;
    j["beta"] = plan.beta;
    j["p1"] = plan.p1;
    j["p2"] = plan.p2;
    j["pure_device"] = plan.pure_device();
    j["recompute_enabled"] = plan.recompute_enabled;
    j["predicted_total_seconds"] = plan.predicted_total_seconds;
    j["prefill_compute_seconds"] = plan.prefill_compute_seconds;
    nlohmann::json phases = nlohmann::json::array();
    for (std::size_t i = 0; i < plan.phases.size(); ++i) {
        const PhasePrediction& ph = plan.phases[i];
        phases.push_back({{"phase", i + 1},
                          {"steps", ph.steps},
                          {"compute_seconds", ph.compute_seconds},
                          {"transfer_seconds", ph.transfer_seconds},
                          {"recompute_seconds", ph.recompute_seconds}});
    }
    j["phases"] = phases;
    return j;
}

inline nlohmann::json metrics_to_json(const RunMetrics& m, const RunConfig& cfg) {
    nlohmann::json j;
    j["schema"] = kMetricsJsonSchema;
    j["config"] = config_to_json(cfg);
    j["plan"] = plan_to_json(m.plan);
    j["totals"] = {{"prompt_tokens", m.prompt_tokens},
                   {"sequence_tokens", m.sequence_tokens},
                   {"generated_tokens", m.generated_tokens},
                   {"hit_eos", m.hit_eos},
                   {"total_seconds", m.total_seconds},
                   {"prefill_seconds", m.prefill_seconds},
                   {"compute_seconds", m.compute_seconds},
                   {"transfer_seconds", m.transfer_seconds},
                   {"recompute_seconds", m.recompute_seconds},
                   {"throughput_tokens_per_second", m.throughput_tokens_per_second},
                   {"seconds_per_token", m.seconds_per_token},
                   {"peak_device_bytes", m.peak_device_bytes},
                   {"peak_host_bytes", m.peak_host_bytes},
                   {"transferred_bytes", m.transferred_bytes}};
    j["prefill_sparsity_per_layer"] = m.prefill_sparsity_per_layer;
    j["prompt_ids"] = m.prompt_ids;
    j["generated_ids"] = m.generated_ids;
    nlohmann::json steps = nlohmann::json::array();
    for (const StepMetrics& s : m.steps) {
        steps.push_back({{"step", s.step},
                         {"phase", s.phase},
                         {"token_id", s.token_id},
                         {"compute_seconds", s.compute_seconds},
                         {"transfer_seconds", s.transfer_seconds},
                         {"recompute_seconds", s.recompute_seconds},
                         {"device_bytes", s.device_bytes},
                         {"host_bytes", s.host_bytes},
                         {"kept_tokens", s.kept_tokens},
                         {"d2h_tokens", s.d2h_tokens},
                         {"h2d_tokens", s.h2d_tokens},
                         {"recomputed", s.recomputed},
                         {"deleted", s.deleted},
                         {"sparsity_mean", s.sparsity_mean},
                         {"sparsity_per_layer", s.sparsity_per_layer}});
    }
    j["steps"] = steps;
    return j;
}

inline std::string steps_csv(const RunMetrics& m) {
    std::string out;
    out += kStepsCsvSchema;
    out += ",step,phase,compute_s,transfer_s,recompute_s,device_bytes,host_bytes,"
           "kept_tokens,d2h_tokens,h2d_tokens,recomputed,deleted,sparsity\n";
    for (const StepMetrics& s : m.steps) {
        out += "row," + std::to_string(s.step) + "," + std::to_string(s.phase) + "," +
               fmt_double(s.compute_seconds) + "," + fmt_double(s.transfer_seconds) +
               "," + fmt_double(s.recompute_seconds) + "," +
               std::to_string(s.device_bytes) + "," + std::to_string(s.host_bytes) +
               "," + std::to_string(s.kept_tokens) + "," + fmt_double(s.d2h_tokens) +
               "," + fmt_double(s.h2d_tokens) + "," + std::to_string(s.recomputed) +
               "," + std::to_string(s.deleted) + "," + fmt_double(s.sparsity_mean) +
               "\n";
    }
    return out;
}

} // namespace skv
