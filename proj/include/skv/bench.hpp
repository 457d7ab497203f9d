// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <vector>

#include "skv/common.hpp"
#include "skv/config.hpp"
#include "skv/engine.hpp"

namespace skv {

struct BenchPoint {
    std::string label;
    double mac_count = 0.0;
    double measured_seconds = 0.0;
};

struct BenchReport {
    double fitted_mac_rate = 0.0;
    double default_mac_rate = 0.0;
    bool degenerate = false;
    std::vector<BenchPoint> points;
    std::vector<double> abs_residuals;
    double max_residual = 0.0;
};

// Attention MACs actually executed by a run (prefill triangle plus the
// per-step kept tokens), matching the compute_time model.
inline double attention_mac_count(const CostParams& p, const RunMetrics& m) {
    const double base = 2.0 * static_cast<double>(p.batch) *
                        static_cast<double>(p.layers) * static_cast<double>(p.hidden);
    double macs = base * static_cast<double>(p.input_len * (p.input_len + 1) / 2);
    for (const StepMetrics& s : m.steps) {
        macs += base * static_cast<double>(s.kept_tokens);
    }
    return macs;
}

// Least-squares fit of mac_rate from (macs, seconds) samples: t ~= M/rate,
// minimized over x = 1/rate.
inline BenchReport fit_mac_rate(const std::vector<BenchPoint>& points,
                                double default_rate) {
    BenchReport rep;
    rep.points = points;
    rep.default_mac_rate = default_rate;
    double sxx = 0.0;
    double sxt = 0.0;
    for (const BenchPoint& pt : points) {
        sxx += pt.mac_count * pt.mac_count;
        sxt += pt.mac_count * pt.measured_seconds;
    }
    if (points.empty() || sxx <= 0.0 || sxt <= 0.0) {
        rep.degenerate = true;
        rep.fitted_mac_rate = default_rate;
    } else {
        const double x = sxt / sxx; // seconds per MAC
        rep.fitted_mac_rate = 1.0 / x;
        for (const BenchPoint& pt : points) {
            rep.abs_residuals.push_back(
                std::abs(pt.measured_seconds - pt.mac_count * x));
            rep.max_residual = std::max(rep.max_residual, rep.abs_residuals.back());
        }
    }
    return rep;
}

using RunTimer = std::function<double(const EngineConfig&, const RunMetrics&)>;

inline RunTimer wall_clock_timer() {
    return [](const EngineConfig& cfg, const RunMetrics&) {
        const auto t0 = std::chrono::steady_clock::now();
        Engine engine(cfg);
        (void)engine.run();
        const auto t1 = std::chrono::steady_clock::now();
        return std::chrono::duration<double>(t1 - t0).count();
    };
}

// Profile the toy engine at a few shapes and fit mac_rate. The timer is
// injectable so the fit can be validated against a synthetic clock.
inline BenchReport bench_mac_rate(const RunConfig& base, const RunTimer& timer) {
    std::vector<BenchPoint> points;
    const std::size_t head_dims[] = {base.shape.head_dim, base.shape.head_dim * 2};
    const std::size_t gen_lens[] = {base.gen_len, base.gen_len * 2};
    for (const std::size_t hd : head_dims) {
        for (const std::size_t gl : gen_lens) {
            RunConfig cfg = base;
            cfg.shape.head_dim = hd;
            cfg.gen_len = std::max<std::size_t>(gl, 2);
            cfg.mode = ScheduleMode::AllDevice;
            cfg.device_capacity = ~0ull;
            cfg.sparsity.variant = AttentionVariant::Dense;
            cfg.sparsity.ratio = 1.0;
            const EngineConfig ec = cfg.engine_config();
            RunMetrics warm = run_inference(ec); // dry pass for the MAC count
            BenchPoint pt;
            pt.label = "head_dim=" + std::to_string(hd) +
                       ",gen=" + std::to_string(cfg.gen_len);
            pt.mac_count = attention_mac_count(ec.cost, warm);
            pt.measured_seconds = timer(ec, warm);
            points.push_back(pt);
        }
    }
    return fit_mac_rate(points, base.mac_rate);
}

} // namespace skv
