// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "skv/analyze.hpp"
#include "skv/bench.hpp"
#include "skv/config.hpp"
#include "skv/engine.hpp"
#include "skv/report.hpp"
#include "skv/scheduler.hpp"

namespace skv::cli {

enum ExitCode : int {
    kOk = 0,
    kError = 1,
    kConfigError = 2,
    kInfeasible = 3,
    kSimulatedOom = 4,
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << content;
}

inline nlohmann::json replay_to_json(const ReplayResult& r) {
    return {{"total_seconds", r.total_seconds},
            {"compute_seconds", r.compute_seconds},
            {"transfer_seconds", r.transfer_seconds},
            {"recompute_seconds", r.recompute_seconds},
            {"peak_device_bytes", r.peak_device_bytes},
            {"transferred_bytes", r.transferred_bytes},
            {"oom", r.oom}};
}

inline std::vector<double> axis_values(const RunConfig& cfg, const std::string& axis) {
    auto it = cfg.sweep_axes.find(axis);
    if (it != cfg.sweep_axes.end()) {
        return it->second;
    }
    if (axis == "batch") {
        return {1, 2, 4, 8, 16};
    }
    if (axis == "ratio") {
        return {0.2, 0.4, 0.6, 0.8, 1.0};
    }
    if (axis == "bandwidth") {
        return {1e6, 1e7, 1e8, 1e9};
    }
    // capacity: fractions of the full KV footprint.
    const CostParams p = cfg.cost_params();
    const double full = static_cast<double>(token_kv_bytes(p)) *
                        static_cast<double>(p.input_len + p.output_len);
    return {0.25 * full, 0.5 * full, 0.75 * full, 1.5 * full};
}

inline RunConfig apply_axis(const RunConfig& base, const std::string& axis, double value) {
    RunConfig cfg = base;
    if (axis == "batch") {
        cfg.batch = static_cast<std::size_t>(value);
        if (cfg.batch == 0) {
            throw ConfigError("sweep.batch: values must be >= 1");
        }
    } else if (axis == "ratio") {
        if (value <= 0.0 || value > 1.0) {
            throw ConfigError("sweep.ratio: values must be in (0,1]");
        }
        cfg.sparsity.ratio = value;
    } else if (axis == "bandwidth") {
        if (value <= 0.0) {
            throw ConfigError("sweep.bandwidth: values must be positive");
        }
        cfg.bandwidth = value;
    } else if (axis == "capacity") {
        if (value < 0.0) {
            throw ConfigError("sweep.capacity: values must be nonnegative");
        }
        cfg.device_capacity = static_cast<std::uint64_t>(value);
    } else {
        throw ConfigError("unknown sweep axis: " + axis);
    }
    return cfg;
}

struct SweepRow {
    double value = 0.0;
    std::string status = "ok";
    RunMetrics metrics;
};

inline std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
    std::string out;
    out += kSweepCsvSchema;
    out += ",axis,value,status,throughput,total_s,compute_s,transfer_s,recompute_s,"
           "peak_device_bytes,transferred_bytes,sequence_tokens\n";
    for (const SweepRow& r : rows) {
        out += "row," + axis + "," + fmt_double(r.value) + "," + r.status + ",";
        if (r.status == "ok") {
            out += fmt_double(r.metrics.throughput_tokens_per_second) + "," +
                   fmt_double(r.metrics.total_seconds) + "," +
                   fmt_double(r.metrics.compute_seconds) + "," +
                   fmt_double(r.metrics.transfer_seconds) + "," +
                   fmt_double(r.metrics.recompute_seconds) + "," +
                   std::to_string(r.metrics.peak_device_bytes) + "," +
                   std::to_string(r.metrics.transferred_bytes) + "," +
                   std::to_string(r.metrics.sequence_tokens);
        } else {
            out += "0,0,0,0,0,0,0,0";
        }
        out += "\n";
    }
    return out;
}

} // namespace detail

inline int cmd_run(const RunConfig& cfg, const std::filesystem::path& out_dir,
                   std::ostream& out) {
    const RunMetrics metrics = run_inference(cfg.engine_config());
    detail::write_file(out_dir / "metrics.json", metrics_to_json(metrics, cfg).dump(2) + "\n");
    detail::write_file(out_dir / "steps.csv", steps_csv(metrics));
    out << "run ok: steps=" << metrics.sequence_tokens
        << " throughput=" << fmt_double(metrics.throughput_tokens_per_second)
        << " total_seconds=" << fmt_double(metrics.total_seconds) << "\n";
    return kOk;
}

inline int cmd_plan(const RunConfig& cfg, const std::filesystem::path& out_dir,
                    std::ostream& out) {
    const CostParams p = cfg.cost_params();
    const SchedulePlan plan = solve_plan(p);
    nlohmann::json j;
    j["schema"] = kPlanJsonSchema;
    j["config"] = config_to_json(cfg);
    j["plan"] = plan_to_json(plan);

    nlohmann::json baselines;
    baselines["dynamic_replay"] = detail::replay_to_json(replay_plan(plan, p));
    baselines["all_device"] = detail::replay_to_json(replay_all_device(p));
    baselines["all_host"] = detail::replay_to_json(replay_all_host(p));
    if (!plan.pure_device()) {
        ReplayResult best_static;
        bool have = false;
        for (int i = 1; i <= 19; ++i) {
            const ReplayResult r = replay_static_split(0.05 * i, p);
            if (!r.oom && (!have || r.total_seconds < best_static.total_seconds)) {
                best_static = r;
                have = true;
            }
        }
        if (have) {
            baselines["static_split_best"] = detail::replay_to_json(best_static);
        }
    }
    j["baselines"] = baselines;

    const std::string text = j.dump(2) + "\n";
    detail::write_file(out_dir / "plan.json", text);
    out << text;
    return kOk;
}

inline int cmd_sweep(const RunConfig& cfg, const std::string& axis,
                     const std::filesystem::path& out_dir, std::size_t jobs,
                     std::ostream& out) {
    const std::vector<double> values = detail::axis_values(cfg, axis);
    std::vector<detail::SweepRow> rows(values.size());
    std::atomic<std::size_t> next{0};
    jobs = std::max<std::size_t>(1, std::min(jobs, values.size()));

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= values.size()) {
                return;
            }
            detail::SweepRow& row = rows[i];
            row.value = values[i];
            try {
                const RunConfig pt = detail::apply_axis(cfg, axis, values[i]);
                row.metrics = run_inference(pt.engine_config());
            } catch (const OutOfDeviceMemory&) {
                row.status = "failed:OutOfDeviceMemory";
            } catch (const InfeasiblePlan&) {
                row.status = "failed:InfeasiblePlan";
            } catch (const std::exception& e) {
                row.status = std::string("failed:") + e.what();
                for (char& c : row.status) {
                    if (c == ',' || c == '\n') {
                        c = ';';
                    }
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
        pool.emplace_back(worker);
    }
    for (auto& th : pool) {
        th.join();
    }

    const std::string csv = detail::sweep_csv(axis, rows);
    detail::write_file(out_dir / ("sweep_" + axis + ".csv"), csv);
    std::size_t ok = 0;
    for (const auto& r : rows) {
        ok += r.status == "ok" ? 1 : 0;
    }
    out << "sweep " << axis << ": " << ok << "/" << rows.size() << " points ok\n";
    return kOk;
}

inline int cmd_analyze(const RunConfig& cfg, const std::filesystem::path& out_dir,
                       std::ostream& out) {
    const AnalyzeReport report = analyze_run(cfg);
    nlohmann::json j;
    j["schema"] = kAnalyzeJsonSchema;
    j["config"] = config_to_json(cfg);
    j["dense"] = {{"prefill_sparsity_per_layer", report.dense.prefill_sparsity_per_layer}};
    nlohmann::json variants = nlohmann::json::array();
    std::string csv;
    csv += kSparsityCsvSchema;
    csv += ",variant,step,layer,sparsity\n";
    auto add_rows = [&csv](const std::string& name, const RunMetrics& m) {
        for (const StepMetrics& s : m.steps) {
            for (std::size_t l = 0; l < s.sparsity_per_layer.size(); ++l) {
                csv += "row," + name + "," + std::to_string(s.step) + "," +
                       std::to_string(l) + "," + fmt_double(s.sparsity_per_layer[l]) +
                       "\n";
            }
        }
    };
    add_rows("dense", report.dense);
    for (const VariantResult& v : report.variants) {
        double mean_sparsity = 0.0;
        for (const StepMetrics& s : v.metrics.steps) {
            mean_sparsity += s.sparsity_mean;
        }
        if (!v.metrics.steps.empty()) {
            mean_sparsity /= static_cast<double>(v.metrics.steps.size());
        }
        variants.push_back({{"name", v.name},
                            {"rho_vs_dense", v.rho},
                            {"mean_step_sparsity", mean_sparsity}});
        add_rows(v.name, v.metrics);
    }
    j["variants"] = variants;

    const std::string text = j.dump(2) + "\n";
    detail::write_file(out_dir / "analyze.json", text);
    detail::write_file(out_dir / "sparsity.csv", csv);
    out << text;
    return kOk;
}

inline int cmd_bench(const RunConfig& cfg, const std::filesystem::path& out_dir,
                     std::ostream& out) {
    const BenchReport rep = bench_mac_rate(cfg, wall_clock_timer());
    nlohmann::json j;
    j["schema"] = kBenchJsonSchema;
    j["config"] = config_to_json(cfg);
    nlohmann::json wall;
    wall["fitted_mac_rate"] = rep.fitted_mac_rate;
    wall["default_mac_rate"] = rep.default_mac_rate;
    wall["degenerate_fit"] = rep.degenerate;
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < rep.points.size(); ++i) {
        pts.push_back({{"label", rep.points[i].label},
                       {"mac_count", rep.points[i].mac_count},
                       {"measured_seconds", rep.points[i].measured_seconds},
                       {"abs_residual",
                        i < rep.abs_residuals.size() ? rep.abs_residuals[i] : 0.0}});
    }
    wall["points"] = pts;
    wall["max_residual"] = rep.max_residual;
    j["wall_clock"] = wall; // timing-derived: exempt from byte determinism
    const std::string text = j.dump(2) + "\n";
    detail::write_file(out_dir / "bench.json", text);
    out << text;
    if (rep.degenerate) {
        out << "warning: degenerate fit, default mac_rate retained\n";
    }
    return kOk;
}

// Full command surface; returns the process exit code. Separated from
// main() so tests can drive it in-process.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out,
                    std::ostream& err) {
    CLI::App app{"token-granular sparse KV cache scheduling simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed_override;
    std::size_t jobs = 1;
    std::string axis = "ratio";

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file")->required();
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed_override, "workload seed override");
    };

    CLI::App* run = app.add_subcommand("run", "run one simulated inference");
    add_common(run);
    CLI::App* plan = app.add_subcommand("plan", "solve and print the schedule plan");
    add_common(plan);
    CLI::App* sweep = app.add_subcommand("sweep", "run a one-axis parameter sweep");
    add_common(sweep);
    sweep->add_option("--axis", axis, "batch|ratio|bandwidth|capacity")->required();
    sweep->add_option("--jobs", jobs, "max concurrent sweep points");
    CLI::App* analyze =
        app.add_subcommand("analyze", "paired sparsity/correlation analysis");
    add_common(analyze);
    CLI::App* bench = app.add_subcommand("bench", "fit mac_rate from wall-clock runs");
    add_common(bench);

    std::vector<const char*> argv;
    argv.push_back("skvsim");
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kOk : kConfigError;
    }

    const auto started = std::chrono::steady_clock::now();
    int code = kOk;
    try {
        RunConfig cfg = load_config_file(config_path);
        if (seed_override) {
            cfg.seed = *seed_override;
        }
        if (axis != "batch" && axis != "ratio" && axis != "bandwidth" &&
            axis != "capacity") {
            throw ConfigError("--axis: expected batch|ratio|bandwidth|capacity");
        }
        if (run->parsed()) {
            code = cmd_run(cfg, out_dir, out);
        } else if (plan->parsed()) {
            code = cmd_plan(cfg, out_dir, out);
        } else if (sweep->parsed()) {
            code = cmd_sweep(cfg, axis, out_dir, jobs, out);
        } else if (analyze->parsed()) {
            code = cmd_analyze(cfg, out_dir, out);
        } else if (bench->parsed()) {
            code = cmd_bench(cfg, out_dir, out);
        }
    } catch (const ConfigError& e) {
        out << nlohmann::json{{"error", {{"class", "ConfigError"}, {"message", e.what()}}}}
                   .dump()
            << "\n";
        code = kConfigError;
    } catch (const InfeasiblePlan& e) {
        out << nlohmann::json{
                   {"error", {{"class", "InfeasiblePlan"}, {"message", e.what()}}}}
                   .dump()
            << "\n";
        code = kInfeasible;
    } catch (const OutOfDeviceMemory& e) {
        out << nlohmann::json{
                   {"error", {{"class", "OutOfDeviceMemory"}, {"message", e.what()}}}}
                   .dump()
            << "\n";
        code = kSimulatedOom;
    } catch (const std::exception& e) {
        out << nlohmann::json{{"error", {{"class", "Error"}, {"message", e.what()}}}}
                   .dump()
            << "\n";
        code = kError;
    }
    const auto finished = std::chrono::steady_clock::now();
    err << "[wall-clock] " << std::chrono::duration<double>(finished - started).count()
        << " s\n";
    return code;
}

} // namespace skv::cli
