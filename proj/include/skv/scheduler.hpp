// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "skv/attention.hpp"
#include "skv/common.hpp"
#include "skv/memsim.hpp"

namespace skv {

struct PhasePrediction {
    double compute_seconds = 0.0;
    double transfer_seconds = 0.0;
    double recompute_seconds = 0.0;
    std::size_t steps = 0;
};

// Offline schedule: offload ratio alpha, recompute ratio beta, and the two
// phase-switch steps. p1 == p2 == n encodes a pure-device (Phase I only)
// plan, in which case alpha/beta are meaningless and set to zero.
struct SchedulePlan {
    double alpha = 0.0;
    double beta = 0.0;
    std::size_t p1 = 0;
    std::size_t p2 = 0;
    bool recompute_enabled = true;
    double predicted_total_seconds = 0.0;
    double prefill_compute_seconds = 0.0;
    std::array<PhasePrediction, 3> phases{};

    bool pure_device() const { return p1 == p2; }
};

inline void validate_plan(const SchedulePlan& plan, std::size_t n) {
    if (plan.pure_device()) {
        require(plan.p1 == n, "plan: degenerate plans must have p1 == p2 == n");
        return;
    }
    require(plan.p1 < plan.p2 && plan.p2 <= n, "plan: requires 0 <= p1 < p2 <= n");
    require(plan.alpha > 0.0 && plan.alpha < 1.0, "plan: alpha out of (0,1)");
    require(plan.beta > 0.0 && plan.beta < 1.0, "plan: beta out of (0,1)");
}

// 1-based phase number for step j.
inline int phase_of_step(const SchedulePlan& plan, std::size_t j) {
    if (j < plan.p1) {
        return 1;
    }
    if (j < plan.p2 || !plan.recompute_enabled) {
        return 2;
    }
    return 3;
}

// First decode step whose end-of-step KV footprint exceeds device capacity;
// offloading must start there. Returns n when everything fits.
inline std::size_t phase1_limit(const CostParams& p) {
    const std::uint64_t tb = token_kv_bytes(p);
    for (std::size_t j = 0; j < p.output_len; ++j) {
        const std::uint64_t need = tb * static_cast<std::uint64_t>(p.input_len + j + 1);
        if (need > p.device_capacity) {
            return j;
        }
    }
    return p.output_len;
}

struct PlanPrediction {
    double total_seconds = 0.0;
    double prefill_compute_seconds = 0.0;
    std::array<PhasePrediction, 3> phases{};
    std::uint64_t peak_device_bytes = 0;
    bool feasible = true;
};

namespace detail {

// Deterministic position-level model shared by planning. Global picks are
// pessimistically the oldest non-window positions (the paper treats global
// tokens as unpredictable, so planning charges the worst-case traffic);
// eviction and deletion are strictly oldest-first, so reloaded picks are
// re-offloaded by the next step's split maintenance (round-trip traffic).
inline PlanPrediction simulate_plan(const SchedulePlan& plan, const CostParams& p) {
    const std::size_t s = p.input_len;
    const std::size_t n = p.output_len;
    const std::uint64_t tb = token_kv_bytes(p);

    PlanPrediction out;
    out.prefill_compute_seconds = compute_time(p, s * (s + 1) / 2);
    out.total_seconds = out.prefill_compute_seconds;

    enum class Slot : std::uint8_t { Device, Host, Deleted };
    std::vector<Slot> pos(s, Slot::Device);
    pos.reserve(s + n);
    std::size_t host_count = 0;
    std::size_t deleted_count = 0;
    std::uint64_t peak = tb * s;
    out.feasible = peak <= p.device_capacity && tb <= p.device_capacity;

    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t existing = s + j;
        const std::size_t n_tot = existing + 1;
        const std::size_t k = swa_window_k(n_tot, p.ratio);
        const std::size_t kept = swa_keep_count(n_tot, p.ratio);
        const int phase = phase_of_step(plan, j);
        PhasePrediction& ph = out.phases[static_cast<std::size_t>(phase - 1)];
        ph.steps += 1;

        if (phase >= 2) {
            const std::size_t nonlocal = n_tot - k; // candidate positions [0, nonlocal)
            // Offload: top the host tier up to the alpha split, oldest first.
            const auto target = static_cast<std::size_t>(
                std::ceil(plan.alpha * static_cast<double>(existing)));
            std::size_t to_offload =
                target > host_count ? target - host_count : 0;
            std::size_t offloaded = 0;
            for (std::size_t i = 0; i < nonlocal && to_offload > 0 && i < pos.size(); ++i) {
                if (pos[i] == Slot::Device) {
                    pos[i] = Slot::Host;
                    --to_offload;
                    ++offloaded;
                }
            }
            host_count += offloaded;
            const double t_off = transfer_time(p, offloaded, 0);
            ph.transfer_seconds += t_off;
            out.total_seconds += t_off;

            // Phase III: delete the oldest beta share of host tokens.
            if (phase == 3 && host_count > 0) {
                auto to_delete = static_cast<std::size_t>(
                    std::ceil(plan.beta * static_cast<double>(host_count)));
                for (std::size_t i = 0; i < pos.size() && to_delete > 0; ++i) {
                    if (pos[i] == Slot::Host) {
                        pos[i] = Slot::Deleted;
                        --to_delete;
                        --host_count;
                        ++deleted_count;
                    }
                }
            }

            // Picks: the kept-k non-window tokens, modeled as the oldest ones.
            const std::size_t picks = kept - k;
            std::size_t reloads = 0;
            std::size_t recomputes = 0;
            for (std::size_t i = 0; i < picks && i < pos.size(); ++i) {
                if (pos[i] == Slot::Host) {
                    pos[i] = Slot::Device;
                    ++reloads;
                } else if (pos[i] == Slot::Deleted) {
                    pos[i] = Slot::Device;
                    ++recomputes;
                }
            }
            host_count -= reloads;
            deleted_count -= recomputes;
            const double t_rel = transfer_time(p, 0, reloads);
            ph.transfer_seconds += t_rel;
            out.total_seconds += t_rel;
            const double t_rec = recompute_time(p, recomputes);
            ph.recompute_seconds += t_rec;
            out.total_seconds += t_rec;
        }

        const double t_cmp = compute_time(p, kept);
        ph.compute_seconds += t_cmp;
        out.total_seconds += t_cmp;

        pos.push_back(Slot::Device);
        const std::uint64_t device_tokens = pos.size() - host_count - deleted_count;
        peak = std::max(peak, tb * device_tokens);
        if (peak > p.device_capacity) {
            out.feasible = false;
        }
    }
    out.peak_device_bytes = peak;
    return out;
}

} // namespace detail

// Evaluates the three-term objective (compute + caching transfers +
// recomputation) for a constraint-satisfying plan.
inline double predict_total_time(const SchedulePlan& plan, const CostParams& p) {
    p.validate();
    validate_plan(plan, p.output_len);
    return detail::simulate_plan(plan, p).total_seconds;
}

inline PlanPrediction predict_plan(const SchedulePlan& plan, const CostParams& p) {
    p.validate();
    validate_plan(plan, p.output_len);
    return detail::simulate_plan(plan, p);
}

// Offline solve: p1 falls out of the capacity constraint; (alpha, beta, p2)
// by greedy coordinate descent on a 0.05 grid, two sweeps, restricted to
// plans whose simulated peak fits the device.
inline SchedulePlan solve_plan(const CostParams& p) {
    p.validate();
    const std::uint64_t tb = token_kv_bytes(p);
    if (tb > p.device_capacity) {
        throw InfeasiblePlan("single token's KV exceeds device capacity");
    }
    if (tb * p.input_len > p.device_capacity) {
        throw InfeasiblePlan("prompt KV alone exceeds device capacity");
    }

    const std::size_t n = p.output_len;
    const std::size_t p1 = phase1_limit(p);
    if (p1 == n) {
        SchedulePlan plan;
        plan.p1 = plan.p2 = n;
        const PlanPrediction pred = detail::simulate_plan(plan, p);
        plan.predicted_total_seconds = pred.total_seconds;
        plan.prefill_compute_seconds = pred.prefill_compute_seconds;
        plan.phases = pred.phases;
        return plan;
    }

    std::vector<double> grid;
    for (int i = 1; i <= 19; ++i) {
        grid.push_back(0.05 * i);
    }

    auto evaluate = [&](double alpha, double beta, std::size_t p2)
        -> std::optional<PlanPrediction> {
        SchedulePlan cand;
        cand.alpha = alpha;
        cand.beta = beta;
        cand.p1 = p1;
        cand.p2 = p2;
        const PlanPrediction pred = detail::simulate_plan(cand, p);
        if (!pred.feasible) {
            return std::nullopt;
        }
        return pred;
    };

    double best_alpha = 0.0;
    double best_beta = grid.front();
    std::size_t best_p2 = n;
    PlanPrediction best_pred;
    bool found = false;

    // Seed: smallest feasible alpha with no Phase III.
    for (const double a : grid) {
        if (auto pred = evaluate(a, best_beta, best_p2)) {
            best_alpha = a;
            best_pred = *pred;
            found = true;
            break;
        }
    }
    if (!found) {
        throw InfeasiblePlan("no feasible (alpha, beta, p2) under device capacity");
    }

    for (int sweep = 0; sweep < 2; ++sweep) {
        for (const double a : grid) {
            if (auto pred = evaluate(a, best_beta, best_p2)) {
                if (pred->total_seconds < best_pred.total_seconds) {
                    best_pred = *pred;
                    best_alpha = a;
                }
            }
        }
        for (const double b : grid) {
            if (auto pred = evaluate(best_alpha, b, best_p2)) {
                if (pred->total_seconds < best_pred.total_seconds) {
                    best_pred = *pred;
                    best_beta = b;
                }
            }
        }
        for (std::size_t p2 = p1 + 1; p2 <= n; ++p2) {
            if (auto pred = evaluate(best_alpha, best_beta, p2)) {
                if (pred->total_seconds < best_pred.total_seconds) {
                    best_pred = *pred;
                    best_p2 = p2;
                }
            }
        }
    }

    SchedulePlan plan;
    plan.alpha = best_alpha;
    plan.beta = best_beta;
    plan.p1 = p1;
    plan.p2 = best_p2;
    plan.predicted_total_seconds = best_pred.total_seconds;
    plan.prefill_compute_seconds = best_pred.prefill_compute_seconds;
    plan.phases = best_pred.phases;
    return plan;
}

// Runtime action sets for one decode step of one layer, derived from the
// plan, the step's sparse selection, and current ledger residency.
// Eviction and deletion are strictly oldest-first; only the locally static
// window (positions >= n - k) is pinned to the device. Reload/recompute
// sets are computed against the post-offload, post-delete state, so a
// selected token offloaded by the same step's split maintenance is pulled
// straight back (the per-step round trip of the scheduling loop).
struct StepActions {
    int phase = 1;
    IndexList offload;
    IndexList delete_tokens;
    IndexList reload;
    IndexList recompute;
};

inline StepActions step_actions(const SchedulePlan& plan, std::size_t j,
                                const SparseSelection& selection, const KvLedger& ledger,
                                std::size_t layer, const CostParams& p) {
    require(j < p.output_len, "step_actions: step beyond output length");
    StepActions actions;
    actions.phase = phase_of_step(plan, j);
    if (actions.phase == 1) {
        return actions;
    }

    const std::size_t existing = p.input_len + j;
    const std::size_t n_tot = existing + 1;
    const std::size_t k = selection.k;
    const std::size_t nonlocal = n_tot > k ? n_tot - k : 0;
    const IndexList selected = selection.all();

    const auto device = ledger.tokens_in_tier(layer, Tier::Device);
    const auto host = ledger.tokens_in_tier(layer, Tier::Host);

    const auto target = static_cast<std::size_t>(
        std::ceil(plan.alpha * static_cast<double>(existing)));
    std::size_t to_offload = target > host.size() ? target - host.size() : 0;
    for (const std::size_t t : device) {
        if (to_offload == 0 || t >= nonlocal) {
            break;
        }
        actions.offload.push_back(t);
        --to_offload;
    }

    const std::size_t host_after = host.size() + actions.offload.size();
    if (actions.phase == 3 && host_after > 0) {
        auto to_delete = static_cast<std::size_t>(
            std::ceil(plan.beta * static_cast<double>(host_after)));
        IndexList host_then(host);
        host_then.insert(host_then.end(), actions.offload.begin(), actions.offload.end());
        std::sort(host_then.begin(), host_then.end());
        for (const std::size_t t : host_then) {
            if (to_delete == 0) {
                break;
            }
            actions.delete_tokens.push_back(t);
            --to_delete;
        }
    }

    auto in_list = [](const IndexList& list, std::size_t t) {
        return std::binary_search(list.begin(), list.end(), t);
    };
    for (const std::size_t t : selected) {
        if (!ledger.exists(layer, t)) {
            continue; // the current token, stored after these actions run
        }
        const Tier tier = ledger.tier(layer, t);
        if (in_list(actions.delete_tokens, t) || tier == Tier::Deleted) {
            actions.recompute.push_back(t);
        } else if (tier == Tier::Host || in_list(actions.offload, t)) {
            actions.reload.push_back(t);
        }
    }
    return actions;
}

// Byte-level replay of a plan through the ledger machinery, using the same
// pessimistic pick model as planning. The independent route for checking
// predictions and comparing schedules under one cost model.
struct ReplayResult {
    double total_seconds = 0.0;
    double compute_seconds = 0.0;
    double transfer_seconds = 0.0;
    double recompute_seconds = 0.0;
    std::uint64_t peak_device_bytes = 0;
    std::uint64_t transferred_bytes = 0;
    bool oom = false;
    std::size_t oom_step = 0;
};

inline ReplayResult replay_plan(const SchedulePlan& plan, const CostParams& p) {
    p.validate();
    validate_plan(plan, p.output_len);
    const std::uint64_t tb = token_kv_bytes(p);
    const std::size_t s = p.input_len;
    const std::size_t n = p.output_len;

    KvLedger ledger(1, p.device_capacity);
    TransferLedger clock;
    ReplayResult res;

    auto charge_transfer = [&](std::size_t d2h, std::size_t h2d) {
        clock.charge_transfer(tb * (d2h + h2d), static_cast<double>(d2h),
                              static_cast<double>(h2d), p.bandwidth);
    };

    try {
        clock.begin_step(0);
        for (std::size_t t = 0; t < s; ++t) {
            ledger.store_new(0, t, tb);
        }
        clock.charge_compute(compute_time(p, s * (s + 1) / 2));
        res.peak_device_bytes = std::max(res.peak_device_bytes, ledger.device_bytes());

        for (std::size_t j = 0; j < n; ++j) {
            clock.begin_step(j + 1);
            const std::size_t existing = s + j;
            const std::size_t n_tot = existing + 1;
            const std::size_t k = swa_window_k(n_tot, p.ratio);
            const std::size_t kept = swa_keep_count(n_tot, p.ratio);
            const int phase = phase_of_step(plan, j);

            if (phase >= 2) {
                const std::size_t nonlocal = n_tot - k;
                const auto host = ledger.tokens_in_tier(0, Tier::Host);
                const auto target = static_cast<std::size_t>(
                    std::ceil(plan.alpha * static_cast<double>(existing)));
                std::size_t want = target > host.size() ? target - host.size() : 0;
                IndexList off;
                for (const std::size_t t : ledger.tokens_in_tier(0, Tier::Device)) {
                    if (want == 0 || t >= nonlocal) {
                        break;
                    }
                    off.push_back(t);
                    --want;
                }
                ledger.offload(0, off);
                charge_transfer(off.size(), 0);

                if (phase == 3) {
                    const auto host_now = ledger.tokens_in_tier(0, Tier::Host);
                    if (!host_now.empty()) {
                        auto to_delete = static_cast<std::size_t>(std::ceil(
                            plan.beta * static_cast<double>(host_now.size())));
                        IndexList del(host_now.begin(),
                                      host_now.begin() +
                                          static_cast<std::ptrdiff_t>(
                                              std::min(to_delete, host_now.size())));
                        ledger.erase(0, del);
                    }
                }

                const std::size_t picks = kept - k;
                IndexList rel;
                IndexList rec;
                for (std::size_t t = 0; t < picks && t < existing; ++t) {
                    const Tier tier = ledger.tier(0, t);
                    if (tier == Tier::Host) {
                        rel.push_back(t);
                    } else if (tier == Tier::Deleted) {
                        rec.push_back(t);
                    }
                }
                ledger.reload(0, rel);
                charge_transfer(0, rel.size());
                for (const std::size_t t : rec) {
                    ledger.restore(0, t, tb);
                }
                clock.charge_recompute(recompute_time(p, rec.size()));
            }

            clock.charge_compute(compute_time(p, kept));
            ledger.store_new(0, existing, tb);
            res.peak_device_bytes = std::max(res.peak_device_bytes, ledger.device_bytes());
            clock.end_step(ledger.device_bytes(), ledger.host_bytes());
        }
    } catch (const OutOfDeviceMemory&) {
        res.oom = true;
        res.oom_step = clock.records().empty() ? 0 : clock.records().back().step;
    }

    res.compute_seconds = clock.compute_seconds();
    res.transfer_seconds = clock.transfer_seconds();
    res.recompute_seconds = clock.recompute_seconds();
    res.total_seconds = clock.total_seconds();
    res.transferred_bytes = clock.transferred_bytes();
    return res;
}

// FlexGen-style static split: a fixed host fraction maintained from step 0,
// no deletion or recomputation. Expressed as a degenerate dynamic plan.
inline ReplayResult replay_static_split(double fraction, const CostParams& p) {
    require(fraction > 0.0 && fraction < 1.0, "static split: fraction out of (0,1)");
    SchedulePlan plan;
    plan.alpha = fraction;
    plan.beta = 0.05; // unused: p2 == n means Phase III never runs
    plan.p1 = 0;
    plan.p2 = p.output_len;
    return replay_plan(plan, p);
}

// Everything lives on the host; each step round-trips the kept working set
// and pushes the new token out.
inline ReplayResult replay_all_host(const CostParams& p) {
    p.validate();
    const std::uint64_t tb = token_kv_bytes(p);
    const std::size_t s = p.input_len;
    const std::size_t n = p.output_len;

    KvLedger ledger(1, p.device_capacity);
    TransferLedger clock;
    ReplayResult res;
    try {
        clock.begin_step(0);
        for (std::size_t t = 0; t < s; ++t) {
            ledger.store_new(0, t, tb);
        }
        clock.charge_compute(compute_time(p, s * (s + 1) / 2));
        res.peak_device_bytes = std::max(res.peak_device_bytes, ledger.device_bytes());
        {
            IndexList all(s);
            for (std::size_t t = 0; t < s; ++t) {
                all[t] = t;
            }
            ledger.offload(0, all);
            clock.charge_transfer(tb * s, static_cast<double>(s), 0.0, p.bandwidth);
        }

        for (std::size_t j = 0; j < n; ++j) {
            clock.begin_step(j + 1);
            const std::size_t existing = s + j;
            const std::size_t n_tot = existing + 1;
            const std::size_t kept = swa_keep_count(n_tot, p.ratio);
            // Reload the kept set minus the current token, compute, then
            // push the whole working set back to the host.
            const std::size_t reload_count = std::min(kept - 1, existing);
            IndexList picks(reload_count);
            for (std::size_t t = 0; t < reload_count; ++t) {
                picks[t] = existing - reload_count + t;
            }
            ledger.reload(0, picks);
            clock.charge_transfer(tb * picks.size(), 0.0,
                                  static_cast<double>(picks.size()), p.bandwidth);
            clock.charge_compute(compute_time(p, kept));
            ledger.store_new(0, existing, tb);
            res.peak_device_bytes = std::max(res.peak_device_bytes, ledger.device_bytes());
            IndexList out(picks);
            out.push_back(existing);
            ledger.offload(0, out);
            clock.charge_transfer(tb * out.size(), static_cast<double>(out.size()), 0.0,
                                  p.bandwidth);
            clock.end_step(ledger.device_bytes(), ledger.host_bytes());
        }
    } catch (const OutOfDeviceMemory&) {
        res.oom = true;
        res.oom_step = clock.records().empty() ? 0 : clock.records().back().step;
    }

    res.compute_seconds = clock.compute_seconds();
    res.transfer_seconds = clock.transfer_seconds();
    res.recompute_seconds = clock.recompute_seconds();
    res.total_seconds = clock.total_seconds();
    res.transferred_bytes = clock.transferred_bytes();
    return res;
}

// No offloading at all; OOMs once the KV footprint passes capacity.
inline ReplayResult replay_all_device(const CostParams& p) {
    SchedulePlan plan;
    plan.p1 = plan.p2 = p.output_len;
    return replay_plan(plan, p);
}

} // namespace skv
