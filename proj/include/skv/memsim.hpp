// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skv/common.hpp"

namespace skv {

// The paper-shaped notation set (h, l, b, s, n, r, B) plus the simulator's
// throughput constants. Bytes and seconds are the only units.
struct CostParams {
    std::size_t hidden = 0;            // h
    std::size_t layers = 0;            // l
    std::size_t batch = 1;             // b
    std::size_t input_len = 0;         // s
    std::size_t output_len = 0;        // n
    double ratio = 1.0;                // r
    double bandwidth = 1.0;            // B, host<->device bytes/sec
    std::size_t bytes_per_element = 2; // 2 = fp16 storage, 1 = int8
    std::uint64_t device_capacity = 0; // bytes
    double mac_rate = 1e9;             // simulated multiply-accumulates/sec
    double recompute_overhead = 1.0;   // >= 1

    void validate() const {
        require(hidden > 0 && layers > 0 && batch > 0, "CostParams: zero model dims");
        require(output_len > 0 || input_len > 0, "CostParams: empty workload");
        require(ratio > 0.0 && ratio <= 1.0, "CostParams: ratio out of (0,1]");
        require(bandwidth > 0.0, "CostParams: bandwidth must be positive");
        require(bytes_per_element == 1 || bytes_per_element == 2,
                "CostParams: bytes_per_element must be 1 or 2");
        require(mac_rate > 0.0, "CostParams: mac_rate must be positive");
        require(recompute_overhead >= 1.0, "CostParams: recompute_overhead < 1");
    }
};

// K and V across all layers for one token: 2 * bytes_per_element * b * l * h
// (4*b*l*h at fp16).
inline std::uint64_t token_kv_bytes(const CostParams& p) {
    return 2ull * p.bytes_per_element * p.batch * p.layers * p.hidden;
}

inline std::uint64_t layer_kv_bytes(const CostParams& p) {
    return 2ull * p.bytes_per_element * p.batch * p.hidden;
}

inline double transfer_time(const CostParams& p, std::size_t d2h_tokens,
                            std::size_t h2d_tokens) {
    return static_cast<double>(token_kv_bytes(p)) *
           static_cast<double>(d2h_tokens + h2d_tokens) / p.bandwidth;
}

// Attention MACs for one decode step over kept_tokens: QK^T plus AW*V.
inline double compute_time(const CostParams& p, std::size_t kept_tokens) {
    return 2.0 * static_cast<double>(p.batch) * static_cast<double>(p.layers) *
           static_cast<double>(p.hidden) * static_cast<double>(kept_tokens) /
           p.mac_rate;
}

// KV projections (two h*h matmuls per layer) for recomputed tokens, scaled
// by the configured overhead.
inline double recompute_time(const CostParams& p, std::size_t recomputed_tokens) {
    return p.recompute_overhead * 2.0 * static_cast<double>(p.batch) *
           static_cast<double>(p.layers) * static_cast<double>(p.hidden) *
           static_cast<double>(p.hidden) * static_cast<double>(recomputed_tokens) /
           p.mac_rate;
}

enum class Tier : std::uint8_t { Device, Host, Deleted };

// Token-granular residency ledger over a two-tier memory. One entry per
// (layer, token); byte totals are maintained incrementally and the device
// capacity invariant is checked after every mutation.
class KvLedger {
  public:
    KvLedger(std::size_t layers, std::uint64_t device_capacity)
        : layers_(layers), capacity_(device_capacity), entries_(layers) {
        require(layers > 0, "KvLedger: zero layers");
    }

    std::size_t layers() const { return layers_; }
    std::uint64_t device_capacity() const { return capacity_; }
    std::uint64_t device_bytes() const { return device_bytes_; }
    std::uint64_t host_bytes() const { return host_bytes_; }

    bool exists(std::size_t layer, std::size_t token) const {
        return token < entries_[layer].size() && entries_[layer][token].present;
    }

    Tier tier(std::size_t layer, std::size_t token) const {
        require(exists(layer, token), "KvLedger: entry not stored");
        return entries_[layer][token].tier;
    }

    // New KV lands on device (the compute tier).
    void store_new(std::size_t layer, std::size_t token, std::uint64_t bytes) {
        check_layer(layer);
        auto& row = entries_[layer];
        if (token >= row.size()) {
            row.resize(token + 1);
        }
        require(!row[token].present, "KvLedger: token already stored");
        check_device_fit(bytes);
        row[token] = {true, Tier::Device, bytes};
        device_bytes_ += bytes;
    }

    // Device -> host. Returns bytes moved.
    std::uint64_t offload(std::size_t layer, std::span<const std::size_t> tokens) {
        std::uint64_t moved = 0;
        for (const std::size_t t : tokens) {
            Entry& e = entry_for_move(layer, t);
            require(e.tier == Tier::Device, "offload: entry not device-resident");
            e.tier = Tier::Host;
            device_bytes_ -= e.bytes;
            host_bytes_ += e.bytes;
            moved += e.bytes;
        }
        return moved;
    }

    // Host -> device. Capacity-checked per entry.
    std::uint64_t reload(std::size_t layer, std::span<const std::size_t> tokens) {
        std::uint64_t moved = 0;
        for (const std::size_t t : tokens) {
            Entry& e = entry_for_move(layer, t);
            require(e.tier == Tier::Host, "reload: entry not host-resident");
            check_device_fit(e.bytes);
            e.tier = Tier::Device;
            host_bytes_ -= e.bytes;
            device_bytes_ += e.bytes;
            moved += e.bytes;
        }
        return moved;
    }

    // Drop entries from whichever tier holds them. No transfer cost.
    std::uint64_t erase(std::size_t layer, std::span<const std::size_t> tokens) {
        std::uint64_t freed = 0;
        for (const std::size_t t : tokens) {
            Entry& e = entry_for_move(layer, t);
            if (e.tier == Tier::Device) {
                device_bytes_ -= e.bytes;
            } else {
                host_bytes_ -= e.bytes;
            }
            freed += e.bytes;
            e.tier = Tier::Deleted;
            e.bytes = 0;
        }
        return freed;
    }

    // Recompute write-back: a deleted entry rematerializes on device.
    void restore(std::size_t layer, std::size_t token, std::uint64_t bytes) {
        check_layer(layer);
        require(exists(layer, token), "restore: entry never stored");
        Entry& e = entries_[layer][token];
        require(e.tier == Tier::Deleted, "restore: entry not deleted");
        check_device_fit(bytes);
        e.tier = Tier::Device;
        e.bytes = bytes;
        device_bytes_ += bytes;
    }

    // Ascending token ids currently in `tier` for one layer.
    std::vector<std::size_t> tokens_in_tier(std::size_t layer, Tier tier) const {
        check_layer(layer);
        std::vector<std::size_t> out;
        const auto& row = entries_[layer];
        for (std::size_t t = 0; t < row.size(); ++t) {
            if (row[t].present && row[t].tier == tier) {
                out.push_back(t);
            }
        }
        return out;
    }

  private:
    struct Entry {
        bool present = false;
        Tier tier = Tier::Device;
        std::uint64_t bytes = 0;
    };

    void check_layer(std::size_t layer) const {
        require(layer < layers_, "KvLedger: layer out of range");
    }

    void check_device_fit(std::uint64_t incoming) const {
        if (device_bytes_ + incoming > capacity_) {
            throw OutOfDeviceMemory(
                "simulated OOM: device tier needs " +
                std::to_string(device_bytes_ + incoming) + " bytes, capacity " +
                std::to_string(capacity_));
        }
    }

    Entry& entry_for_move(std::size_t layer, std::size_t token) {
        check_layer(layer);
        require(exists(layer, token), "KvLedger: entry not stored");
        Entry& e = entries_[layer][token];
        require(e.tier != Tier::Deleted, "KvLedger: entry is deleted");
        return e;
    }

    std::size_t layers_;
    std::uint64_t capacity_;
    std::uint64_t device_bytes_ = 0;
    std::uint64_t host_bytes_ = 0;
    std::vector<std::vector<Entry>> entries_;
};

// Simulated time accounting, split into compute / transfer / recompute and
// recorded per step. Transfer charges are bytes / bandwidth, exactly.
class TransferLedger {
  public:
    struct StepRecord {
        std::size_t step = 0;
        double d2h_tokens = 0.0;
        double h2d_tokens = 0.0;
        double transfer_seconds = 0.0;
        double compute_seconds = 0.0;
        double recompute_seconds = 0.0;
        std::uint64_t device_bytes_end = 0;
        std::uint64_t host_bytes_end = 0;
    };

    void begin_step(std::size_t step) {
        records_.push_back({});
        records_.back().step = step;
    }

    void charge_transfer(std::uint64_t bytes, double d2h_tokens, double h2d_tokens,
                         double bandwidth) {
        const double secs = static_cast<double>(bytes) / bandwidth;
        cur().transfer_seconds += secs;
        cur().d2h_tokens += d2h_tokens;
        cur().h2d_tokens += h2d_tokens;
        transfer_seconds_ += secs;
        transferred_bytes_ += bytes;
    }

    void charge_compute(double seconds) {
        cur().compute_seconds += seconds;
        compute_seconds_ += seconds;
    }

    void charge_recompute(double seconds) {
        cur().recompute_seconds += seconds;
        recompute_seconds_ += seconds;
    }

    void end_step(std::uint64_t device_bytes, std::uint64_t host_bytes) {
        cur().device_bytes_end = device_bytes;
        cur().host_bytes_end = host_bytes;
    }

    double compute_seconds() const { return compute_seconds_; }
    double transfer_seconds() const { return transfer_seconds_; }
    double recompute_seconds() const { return recompute_seconds_; }
    double total_seconds() const {
        return compute_seconds_ + transfer_seconds_ + recompute_seconds_;
    }
    std::uint64_t transferred_bytes() const { return transferred_bytes_; }
    const std::vector<StepRecord>& records() const { return records_; }

  private:
    StepRecord& cur() {
        require(!records_.empty(), "TransferLedger: no step in progress");
        return records_.back();
    }

    std::vector<StepRecord> records_;
    double compute_seconds_ = 0.0;
    double transfer_seconds_ = 0.0;
    double recompute_seconds_ = 0.0;
    std::uint64_t transferred_bytes_ = 0;
};

} // namespace skv
