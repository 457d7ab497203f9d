// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "skv/common.hpp"
#include "skv/matrix.hpp"

namespace skv {

// Channel-wise affine quantization of a vector. Each channel group carries
// its own scale and zero point; codes are b-bit unsigned integers.
struct QuantizedVector {
    std::vector<std::uint16_t> codes;
    Vector scales;                    // lambda per channel group, > 0
    std::vector<std::int64_t> zero_points;
    std::uint32_t bits = 8;
    std::size_t channel_size = 0;

    std::size_t size() const { return codes.size(); }
    std::size_t groups() const { return scales.size(); }
};

namespace detail {

inline double quant_scale(double lo, double hi, std::uint32_t bits) {
    constexpr double kScaleFloor = 1e-12;
    if (hi == lo) {
        // Constant channel: pick a scale the constant is an exact multiple
        // of, so the roundtrip reproduces it bit-for-bit.
        return std::max(std::abs(lo), kScaleFloor);
    }
    const double levels = static_cast<double>((std::uint64_t{1} << bits) - 1);
    return std::max((hi - lo) / levels, kScaleFloor);
}

} // namespace detail

// x_quant = clamp(round(x/lambda + z)), lambda = (max-min)/(2^b - 1) per
// channel group, z = round(-min/lambda). Codes always land in [0, 2^b-1].
inline QuantizedVector quantize(std::span<const double> x, std::uint32_t bits = 8,
                                std::size_t channel_size = 0) {
    require(!x.empty(), "quantize: empty input");
    require(bits == 4 || bits == 8, "quantize: bits must be 4 or 8");
    if (channel_size == 0) {
        channel_size = x.size();
    }
    require(x.size() % channel_size == 0, "quantize: channel_size must divide length");

    QuantizedVector q;
    q.bits = bits;
    q.channel_size = channel_size;
    q.codes.resize(x.size());
    const std::size_t n_groups = x.size() / channel_size;
    q.scales.resize(n_groups);
    q.zero_points.resize(n_groups);
    const auto max_code = static_cast<std::int64_t>((std::uint64_t{1} << bits) - 1);

    for (std::size_t g = 0; g < n_groups; ++g) {
        const auto chan = x.subspan(g * channel_size, channel_size);
        double lo = chan[0];
        double hi = chan[0];
        for (const double v : chan) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double scale = detail::quant_scale(lo, hi, bits);
        const std::int64_t zp = round_half_even(-lo / scale);
        q.scales[g] = scale;
        q.zero_points[g] = zp;
        for (std::size_t i = 0; i < channel_size; ++i) {
            const std::int64_t code = round_half_even(chan[i] / scale +
                                                      static_cast<double>(zp));
            q.codes[g * channel_size + i] =
                static_cast<std::uint16_t>(std::clamp<std::int64_t>(code, 0, max_code));
        }
    }
    return q;
}

// x = lambda * (code - z), per channel group.
inline Vector dequantize(const QuantizedVector& q) {
    Vector out(q.codes.size());
    for (std::size_t g = 0; g < q.groups(); ++g) {
        const double scale = q.scales[g];
        const double zp = static_cast<double>(q.zero_points[g]);
        for (std::size_t i = 0; i < q.channel_size; ++i) {
            const std::size_t at = g * q.channel_size + i;
            out[at] = scale * (static_cast<double>(q.codes[at]) - zp);
        }
    }
    return out;
}

// Storage-size roundtrip in one call; what the engine applies to KV rows.
inline Vector quantize_roundtrip(std::span<const double> x, std::uint32_t bits,
                                 std::size_t channel_size) {
    return dequantize(quantize(x, bits, channel_size));
}

} // namespace skv
