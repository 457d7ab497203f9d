// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace skv {

// Precondition / invariant breach by the caller.
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// Simulated device tier cannot hold the requested bytes.
struct OutOfDeviceMemory : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// No schedule satisfies the capacity constraints.
struct InfeasiblePlan : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Rank correlation of a constant sequence.
struct UndefinedCorrelation : std::domain_error {
    using std::domain_error::domain_error;
};

// Malformed or out-of-range run configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) {
        throw ContractViolation(msg);
    }
}

// Round-half-to-even, independent of the FP environment's rounding mode.
inline std::int64_t round_half_even(double x) {
    const double f = std::floor(x);
    const double frac = x - f;
    auto lo = static_cast<std::int64_t>(f);
    if (frac > 0.5) {
        return lo + 1;
    }
    if (frac < 0.5) {
        return lo;
    }
    return (lo % 2 == 0) ? lo : lo + 1;
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) {
    return (a + b - 1) / b;
}

} // namespace skv
