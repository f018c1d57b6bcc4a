#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace ndf::detail {

/// Lower node index and fractional offset of a coordinate in [-1, 1] on an
/// axis with `count` >= 2 nodes (cell-corner aligned). Offsets within a few
/// ulps of a node snap onto it, so node coordinates hit stored values exactly.
struct AxisCell {
    std::uint32_t lower;
    double frac;
};

inline AxisCell locate(double p, std::uint32_t count) {
    const double u = (p + 1.0) * 0.5 * static_cast<double>(count - 1);
    const double whole = std::round(u);
    const double snap = 64.0 * std::numeric_limits<double>::epsilon() * count;
    double cell;
    double frac;
    if (std::abs(u - whole) <= snap) {
        cell = whole;
        frac = 0.0;
    } else {
        cell = std::floor(u);
        frac = u - cell;
    }
    if (cell >= count - 1) return {count - 2, 1.0};
    if (cell < 0.0) return {0, 0.0};
    return {static_cast<std::uint32_t>(cell), frac};
}

} // namespace ndf::detail
