#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "eabcal/error.hpp"

namespace eabcal::stats {

inline double mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Population variance (divides by n).
inline double variance(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) return 0.0;
    const double m = mean(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return acc / static_cast<double>(xs.size());
}

inline double stddev(std::span<const double> xs) { return std::sqrt(variance(xs)); }

inline double rms(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += x * x;
    return std::sqrt(acc / static_cast<double>(xs.size()));
}

// Linear-interpolated quantile (type 7), q in [0, 1].
inline double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) throw InputError("quantile of empty sample");
    std::sort(xs.begin(), xs.end());
    const double pos = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0 || std::isinf(xs[lo])) return xs[lo];
    return xs[lo] + frac * (xs[hi] - xs[lo]);
}

inline double iqr(std::span<const double> xs) {
    std::vector<double> v(xs.begin(), xs.end());
    return quantile(v, 0.75) - quantile(v, 0.25);
}

// Centered moving average with `half` samples on each side; the window shrinks
// to the available neighbors at the ends.
inline std::vector<double> moving_average(std::span<const double> xs, std::size_t half) {
    std::vector<double> out(xs.size());
    const std::size_t n = xs.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n - 1, i + half);
        double acc = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) acc += xs[j];
        out[i] = acc / static_cast<double>(hi - lo + 1);
    }
    return out;
}

}  // namespace eabcal::stats
