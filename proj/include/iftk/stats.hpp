#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "iftk/common.hpp"

namespace iftk {

struct CorrelationResult {
    double pearson = 0.0;
    double spearman = 0.0;
    int n_pairs = 0;
    int excluded = 0;
};

namespace detail {

inline void check_correlation_inputs(const std::vector<double>& xs,
                                     const std::vector<double>& ys) {
    require(xs.size() == ys.size(), "correlation: length mismatch");
    require(xs.size() >= 2, "correlation: need at least 2 pairs");
    for (double x : xs) require(std::isfinite(x), "correlation: non-finite value");
    for (double y : ys) require(std::isfinite(y), "correlation: non-finite value");
    const bool x_const = std::all_of(xs.begin(), xs.end(),
                                     [&](double v) { return v == xs.front(); });
    const bool y_const = std::all_of(ys.begin(), ys.end(),
                                     [&](double v) { return v == ys.front(); });
    if (x_const || y_const) {
        throw std::invalid_argument("correlation: undefined for constant input");
    }
}

}  // namespace detail

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    detail::check_correlation_inputs(xs, ys);
    const auto n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    return sxy / std::sqrt(sxx * syy);
}

/// Average ranks (1-based); ties receive the mean of their rank range.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

/// Pearson of average ranks.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    detail::check_correlation_inputs(xs, ys);
    return pearson(average_ranks(xs), average_ranks(ys));
}

inline CorrelationResult correlate(const std::vector<double>& xs,
                                   const std::vector<double>& ys, int excluded = 0) {
    CorrelationResult out;
    out.pearson = pearson(xs, ys);
    out.spearman = spearman(xs, ys);
    out.n_pairs = static_cast<int>(xs.size());
    out.excluded = excluded;
    return out;
}

inline double median(std::vector<double> xs) {
    require(!xs.empty(), "median: empty input");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace iftk
