#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "loadtl/errors.hpp"

namespace loadtl {

/// Errors in normalized target units; mape is a fraction (0.203 means 20.3%).
struct Metrics {
    double mse = 0.0;
    double rmse = 0.0;
    double mape = 0.0;
    std::size_t mape_clamped = 0;  // targets with |y| < eps whose denominator was clamped
    friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline Metrics compute_metrics(std::span<const double> pred, std::span<const double> target, double eps = 1e-8) {
    if (pred.empty() || pred.size() != target.size())
        throw DimensionError("compute_metrics: " + std::to_string(pred.size()) + " predictions vs " +
                             std::to_string(target.size()) + " targets");
    Metrics m;
    double sq = 0.0, pct = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred[i] - target[i];
        sq += r * r;
        const double denom = std::abs(target[i]);
        if (denom < eps) ++m.mape_clamped;
        pct += std::abs(r) / std::max(denom, eps);
    }
    const double n = static_cast<double>(pred.size());
    m.mse = sq / n;
    m.rmse = std::sqrt(m.mse);
    m.mape = pct / n;
    return m;
}

/// Lower median: always one of the observed values.
inline double lower_median(std::vector<double> v) {
    if (v.empty()) throw ValidationError("median of an empty list");
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

/// Per-field lower median.
inline Metrics median_metrics(const std::vector<Metrics>& runs) {
    std::vector<double> mse, rmse, mape, clamped;
    for (const auto& r : runs) {
        mse.push_back(r.mse);
        rmse.push_back(r.rmse);
        mape.push_back(r.mape);
        clamped.push_back(static_cast<double>(r.mape_clamped));
    }
    return {lower_median(mse), lower_median(rmse), lower_median(mape),
            static_cast<std::size_t>(lower_median(clamped))};
}

/// Percentage reduction from `before` to `after`: 100 (before - after) / before.
inline double improvement(double before, double after) {
    if (!(before > 0)) throw ValidationError("improvement: baseline metric must be positive");
    return 100.0 * (before - after) / before;
}

}  // namespace loadtl
