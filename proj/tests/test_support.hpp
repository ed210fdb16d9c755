#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "loadtl/loadtl.hpp"

namespace loadtl::testing {

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.uniform(lo, hi);
    return m;
}

/// Largest |a-b| / max(|a|,|b|,floor) over two equally sized vectors.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
    return worst;
}

/// Random window samples with values in [0,1] and random targets.
inline std::vector<WindowSample> random_samples(Rng& rng, std::size_t n, std::size_t window, std::size_t features) {
    std::vector<WindowSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        WindowSample s;
        s.inputs = random_matrix(rng, window, features, 0.0, 1.0);
        s.target = rng.uniform(-1.0, 2.0);
        out.push_back(std::move(s));
    }
    return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("loadtl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace loadtl::testing
