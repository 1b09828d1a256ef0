#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>

#include "x3d/rng.hpp"
#include "x3d/tensor.hpp"

namespace x3d::testing {

template <typename T = double>
NdArray<T> random_array(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    SplitMix64 rng(seed);
    NdArray<T> a(shape);
    for (auto& v : a.data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
    return a;
}

/// Entries are a shuffled ladder with spacing `gap`, so every window has a
/// unique maximum that small perturbations cannot flip.
inline NdArray<double> distinct_array(const Shape& shape, std::uint64_t seed, double gap = 0.01) {
    NdArray<double> a(shape);
    std::vector<std::size_t> idx(a.size());
    std::iota(idx.begin(), idx.end(), 0);
    SplitMix64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = gap * static_cast<double>(idx[i]) - 0.5 * gap * a.size();
    return a;
}

/// Fresh empty directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("x3d_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace x3d::testing
