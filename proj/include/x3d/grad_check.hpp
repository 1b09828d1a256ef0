#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "x3d/tensor.hpp"

namespace x3d {

using ScalarFunction = std::function<BasicTensor<double>(const BasicTensor<double>&)>;

struct GradCheckOptions {
    double step = 1e-3;
};

/// Compares the reverse-mode gradient of a scalar-valued `fn` at `point` with
/// central differences, all in 64-bit. Returns
///   max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
double grad_check(const ScalarFunction& fn, const NdArray<double>& point, GradCheckOptions options = {});

/// Scalar output together with a label of the piecewise-smooth region it was
/// evaluated in (e.g. relu signs and max-pool winners).
struct GradProbe {
    BasicTensor<double> loss;
    std::vector<std::uint32_t> region;
};

using RegionFunction = std::function<GradProbe(const BasicTensor<double>&)>;

struct GradCheckReport {
    double max_error = 0.0;                ///< over every coordinate, as grad_check
    double max_error_within_region = 0.0;  ///< over coordinates whose probes stay in the base region
    std::size_t coordinates = 0;
    std::size_t region_crossings = 0;      ///< coordinates where a probe changed region
};

/// grad_check that also reports which central-difference probes left the
/// region of the base point, and the worst error over those that did not.
GradCheckReport grad_check_regions(const RegionFunction& fn, const NdArray<double>& point,
                                   GradCheckOptions options = {});

}  // namespace x3d
