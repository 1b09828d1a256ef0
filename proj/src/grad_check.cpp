#include "x3d/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "x3d/error.hpp"

namespace x3d {

GradCheckReport grad_check_regions(const RegionFunction& fn, const NdArray<double>& point, GradCheckOptions options) {
    auto x = BasicTensor<double>::leaf(point, true);
    auto base = fn(x);
    if (base.loss.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    base.loss.backward();
    const NdArray<double> analytic = x.has_grad() ? x.grad() : NdArray<double>(point.shape(), 0.0);

    NoGradGuard no_grad;
    NdArray<double> probe = point;
    GradCheckReport report;
    report.coordinates = probe.size();
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double x0 = probe[i];
        probe[i] = x0 + options.step;
        const auto up = fn(BasicTensor<double>::leaf(probe));
        probe[i] = x0 - options.step;
        const auto down = fn(BasicTensor<double>::leaf(probe));
        probe[i] = x0;
        const double numeric = (up.loss.item() - down.loss.item()) / (2.0 * options.step);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        report.max_error = std::max(report.max_error, err);
        if (up.region == base.region && down.region == base.region) {
            report.max_error_within_region = std::max(report.max_error_within_region, err);
        } else {
            ++report.region_crossings;
        }
    }
    return report;
}

double grad_check(const ScalarFunction& fn, const NdArray<double>& point, GradCheckOptions options) {
    return grad_check_regions([&fn](const BasicTensor<double>& x) { return GradProbe{fn(x), {}}; }, point, options)
        .max_error;
}

}  // namespace x3d
