#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace optima {

/// Central-difference gradient (f(x+he_i) - f(x-he_i)) / (2h), the oracle used
/// against reverse-mode results throughout the test suites.
template <typename F>
std::vector<double> finite_difference_gradient(F&& f, std::vector<double> point, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference_gradient: step must be > 0");
    std::vector<double> grad(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
        double orig = point[i];
        point[i] = orig + step;
        double fp = f(point);
        point[i] = orig - step;
        double fm = f(point);
        point[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_difference_gradient: non-finite probe at coordinate " +
                                     std::to_string(i));
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

inline double relative_error(double got, double want) {
    double denom = std::max(std::abs(want), 1e-8);
    return std::abs(got - want) / denom;
}

/// Max over coordinates of |got-want| / max(|want|, scale-floor). The floor
/// avoids blowing up on coordinates whose true gradient is ~0.
inline double max_relative_error(const std::vector<double>& got, const std::vector<double>& want,
                                 double floor_scale = 1e-6) {
    if (got.size() != want.size())
        throw std::invalid_argument("max_relative_error: size mismatch");
    double norm = 0.0;
    for (double w : want) norm = std::max(norm, std::abs(w));
    double floor = std::max(floor_scale, 1e-6 * norm);
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        double denom = std::max(std::abs(want[i]), floor);
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

}  // namespace optima
