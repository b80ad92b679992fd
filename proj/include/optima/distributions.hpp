#pragma once

#include <cstddef>
#include <vector>

#include "optima/rng.hpp"

namespace optima {

// Clamp range for log-standard-deviations, everywhere in the artifact.
constexpr double kLogStdMin = -20.0;
constexpr double kLogStdMax = 5.0;

inline double clamp_log_std(double v) {
    return v < kLogStdMin ? kLogStdMin : (v > kLogStdMax ? kLogStdMax : v);
}

/// Mean-field Gaussian: independent N(mean_i, exp(log_std_i)^2) per coordinate.
struct DiagonalGaussian {
    std::vector<double> mean;
    std::vector<double> log_std;

    DiagonalGaussian() = default;
    DiagonalGaussian(std::vector<double> mu, std::vector<double> ls);

    std::size_t dim() const { return mean.size(); }
    double std_dev(std::size_t i) const;

    static DiagonalGaussian isotropic(std::size_t dim, double mean_value, double std_value);
};

struct LogNormalPrior {
    double mu_log = 0.0;
    double sigma_log = 1.0;

    LogNormalPrior() = default;
    LogNormalPrior(double mu, double sigma);
};

/// mean + exp(log_std) * noise, coordinate-wise.
std::vector<double> sample_reparameterized(const DiagonalGaussian& dist,
                                           const std::vector<double>& noise);

/// Closed-form KL(q || p) for diagonal Gaussians; exactly 0 when q == p.
double kl_diagonal_gaussians(const DiagonalGaussian& q, const DiagonalGaussian& p);

double log_density(const DiagonalGaussian& dist, const std::vector<double>& x);
// i.i.d. product across coordinates; every x_i must be > 0.
double log_density(const LogNormalPrior& dist, const std::vector<double>& x);

/// Monte Carlo KL estimate (1/n) sum [log q(x_i) - log p(x_i)], x_i ~ q.
/// Verification oracle for the closed form.
double kl_monte_carlo(const DiagonalGaussian& q, const DiagonalGaussian& p, std::size_t n,
                      NoiseSource& noise);
double kl_monte_carlo(const DiagonalGaussian& q, const LogNormalPrior& p, std::size_t n,
                      NoiseSource& noise);

}  // namespace optima
