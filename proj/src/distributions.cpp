#include "optima/distributions.hpp"

#include <cmath>
#include <stdexcept>

namespace optima {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;

void require_finite(const std::vector<double>& v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite entry");
}
}  // namespace

DiagonalGaussian::DiagonalGaussian(std::vector<double> mu, std::vector<double> ls)
    : mean(std::move(mu)), log_std(std::move(ls)) {
    if (mean.size() != log_std.size())
        throw std::invalid_argument("DiagonalGaussian: mean and log_std lengths differ");
    require_finite(mean, "DiagonalGaussian mean");
    require_finite(log_std, "DiagonalGaussian log_std");
}

double DiagonalGaussian::std_dev(std::size_t i) const { return std::exp(log_std[i]); }

DiagonalGaussian DiagonalGaussian::isotropic(std::size_t dim, double mean_value, double std_value) {
    if (!(std_value > 0.0)) throw std::invalid_argument("DiagonalGaussian: std must be > 0");
    return DiagonalGaussian(std::vector<double>(dim, mean_value),
                            std::vector<double>(dim, std::log(std_value)));
}

LogNormalPrior::LogNormalPrior(double mu, double sigma) : mu_log(mu), sigma_log(sigma) {
    if (!(sigma_log > 0.0)) throw std::invalid_argument("LogNormalPrior: sigma_log must be > 0");
}

std::vector<double> sample_reparameterized(const DiagonalGaussian& dist,
                                           const std::vector<double>& noise) {
    if (noise.size() != dist.dim())
        throw std::invalid_argument("sample_reparameterized: noise length " +
                                    std::to_string(noise.size()) + " != dim " +
                                    std::to_string(dist.dim()));
    std::vector<double> out(dist.dim());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = dist.mean[i] + std::exp(dist.log_std[i]) * noise[i];
    return out;
}

double kl_diagonal_gaussians(const DiagonalGaussian& q, const DiagonalGaussian& p) {
    if (q.dim() != p.dim())
        throw std::invalid_argument("kl_diagonal_gaussians: dimension mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < q.dim(); ++i) {
        if (q.log_std[i] == p.log_std[i] && q.mean[i] == p.mean[i]) continue;
        double sq = std::exp(q.log_std[i]);
        double sp = std::exp(p.log_std[i]);
        double dm = q.mean[i] - p.mean[i];
        kl += p.log_std[i] - q.log_std[i] + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
    }
    return kl;
}

double log_density(const DiagonalGaussian& dist, const std::vector<double>& x) {
    if (x.size() != dist.dim()) throw std::invalid_argument("log_density: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double sd = std::exp(dist.log_std[i]);
        double z = (x[i] - dist.mean[i]) / sd;
        s += -kHalfLog2Pi - dist.log_std[i] - 0.5 * z * z;
    }
    return s;
}

double log_density(const LogNormalPrior& dist, const std::vector<double>& x) {
    double s = 0.0;
    for (double xi : x) {
        if (!(xi > 0.0))
            throw std::invalid_argument("log_density: log-normal support requires x > 0");
        double z = (std::log(xi) - dist.mu_log) / dist.sigma_log;
        s += -kHalfLog2Pi - std::log(dist.sigma_log) - std::log(xi) - 0.5 * z * z;
    }
    return s;
}

namespace {
template <typename P>
double kl_mc_impl(const DiagonalGaussian& q, const P& p, std::size_t n, NoiseSource& noise) {
    if (n < 1) throw std::invalid_argument("kl_monte_carlo: n must be >= 1");
    double acc = 0.0;
    std::vector<double> eps(q.dim());
    for (std::size_t k = 0; k < n; ++k) {
        for (auto& e : eps) e = noise.normal();
        std::vector<double> x = sample_reparameterized(q, eps);
        acc += log_density(q, x) - log_density(p, x);
    }
    return acc / static_cast<double>(n);
}
}  // namespace

double kl_monte_carlo(const DiagonalGaussian& q, const DiagonalGaussian& p, std::size_t n,
                      NoiseSource& noise) {
    return kl_mc_impl(q, p, n, noise);
}

double kl_monte_carlo(const DiagonalGaussian& q, const LogNormalPrior& p, std::size_t n,
                      NoiseSource& noise) {
    return kl_mc_impl(q, p, n, noise);
}

}  // namespace optima
