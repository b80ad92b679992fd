#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "optima/elbo.hpp"

namespace optima {

struct TrainConfig {
    double lr_net = 1e-4;
    double lr_aug = 1e-2;
    double beta_net = 0.1;
    double beta_aug = 1.0;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    McConfig mc;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::size_t log_every = 10;

    Objective objective = Objective::Marginalized;
    bool learn_phi = true;
    double theta_prior_std = 1.0;
    double q_theta_log_std_init = -5.0;
    std::size_t eval_mc_samples = 8;  // trace test-metric draws (when eval data given)

    void validate() const;
};

struct OptimizerState {
    std::map<std::string, Array> m, v;  // first/second moment accumulators
    std::uint64_t step = 0;
};

/// Bias-corrected adaptive-moment update, in place. Minimizer semantics:
/// params <- params - lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(OptimizerState& state, std::map<std::string, Array>& params, const GradMap& grads,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Epoch-seeded permutation split into batches; the last batch may be short.
std::vector<std::vector<std::size_t>> minibatch_iterator(std::size_t dataset_size,
                                                         std::size_t batch_size,
                                                         std::uint64_t seed, std::uint64_t epoch);

struct TraceEntry {
    std::size_t step = 0;
    double total = 0.0, data_fit = 0.0, kl_theta = 0.0, kl_phi = 0.0;
    double dphi_mean = 0.0, train_loss = 0.0;
    std::vector<std::pair<double, double>> phi_coords;  // (mean, sigma) per gamma coordinate
    std::optional<double> test_metric;
};

struct TrainTrace {
    std::vector<std::string> phi_coord_names;
    std::vector<TraceEntry> entries;
};

struct TrainResult {
    ModelState state;
    DiagonalGaussian q_phi;
    TrainTrace trace;
    std::size_t steps = 0;
    double max_postclip_grad_norm = 0.0;
};

/// Raised when a step fails (non-finite ELBO or gradients); carries the
/// partial trace so callers can retain it.
struct TrainAbort : std::runtime_error {
    TrainResult partial;
    TrainAbort(const std::string& what, TrainResult p)
        : std::runtime_error(what), partial(std::move(p)) {}
};

/// Joint stochastic optimization of q(theta) and q(phi) (Algorithm-1 style).
/// Fully deterministic in config.seed.
TrainResult train_full_vi(const Dataset& data, const NetworkSpec& spec,
                          const AugmentationFamily& family, const DiagonalGaussian& q_phi_init,
                          const TrainConfig& config, const Dataset* eval_data = nullptr);

/// Same loop with a point estimate of theta; the objective drops
/// KL(q(theta)||p(theta)) because no theta posterior exists.
TrainResult train_partial_vi(const Dataset& data, const NetworkSpec& spec,
                             const AugmentationFamily& family, const DiagonalGaussian& q_phi_init,
                             const TrainConfig& config, const Dataset* eval_data = nullptr);

/// (mean, sigma) per gamma coordinate implied by the q(phi) mean vector.
std::vector<std::pair<double, double>> describe_phi(const AugmentationFamily& family,
                                                    const std::vector<double>& phi_point);
std::vector<std::string> phi_coord_names(const AugmentationFamily& family);

}  // namespace optima
