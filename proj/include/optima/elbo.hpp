#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "optima/augmentation.hpp"
#include "optima/data.hpp"
#include "optima/distributions.hpp"
#include "optima/graph.hpp"
#include "optima/model.hpp"
#include "optima/rng.hpp"

namespace optima {

/// Decomposed objective value: total = data_fit - beta_net*kl_theta - beta_aug*kl_phi.
struct ElboEstimate {
    double data_fit = 0.0;
    double kl_theta = 0.0;
    double kl_phi = 0.0;
    double beta_net = 0.1;
    double beta_aug = 1.0;
    double total = 0.0;

    void recompute_total() { total = data_fit - beta_net * kl_theta - beta_aug * kl_phi; }
};

struct McConfig {
    std::size_t s_gamma = 4;   // gamma samples per example (marginalized inner expectation)
    std::size_t k_naive = 5;   // replication count for the naive estimator
    std::size_t s_theta = 1;   // theta draws per step
    std::size_t s_phi = 1;     // phi draws per step
    void validate() const;
};

struct Betas {
    double net = 0.1;
    double aug = 1.0;
};

struct Priors {
    double theta_std = 1.0;  // p(theta) = N(0, theta_std^2 I) over Bayesian layers
};

enum class Objective { Marginalized, Naive };

/// EMA baseline for the mixup score-function estimator (decay 0.9).
struct ScoreBaseline {
    double value = 0.0;
    bool initialized = false;
    double decay = 0.9;
    void update(double batch_mean) {
        value = initialized ? decay * value + (1.0 - decay) * batch_mean : batch_mean;
        initialized = true;
    }
};

/// Log-likelihood of one transformed sample (handles mixup's mixed labels).
double sample_loglik(const ModelState& state, const std::vector<double>& theta_noise,
                     const AugmentationFamily& family, const TransformSample& sample,
                     const Dataset& data, std::size_t index,
                     std::optional<std::size_t> companion_index = std::nullopt);

/// log[(1/s) sum_j exp(l_j)] over the provided gamma samples, via a
/// shift-stable log-sum-exp. Throws when every l_j is -inf (degenerate
/// likelihood).
double marginalized_loglik(const ModelState& state, const std::vector<double>& theta_noise,
                           const AugmentationFamily& family,
                           const std::vector<TransformSample>& gamma_samples, const Dataset& data,
                           std::size_t index,
                           std::optional<std::size_t> companion_index = std::nullopt);

/// (1/K) sum_j l_j over the provided gamma samples.
double naive_loglik(const ModelState& state, const std::vector<double>& theta_noise,
                    const AugmentationFamily& family,
                    const std::vector<TransformSample>& gamma_samples, const Dataset& data,
                    std::size_t index, std::optional<std::size_t> companion_index = std::nullopt);

/// D_phi = marginalized - naive over shared samples; >= 0 by Jensen on the
/// empirical measure, exactly 0 when the likelihood is constant across gamma.
double marginalization_advantage(const ModelState& state, const std::vector<double>& theta_noise,
                                 const AugmentationFamily& family,
                                 const std::vector<TransformSample>& gamma_samples,
                                 const Dataset& data, std::size_t index,
                                 std::optional<std::size_t> companion_index = std::nullopt);

double log_mean_exp(const std::vector<double>& values);

/// Reusable graph structure for repeated gradient calls with identical shapes
/// (batch size, sample counts, family, spec). The trainer keys one per batch
/// size; leaf values are rebound every step.
struct ElboGraphCache {
    std::string signature;
    ComputationGraph graph;
    Bindings static_bind;
    NetworkSpec spec_copy;
    std::shared_ptr<NetworkGraph> net;
    std::vector<int> theta_draws;
    int objective_node = -1;
    bool phi_in_graph = false;
    std::vector<std::string> wrt;
    std::vector<std::string> warp_slots;
    ExecWorkspace workspace;
};

struct ElboOptions {
    McConfig mc;
    Betas betas;
    Priors priors;
    Objective objective = Objective::Marginalized;
    bool with_grads = false;
    bool learn_phi = true;           // false freezes q(phi): no phi gradients
    std::uint64_t step = 0;          // keys the per-step / per-example noise
    ScoreBaseline* baseline = nullptr;  // mixup score-function baseline (optional)
    ElboGraphCache* cache = nullptr;    // graph reuse across steps (optional)
};

struct ElboResult {
    ElboEstimate estimate;
    double dphi_mean = 0.0;        // batch-mean marginalization advantage (shared samples)
    double naive_data_fit = 0.0;   // data-fit under the naive estimator, same samples
    GradMap grads;                 // of `total` w.r.t. parameter blocks (with_grads)
};

/// Parameter-block names used in ElboResult::grads and by the trainer:
/// "l<i>.W_mu", "l<i>.b_mu" (+ ".W_ls"/".b_ls" for Bayesian layers),
/// "phi.mu", "phi.ls".
ElboResult augmented_elbo(const Dataset& data, const std::vector<std::size_t>& batch,
                          std::size_t nominal_batch_size, const ModelState& state,
                          const DiagonalGaussian& q_phi, const AugmentationFamily& family_template,
                          NoiseSource& noise, const ElboOptions& opts);

/// R_hat + sqrt((kl_total + log(2 sqrt(n) / delta)) / (2n)).
double pac_bayes_bound(double empirical_risk, double kl_total, std::size_t n, double delta);

}  // namespace optima
