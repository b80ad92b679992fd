#pragma once

#include <optional>
#include <string>
#include <vector>

#include "optima/array.hpp"
#include "optima/augmentation.hpp"
#include "optima/distributions.hpp"
#include "optima/graph.hpp"
#include "optima/rng.hpp"

namespace optima {

enum class Activation { Tanh, Relu };
enum class HeadKind { GaussianRegression, Categorical };

Activation activation_from_name(const std::string& name);
const char* activation_name(Activation a);

struct NetworkSpec {
    std::vector<std::size_t> layer_sizes;   // [in, hidden..., out]
    std::vector<Activation> activations;    // one per hidden transition
    HeadKind head = HeadKind::GaussianRegression;
    double noise_std = 0.2;                 // Gaussian head observation noise
    std::size_t n_classes = 0;              // categorical head
    bool bayes_last_layer = true;
    bool bayes_all_layers = false;          // tiny-net toggle used in tests

    std::size_t n_layers() const { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    bool layer_is_bayesian(std::size_t i) const {
        return bayes_all_layers || (bayes_last_layer && i + 1 == n_layers());
    }
    void validate() const;

    static NetworkSpec mlp(std::vector<std::size_t> sizes, Activation act, HeadKind head);
};

struct Layer {
    Array W_mu, b_mu;                    // point value, or posterior mean when Bayesian
    std::optional<Array> W_ls, b_ls;     // log-std (Bayesian layers only)
    bool bayesian() const { return W_ls.has_value(); }
    std::size_t noise_dim() const { return bayesian() ? W_mu.size() + b_mu.size() : 0; }
};

struct ModelState {
    NetworkSpec spec;
    std::vector<Layer> layers;

    std::size_t theta_noise_dim() const;
    // KL(q(theta) || N(0, prior_std^2 I)) over all Bayesian layers.
    double kl_theta(double prior_std) const;

    static ModelState init(const NetworkSpec& spec, NoiseSource& noise,
                           double q_log_std_init = -5.0);
};

/// One stochastic forward pass. theta_noise must have theta_noise_dim entries
/// (empty when the network has no Bayesian layer).
Array forward(const ModelState& state, const std::vector<double>& theta_noise, const Array& x);

double log_likelihood(const NetworkSpec& spec, const Array& output, const Array& y_value);
double log_likelihood(const NetworkSpec& spec, const Array& output, std::size_t y_class);
/// Mixed-label likelihood for mixup: lam * log p(y_a) + (1-lam) * log p(y_b).
double log_likelihood_mixed(const NetworkSpec& spec, const Array& output, std::size_t y_a,
                            std::size_t y_b, double lam);

/// Graph construction for the same network. Parameter slots are leaves named
/// "<prefix>l<i>.W_mu" etc so training can differentiate through everything
/// forward() computes. Each theta draw gets its own noise slots via new_draw.
class NetworkGraph {
  public:
    NetworkGraph(ComputationGraph& g, const NetworkSpec& spec, std::string prefix = "");

    /// Creates the noise slots and effective-weight nodes for one theta draw.
    int new_draw(ComputationGraph& g);

    /// Appends the affine/activation chain applied to `x_node`; returns output node.
    int apply(ComputationGraph& g, int x_node, int draw) const;

    void bind_params(const ModelState& state, Bindings& b) const;
    void bind_theta_noise(const std::vector<double>& noise, int draw, Bindings& b) const;

    /// Leaf names of trainable parameters (means always; log-stds for Bayesian layers).
    std::vector<std::string> param_slots() const { return param_slots_; }
    const std::string& prefix() const { return prefix_; }

  private:
    const NetworkSpec* spec_;
    std::string prefix_;
    std::vector<int> w_mu_, b_mu_, w_ls_, b_ls_;  // param leaf ids per layer (-1 when absent)
    struct DrawNodes {
        std::vector<int> W_eff, b_eff;  // effective (possibly sampled) weights per layer
    };
    std::vector<DrawNodes> draws_;
    std::vector<std::string> param_slots_;
};

/// Scalar log-likelihood node: Gaussian head reads leaf "<prefix>y" (target
/// vector); categorical head reads leaf "<prefix>y_onehot" (one-hot or
/// mixup-mixed weights summing to 1).
struct LikelihoodGraph {
    int ll_node;
    std::string y_slot;
};
LikelihoodGraph build_log_likelihood(ComputationGraph& g, const NetworkSpec& spec, int output_node,
                                     const std::string& prefix);
void bind_target(const NetworkSpec& spec, const std::string& y_slot, const Array& y_value,
                 Bindings& b);
void bind_target_class(const NetworkSpec& spec, const std::string& y_slot, std::size_t y_class,
                       Bindings& b);
void bind_target_mixed(const NetworkSpec& spec, const std::string& y_slot, std::size_t y_a,
                       std::size_t y_b, double lam, Bindings& b);

struct PredictOptions {
    bool marginalize_aug = false;
    const AugmentationFamily* family = nullptr;
    const DiagonalGaussian* q_phi = nullptr;
};

struct PredictResult {
    // classification: mean class probabilities; regression: {mean..., var...}
    std::vector<double> probs;
    std::vector<double> mean;
    std::vector<double> variance;
};

PredictResult predict(const ModelState& state, const Array& x, std::size_t n_samples,
                      NoiseSource& noise, const PredictOptions& opts = {});

}  // namespace optima
