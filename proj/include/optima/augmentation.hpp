#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "optima/array.hpp"
#include "optima/distributions.hpp"
#include "optima/rng.hpp"

namespace optima {

enum class FamilyKind { AdditiveShift, AffineImage, CategoricalChoice, MixupBeta };

const char* family_kind_name(FamilyKind k);
FamilyKind family_kind_from_name(const std::string& name);

/// Transformation family T_gamma plus the distribution p(gamma | phi).
///
/// phi layouts:
///   additive-shift:     [mu_1..mu_D, log_sigma_1..log_sigma_D]
///   affine-image:       [mu_w, log_sigma_w, mu_tx, log_sigma_tx, mu_ty, log_sigma_ty]
///   categorical-choice: [logit_1..logit_M, log_tau]
///   mixup-beta:         [mu_log_alpha, log_sigma_log_alpha]
struct AugmentationFamily {
    FamilyKind kind;
    std::vector<double> phi;
    DiagonalGaussian phi_prior;

    // additive-shift: dimension of the shifted input
    std::size_t input_dim = 0;
    // affine-image: raster size
    std::size_t height = 0, width = 0;
    // categorical-choice: M preset shift vectors over input_dim
    std::vector<std::vector<double>> discrete_shifts;

    std::size_t phi_dim() const { return phi.size(); }
    std::size_t gamma_dim() const;
    /// Coordinates of phi holding log-scale values (clamped by the trainer).
    std::vector<std::size_t> log_scale_coords() const;
    /// Per gamma coordinate: (name, index of its mean in phi, index of its
    /// log-sigma in phi or SIZE_MAX when the family has none).
    struct CoordDesc {
        std::string name;
        std::size_t mean_index;
        std::size_t log_sigma_index;
    };
    std::vector<CoordDesc> coord_layout() const;

    static AugmentationFamily additive_shift(std::size_t dim, double mu0, double sigma0,
                                             DiagonalGaussian prior);
    static AugmentationFamily affine_image(std::size_t h, std::size_t w, double sigma_omega0,
                                           double sigma_t0, DiagonalGaussian prior);
    static AugmentationFamily categorical_choice(std::vector<std::vector<double>> shifts,
                                                 double tau0, DiagonalGaussian prior);
    static AugmentationFamily mixup_beta(double alpha0, double sigma_log_alpha0,
                                         DiagonalGaussian prior);
};

struct TransformSample {
    std::vector<double> gamma;               // kind-specific values
    std::optional<double> log_density_q;     // score-function families only
    std::optional<double> log_alpha_draw;    // mixup: the sampled log(alpha) before clamping
};

TransformSample sample_gamma(const AugmentationFamily& family, NoiseSource& noise);

/// Exogenous noise values consumed per draw: D normals (additive-shift),
/// 3 normals (affine-image), M Gumbels (categorical-choice), 1 normal (mixup).
std::size_t gamma_noise_dim(const AugmentationFamily& family);
std::vector<double> draw_gamma_noise(const AugmentationFamily& family, NoiseSource& noise);

/// Deterministic map from pre-drawn noise to a transform sample; mixup
/// additionally consumes `beta_stream` for the Beta draw.
TransformSample gamma_from_noise(const AugmentationFamily& family,
                                 const std::vector<double>& noise_values,
                                 NoiseSource* beta_stream = nullptr);

/// Applies T_gamma. `companion` is the mixing partner for mixup-beta and is
/// ignored by the other kinds. Labels are untouched here; mixed-label
/// likelihoods are handled by the model's log_likelihood.
Array apply_transform(const AugmentationFamily& family, const TransformSample& sample,
                      const Array& x, const Array* companion = nullptr);

/// Rotation about the geometric image center ((H-1)/2, (W-1)/2) followed by a
/// translation of (t_x * W, t_y * H) pixels; bilinear sampling, out-of-bounds
/// reads as zero.
Array bilinear_affine_warp(const Array& image, double omega, double t_x, double t_y);

/// Warp plus forward-mode partials with respect to omega, t_x, t_y.
struct WarpResult {
    Array warped;
    Array d_omega, d_tx, d_ty;
};
WarpResult bilinear_affine_warp_with_partials(const Array& image, double omega, double t_x,
                                              double t_y);

/// softmax((logits + Gumbel) / tau); positive entries summing to 1.
std::vector<double> gumbel_softmax_sample(const std::vector<double>& logits, double temperature,
                                          NoiseSource& noise);

struct MixupDraw {
    double lambda;       // clamped to [1e-6, 1-1e-6]
    double log_alpha;    // the Gaussian draw (pre-clamp)
    double alpha;        // exp(log_alpha) clamped to [1e-4, 100]
    double log_density_q;
};
MixupDraw sample_mixup_lambda(const AugmentationFamily& family, NoiseSource& noise);

/// Gamma(shape, 1) variate; building block for Beta sampling.
double sample_gamma_variate(double shape, NoiseSource& noise);
double sample_beta(double a, double b, NoiseSource& noise);

constexpr double kMixupAlphaMin = 1e-4;
constexpr double kMixupAlphaMax = 100.0;
constexpr double kMixupLambdaEps = 1e-6;

}  // namespace optima
