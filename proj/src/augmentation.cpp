#include "optima/augmentation.hpp"

#include <cmath>
#include <stdexcept>

namespace optima {

const char* family_kind_name(FamilyKind k) {
    switch (k) {
        case FamilyKind::AdditiveShift: return "additive-shift";
        case FamilyKind::AffineImage: return "affine-image";
        case FamilyKind::CategoricalChoice: return "categorical-choice";
        case FamilyKind::MixupBeta: return "mixup-beta";
    }
    return "?";
}

FamilyKind family_kind_from_name(const std::string& name) {
    if (name == "additive-shift") return FamilyKind::AdditiveShift;
    if (name == "affine-image") return FamilyKind::AffineImage;
    if (name == "categorical-choice") return FamilyKind::CategoricalChoice;
    if (name == "mixup-beta") return FamilyKind::MixupBeta;
    throw std::invalid_argument("unknown augmentation family '" + name + "'");
}

std::size_t AugmentationFamily::gamma_dim() const {
    switch (kind) {
        case FamilyKind::AdditiveShift: return input_dim;
        case FamilyKind::AffineImage: return 3;
        case FamilyKind::CategoricalChoice: return discrete_shifts.size();
        case FamilyKind::MixupBeta: return 1;
    }
    return 0;
}

std::vector<std::size_t> AugmentationFamily::log_scale_coords() const {
    std::vector<std::size_t> out;
    switch (kind) {
        case FamilyKind::AdditiveShift:
            for (std::size_t d = 0; d < input_dim; ++d) out.push_back(input_dim + d);
            break;
        case FamilyKind::AffineImage:
            out = {1, 3, 5};
            break;
        case FamilyKind::CategoricalChoice:
            out = {phi.size() - 1};  // log tau
            break;
        case FamilyKind::MixupBeta:
            out = {1};  // log sigma over log alpha
            break;
    }
    return out;
}

std::vector<AugmentationFamily::CoordDesc> AugmentationFamily::coord_layout() const {
    std::vector<CoordDesc> out;
    constexpr std::size_t none = static_cast<std::size_t>(-1);
    switch (kind) {
        case FamilyKind::AdditiveShift:
            for (std::size_t d = 0; d < input_dim; ++d)
                out.push_back({"shift" + std::to_string(d), d, input_dim + d});
            break;
        case FamilyKind::AffineImage:
            out.push_back({"omega", 0, 1});
            out.push_back({"tx", 2, 3});
            out.push_back({"ty", 4, 5});
            break;
        case FamilyKind::CategoricalChoice:
            for (std::size_t m = 0; m + 1 < phi.size(); ++m)
                out.push_back({"logit" + std::to_string(m), m, none});
            out.push_back({"log_tau", phi.size() - 1, none});
            break;
        case FamilyKind::MixupBeta:
            out.push_back({"log_alpha", 0, 1});
            break;
    }
    return out;
}

AugmentationFamily AugmentationFamily::additive_shift(std::size_t dim, double mu0, double sigma0,
                                                      DiagonalGaussian prior) {
    if (dim < 1) throw std::invalid_argument("additive_shift: dim must be >= 1");
    AugmentationFamily f;
    f.kind = FamilyKind::AdditiveShift;
    f.input_dim = dim;
    f.phi.assign(2 * dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) {
        f.phi[d] = mu0;
        f.phi[dim + d] = std::log(sigma0);
    }
    if (prior.dim() != f.phi.size())
        throw std::invalid_argument("additive_shift: prior dim must equal 2*dim");
    f.phi_prior = std::move(prior);
    return f;
}

AugmentationFamily AugmentationFamily::affine_image(std::size_t h, std::size_t w,
                                                    double sigma_omega0, double sigma_t0,
                                                    DiagonalGaussian prior) {
    if (h < 2 || w < 2) throw std::invalid_argument("affine_image: H, W must be >= 2");
    AugmentationFamily f;
    f.kind = FamilyKind::AffineImage;
    f.height = h;
    f.width = w;
    f.phi = {0.0, std::log(sigma_omega0), 0.0, std::log(sigma_t0), 0.0, std::log(sigma_t0)};
    if (prior.dim() != 6) throw std::invalid_argument("affine_image: prior dim must be 6");
    f.phi_prior = std::move(prior);
    return f;
}

AugmentationFamily AugmentationFamily::categorical_choice(std::vector<std::vector<double>> shifts,
                                                          double tau0, DiagonalGaussian prior) {
    if (shifts.empty()) throw std::invalid_argument("categorical_choice: need >= 1 transform");
    if (!(tau0 > 0.0)) throw std::invalid_argument("categorical_choice: tau must be > 0");
    AugmentationFamily f;
    f.kind = FamilyKind::CategoricalChoice;
    f.input_dim = shifts[0].size();
    for (const auto& s : shifts)
        if (s.size() != f.input_dim)
            throw std::invalid_argument("categorical_choice: inconsistent shift dims");
    f.discrete_shifts = std::move(shifts);
    f.phi.assign(f.discrete_shifts.size() + 1, 0.0);
    f.phi.back() = std::log(tau0);
    if (prior.dim() != f.phi.size())
        throw std::invalid_argument("categorical_choice: prior dim must be M+1");
    f.phi_prior = std::move(prior);
    return f;
}

AugmentationFamily AugmentationFamily::mixup_beta(double alpha0, double sigma_log_alpha0,
                                                  DiagonalGaussian prior) {
    if (!(alpha0 > 0.0)) throw std::invalid_argument("mixup_beta: alpha0 must be > 0");
    AugmentationFamily f;
    f.kind = FamilyKind::MixupBeta;
    f.phi = {std::log(alpha0), std::log(sigma_log_alpha0)};
    if (prior.dim() != 2) throw std::invalid_argument("mixup_beta: prior dim must be 2");
    f.phi_prior = std::move(prior);
    return f;
}

namespace {
void require_finite_phi(const AugmentationFamily& f) {
    for (double v : f.phi)
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string("sample_gamma: non-finite phi for ") +
                                        family_kind_name(f.kind));
}
}  // namespace

std::size_t gamma_noise_dim(const AugmentationFamily& family) {
    switch (family.kind) {
        case FamilyKind::AdditiveShift: return family.input_dim;
        case FamilyKind::AffineImage: return 3;
        case FamilyKind::CategoricalChoice: return family.discrete_shifts.size();
        case FamilyKind::MixupBeta: return 1;
    }
    return 0;
}

std::vector<double> draw_gamma_noise(const AugmentationFamily& family, NoiseSource& noise) {
    std::size_t n = gamma_noise_dim(family);
    std::vector<double> out(n);
    if (family.kind == FamilyKind::CategoricalChoice) {
        for (double& v : out) v = noise.gumbel();
    } else {
        for (double& v : out) v = noise.normal();
    }
    return out;
}

TransformSample gamma_from_noise(const AugmentationFamily& family,
                                 const std::vector<double>& noise_values,
                                 NoiseSource* beta_stream) {
    require_finite_phi(family);
    if (noise_values.size() != gamma_noise_dim(family))
        throw std::invalid_argument("gamma_from_noise: wrong noise length");
    TransformSample s;
    switch (family.kind) {
        case FamilyKind::AdditiveShift: {
            std::size_t d = family.input_dim;
            s.gamma.resize(d);
            for (std::size_t i = 0; i < d; ++i) {
                double sd = std::exp(clamp_log_std(family.phi[d + i]));
                s.gamma[i] = family.phi[i] + sd * noise_values[i];
            }
            break;
        }
        case FamilyKind::AffineImage: {
            s.gamma.resize(3);
            for (std::size_t k = 0; k < 3; ++k) {
                double sd = std::exp(clamp_log_std(family.phi[2 * k + 1]));
                s.gamma[k] = family.phi[2 * k] + sd * noise_values[k];
            }
            break;
        }
        case FamilyKind::CategoricalChoice: {
            std::size_t m = family.discrete_shifts.size();
            double tau = std::exp(clamp_log_std(family.phi[m]));
            std::vector<double> z(m);
            for (std::size_t i = 0; i < m; ++i) z[i] = (family.phi[i] + noise_values[i]) / tau;
            double mx = z[0];
            for (double v : z) mx = std::max(mx, v);
            double sum = 0.0;
            for (double& v : z) {
                v = std::exp(v - mx);
                sum += v;
            }
            for (double& v : z) v /= sum;
            s.gamma = std::move(z);
            break;
        }
        case FamilyKind::MixupBeta: {
            if (beta_stream == nullptr)
                throw std::invalid_argument("gamma_from_noise: mixup needs a beta stream");
            double mu = family.phi[0];
            double sd = std::exp(clamp_log_std(family.phi[1]));
            double ell = mu + sd * noise_values[0];
            double z = (ell - mu) / sd;
            s.log_alpha_draw = ell;
            s.log_density_q = -0.91893853320467274178 - std::log(sd) - 0.5 * z * z;
            double alpha = std::exp(ell);
            alpha = std::min(std::max(alpha, kMixupAlphaMin), kMixupAlphaMax);
            double lam = sample_beta(alpha, alpha, *beta_stream);
            lam = std::min(std::max(lam, kMixupLambdaEps), 1.0 - kMixupLambdaEps);
            s.gamma = {lam};
            break;
        }
    }
    return s;
}

TransformSample sample_gamma(const AugmentationFamily& family, NoiseSource& noise) {
    require_finite_phi(family);
    std::vector<double> nv = draw_gamma_noise(family, noise);
    NoiseSource beta = noise.child(0xBE7A);
    return gamma_from_noise(family, nv, &beta);
}

Array apply_transform(const AugmentationFamily& family, const TransformSample& sample,
                      const Array& x, const Array* companion) {
    switch (family.kind) {
        case FamilyKind::AdditiveShift: {
            if (x.rank() != 1 || x.shape[0] != family.input_dim)
                throw std::invalid_argument("apply_transform: additive-shift expects a vector of dim " +
                                            std::to_string(family.input_dim) + ", got " +
                                            shape_str(x.shape));
            Array out = x;
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += sample.gamma[i];
            return out;
        }
        case FamilyKind::AffineImage: {
            if (x.rank() != 2 || x.shape[0] != family.height || x.shape[1] != family.width)
                throw std::invalid_argument("apply_transform: affine-image expects " +
                                            std::to_string(family.height) + "x" +
                                            std::to_string(family.width) + " raster, got " +
                                            shape_str(x.shape));
            return bilinear_affine_warp(x, sample.gamma[0], sample.gamma[1], sample.gamma[2]);
        }
        case FamilyKind::CategoricalChoice: {
            if (x.rank() != 1 || x.shape[0] != family.input_dim)
                throw std::invalid_argument("apply_transform: categorical-choice dim mismatch");
            Array out = x;
            for (std::size_t m = 0; m < family.discrete_shifts.size(); ++m) {
                double w = sample.gamma[m];
                const auto& shift = family.discrete_shifts[m];
                for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += w * shift[i];
            }
            return out;
        }
        case FamilyKind::MixupBeta: {
            if (companion == nullptr)
                throw std::invalid_argument("apply_transform: mixup-beta requires a companion input");
            if (!x.same_shape(*companion))
                throw std::invalid_argument("apply_transform: mixup companion shape mismatch");
            double lam = sample.gamma[0];
            Array out = x;
            for (std::size_t i = 0; i < out.size(); ++i)
                out.data[i] = lam * x.data[i] + (1.0 - lam) * companion->data[i];
            return out;
        }
    }
    throw std::logic_error("apply_transform: unreachable");
}

namespace {

struct SourceCoord {
    double xs, ys;
    double dxs_dom, dys_dom;
};

// Dest (col=xd, row=yd) pulls from source = R(-omega)*(dest - center - t) + center.
inline SourceCoord source_for(double xd, double yd, double cx, double cy, double tx_px,
                              double ty_px, double c, double s) {
    double u = xd - cx - tx_px;
    double v = yd - cy - ty_px;
    SourceCoord out;
    out.xs = c * u + s * v + cx;
    out.ys = -s * u + c * v + cy;
    out.dxs_dom = -s * u + c * v;
    out.dys_dom = -c * u - s * v;
    return out;
}

}  // namespace

WarpResult bilinear_affine_warp_with_partials(const Array& image, double omega, double t_x,
                                              double t_y) {
    if (image.rank() != 2 || image.shape[0] < 2 || image.shape[1] < 2)
        throw std::invalid_argument("bilinear_affine_warp: image must be H x W with H, W >= 2");
    std::size_t h = image.shape[0], w = image.shape[1];
    double cx = (static_cast<double>(w) - 1.0) / 2.0;
    double cy = (static_cast<double>(h) - 1.0) / 2.0;
    double tx_px = t_x * static_cast<double>(w);
    double ty_px = t_y * static_cast<double>(h);
    double c = std::cos(omega), s = std::sin(omega);

    WarpResult res{Array({h, w}), Array({h, w}), Array({h, w}), Array({h, w})};
    auto pixel = [&](long r, long col) -> double {
        if (r < 0 || col < 0 || r >= static_cast<long>(h) || col >= static_cast<long>(w)) return 0.0;
        return image.data[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(col)];
    };

    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            SourceCoord sc = source_for(static_cast<double>(col), static_cast<double>(r), cx, cy,
                                        tx_px, ty_px, c, s);
            double fx = std::floor(sc.xs), fy = std::floor(sc.ys);
            long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
            double ax = sc.xs - fx, ay = sc.ys - fy;

            double p00 = pixel(y0, x0), p01 = pixel(y0, x0 + 1);
            double p10 = pixel(y0 + 1, x0), p11 = pixel(y0 + 1, x0 + 1);

            double top = p00 + ax * (p01 - p00);
            double bot = p10 + ax * (p11 - p10);
            double val = top + ay * (bot - top);

            // d(val)/d(xs), d(val)/d(ys) within the bilinear cell
            double dv_dxs = (1.0 - ay) * (p01 - p00) + ay * (p11 - p10);
            double dv_dys = bot - top;

            std::size_t idx = r * w + col;
            res.warped.data[idx] = val;
            res.d_omega.data[idx] = dv_dxs * sc.dxs_dom + dv_dys * sc.dys_dom;
            // xs = c*u + s*v with u = xd - cx - tx*W: dxs/dtx = -W*c, dys/dtx = W*s
            res.d_tx.data[idx] = dv_dxs * (-static_cast<double>(w) * c) +
                                 dv_dys * (static_cast<double>(w) * s);
            res.d_ty.data[idx] = dv_dxs * (-static_cast<double>(h) * s) +
                                 dv_dys * (-static_cast<double>(h) * c);
        }
    }
    return res;
}

Array bilinear_affine_warp(const Array& image, double omega, double t_x, double t_y) {
    return bilinear_affine_warp_with_partials(image, omega, t_x, t_y).warped;
}

std::vector<double> gumbel_softmax_sample(const std::vector<double>& logits, double temperature,
                                          NoiseSource& noise) {
    if (!(temperature > 0.0))
        throw std::invalid_argument("gumbel_softmax_sample: temperature must be > 0");
    std::vector<double> z(logits.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (logits[i] + noise.gumbel()) / temperature;
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
}

double sample_gamma_variate(double shape, NoiseSource& noise) {
    if (!(shape > 0.0)) throw std::invalid_argument("sample_gamma_variate: shape must be > 0");
    if (shape < 1.0) {
        // boost: G(a) = G(a+1) * U^(1/a)
        double u = noise.uniform();
        while (u <= 0.0) u = noise.uniform();
        return sample_gamma_variate(shape + 1.0, noise) * std::pow(u, 1.0 / shape);
    }
    // Marsaglia-Tsang squeeze
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = noise.normal();
        double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        double v = t * t * t;
        double u = noise.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double sample_beta(double a, double b, NoiseSource& noise) {
    double x = sample_gamma_variate(a, noise);
    double y = sample_gamma_variate(b, noise);
    return x / (x + y);
}

MixupDraw sample_mixup_lambda(const AugmentationFamily& family, NoiseSource& noise) {
    if (family.kind != FamilyKind::MixupBeta)
        throw std::invalid_argument("sample_mixup_lambda: family kind must be mixup-beta");
    require_finite_phi(family);
    double mu = family.phi[0];
    double sd = std::exp(clamp_log_std(family.phi[1]));
    double eps = noise.normal();
    MixupDraw d;
    d.log_alpha = mu + sd * eps;
    double z = (d.log_alpha - mu) / sd;
    d.log_density_q = -0.91893853320467274178 - std::log(sd) - 0.5 * z * z;
    d.alpha = std::exp(d.log_alpha);
    if (d.alpha < kMixupAlphaMin) d.alpha = kMixupAlphaMin;
    if (d.alpha > kMixupAlphaMax) d.alpha = kMixupAlphaMax;
    double lam = sample_beta(d.alpha, d.alpha, noise);
    if (lam < kMixupLambdaEps) lam = kMixupLambdaEps;
    if (lam > 1.0 - kMixupLambdaEps) lam = 1.0 - kMixupLambdaEps;
    d.lambda = lam;
    return d;
}

}  // namespace optima
