#include "optima/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "optima/data.hpp"
#include "optima/elbo.hpp"
#include "optima/graph.hpp"
#include "optima/metrics.hpp"

namespace optima {

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

TheoryReport jensen_gap_check(const std::function<double(double)>& f, double lipschitz_l,
                              const DiagonalGaussian& gamma_dist, std::size_t n_samples,
                              NoiseSource& noise) {
    if (gamma_dist.dim() != 1)
        throw std::invalid_argument("jensen_gap_check: gamma distribution must be 1-D");
    if (n_samples < 2) throw std::invalid_argument("jensen_gap_check: need n >= 2");

    std::vector<double> fs(n_samples);
    double mu = gamma_dist.mean[0];
    double sigma = gamma_dist.std_dev(0);
    for (std::size_t i = 0; i < n_samples; ++i) fs[i] = f(mu + sigma * noise.normal());

    double mean_f = mean_of(fs);
    double mx = *std::max_element(fs.begin(), fs.end());
    std::vector<double> es(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) es[i] = std::exp(fs[i] - mx);
    double mean_e = mean_of(es);
    double lme = mx + std::log(mean_e);
    double gap = lme - mean_f;

    double n = static_cast<double>(n_samples);
    double se_mean = sd_of(fs) / std::sqrt(n);
    double se_lme = sd_of(es) / (mean_e * std::sqrt(n));  // delta method on log
    double se = se_mean + se_lme;
    double bound = 0.5 * lipschitz_l * lipschitz_l * sigma * sigma;

    TheoryReport r;
    r.check_name = "jensen-gap";
    r.quantities = {{"gap", gap},   {"bound", bound}, {"mc_se", se},
                    {"sigma", sigma}, {"lipschitz", lipschitz_l}};
    r.bound = bound;
    r.tolerance = 3.0 * se;
    r.pass = gap <= bound + 3.0 * se + 1e-12 && gap >= -(3.0 * se + 1e-12);
    return r;
}

TheoryReport jensen_gap_sweep(std::size_t n_functions, std::size_t n_samples,
                              std::uint64_t seed) {
    NoiseSource master(seed, 0x9A9);
    TheoryReport r;
    r.check_name = "jensen-gap";
    std::size_t failures = 0;
    double worst_margin = -1e300;
    for (std::size_t t = 0; t < n_functions; ++t) {
        NoiseSource rng = master.child(t);
        double a = 2.0 * rng.uniform() - 1.0;        // tanh amplitude
        double w = 2.0 * rng.uniform() - 1.0;        // tanh frequency
        double c = 2.0 * rng.uniform() - 1.0;        // phase
        double b = 2.0 * rng.uniform() - 1.0;        // linear part
        double s = 1.5 * rng.uniform() - 0.75;       // sine amplitude
        auto f = [=](double g) { return a * std::tanh(w * g + c) + b * g + s * std::sin(g); };
        // |f'| <= |a w| + |b| + |s|
        double lipschitz = std::abs(a * w) + std::abs(b) + std::abs(s);
        double sigma = 0.1 + 0.6 * rng.uniform();
        DiagonalGaussian gd({2.0 * rng.uniform() - 1.0}, {std::log(sigma)});
        NoiseSource mc = rng.child(99);
        TheoryReport one = jensen_gap_check(f, lipschitz, gd, n_samples, mc);
        if (!one.pass) ++failures;
        double margin = one.quantities.at("gap") - one.bound;
        worst_margin = std::max(worst_margin, margin - one.tolerance);
    }
    r.quantities = {{"functions", static_cast<double>(n_functions)},
                    {"failures", static_cast<double>(failures)},
                    {"worst_margin_minus_tol", worst_margin}};
    r.bound = 0.0;
    r.pass = failures == 0;
    return r;
}

ShrinkageResult posterior_shrinkage(const ConjugateGaussianModel& model, std::size_t k) {
    if (k < 1) throw std::invalid_argument("posterior_shrinkage: k must be >= 1");
    if (!(model.prior_var > 0.0) || !(model.obs_var > 0.0))
        throw std::invalid_argument("posterior_shrinkage: variances must be > 0");
    double n = static_cast<double>(model.observations.size());
    double kk = static_cast<double>(k);
    ShrinkageResult r;
    r.var_true = 1.0 / (1.0 / model.prior_var + n / model.obs_var);
    r.var_naive = 1.0 / (1.0 / model.prior_var + n * kk / model.obs_var);
    r.ratio = r.var_naive / r.var_true;
    return r;
}

TheoryReport posterior_shrinkage_check() {
    TheoryReport r;
    r.check_name = "shrinkage";
    r.tolerance = 1e-6;
    r.pass = true;
    ConjugateGaussianModel m;
    m.prior_var = 1e9;
    m.obs_var = 1.0;
    m.observations.assign(10, 0.0);
    for (std::size_t k : {std::size_t{1}, std::size_t{2}, std::size_t{5}, std::size_t{10}}) {
        ShrinkageResult s = posterior_shrinkage(m, k);
        double err = std::abs(s.ratio - 1.0 / static_cast<double>(k));
        r.quantities["ratio_k" + std::to_string(k)] = s.ratio;
        r.quantities["err_k" + std::to_string(k)] = err;
        if (k > 1 && err >= 1e-6) r.pass = false;
        // exact algebraic bound: |ratio - 1/k| <= obs_var / (k N prior_var)
        double algebraic =
            m.obs_var / (static_cast<double>(k) * 10.0 * m.prior_var);
        if (err > algebraic + 1e-15) r.pass = false;
    }
    return r;
}

namespace {

// Exact Jacobian of the network output at x, one gradient pass per output.
std::vector<std::vector<double>> exact_jacobian(const ModelState& state, const Array& x) {
    const NetworkSpec& spec = state.spec;
    std::size_t out_dim = spec.output_dim(), in_dim = spec.input_dim();
    ComputationGraph g;
    NetworkGraph net(g, spec, "");
    int draw = net.new_draw(g);
    int xin = g.input("x", {in_dim});
    int out = net.apply(g, xin, draw);
    int onehot = g.input("pick", {out_dim});
    g.set_output(g.sum_reduce(g.multiply(out, onehot)));

    Bindings bind;
    net.bind_params(state, bind);
    net.bind_theta_noise(std::vector<double>(state.theta_noise_dim(), 0.0), draw, bind);
    bind["x"] = x;

    std::vector<std::vector<double>> jac(out_dim);
    for (std::size_t k = 0; k < out_dim; ++k) {
        Array pick({out_dim});
        pick.data[k] = 1.0;
        bind["pick"] = pick;
        auto grads = gradient(g, bind, {"x"});
        jac[k] = grads["x"].data;
    }
    return jac;
}

std::vector<std::vector<double>> jacobian_at(const ModelState& state,
                                             const std::vector<double>& x_values) {
    return exact_jacobian(state, Array::vector(x_values));
}

}  // namespace

TheoryReport invariance_expansion_check(const ModelState& state, const Array& x,
                                        const std::vector<double>& sigma_diag,
                                        std::size_t n_samples, NoiseSource& noise,
                                        double tolerance) {
    const NetworkSpec& spec = state.spec;
    std::size_t in_dim = spec.input_dim(), out_dim = spec.output_dim();
    if (x.size() != in_dim || sigma_diag.size() != in_dim)
        throw std::invalid_argument("invariance_expansion_check: dimension mismatch");

    std::vector<double> theta_zero(state.theta_noise_dim(), 0.0);
    Array f0 = forward(state, theta_zero, x);

    // Monte Carlo expected squared output difference
    double mc = 0.0;
    std::vector<double> sds(in_dim);
    for (std::size_t i = 0; i < in_dim; ++i) sds[i] = std::sqrt(sigma_diag[i]);
    Array xp = x;
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (std::size_t i = 0; i < in_dim; ++i) xp.data[i] = x.data[i] + sds[i] * noise.normal();
        Array fs = forward(state, theta_zero, xp);
        double d2 = 0.0;
        for (std::size_t k = 0; k < out_dim; ++k) {
            double d = fs.data[k] - f0.data[k];
            d2 += d * d;
        }
        mc += d2;
    }
    mc /= static_cast<double>(n_samples);

    // first-order term: sum_k sum_i J_ki^2 sigma_i^2
    auto jac = exact_jacobian(state, x);
    double first = 0.0;
    for (std::size_t k = 0; k < out_dim; ++k)
        for (std::size_t i = 0; i < in_dim; ++i) first += jac[k][i] * jac[k][i] * sigma_diag[i];

    // Hessians by central differences of exact gradients (step 1e-4)
    const double h = 1e-4;
    std::vector<std::vector<std::vector<double>>> hess(
        out_dim, std::vector<std::vector<double>>(in_dim, std::vector<double>(in_dim, 0.0)));
    for (std::size_t i = 0; i < in_dim; ++i) {
        std::vector<double> xp_v(x.data), xm_v(x.data);
        xp_v[i] += h;
        xm_v[i] -= h;
        auto jp = jacobian_at(state, xp_v);
        auto jm = jacobian_at(state, xm_v);
        for (std::size_t k = 0; k < out_dim; ++k)
            for (std::size_t j = 0; j < in_dim; ++j)
                hess[k][j][i] = (jp[k][j] - jm[k][j]) / (2.0 * h);
    }
    // quartic Gaussian moment: E[(d^T H d)^2] = (Tr(H S))^2 + 2 Tr((H S)^2)
    double second = 0.0;
    double hess_norm = 0.0;
    for (std::size_t k = 0; k < out_dim; ++k) {
        double tr_hs = 0.0;
        for (std::size_t i = 0; i < in_dim; ++i) tr_hs += hess[k][i][i] * sigma_diag[i];
        double tr_hs2 = 0.0;
        for (std::size_t i = 0; i < in_dim; ++i)
            for (std::size_t j = 0; j < in_dim; ++j) {
                tr_hs2 += hess[k][i][j] * sigma_diag[j] * hess[k][j][i] * sigma_diag[i];
                hess_norm += hess[k][i][j] * hess[k][i][j];
            }
        second += 0.25 * (tr_hs * tr_hs + 2.0 * tr_hs2);
    }

    double analytic = first + second;
    double rel_err = std::abs(mc - analytic) / std::max(std::abs(analytic), 1e-300);

    TheoryReport r;
    r.check_name = "invariance";
    r.quantities = {{"mc", mc},         {"analytic", analytic}, {"first_order", first},
                    {"second_order", second}, {"rel_err", rel_err},  {"hessian_frobenius_sq", hess_norm}};
    r.bound = analytic;
    r.tolerance = tolerance;
    double max_var = *std::max_element(sigma_diag.begin(), sigma_diag.end());
    if (rel_err >= tolerance && max_var > 1e-3) {
        r.inconclusive = true;  // remainder plausibly dominates at this scale
        r.pass = false;
    } else {
        r.pass = rel_err < tolerance;
    }
    return r;
}

TheoryReport invariance_sweep(std::size_t n_networks, std::size_t n_samples, std::uint64_t seed) {
    NoiseSource master(seed, 0x14A);
    TheoryReport r;
    r.check_name = "invariance";
    r.pass = true;
    double worst = 0.0;
    for (std::size_t t = 0; t < n_networks; ++t) {
        NoiseSource rng = master.child(t);
        std::size_t in = 2 + static_cast<std::size_t>(rng.uniform() * 3);
        std::size_t hid = 3 + static_cast<std::size_t>(rng.uniform() * 4);
        std::size_t out = 1 + static_cast<std::size_t>(rng.uniform() * 3);
        NetworkSpec spec = NetworkSpec::mlp({in, hid, out}, Activation::Tanh,
                                            HeadKind::GaussianRegression);
        spec.bayes_last_layer = false;
        ModelState st = ModelState::init(spec, rng);
        // wider weights make curvature visible
        for (auto& l : st.layers)
            for (double& v : l.W_mu.data) v *= 2.0;
        Array x({in});
        for (double& v : x.data) v = rng.normal();
        std::vector<double> sig(in, 1e-4);
        NoiseSource mc = rng.child(7);
        TheoryReport one = invariance_expansion_check(st, x, sig, n_samples, mc, 0.05);
        worst = std::max(worst, one.quantities.at("rel_err"));
        if (!one.pass) r.pass = false;
    }
    r.quantities = {{"networks", static_cast<double>(n_networks)}, {"worst_rel_err", worst}};
    r.tolerance = 0.05;
    return r;
}

namespace {

// Cholesky log-determinant; throws when the matrix is not SPD.
double cholesky_log_det(const Array& m, const char* what) {
    std::size_t n = m.shape[0];
    std::vector<double> l(n * n, 0.0);
    double log_det = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = m.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
            if (i == j) {
                if (!(s > 0.0))
                    throw std::invalid_argument(std::string(what) +
                                                ": matrix is not positive definite");
                l[i * n + i] = std::sqrt(s);
                log_det += 2.0 * std::log(l[i * n + i]);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    return log_det;
}

void require_symmetric(const Array& m, const char* what) {
    if (m.rank() != 2 || m.shape[0] != m.shape[1])
        throw std::invalid_argument(std::string(what) + ": matrix must be square");
    std::size_t n = m.shape[0];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-9 * (1.0 + std::abs(m.at(i, j))))
                throw std::invalid_argument(std::string(what) + ": matrix is not symmetric");
}

}  // namespace

double information_gain(const Array& h_noaug, const Array& h_aug) {
    require_symmetric(h_noaug, "information_gain");
    require_symmetric(h_aug, "information_gain");
    if (h_noaug.shape != h_aug.shape)
        throw std::invalid_argument("information_gain: dimension mismatch");
    std::size_t n = h_noaug.shape[0];
    Array sum({n, n});
    for (std::size_t i = 0; i < n * n; ++i) sum.data[i] = h_noaug.data[i] + h_aug.data[i];
    // 0.5 [log det(A + B) - log det(A)] = 0.5 log det(I + A^{-1} B)
    return 0.5 * (cholesky_log_det(sum, "information_gain") -
                  cholesky_log_det(h_noaug, "information_gain"));
}

std::vector<double> symmetric_eigenvalues(const Array& m) {
    require_symmetric(m, "symmetric_eigenvalues");
    std::size_t n = m.shape[0];
    std::vector<double> a(m.data);
    auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-26) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(at(p, q)) < 1e-300) continue;
                double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = at(i, i);
    std::sort(eig.begin(), eig.end());
    return eig;
}

namespace {

Array random_spd(std::size_t n, NoiseSource& rng) {
    Array b({n, n});
    for (double& v : b.data) v = rng.normal();
    Array spd({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += b.at(i, k) * b.at(j, k);
            spd.at(i, j) = s;
        }
    for (std::size_t i = 0; i < n; ++i) spd.at(i, i) += 0.5 + static_cast<double>(n) * 0.1;
    return spd;
}

// Eigendecomposition route: eigenvalues of A^{-1/2} B A^{-1/2} via Jacobi,
// independent of the Cholesky implementation path.
double information_gain_eigen_route(const Array& a, const Array& b) {
    std::size_t n = a.shape[0];
    auto eva = symmetric_eigenvalues(a);
    // build A^{-1/2} from the Jacobi eigenvectors: rerun Jacobi tracking V
    // (small n; recompute rotations with an explicit accumulation)
    std::vector<double> mat(a.data);
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    auto at = [&](std::size_t i, std::size_t j) -> double& { return mat[i * n + j]; };
    auto vt = [&](std::size_t i, std::size_t j) -> double& { return v[i * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-26) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(at(p, q)) < 1e-300) continue;
                double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                    double vkp = vt(k, p), vkq = vt(k, q);
                    vt(k, p) = c * vkp - s * vkq;
                    vt(k, q) = s * vkp + c * vkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
    }
    (void)eva;
    std::vector<double> lam(n);
    for (std::size_t i = 0; i < n; ++i) lam[i] = at(i, i);
    // A^{-1/2} = V diag(lam^{-1/2}) V^T
    std::vector<double> isqrt(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                s += vt(i, k) * vt(j, k) / std::sqrt(lam[k]);
            isqrt[i * n + j] = s;
        }
    // M = A^{-1/2} B A^{-1/2}
    Array mm({n, n});
    std::vector<double> tmp(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += isqrt[i * n + k] * b.at(k, j);
            tmp[i * n + j] = s;
        }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += tmp[i * n + k] * isqrt[k * n + j];
            mm.at(i, j) = s;
        }
    // symmetrize tiny asymmetry from accumulation
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.5 * (mm.at(i, j) + mm.at(j, i));
            mm.at(i, j) = s;
            mm.at(j, i) = s;
        }
    double acc = 0.0;
    for (double e : symmetric_eigenvalues(mm)) acc += std::log1p(e);
    return 0.5 * acc;
}

}  // namespace

TheoryReport information_gain_check(std::size_t n_pairs, std::uint64_t seed) {
    NoiseSource master(seed, 0x16A1);
    TheoryReport r;
    r.check_name = "information-gain";
    r.tolerance = 1e-10;
    r.pass = true;
    double worst = 0.0;
    for (std::size_t t = 0; t < n_pairs; ++t) {
        NoiseSource rng = master.child(t);
        std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 5);
        Array a = random_spd(n, rng);
        Array b = random_spd(n, rng);
        double direct = information_gain(a, b);
        double eigen = information_gain_eigen_route(a, b);
        double err = std::abs(direct - eigen) / std::max(1.0, std::abs(eigen));
        worst = std::max(worst, err);
        if (err >= 1e-10) r.pass = false;
        if (direct < 0.0) r.pass = false;  // nonnegativity for SPD pairs
    }
    // identity pair, d = 2: 0.5 log det(2 I) = log 2
    Array eye({2, 2});
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    double id_gain = information_gain(eye, eye);
    if (std::abs(id_gain - std::log(2.0)) > 1e-12) r.pass = false;
    r.quantities = {{"pairs", static_cast<double>(n_pairs)},
                    {"worst_rel_err", worst},
                    {"identity_pair_gain", id_gain}};
    r.bound = std::log(2.0);
    return r;
}

TheoryReport dphi_nonnegativity_check(std::size_t n_triples, std::uint64_t seed) {
    NoiseSource master(seed, 0xD0F1);
    TheoryReport r;
    r.check_name = "dphi-nonneg";
    r.tolerance = 1e-12;
    r.pass = true;
    double min_dphi = 1e300, max_batch_gap = 0.0;
    for (std::size_t t = 0; t < n_triples; ++t) {
        NoiseSource rng = master.child(t);
        NetworkSpec spec = NetworkSpec::mlp(
            {1 + static_cast<std::size_t>(rng.uniform() * 3), 4, 1}, Activation::Tanh,
            HeadKind::GaussianRegression);
        spec.noise_std = 0.2 + 0.3 * rng.uniform();
        spec.bayes_last_layer = rng.uniform() < 0.5;
        ModelState st = ModelState::init(spec, rng);
        std::size_t d = spec.input_dim();
        Dataset data;
        data.task = Task::Regression;
        Array x({d});
        for (double& v : x.data) v = rng.normal();
        data.inputs.push_back(std::move(x));
        data.targets.push_back(Array::vector({rng.normal()}));

        auto fam = AugmentationFamily::additive_shift(
            d, 0.2 * rng.normal(), 0.05 + 0.4 * rng.uniform(),
            DiagonalGaussian::isotropic(2 * d, 0.0, 1.0));
        std::size_t s = 2 + static_cast<std::size_t>(rng.uniform() * 6);
        std::vector<TransformSample> samples;
        for (std::size_t j = 0; j < s; ++j) {
            NoiseSource gs = rng.child(100 + j);
            samples.push_back(sample_gamma(fam, gs));
        }
        std::vector<double> eps(st.theta_noise_dim());
        for (auto& e : eps) e = rng.normal();
        double dphi = marginalization_advantage(st, eps, fam, samples, data, 0);
        min_dphi = std::min(min_dphi, dphi);
        if (dphi < -1e-12) r.pass = false;
    }
    // constant-likelihood construction: zero weights, exact equality
    {
        NetworkSpec spec = NetworkSpec::mlp({1, 2, 1}, Activation::Tanh,
                                            HeadKind::GaussianRegression);
        spec.bayes_last_layer = false;
        NoiseSource rng = master.child(777777);
        ModelState st = ModelState::init(spec, rng);
        for (double& v : st.layers[0].W_mu.data) v = 0.0;
        for (double& v : st.layers[0].b_mu.data) v = 0.0;
        Dataset data;
        data.task = Task::Regression;
        data.inputs.push_back(Array::vector({0.4}));
        data.targets.push_back(Array::vector({0.1}));
        auto fam = AugmentationFamily::additive_shift(1, 0.0, 0.5,
                                                      DiagonalGaussian::isotropic(2, 0.0, 1.0));
        std::vector<TransformSample> samples;
        for (std::size_t j = 0; j < 5; ++j) {
            NoiseSource gs = rng.child(10 + j);
            samples.push_back(sample_gamma(fam, gs));
        }
        double dphi = marginalization_advantage(st, {}, fam, samples, data, 0);
        r.quantities["constant_case_dphi"] = dphi;
        if (dphi != 0.0) r.pass = false;
    }
    // batch identity: marginalized data-fit - naive data-fit == N * mean(D_phi)
    {
        NoiseSource rng = master.child(888888);
        Dataset data;
        data.task = Task::Regression;
        for (int i = 0; i < 8; ++i) {
            data.inputs.push_back(Array::vector({rng.normal()}));
            data.targets.push_back(Array::vector({rng.normal()}));
        }
        NetworkSpec spec = NetworkSpec::mlp({1, 4, 1}, Activation::Tanh,
                                            HeadKind::GaussianRegression);
        spec.bayes_last_layer = true;
        ModelState st = ModelState::init(spec, rng);
        auto fam = AugmentationFamily::additive_shift(1, 0.0, 0.3,
                                                      DiagonalGaussian::isotropic(2, 0.0, 1.0));
        DiagonalGaussian q_phi(fam.phi, {std::log(0.05), std::log(0.05)});
        ElboOptions opts;
        opts.mc.s_gamma = 4;
        NoiseSource noise(seed + 1);
        std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5, 6, 7};
        auto er = augmented_elbo(data, batch, 8, st, q_phi, fam, noise, opts);
        double gap = std::abs((er.estimate.data_fit - er.naive_data_fit) -
                              static_cast<double>(data.size()) * er.dphi_mean);
        max_batch_gap = gap;
        if (gap >= 1e-10) r.pass = false;
        if (er.dphi_mean < -1e-12) r.pass = false;
    }
    r.quantities["triples"] = static_cast<double>(n_triples);
    r.quantities["min_dphi"] = min_dphi;
    r.quantities["batch_identity_gap"] = max_batch_gap;
    return r;
}

namespace {

struct MixtureData {
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
};

MixtureData gaussian_mixture(std::size_t n, std::size_t dim, double separation, double obs_std,
                             double flip_prob, NoiseSource rng) {
    MixtureData d;
    double coord = separation / std::sqrt(static_cast<double>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        NoiseSource ex = rng.child(i);
        std::size_t cls = i % 2;
        double sign = cls == 0 ? -1.0 : 1.0;
        std::vector<double> x(dim);
        for (double& v : x) v = sign * coord + obs_std * ex.normal();
        if (ex.uniform() < flip_prob) cls = 1 - cls;
        d.x.push_back(std::move(x));
        d.y.push_back(cls);
    }
    return d;
}

// Exact conjugate update over the two class means and the closed-form
// posterior predictive; replication enters as k perturbed copies per example.
double conjugate_classifier_ece(const MixtureData& train, const MixtureData& test,
                                const EceDiagnosticConfig& cfg, std::size_t k,
                                std::uint64_t seed) {
    std::size_t dim = cfg.dim;
    double obs_var = cfg.obs_std * cfg.obs_std;
    std::vector<std::vector<double>> sum(2, std::vector<double>(dim, 0.0));
    std::vector<double> count(2, 0.0);
    NoiseSource aug(seed, 0xA06);
    for (std::size_t i = 0; i < train.x.size(); ++i) {
        for (std::size_t rep = 0; rep < k; ++rep) {
            NoiseSource ex = aug.child(i * 1024 + rep);
            std::size_t c = train.y[i];
            for (std::size_t j = 0; j < dim; ++j)
                sum[c][j] += train.x[i][j] + cfg.sigma_aug * ex.normal();
            count[c] += 1.0;
        }
    }
    std::vector<std::vector<double>> mean_hat(2, std::vector<double>(dim, 0.0));
    std::vector<double> post_var(2, 0.0);
    for (std::size_t c = 0; c < 2; ++c) {
        double v = 1.0 / (1.0 / cfg.prior_var + count[c] / obs_var);
        post_var[c] = v;
        for (std::size_t j = 0; j < dim; ++j) mean_hat[c][j] = (sum[c][j] / obs_var) * v;
    }

    PredictionLog log;
    for (std::size_t i = 0; i < test.x.size(); ++i) {
        double logp[2];
        for (std::size_t c = 0; c < 2; ++c) {
            double pv = obs_var + post_var[c];
            double q = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                double diff = test.x[i][j] - mean_hat[c][j];
                q += diff * diff;
            }
            logp[c] = -0.5 * q / pv - 0.5 * static_cast<double>(dim) * std::log(pv);
        }
        double mx = std::max(logp[0], logp[1]);
        double e0 = std::exp(logp[0] - mx), e1 = std::exp(logp[1] - mx);
        double p1 = e1 / (e0 + e1);
        log.add_classification({1.0 - p1, p1}, test.y[i]);
    }
    return expected_calibration_error(log).ece;
}

}  // namespace

EceScalingCurve ece_scaling_diagnostic(const EceDiagnosticConfig& config) {
    if (config.k_values.empty())
        throw std::invalid_argument("ece_scaling_diagnostic: k_values must be nonempty");
    EceScalingCurve curve;

    std::vector<double> baseline_eces;
    for (std::size_t s = 0; s < config.n_seeds; ++s) {
        std::uint64_t seed = config.seed + s;
        NoiseSource gen(seed, 0x6E);
        MixtureData train = gaussian_mixture(config.n_train, config.dim, config.class_separation,
                                             config.obs_std, config.label_flip_prob, gen.child(1));
        MixtureData test = gaussian_mixture(config.n_test, config.dim, config.class_separation,
                                            config.obs_std, config.label_flip_prob, gen.child(2));
        // marginalized baseline: each example contributes exactly once, untransformed
        EceDiagnosticConfig clean = config;
        clean.sigma_aug = 0.0;
        baseline_eces.push_back(conjugate_classifier_ece(train, test, clean, 1, seed));
    }
    curve.marginalized_baseline_ece = mean_of(baseline_eces);

    for (std::size_t k : config.k_values) {
        EceScalingPoint pt;
        pt.k = k;
        for (std::size_t s = 0; s < config.n_seeds; ++s) {
            std::uint64_t seed = config.seed + s;
            NoiseSource gen(seed, 0x6E);
            MixtureData train =
                gaussian_mixture(config.n_train, config.dim, config.class_separation,
                                 config.obs_std, config.label_flip_prob, gen.child(1));
            MixtureData test =
                gaussian_mixture(config.n_test, config.dim, config.class_separation,
                                 config.obs_std, config.label_flip_prob, gen.child(2));
            pt.ece_per_seed.push_back(conjugate_classifier_ece(train, test, config, k, seed));
        }
        pt.ece_mean = mean_of(pt.ece_per_seed);
        curve.points.push_back(std::move(pt));
    }

    // least-squares c for (ece_k - baseline) ~ c sqrt(k - 1), through the origin
    double num = 0.0, den = 0.0;
    for (const auto& pt : curve.points) {
        if (pt.k <= 1) continue;
        double xk = std::sqrt(static_cast<double>(pt.k - 1));
        num += (pt.ece_mean - curve.marginalized_baseline_ece) * xk;
        den += xk * xk;
    }
    curve.fitted_c = den > 0.0 ? num / den : 0.0;
    for (auto& pt : curve.points)
        pt.reference = curve.marginalized_baseline_ece +
                       curve.fitted_c * std::sqrt(static_cast<double>(pt.k - 1));
    return curve;
}

}  // namespace optima
