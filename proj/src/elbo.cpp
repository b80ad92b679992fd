#include "optima/elbo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace optima {

void McConfig::validate() const {
    if (s_gamma < 1 || k_naive < 1 || s_theta < 1 || s_phi < 1)
        throw std::invalid_argument("McConfig: all sample counts must be >= 1");
}

double log_mean_exp(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("log_mean_exp: empty input");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : values) mx = std::max(mx, v);
    if (!std::isfinite(mx))
        throw std::runtime_error("log_mean_exp: degenerate likelihood (all samples at -inf)");
    double s = 0.0;
    for (double v : values) s += std::exp(v - mx);
    return mx + std::log(s / static_cast<double>(values.size()));
}

namespace {

Array flatten(const Array& a) {
    if (a.rank() <= 1) return a;
    return Array({a.size()}, a.data);
}

const Array* dataset_input(const Dataset& data, std::size_t index) {
    if (index >= data.size())
        throw std::invalid_argument("elbo: example index out of range");
    return &data.inputs[index];
}

}  // namespace

double sample_loglik(const ModelState& state, const std::vector<double>& theta_noise,
                     const AugmentationFamily& family, const TransformSample& sample,
                     const Dataset& data, std::size_t index,
                     std::optional<std::size_t> companion_index) {
    const Array& x = *dataset_input(data, index);
    const Array* companion = nullptr;
    if (family.kind == FamilyKind::MixupBeta) {
        if (!companion_index) throw std::invalid_argument("sample_loglik: mixup needs a companion");
        companion = dataset_input(data, *companion_index);
    }
    Array transformed = flatten(apply_transform(family, sample, x, companion));
    Array out = forward(state, theta_noise, transformed);

    if (family.kind == FamilyKind::MixupBeta) {
        double lam = sample.gamma[0];
        if (data.task == Task::Classification)
            return log_likelihood_mixed(state.spec, out, data.labels[index],
                                        data.labels[*companion_index], lam);
        double la = log_likelihood(state.spec, out, data.targets[index]);
        double lb = log_likelihood(state.spec, out, data.targets[*companion_index]);
        return lam * la + (1.0 - lam) * lb;
    }
    if (data.task == Task::Classification)
        return log_likelihood(state.spec, out, data.labels[index]);
    return log_likelihood(state.spec, out, data.targets[index]);
}

namespace {

std::vector<double> sample_logliks(const ModelState& state, const std::vector<double>& theta_noise,
                                   const AugmentationFamily& family,
                                   const std::vector<TransformSample>& gamma_samples,
                                   const Dataset& data, std::size_t index,
                                   std::optional<std::size_t> companion_index) {
    if (gamma_samples.empty())
        throw std::invalid_argument("elbo: need at least one gamma sample");
    std::vector<double> lls;
    lls.reserve(gamma_samples.size());
    for (const auto& s : gamma_samples)
        lls.push_back(sample_loglik(state, theta_noise, family, s, data, index, companion_index));
    return lls;
}

}  // namespace

double marginalized_loglik(const ModelState& state, const std::vector<double>& theta_noise,
                           const AugmentationFamily& family,
                           const std::vector<TransformSample>& gamma_samples, const Dataset& data,
                           std::size_t index, std::optional<std::size_t> companion_index) {
    try {
        return log_mean_exp(
            sample_logliks(state, theta_noise, family, gamma_samples, data, index, companion_index));
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " (example " + std::to_string(index) + ")");
    }
}

double naive_loglik(const ModelState& state, const std::vector<double>& theta_noise,
                    const AugmentationFamily& family,
                    const std::vector<TransformSample>& gamma_samples, const Dataset& data,
                    std::size_t index, std::optional<std::size_t> companion_index) {
    auto lls = sample_logliks(state, theta_noise, family, gamma_samples, data, index,
                              companion_index);
    double acc = 0.0;
    for (double v : lls) acc += v;
    return acc / static_cast<double>(lls.size());
}

double marginalization_advantage(const ModelState& state, const std::vector<double>& theta_noise,
                                 const AugmentationFamily& family,
                                 const std::vector<TransformSample>& gamma_samples,
                                 const Dataset& data, std::size_t index,
                                 std::optional<std::size_t> companion_index) {
    auto lls = sample_logliks(state, theta_noise, family, gamma_samples, data, index,
                              companion_index);
    double acc = 0.0;
    for (double v : lls) acc += v;
    return log_mean_exp(lls) - acc / static_cast<double>(lls.size());
}

double pac_bayes_bound(double empirical_risk, double kl_total, std::size_t n, double delta) {
    if (n < 1) throw std::invalid_argument("pac_bayes_bound: n must be >= 1");
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("pac_bayes_bound: delta must be in (0, 1)");
    if (kl_total < 0.0) throw std::invalid_argument("pac_bayes_bound: kl_total must be >= 0");
    double nn = static_cast<double>(n);
    return empirical_risk + std::sqrt((kl_total + std::log(2.0 * std::sqrt(nn) / delta)) / (2.0 * nn));
}

// ---------------------------------------------------------------------------
// augmented_elbo
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kStepTag = 0x57E9;
constexpr std::uint64_t kThetaTag = 0x7E;
constexpr std::uint64_t kPhiTag = 0xF1;
constexpr std::uint64_t kGammaTag = 0xE6;
constexpr std::uint64_t kPairTag = 0xC0;
constexpr std::uint64_t kBetaTag = 0xB;

struct StepDraws {
    std::vector<std::vector<double>> theta_eps;             // [s_theta]
    std::vector<std::vector<double>> phi_eps;               // [s_phi]
    // [pos][p][j] raw gamma-level noise
    std::vector<std::vector<std::vector<std::vector<double>>>> gnoise;
    std::vector<std::size_t> companion;                     // [pos] -> dataset index (mixup)
};

NoiseSource gamma_stream(const NoiseSource& root, std::size_t example_index, std::uint64_t step,
                         std::size_t p, std::size_t j) {
    return root.child(kGammaTag)
        .child(example_index)
        .child(step)
        .child(static_cast<std::uint64_t>(p) * 4096 + j);
}

StepDraws make_step_draws(const std::vector<std::size_t>& batch,
                          const ModelState& state, const DiagonalGaussian& q_phi,
                          const AugmentationFamily& family, const NoiseSource& root,
                          const ElboOptions& opts, std::size_t n_gamma) {
    StepDraws d;
    NoiseSource step_ns = root.child(kStepTag).child(opts.step);
    std::size_t theta_dim = state.theta_noise_dim();
    for (std::size_t t = 0; t < opts.mc.s_theta; ++t) {
        NoiseSource ts = step_ns.child(kThetaTag).child(t);
        d.theta_eps.push_back(ts.normals(theta_dim));
    }
    for (std::size_t p = 0; p < opts.mc.s_phi; ++p) {
        NoiseSource ps = step_ns.child(kPhiTag).child(p);
        d.phi_eps.push_back(ps.normals(q_phi.dim()));
    }
    d.gnoise.resize(batch.size());
    for (std::size_t pos = 0; pos < batch.size(); ++pos) {
        d.gnoise[pos].resize(opts.mc.s_phi);
        for (std::size_t p = 0; p < opts.mc.s_phi; ++p) {
            d.gnoise[pos][p].resize(n_gamma);
            for (std::size_t j = 0; j < n_gamma; ++j) {
                NoiseSource gs = gamma_stream(root, batch[pos], opts.step, p, j);
                d.gnoise[pos][p][j] = draw_gamma_noise(family, gs);
            }
        }
    }
    if (family.kind == FamilyKind::MixupBeta) {
        // shuffled within-batch pairing, avoiding self-pairs when possible
        std::size_t b = batch.size();
        std::vector<std::size_t> perm(b);
        for (std::size_t i = 0; i < b; ++i) perm[i] = i;
        NoiseSource ps = step_ns.child(kPairTag);
        for (std::size_t i = b; i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(ps.uniform() * static_cast<double>(i));
            std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
        }
        d.companion.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            std::size_t c = perm[i];
            if (c == i && b > 1) c = perm[(i + 1) % b];
            d.companion[i] = batch[c];
        }
    }
    return d;
}

// Gaussian KL gradients w.r.t. q parameters, added by hand (the KL terms stay
// out of the graph).
void add_scaled_kl_grads_gaussian(const std::vector<double>& q_mu, const std::vector<double>& q_ls,
                                  const std::vector<double>& p_mu, const std::vector<double>& p_ls,
                                  double scale, Array& g_mu, Array& g_ls) {
    for (std::size_t i = 0; i < q_mu.size(); ++i) {
        double inv_pvar = std::exp(-2.0 * p_ls[i]);
        g_mu.data[i] += scale * (q_mu[i] - p_mu[i]) * inv_pvar;
        g_ls.data[i] += scale * (-1.0 + std::exp(2.0 * q_ls[i]) * inv_pvar);
    }
}

struct ConstPool {
    ComputationGraph* g;
    Bindings* bind;
    int counter = 0;
    int scalar(double v) {
        std::string name = "c" + std::to_string(counter++);
        int id = g->input(name, {});
        (*bind)[name] = Array::scalar(v);
        return id;
    }
    int array(const Array& a) {
        std::string name = "c" + std::to_string(counter++);
        int id = g->input(name, a.shape);
        (*bind)[name] = a;
        return id;
    }
};

// Chain bookkeeping for out-of-graph affine warps.
struct WarpChain {
    std::string x_slot;
    Array d_omega, d_tx, d_ty;       // flattened partials
    std::vector<double> gamma_noise; // the 3 normals
    std::size_t p;                   // phi draw index
};

}  // namespace

ElboResult augmented_elbo(const Dataset& data, const std::vector<std::size_t>& batch,
                          std::size_t nominal_batch_size, const ModelState& state,
                          const DiagonalGaussian& q_phi, const AugmentationFamily& family_template,
                          NoiseSource& noise, const ElboOptions& opts) {
    if (batch.empty()) throw std::invalid_argument("augmented_elbo: empty batch");
    if (nominal_batch_size < 1)
        throw std::invalid_argument("augmented_elbo: nominal batch size must be >= 1");
    opts.mc.validate();
    if (q_phi.dim() != family_template.phi_dim())
        throw std::invalid_argument("augmented_elbo: q_phi dimension does not match family phi");
    if (family_template.phi_prior.dim() != family_template.phi_dim())
        throw std::invalid_argument("augmented_elbo: phi prior dimension mismatch");

    const NetworkSpec& spec = state.spec;
    const std::size_t b_size = batch.size();
    const std::size_t st = opts.mc.s_theta, sp = opts.mc.s_phi;
    const std::size_t n_gamma =
        opts.objective == Objective::Naive ? opts.mc.k_naive : opts.mc.s_gamma;
    const double scale_n_over_b =
        static_cast<double>(data.size()) / static_cast<double>(nominal_batch_size);
    const double outer_avg = 1.0 / static_cast<double>(st * sp);
    const FamilyKind kind = family_template.kind;

    StepDraws draws = make_step_draws(batch, state, q_phi, family_template, noise, opts,
                                      n_gamma);

    // -------------------- numeric phase --------------------
    // phi draw per p (graph semantics: no clamp on the reparameterized draw)
    std::vector<std::vector<double>> phi_draws(sp);
    for (std::size_t p = 0; p < sp; ++p)
        phi_draws[p] = sample_reparameterized(q_phi, draws.phi_eps[p]);

    // transform samples per [pos][p][j] (shared across theta draws)
    std::vector<std::vector<std::vector<TransformSample>>> samples(b_size);
    for (std::size_t pos = 0; pos < b_size; ++pos) {
        samples[pos].resize(sp);
        for (std::size_t p = 0; p < sp; ++p) {
            AugmentationFamily fam = family_template;
            fam.phi = phi_draws[p];
            samples[pos][p].reserve(n_gamma);
            for (std::size_t j = 0; j < n_gamma; ++j) {
                NoiseSource beta =
                    gamma_stream(noise, batch[pos], opts.step, p, j).child(kBetaTag);
                samples[pos][p].push_back(
                    gamma_from_noise(fam, draws.gnoise[pos][p][j], &beta));
            }
        }
    }

    // log-likelihoods ll[t][p][pos][j]
    std::vector<std::vector<std::vector<std::vector<double>>>> ll(st);
    for (std::size_t t = 0; t < st; ++t) {
        ll[t].resize(sp);
        for (std::size_t p = 0; p < sp; ++p) {
            AugmentationFamily fam = family_template;
            fam.phi = phi_draws[p];
            ll[t][p].resize(b_size);
            for (std::size_t pos = 0; pos < b_size; ++pos) {
                std::optional<std::size_t> comp;
                if (kind == FamilyKind::MixupBeta) comp = draws.companion[pos];
                ll[t][p][pos].reserve(n_gamma);
                for (std::size_t j = 0; j < n_gamma; ++j)
                    ll[t][p][pos].push_back(sample_loglik(state, draws.theta_eps[t], fam,
                                                          samples[pos][p][j], data, batch[pos],
                                                          comp));
            }
        }
    }

    ElboResult res;
    double fit_sum = 0.0, naive_sum = 0.0, dphi_sum = 0.0;
    std::vector<double> per_example_fit(b_size, 0.0);  // averaged over t (and p), for the baseline
    for (std::size_t t = 0; t < st; ++t)
        for (std::size_t p = 0; p < sp; ++p)
            for (std::size_t pos = 0; pos < b_size; ++pos) {
                const auto& v = ll[t][p][pos];
                double lme;
                try {
                    lme = log_mean_exp(v);
                } catch (const std::runtime_error& e) {
                    throw std::runtime_error(std::string(e.what()) + " (batch example " +
                                             std::to_string(batch[pos]) + ")");
                }
                double mean = 0.0;
                for (double x : v) mean += x;
                mean /= static_cast<double>(v.size());
                double est = opts.objective == Objective::Naive ? mean : lme;
                fit_sum += est;
                naive_sum += mean;
                dphi_sum += lme - mean;
                per_example_fit[pos] += est * outer_avg;
            }

    res.estimate.beta_net = opts.betas.net;
    res.estimate.beta_aug = opts.betas.aug;
    res.estimate.data_fit = scale_n_over_b * outer_avg * fit_sum;
    res.estimate.kl_theta = state.kl_theta(opts.priors.theta_std);
    res.estimate.kl_phi = kl_diagonal_gaussians(q_phi, family_template.phi_prior);
    res.estimate.recompute_total();
    res.naive_data_fit = scale_n_over_b * outer_avg * naive_sum;
    res.dphi_mean = dphi_sum / static_cast<double>(st * sp * b_size);

    if (!opts.with_grads) return res;

    // -------------------- graph phase --------------------
    // The structure is identical across steps for fixed shapes, so it is
    // cached and only leaf values are rebound.
    ElboGraphCache local_cache;
    ElboGraphCache& cache = opts.cache != nullptr ? *opts.cache : local_cache;

    std::string signature;
    {
        std::string act;
        for (std::size_t sz : spec.layer_sizes) act += std::to_string(sz) + ".";
        signature = std::string(family_kind_name(kind)) + "|" + act + "|" +
                    std::to_string(b_size) + "," + std::to_string(n_gamma) + "," +
                    std::to_string(st) + "," + std::to_string(sp) + "," +
                    std::to_string(static_cast<int>(opts.objective)) + "," +
                    std::to_string(opts.learn_phi) + "," + std::to_string(data.size()) + "," +
                    std::to_string(nominal_batch_size) + "," +
                    std::to_string(spec.bayes_last_layer) + std::to_string(spec.bayes_all_layers) +
                    "," + std::to_string(static_cast<int>(spec.head)) + "," +
                    std::to_string(family_template.phi_dim()) + "," +
                    std::to_string(spec.noise_std);
    }
    const bool building = cache.signature != signature;
    if (building) {
        cache = ElboGraphCache{};
        cache.signature = signature;
        cache.spec_copy = spec;
        cache.net = std::make_shared<NetworkGraph>(cache.graph, cache.spec_copy, "");
    }
    ComputationGraph& g = cache.graph;
    NetworkGraph& net = *cache.net;
    Bindings bind = cache.static_bind;

    // leaf helper: creates the slot when building, always (re)binds the value
    auto leaf = [&](const std::string& name, const Shape& shape, Array value) {
        if (building) g.input(name, shape);
        bind[name] = std::move(value);
        return g.leaves().at(name);
    };
    // build-time constants, never rebound
    auto static_leaf = [&](const std::string& name, Array value) {
        if (building) {
            g.input(name, value.shape);
            cache.static_bind[name] = value;
            bind[name] = std::move(value);
        }
        return g.leaves().at(name);
    };

    net.bind_params(state, bind);
    if (building)
        for (std::size_t t = 0; t < st; ++t) cache.theta_draws.push_back(net.new_draw(g));
    for (std::size_t t = 0; t < st; ++t)
        net.bind_theta_noise(draws.theta_eps[t], cache.theta_draws[t], bind);

    const bool phi_in_graph = kind == FamilyKind::AdditiveShift ||
                              kind == FamilyKind::CategoricalChoice ||
                              kind == FamilyKind::MixupBeta;
    const std::size_t P = q_phi.dim();
    std::vector<int> phi_draw_nodes(sp, -1);
    if (phi_in_graph) {
        int qphi_mu = leaf("phi.mu", {P}, Array({P}, q_phi.mean));
        int qphi_ls = leaf("phi.ls", {P}, Array({P}, q_phi.log_std));
        for (std::size_t p = 0; p < sp; ++p) {
            int eps = leaf("phi.eps" + std::to_string(p), {P}, Array({P}, draws.phi_eps[p]));
            if (building)
                phi_draw_nodes[p] = g.add(qphi_mu, g.multiply(g.exp(qphi_ls), eps));
        }
        cache.phi_in_graph = true;
    }

    // family-specific per-p nodes (build only)
    std::vector<int> gamma_mu_nodes(sp, -1), gamma_ls_nodes(sp, -1);   // additive-shift
    std::vector<int> logits_nodes(sp, -1), invtau_bcast_nodes(sp, -1); // categorical
    std::vector<int> mix_mu_nodes(sp, -1), mix_ls_nodes(sp, -1);       // mixup score density
    int shifts_mat = -1;
    if (building) {
        if (kind == FamilyKind::AdditiveShift) {
            std::size_t d = family_template.input_dim;
            Array sel_mu({d, P}), sel_ls({d, P});
            for (std::size_t i = 0; i < d; ++i) {
                sel_mu.at(i, i) = 1.0;
                sel_ls.at(i, d + i) = 1.0;
            }
            int sel_mu_id = static_leaf("selmu", sel_mu);
            int sel_ls_id = static_leaf("sells", sel_ls);
            for (std::size_t p = 0; p < sp; ++p) {
                gamma_mu_nodes[p] = g.matmul(sel_mu_id, phi_draw_nodes[p]);
                gamma_ls_nodes[p] = g.matmul(sel_ls_id, phi_draw_nodes[p]);
            }
        } else if (kind == FamilyKind::CategoricalChoice) {
            std::size_t m = family_template.discrete_shifts.size();
            std::size_t d = family_template.input_dim;
            Array sel_logits({m, P}), sel_tau({1, P});
            for (std::size_t i = 0; i < m; ++i) sel_logits.at(i, i) = 1.0;
            sel_tau.at(0, m) = 1.0;
            Array shifts_t({d, m});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t r = 0; r < d; ++r)
                    shifts_t.at(r, i) = family_template.discrete_shifts[i][r];
            int sel_logits_id = static_leaf("sellog", sel_logits);
            int sel_tau_id = static_leaf("seltau", sel_tau);
            shifts_mat = static_leaf("shiftsT", shifts_t);
            for (std::size_t p = 0; p < sp; ++p) {
                logits_nodes[p] = g.matmul(sel_logits_id, phi_draw_nodes[p]);
                int logtau = g.matmul(sel_tau_id, phi_draw_nodes[p]);
                invtau_bcast_nodes[p] = g.broadcast_scalar(g.exp(g.negate(logtau)), {m});
            }
        } else if (kind == FamilyKind::MixupBeta) {
            Array sel_mu({1, P}), sel_ls({1, P});
            sel_mu.at(0, 0) = 1.0;
            sel_ls.at(0, 1) = 1.0;
            int sel_mu_id = static_leaf("selmu", sel_mu);
            int sel_ls_id = static_leaf("sells", sel_ls);
            for (std::size_t p = 0; p < sp; ++p) {
                mix_mu_nodes[p] = g.matmul(sel_mu_id, phi_draw_nodes[p]);
                mix_ls_nodes[p] = g.matmul(sel_ls_id, phi_draw_nodes[p]);
            }
        }
    }

    int y_log_std_node = -1;
    if (spec.head == HeadKind::GaussianRegression)
        y_log_std_node =
            static_leaf("ylogstd", Array::full({spec.output_dim()}, std::log(spec.noise_std)));
    int logS = static_leaf("logS", Array::scalar(std::log(static_cast<double>(n_gamma))));
    int invK = static_leaf("invK", Array::scalar(1.0 / static_cast<double>(n_gamma)));
    int scale_node =
        static_leaf("scaleNB", Array::scalar(scale_n_over_b * outer_avg));

    // shared data leaves
    std::vector<int> x_nodes(b_size, -1);
    std::vector<int> y_nodes(b_size, -1);
    for (std::size_t pos = 0; pos < b_size; ++pos) {
        if (kind == FamilyKind::AdditiveShift || kind == FamilyKind::CategoricalChoice)
            x_nodes[pos] = leaf("x" + std::to_string(pos), {spec.input_dim()},
                                flatten(data.inputs[batch[pos]]));
        if (kind != FamilyKind::MixupBeta) {
            if (spec.head == HeadKind::GaussianRegression) {
                y_nodes[pos] = leaf("y" + std::to_string(pos), {spec.output_dim()},
                                    data.targets[batch[pos]]);
            } else {
                Array onehot({spec.output_dim()});
                onehot.data[data.labels[batch[pos]]] = 1.0;
                y_nodes[pos] =
                    leaf("y" + std::to_string(pos), {spec.output_dim()}, std::move(onehot));
            }
        }
    }

    auto likelihood_node = [&](int out_node, std::size_t pos) {
        if (spec.head == HeadKind::GaussianRegression)
            return g.gaussian_log_density(y_nodes[pos], out_node, y_log_std_node);
        int picked = g.sum_reduce(g.multiply(out_node, y_nodes[pos]));
        return g.subtract(picked, g.log_sum_exp(out_node, 0));
    };

    struct WarpChain {
        std::string x_slot;
        Array d_omega, d_tx, d_ty;
        std::vector<double> gamma_noise;
        std::size_t p;
    };
    std::vector<WarpChain> warp_chains;

    std::vector<int> est_nodes;  // per (t, p, pos), build only
    std::vector<std::vector<int>> logq_sums(b_size, std::vector<int>(sp, -1));

    for (std::size_t t = 0; t < st; ++t) {
        for (std::size_t p = 0; p < sp; ++p) {
            for (std::size_t pos = 0; pos < b_size; ++pos) {
                std::string ppj_base =
                    std::to_string(pos) + "_" + std::to_string(p) + "_";
                std::vector<int> ll_nodes;
                for (std::size_t j = 0; j < n_gamma; ++j) {
                    std::string sfx = ppj_base + std::to_string(j);
                    const TransformSample& ts = samples[pos][p][j];
                    if (kind == FamilyKind::AdditiveShift) {
                        if (t == 0)
                            leaf("g" + sfx, {family_template.input_dim},
                                 Array({family_template.input_dim}, draws.gnoise[pos][p][j]));
                        if (building) {
                            int eps = g.leaves().at("g" + sfx);
                            int gamma = g.add(gamma_mu_nodes[p],
                                              g.multiply(g.exp(gamma_ls_nodes[p]), eps));
                            int xp = g.add(x_nodes[pos], gamma);
                            int out_node = net.apply(g, xp, cache.theta_draws[t]);
                            ll_nodes.push_back(likelihood_node(out_node, pos));
                        }
                    } else if (kind == FamilyKind::CategoricalChoice) {
                        std::size_t m = family_template.discrete_shifts.size();
                        if (t == 0)
                            leaf("g" + sfx, {m}, Array({m}, draws.gnoise[pos][p][j]));
                        if (building) {
                            int gum = g.leaves().at("g" + sfx);
                            int z = g.multiply(g.add(logits_nodes[p], gum),
                                               invtau_bcast_nodes[p]);
                            int shift = g.matmul(shifts_mat, g.softmax(z, 0));
                            int xp = g.add(x_nodes[pos], shift);
                            int out_node = net.apply(g, xp, cache.theta_draws[t]);
                            ll_nodes.push_back(likelihood_node(out_node, pos));
                        }
                    } else if (kind == FamilyKind::AffineImage) {
                        std::string xn = "xw" + sfx;
                        if (t == 0) {
                            WarpResult wr = bilinear_affine_warp_with_partials(
                                data.inputs[batch[pos]], ts.gamma[0], ts.gamma[1], ts.gamma[2]);
                            leaf(xn, {spec.input_dim()}, flatten(wr.warped));
                            if (opts.learn_phi) {
                                WarpChain wc;
                                wc.x_slot = xn;
                                wc.d_omega = flatten(wr.d_omega);
                                wc.d_tx = flatten(wr.d_tx);
                                wc.d_ty = flatten(wr.d_ty);
                                wc.gamma_noise = draws.gnoise[pos][p][j];
                                wc.p = p;
                                warp_chains.push_back(std::move(wc));
                                if (building) cache.warp_slots.push_back(xn);
                            }
                        }
                        if (building) {
                            int out_node = net.apply(g, g.leaves().at(xn), cache.theta_draws[t]);
                            ll_nodes.push_back(likelihood_node(out_node, pos));
                        }
                    } else {  // MixupBeta
                        std::size_t comp = draws.companion[pos];
                        double lam = ts.gamma[0];
                        if (t == 0) {
                            leaf("xm" + sfx, {spec.input_dim()},
                                 flatten(apply_transform(family_template, ts,
                                                         data.inputs[batch[pos]],
                                                         &data.inputs[comp])));
                            if (spec.head == HeadKind::Categorical) {
                                Array mixed({spec.output_dim()});
                                mixed.data[data.labels[batch[pos]]] += lam;
                                mixed.data[data.labels[comp]] += 1.0 - lam;
                                leaf("ym" + sfx, {spec.output_dim()}, std::move(mixed));
                            } else {
                                leaf("ya" + std::to_string(pos), {spec.output_dim()},
                                     data.targets[batch[pos]]);
                                leaf("yb" + std::to_string(pos), {spec.output_dim()},
                                     data.targets[comp]);
                                leaf("la" + sfx, {}, Array::scalar(lam));
                                leaf("lb" + sfx, {}, Array::scalar(1.0 - lam));
                            }
                            if (opts.learn_phi)
                                leaf("ell" + sfx, {1}, Array({1}, {*ts.log_alpha_draw}));
                        }
                        if (building) {
                            int xp = g.leaves().at("xm" + sfx);
                            int out_node = net.apply(g, xp, cache.theta_draws[t]);
                            if (spec.head == HeadKind::Categorical) {
                                int yh = g.leaves().at("ym" + sfx);
                                int picked = g.sum_reduce(g.multiply(out_node, yh));
                                ll_nodes.push_back(
                                    g.subtract(picked, g.log_sum_exp(out_node, 0)));
                            } else {
                                int lla = g.gaussian_log_density(
                                    g.leaves().at("ya" + std::to_string(pos)), out_node,
                                    y_log_std_node);
                                int llb = g.gaussian_log_density(
                                    g.leaves().at("yb" + std::to_string(pos)), out_node,
                                    y_log_std_node);
                                ll_nodes.push_back(
                                    g.add(g.multiply(lla, g.leaves().at("la" + sfx)),
                                          g.multiply(llb, g.leaves().at("lb" + sfx))));
                            }
                            if (opts.learn_phi && t == 0) {
                                int lq = g.gaussian_log_density(g.leaves().at("ell" + sfx),
                                                                mix_mu_nodes[p],
                                                                mix_ls_nodes[p]);
                                logq_sums[pos][p] =
                                    logq_sums[pos][p] < 0 ? lq : g.add(logq_sums[pos][p], lq);
                            }
                        }
                    }
                }
                // per-example estimator node
                if (opts.objective != Objective::Naive) {
                    double shift_val =
                        *std::max_element(ll[t][p][pos].begin(), ll[t][p][pos].end());
                    int shift = leaf("sh" + std::to_string(t) + "_" + ppj_base +
                                         std::to_string(pos),
                                     {}, Array::scalar(shift_val));
                    if (building) {
                        int esum = -1;
                        for (int lln : ll_nodes) {
                            int e = g.exp(g.subtract(lln, shift));
                            esum = esum < 0 ? e : g.add(esum, e);
                        }
                        est_nodes.push_back(g.subtract(g.add(g.log(esum), shift), logS));
                    }
                } else if (building) {
                    int sum = ll_nodes[0];
                    for (std::size_t j = 1; j < ll_nodes.size(); ++j)
                        sum = g.add(sum, ll_nodes[j]);
                    est_nodes.push_back(g.multiply(sum, invK));
                }
            }
        }
    }

    // mixup surrogate coefficients (score-function path)
    double baseline = 0.0;
    if (kind == FamilyKind::MixupBeta && opts.learn_phi && opts.baseline != nullptr) {
        double batch_mean = 0.0;
        for (double v : per_example_fit) batch_mean += v;
        batch_mean /= static_cast<double>(b_size);
        if (opts.baseline->initialized) baseline = opts.baseline->value;
        else baseline = batch_mean;
        opts.baseline->update(batch_mean);
    }
    std::vector<int> coeff_nodes;
    if (kind == FamilyKind::MixupBeta && opts.learn_phi) {
        for (std::size_t pos = 0; pos < b_size; ++pos)
            for (std::size_t p = 0; p < sp; ++p) {
                double coeff = (per_example_fit[pos] - baseline) * scale_n_over_b /
                               static_cast<double>(sp);
                coeff_nodes.push_back(leaf(
                    "co" + std::to_string(pos) + "_" + std::to_string(p), {},
                    Array::scalar(coeff)));
            }
    }

    if (building) {
        int fit_total = est_nodes[0];
        for (std::size_t i = 1; i < est_nodes.size(); ++i)
            fit_total = g.add(fit_total, est_nodes[i]);
        int objective_node = g.multiply(fit_total, scale_node);
        if (kind == FamilyKind::MixupBeta && opts.learn_phi) {
            int surrogate = -1;
            std::size_t ci = 0;
            for (std::size_t pos = 0; pos < b_size; ++pos)
                for (std::size_t p = 0; p < sp; ++p) {
                    int term = g.multiply(logq_sums[pos][p], coeff_nodes[ci++]);
                    surrogate = surrogate < 0 ? term : g.add(surrogate, term);
                }
            if (surrogate >= 0) objective_node = g.add(objective_node, surrogate);
        }
        cache.objective_node = objective_node;

        cache.wrt = net.param_slots();
        if (cache.phi_in_graph && opts.learn_phi) {
            cache.wrt.push_back("phi.mu");
            cache.wrt.push_back("phi.ls");
        }
        for (const auto& s : cache.warp_slots) cache.wrt.push_back(s);
    }

    GradMap graph_grads =
        gradient_of(g, bind, cache.objective_node, cache.wrt, nullptr, &cache.workspace);

    // assemble gradients of `total`
    res.grads = GradMap{};
    for (const auto& name : net.param_slots()) res.grads[name] = graph_grads.at(name);
    if (opts.learn_phi) {
        Array g_mu = cache.phi_in_graph ? graph_grads.at("phi.mu") : Array({P});
        Array g_ls = cache.phi_in_graph ? graph_grads.at("phi.ls") : Array({P});

        // out-of-graph affine chain: dL/dx' -> dL/dgamma -> dL/dphi_draw -> q(phi)
        if (kind == FamilyKind::AffineImage) {
            std::vector<Array> dphi_draw(sp, Array({P}));
            for (const auto& wc : warp_chains) {
                const Array& gx = graph_grads.at(wc.x_slot);
                double dgam[3];
                dgam[0] = dot(gx.data, wc.d_omega.data);
                dgam[1] = dot(gx.data, wc.d_tx.data);
                dgam[2] = dot(gx.data, wc.d_ty.data);
                for (std::size_t k = 0; k < 3; ++k) {
                    double ls = phi_draws[wc.p][2 * k + 1];
                    dphi_draw[wc.p].data[2 * k] += dgam[k];
                    if (ls > kLogStdMin && ls < kLogStdMax)
                        dphi_draw[wc.p].data[2 * k + 1] +=
                            dgam[k] * wc.gamma_noise[k] * std::exp(ls);
                }
            }
            for (std::size_t p = 0; p < sp; ++p)
                for (std::size_t i = 0; i < P; ++i) {
                    g_mu.data[i] += dphi_draw[p].data[i];
                    g_ls.data[i] += dphi_draw[p].data[i] * draws.phi_eps[p][i] *
                                    std::exp(q_phi.log_std[i]);
                }
        }

        add_scaled_kl_grads_gaussian(q_phi.mean, q_phi.log_std, family_template.phi_prior.mean,
                                     family_template.phi_prior.log_std, -opts.betas.aug, g_mu,
                                     g_ls);
        res.grads["phi.mu"] = std::move(g_mu);
        res.grads["phi.ls"] = std::move(g_ls);
    }

    // KL(q(theta) || p(theta)) gradients, by hand
    if (opts.betas.net != 0.0) {
        double lsp = std::log(opts.priors.theta_std);
        for (std::size_t i = 0; i < state.layers.size(); ++i) {
            const Layer& l = state.layers[i];
            if (!l.bayesian()) continue;
            std::string base = "l" + std::to_string(i) + ".";
            std::vector<double> p_mu_w(l.W_mu.size(), 0.0), p_ls_w(l.W_mu.size(), lsp);
            add_scaled_kl_grads_gaussian(l.W_mu.data, l.W_ls->data, p_mu_w, p_ls_w,
                                         -opts.betas.net, res.grads.at(base + "W_mu"),
                                         res.grads.at(base + "W_ls"));
            std::vector<double> p_mu_b(l.b_mu.size(), 0.0), p_ls_b(l.b_mu.size(), lsp);
            add_scaled_kl_grads_gaussian(l.b_mu.data, l.b_ls->data, p_mu_b, p_ls_b,
                                         -opts.betas.net, res.grads.at(base + "b_mu"),
                                         res.grads.at(base + "b_ls"));
        }
    }
    return res;
}

}  // namespace optima
