#include "optima/trainer.hpp"

#include <cmath>
#include <stdexcept>

#include "optima/metrics.hpp"

namespace optima {

void TrainConfig::validate() const {
    if (!(lr_net > 0.0) || !(lr_aug >= 0.0))
        throw std::invalid_argument("TrainConfig: learning rates must be positive");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (log_every < 1) throw std::invalid_argument("TrainConfig: log_every must be >= 1");
    if (beta_net < 0.0 || beta_aug < 0.0)
        throw std::invalid_argument("TrainConfig: betas must be nonnegative");
    mc.validate();
}

void adam_step(OptimizerState& state, std::map<std::string, Array>& params, const GradMap& grads,
               double lr, double beta1, double beta2, double eps) {
    ++state.step;
    double t = static_cast<double>(state.step);
    double bc1 = 1.0 - std::pow(beta1, t);
    double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end())
            throw std::invalid_argument("adam_step: missing gradient for block '" + name + "'");
        const Array& g = git->second;
        if (!g.same_shape(p))
            throw std::invalid_argument("adam_step: gradient shape mismatch for '" + name + "'");
        if (!g.all_finite())
            throw std::runtime_error("adam_step: non-finite gradient in block '" + name + "'");
        Array& m = state.m.try_emplace(name, Array::zeros(p.shape)).first->second;
        Array& v = state.v.try_emplace(name, Array::zeros(p.shape)).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
            double m_hat = m.data[i] / bc1;
            double v_hat = v.data[i] / bc2;
            p.data[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

std::vector<std::vector<std::size_t>> minibatch_iterator(std::size_t dataset_size,
                                                         std::size_t batch_size,
                                                         std::uint64_t seed, std::uint64_t epoch) {
    if (dataset_size == 0) throw std::invalid_argument("minibatch_iterator: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("minibatch_iterator: batch_size must be >= 1");
    std::vector<std::size_t> perm(dataset_size);
    for (std::size_t i = 0; i < dataset_size; ++i) perm[i] = i;
    NoiseSource rng(seed, 0x6A7C);
    NoiseSource es = rng.child(epoch);
    for (std::size_t i = dataset_size; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(es.uniform() * static_cast<double>(i));
        std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < dataset_size; start += batch_size) {
        std::size_t end = std::min(dataset_size, start + batch_size);
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

std::vector<std::string> phi_coord_names(const AugmentationFamily& family) {
    std::vector<std::string> names;
    for (const auto& c : family.coord_layout()) names.push_back(c.name);
    return names;
}

std::vector<std::pair<double, double>> describe_phi(const AugmentationFamily& family,
                                                    const std::vector<double>& phi_point) {
    std::vector<std::pair<double, double>> out;
    for (const auto& c : family.coord_layout()) {
        double mean = phi_point[c.mean_index];
        double sigma = c.log_sigma_index == static_cast<std::size_t>(-1)
                           ? 0.0
                           : std::exp(clamp_log_std(phi_point[c.log_sigma_index]));
        out.emplace_back(mean, sigma);
    }
    return out;
}

namespace {

struct ParamView {
    std::map<std::string, Array> net;  // includes q(theta) means and log-stds
    std::map<std::string, Array> aug;  // phi.mu / phi.ls
};

ParamView collect_params(const ModelState& state, const DiagonalGaussian& q_phi, bool learn_phi) {
    ParamView pv;
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        const Layer& l = state.layers[i];
        std::string base = "l" + std::to_string(i) + ".";
        pv.net[base + "W_mu"] = l.W_mu;
        pv.net[base + "b_mu"] = l.b_mu;
        if (l.bayesian()) {
            pv.net[base + "W_ls"] = *l.W_ls;
            pv.net[base + "b_ls"] = *l.b_ls;
        }
    }
    if (learn_phi) {
        pv.aug["phi.mu"] = Array({q_phi.dim()}, q_phi.mean);
        pv.aug["phi.ls"] = Array({q_phi.dim()}, q_phi.log_std);
    }
    return pv;
}

void write_back(const ParamView& pv, ModelState& state, DiagonalGaussian& q_phi,
                const AugmentationFamily& family, bool learn_phi) {
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        Layer& l = state.layers[i];
        std::string base = "l" + std::to_string(i) + ".";
        l.W_mu = pv.net.at(base + "W_mu");
        l.b_mu = pv.net.at(base + "b_mu");
        if (l.bayesian()) {
            Array w_ls = pv.net.at(base + "W_ls");
            Array b_ls = pv.net.at(base + "b_ls");
            for (double& v : w_ls.data) v = clamp_log_std(v);
            for (double& v : b_ls.data) v = clamp_log_std(v);
            l.W_ls = std::move(w_ls);
            l.b_ls = std::move(b_ls);
        }
    }
    if (learn_phi) {
        q_phi.mean = pv.aug.at("phi.mu").data;
        q_phi.log_std = pv.aug.at("phi.ls").data;
        for (double& v : q_phi.log_std) v = clamp_log_std(v);
        for (std::size_t idx : family.log_scale_coords()) q_phi.mean[idx] = clamp_log_std(q_phi.mean[idx]);
    }
}

double eval_metric(const ModelState& state, const Dataset& eval_data, std::size_t n_samples,
                   NoiseSource stream) {
    PredictionLog log;
    for (std::size_t i = 0; i < eval_data.size(); ++i) {
        NoiseSource ex = stream.child(i);
        Array x = eval_data.inputs[i];
        if (x.rank() == 2) x = Array({x.size()}, x.data);
        auto pr = predict(state, x, n_samples, ex);
        if (eval_data.task == Task::Classification)
            log.add_classification(pr.probs, eval_data.labels[i]);
        else
            log.add_regression(pr.mean, pr.variance, eval_data.targets[i].data);
    }
    auto m = basic_metrics(log);
    return eval_data.task == Task::Classification ? m.accuracy : m.mse;
}

TrainResult train_loop(const Dataset& data, const NetworkSpec& spec,
                       const AugmentationFamily& family, const DiagonalGaussian& q_phi_init,
                       const TrainConfig& config, const Dataset* eval_data, bool full_vi) {
    config.validate();
    data.validate();
    NetworkSpec espec = spec;
    if (!full_vi) {
        espec.bayes_last_layer = false;
        espec.bayes_all_layers = false;
    } else if (!espec.bayes_last_layer && !espec.bayes_all_layers) {
        throw std::invalid_argument(
            "train_full_vi: spec must have a Bayesian layer (bayes_last_layer or all-layer toggle)");
    }
    espec.validate();
    if (q_phi_init.dim() != family.phi_dim())
        throw std::invalid_argument("train: q_phi dimension must match the family phi layout");

    NoiseSource root(config.seed);
    NoiseSource init_stream = root.child(0x1417);
    TrainResult res;
    res.state = ModelState::init(espec, init_stream, config.q_theta_log_std_init);
    res.q_phi = q_phi_init;
    res.trace.phi_coord_names = phi_coord_names(family);

    OptimizerState opt_net, opt_aug;
    ScoreBaseline baseline;
    std::map<std::size_t, ElboGraphCache> graph_caches;  // keyed by batch size
    ElboOptions opts;
    opts.mc = config.mc;
    opts.betas = {config.beta_net, config.beta_aug};
    opts.priors.theta_std = config.theta_prior_std;
    opts.objective = config.objective;
    opts.learn_phi = config.learn_phi;
    opts.with_grads = true;
    opts.baseline = &baseline;

    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        auto batches = minibatch_iterator(data.size(), config.batch_size, config.seed, epoch);
        for (const auto& batch : batches) {
            opts.step = step;
            opts.cache = &graph_caches[batch.size()];
            NoiseSource elbo_noise = root;
            ElboResult er;
            try {
                er = augmented_elbo(data, batch, config.batch_size, res.state, res.q_phi, family,
                                    elbo_noise, opts);
            } catch (const std::exception& e) {
                res.steps = step;
                throw TrainAbort("training aborted at step " + std::to_string(step) + " (epoch " +
                                     std::to_string(epoch) + "): " + e.what(),
                                 std::move(res));
            }

            // ascend the ELBO: feed the optimizer descent gradients
            GradMap descent;
            double norm_sq = 0.0;
            for (const auto& [name, g] : er.grads) {
                Array ng = g;
                for (double& v : ng.data) v = -v;
                norm_sq += l2_norm_sq(ng.data);
                descent[name] = std::move(ng);
            }
            double norm = std::sqrt(norm_sq);
            if (norm > config.clip_norm) {
                double scale = config.clip_norm / norm;
                for (auto& [name, g] : descent)
                    for (double& v : g.data) v *= scale;
                norm = config.clip_norm;
            }
            res.max_postclip_grad_norm = std::max(res.max_postclip_grad_norm, norm);

            ParamView pv = collect_params(res.state, res.q_phi, config.learn_phi);
            GradMap net_grads, aug_grads;
            for (const auto& [name, g] : descent) {
                if (name.rfind("phi.", 0) == 0)
                    aug_grads[name] = g;
                else
                    net_grads[name] = g;
            }
            adam_step(opt_net, pv.net, net_grads, config.lr_net);
            if (config.learn_phi && config.lr_aug > 0.0)
                adam_step(opt_aug, pv.aug, aug_grads, config.lr_aug);
            write_back(pv, res.state, res.q_phi, family, config.learn_phi);

            if (step % config.log_every == 0 ||
                (epoch + 1 == config.epochs && &batch == &batches.back())) {
                TraceEntry te;
                te.step = step;
                te.total = er.estimate.total;
                te.data_fit = er.estimate.data_fit;
                te.kl_theta = er.estimate.kl_theta;
                te.kl_phi = er.estimate.kl_phi;
                te.dphi_mean = er.dphi_mean;
                te.train_loss = -er.estimate.data_fit / static_cast<double>(data.size());
                te.phi_coords = describe_phi(family, res.q_phi.mean);
                if (eval_data != nullptr && config.eval_mc_samples > 0)
                    te.test_metric = eval_metric(res.state, *eval_data, config.eval_mc_samples,
                                                 root.child(0xE7A1).child(step));
                res.trace.entries.push_back(std::move(te));
            }
            ++step;
        }
    }
    res.steps = step;
    return res;
}

}  // namespace

TrainResult train_full_vi(const Dataset& data, const NetworkSpec& spec,
                          const AugmentationFamily& family, const DiagonalGaussian& q_phi_init,
                          const TrainConfig& config, const Dataset* eval_data) {
    return train_loop(data, spec, family, q_phi_init, config, eval_data, true);
}

TrainResult train_partial_vi(const Dataset& data, const NetworkSpec& spec,
                             const AugmentationFamily& family, const DiagonalGaussian& q_phi_init,
                             const TrainConfig& config, const Dataset* eval_data) {
    return train_loop(data, spec, family, q_phi_init, config, eval_data, false);
}

}  // namespace optima
