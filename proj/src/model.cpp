#include "optima/model.hpp"

#include <cmath>
#include <stdexcept>

namespace optima {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;
}

Activation activation_from_name(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu") return Activation::Relu;
    throw std::invalid_argument("unknown activation '" + name + "'");
}

const char* activation_name(Activation a) {
    return a == Activation::Tanh ? "tanh" : "relu";
}

void NetworkSpec::validate() const {
    if (layer_sizes.size() < 2) throw std::invalid_argument("NetworkSpec: need >= 1 layer");
    for (std::size_t s : layer_sizes)
        if (s == 0) throw std::invalid_argument("NetworkSpec: zero layer size");
    if (n_layers() >= 1 && activations.size() != n_layers() - 1)
        throw std::invalid_argument("NetworkSpec: need one activation per hidden transition");
    if (head == HeadKind::GaussianRegression && !(noise_std > 0.0))
        throw std::invalid_argument("NetworkSpec: noise_std must be > 0");
    if (head == HeadKind::Categorical && n_classes != output_dim())
        throw std::invalid_argument("NetworkSpec: n_classes must equal output dim");
}

NetworkSpec NetworkSpec::mlp(std::vector<std::size_t> sizes, Activation act, HeadKind head) {
    NetworkSpec s;
    s.layer_sizes = std::move(sizes);
    s.activations.assign(s.n_layers() >= 1 ? s.n_layers() - 1 : 0, act);
    s.head = head;
    if (head == HeadKind::Categorical) s.n_classes = s.output_dim();
    return s;
}

std::size_t ModelState::theta_noise_dim() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.noise_dim();
    return n;
}

double ModelState::kl_theta(double prior_std) const {
    double kl = 0.0;
    double lsp = std::log(prior_std);
    double inv_2var = 1.0 / (2.0 * prior_std * prior_std);
    for (const auto& l : layers) {
        if (!l.bayesian()) continue;
        auto block = [&](const Array& mu, const Array& ls) {
            for (std::size_t i = 0; i < mu.size(); ++i) {
                double s = std::exp(ls.data[i]);
                kl += lsp - ls.data[i] + (s * s + mu.data[i] * mu.data[i]) * inv_2var - 0.5;
            }
        };
        block(l.W_mu, *l.W_ls);
        block(l.b_mu, *l.b_ls);
    }
    return kl;
}

ModelState ModelState::init(const NetworkSpec& spec, NoiseSource& noise, double q_log_std_init) {
    spec.validate();
    ModelState st;
    st.spec = spec;
    for (std::size_t i = 0; i < spec.n_layers(); ++i) {
        std::size_t fan_in = spec.layer_sizes[i];
        std::size_t fan_out = spec.layer_sizes[i + 1];
        Layer l;
        l.W_mu = Array({fan_out, fan_in});
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& w : l.W_mu.data) w = (2.0 * noise.uniform() - 1.0) * bound;
        l.b_mu = Array({fan_out});
        if (spec.layer_is_bayesian(i)) {
            l.W_ls = Array::full({fan_out, fan_in}, q_log_std_init);
            l.b_ls = Array::full({fan_out}, q_log_std_init);
        }
        st.layers.push_back(std::move(l));
    }
    return st;
}

Array forward(const ModelState& state, const std::vector<double>& theta_noise, const Array& x) {
    const NetworkSpec& spec = state.spec;
    if (x.rank() != 1 || x.shape[0] != spec.input_dim())
        throw std::invalid_argument("forward: input shape " + shape_str(x.shape) +
                                    " does not match spec input dim " +
                                    std::to_string(spec.input_dim()));
    std::size_t need = state.theta_noise_dim();
    if (theta_noise.size() != need)
        throw std::invalid_argument("forward: theta_noise size " +
                                    std::to_string(theta_noise.size()) + ", expected " +
                                    std::to_string(need));
    std::size_t eps_pos = 0;
    Array h = x;
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        const Layer& l = state.layers[i];
        std::size_t m = l.W_mu.shape[0], k = l.W_mu.shape[1];
        Array out({m});
        if (l.bayesian()) {
            for (std::size_t r = 0; r < m; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < k; ++c) {
                    double w = l.W_mu.data[r * k + c] +
                               std::exp(clamp_log_std(l.W_ls->data[r * k + c])) *
                                   theta_noise[eps_pos + r * k + c];
                    s += w * h.data[c];
                }
                out.data[r] = s;
            }
            eps_pos += m * k;
            for (std::size_t r = 0; r < m; ++r)
                out.data[r] += l.b_mu.data[r] +
                               std::exp(clamp_log_std(l.b_ls->data[r])) * theta_noise[eps_pos + r];
            eps_pos += m;
        } else {
            for (std::size_t r = 0; r < m; ++r) {
                double s = l.b_mu.data[r];
                for (std::size_t c = 0; c < k; ++c) s += l.W_mu.data[r * k + c] * h.data[c];
                out.data[r] = s;
            }
        }
        if (i + 1 < state.layers.size()) {
            Activation act = spec.activations[i];
            for (double& v : out.data)
                v = act == Activation::Tanh ? std::tanh(v) : (v > 0.0 ? v : 0.0);
        }
        h = std::move(out);
    }
    return h;
}

double log_likelihood(const NetworkSpec& spec, const Array& output, const Array& y_value) {
    if (spec.head != HeadKind::GaussianRegression)
        throw std::invalid_argument("log_likelihood: vector target requires a Gaussian head");
    if (!output.same_shape(y_value))
        throw std::invalid_argument("log_likelihood: target shape mismatch");
    double ls = std::log(spec.noise_std);
    double inv_2var = 1.0 / (2.0 * spec.noise_std * spec.noise_std);
    double s = 0.0;
    for (std::size_t i = 0; i < output.size(); ++i) {
        double d = y_value.data[i] - output.data[i];
        s += -kHalfLog2Pi - ls - d * d * inv_2var;
    }
    return s;
}

namespace {
double log_softmax_at(const Array& logits, std::size_t idx) {
    double mx = logits.data[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits.data) sum += std::exp(v - mx);
    return logits.data[idx] - mx - std::log(sum);
}
}  // namespace

double log_likelihood(const NetworkSpec& spec, const Array& output, std::size_t y_class) {
    if (spec.head != HeadKind::Categorical)
        throw std::invalid_argument("log_likelihood: class target requires a categorical head");
    if (y_class >= output.size())
        throw std::invalid_argument("log_likelihood: class index " + std::to_string(y_class) +
                                    " out of range for " + std::to_string(output.size()) +
                                    " classes");
    return log_softmax_at(output, y_class);
}

double log_likelihood_mixed(const NetworkSpec& spec, const Array& output, std::size_t y_a,
                            std::size_t y_b, double lam) {
    if (lam >= 1.0) return log_likelihood(spec, output, y_a);
    if (lam <= 0.0) return log_likelihood(spec, output, y_b);
    return lam * log_likelihood(spec, output, y_a) + (1.0 - lam) * log_likelihood(spec, output, y_b);
}

NetworkGraph::NetworkGraph(ComputationGraph& g, const NetworkSpec& spec, std::string prefix)
    : spec_(&spec), prefix_(std::move(prefix)) {
    spec.validate();
    for (std::size_t i = 0; i < spec.n_layers(); ++i) {
        std::size_t m = spec.layer_sizes[i + 1], k = spec.layer_sizes[i];
        std::string base = prefix_ + "l" + std::to_string(i) + ".";
        w_mu_.push_back(g.input(base + "W_mu", {m, k}));
        b_mu_.push_back(g.input(base + "b_mu", {m}));
        param_slots_.push_back(base + "W_mu");
        param_slots_.push_back(base + "b_mu");
        if (spec.layer_is_bayesian(i)) {
            w_ls_.push_back(g.input(base + "W_ls", {m, k}));
            b_ls_.push_back(g.input(base + "b_ls", {m}));
            param_slots_.push_back(base + "W_ls");
            param_slots_.push_back(base + "b_ls");
        } else {
            w_ls_.push_back(-1);
            b_ls_.push_back(-1);
        }
    }
}

int NetworkGraph::new_draw(ComputationGraph& g) {
    DrawNodes dn;
    std::string dprefix = prefix_ + "d" + std::to_string(draws_.size()) + ".";
    for (std::size_t i = 0; i < spec_->n_layers(); ++i) {
        if (spec_->layer_is_bayesian(i)) {
            std::size_t m = spec_->layer_sizes[i + 1], k = spec_->layer_sizes[i];
            std::string base = dprefix + "l" + std::to_string(i) + ".";
            int w_eps = g.input(base + "W_eps", {m, k});
            int b_eps = g.input(base + "b_eps", {m});
            dn.W_eff.push_back(g.add(w_mu_[i], g.multiply(g.exp(w_ls_[i]), w_eps)));
            dn.b_eff.push_back(g.add(b_mu_[i], g.multiply(g.exp(b_ls_[i]), b_eps)));
        } else {
            dn.W_eff.push_back(w_mu_[i]);
            dn.b_eff.push_back(b_mu_[i]);
        }
    }
    draws_.push_back(std::move(dn));
    return static_cast<int>(draws_.size() - 1);
}

int NetworkGraph::apply(ComputationGraph& g, int x_node, int draw) const {
    const DrawNodes& dn = draws_.at(static_cast<std::size_t>(draw));
    int h = x_node;
    for (std::size_t i = 0; i < dn.W_eff.size(); ++i) {
        h = g.affine(dn.W_eff[i], h, dn.b_eff[i]);
        if (i + 1 < dn.W_eff.size())
            h = spec_->activations[i] == Activation::Tanh ? g.tanh(h) : g.relu(h);
    }
    return h;
}

void NetworkGraph::bind_params(const ModelState& state, Bindings& b) const {
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        const Layer& l = state.layers[i];
        std::string base = prefix_ + "l" + std::to_string(i) + ".";
        b[base + "W_mu"] = l.W_mu;
        b[base + "b_mu"] = l.b_mu;
        if (l.bayesian()) {
            b[base + "W_ls"] = *l.W_ls;
            b[base + "b_ls"] = *l.b_ls;
        }
    }
}

void NetworkGraph::bind_theta_noise(const std::vector<double>& noise, int draw,
                                    Bindings& b) const {
    std::size_t pos = 0;
    std::string dprefix = prefix_ + "d" + std::to_string(draw) + ".";
    for (std::size_t i = 0; i < spec_->n_layers(); ++i) {
        if (!spec_->layer_is_bayesian(i)) continue;
        std::size_t m = spec_->layer_sizes[i + 1], k = spec_->layer_sizes[i];
        std::string base = dprefix + "l" + std::to_string(i) + ".";
        Array w_eps({m, k});
        for (std::size_t j = 0; j < m * k; ++j) w_eps.data[j] = noise.at(pos + j);
        pos += m * k;
        Array b_eps({m});
        for (std::size_t j = 0; j < m; ++j) b_eps.data[j] = noise.at(pos + j);
        pos += m;
        b[base + "W_eps"] = std::move(w_eps);
        b[base + "b_eps"] = std::move(b_eps);
    }
}

LikelihoodGraph build_log_likelihood(ComputationGraph& g, const NetworkSpec& spec, int output_node,
                                     const std::string& prefix) {
    LikelihoodGraph out;
    if (spec.head == HeadKind::GaussianRegression) {
        out.y_slot = prefix + "y";
        int y = g.input(out.y_slot, {spec.output_dim()});
        int ls = g.input(prefix + "y_log_std", {spec.output_dim()});
        out.ll_node = g.gaussian_log_density(y, output_node, ls);
    } else {
        out.y_slot = prefix + "y_onehot";
        int onehot = g.input(out.y_slot, {spec.output_dim()});
        int picked = g.sum_reduce(g.multiply(output_node, onehot));
        int lse = g.log_sum_exp(output_node, 0);
        out.ll_node = g.subtract(picked, lse);
    }
    return out;
}

void bind_target(const NetworkSpec& spec, const std::string& y_slot, const Array& y_value,
                 Bindings& b) {
    b[y_slot] = y_value;
    std::string ls_slot = y_slot.substr(0, y_slot.size() - 1) + "y_log_std";
    b[ls_slot] = Array::full({spec.output_dim()}, std::log(spec.noise_std));
}

void bind_target_class(const NetworkSpec& spec, const std::string& y_slot, std::size_t y_class,
                       Bindings& b) {
    Array onehot({spec.output_dim()});
    onehot.data[y_class] = 1.0;
    b[y_slot] = std::move(onehot);
}

void bind_target_mixed(const NetworkSpec& spec, const std::string& y_slot, std::size_t y_a,
                       std::size_t y_b, double lam, Bindings& b) {
    Array mixed({spec.output_dim()});
    mixed.data[y_a] += lam;
    mixed.data[y_b] += 1.0 - lam;
    b[y_slot] = std::move(mixed);
}

PredictResult predict(const ModelState& state, const Array& x, std::size_t n_samples,
                      NoiseSource& noise, const PredictOptions& opts) {
    if (n_samples < 1) throw std::invalid_argument("predict: n_samples must be >= 1");
    if (opts.marginalize_aug && (opts.family == nullptr || opts.q_phi == nullptr))
        throw std::invalid_argument("predict: marginalize_aug requires family and q_phi");

    const NetworkSpec& spec = state.spec;
    std::size_t theta_dim = state.theta_noise_dim();
    std::vector<Array> outputs(n_samples);
    std::vector<NoiseSource> streams;
    streams.reserve(n_samples);
    for (std::size_t k = 0; k < n_samples; ++k) streams.push_back(noise.child(k));

    for (std::size_t k = 0; k < n_samples; ++k) {
        NoiseSource& s = streams[k];
        Array input = x;
        if (opts.marginalize_aug && opts.family->kind != FamilyKind::MixupBeta) {
            std::vector<double> eps(opts.q_phi->dim());
            for (auto& e : eps) e = s.normal();
            AugmentationFamily fam = *opts.family;
            fam.phi = sample_reparameterized(*opts.q_phi, eps);
            TransformSample ts = sample_gamma(fam, s);
            input = apply_transform(fam, ts, x);
        }
        std::vector<double> theta_eps(theta_dim);
        for (auto& e : theta_eps) e = s.normal();
        outputs[k] = forward(state, theta_eps, input);
    }

    PredictResult res;
    if (spec.head == HeadKind::Categorical) {
        res.probs.assign(spec.output_dim(), 0.0);
        for (const Array& out : outputs) {
            double mx = out.data[0];
            for (double v : out.data) mx = std::max(mx, v);
            double sum = 0.0;
            std::vector<double> p(out.size());
            for (std::size_t i = 0; i < out.size(); ++i) {
                p[i] = std::exp(out.data[i] - mx);
                sum += p[i];
            }
            for (std::size_t i = 0; i < p.size(); ++i) res.probs[i] += p[i] / sum;
        }
        for (double& v : res.probs) v /= static_cast<double>(n_samples);
    } else {
        res.mean.assign(spec.output_dim(), 0.0);
        res.variance.assign(spec.output_dim(), 0.0);
        for (const Array& out : outputs)
            for (std::size_t i = 0; i < out.size(); ++i) res.mean[i] += out.data[i];
        for (double& v : res.mean) v /= static_cast<double>(n_samples);
        for (const Array& out : outputs)
            for (std::size_t i = 0; i < out.size(); ++i) {
                double d = out.data[i] - res.mean[i];
                res.variance[i] += d * d;
            }
        for (double& v : res.variance) v /= static_cast<double>(n_samples);
    }
    return res;
}

}  // namespace optima
