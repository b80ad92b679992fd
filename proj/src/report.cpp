#include "optima/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "optima/elbo.hpp"
#include "optima/metrics.hpp"
#include "optima/parallel.hpp"

namespace optima {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
    throw ConfigError("config error at " + path + ": " + what);
}

void require_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) config_error(path, "expected an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) config_error(path + "/" + k, "unknown key");
}

template <typename T>
T get_or(const json& j, const std::string& path, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        config_error(path + "/" + key, "wrong type");
    }
}

}  // namespace

RunConfig parse_run_config(const json& j) {
    require_keys(j, "", {"data", "model", "augmentation", "train", "eval", "baselines"});
    RunConfig cfg;

    // data
    if (!j.contains("data")) config_error("/data", "missing section");
    const json& jd = j.at("data");
    require_keys(jd, "/data",
                 {"generator", "n_train", "n_test", "seed", "size", "n_classes", "pose_jitter",
                  "train_path", "test_path", "corrupt"});
    cfg.data.generator = get_or<std::string>(jd, "/data", "generator", "");
    cfg.data.n_train = get_or<std::size_t>(jd, "/data", "n_train", 50);
    cfg.data.n_test = get_or<std::size_t>(jd, "/data", "n_test", 1000);
    cfg.data.seed = get_or<std::uint64_t>(jd, "/data", "seed", 0);
    cfg.data.size = get_or<std::size_t>(jd, "/data", "size", 16);
    cfg.data.n_classes = get_or<std::size_t>(jd, "/data", "n_classes", 4);
    cfg.data.pose_jitter = get_or<double>(jd, "/data", "pose_jitter", 0.2);
    cfg.data.train_path = get_or<std::string>(jd, "/data", "train_path", "");
    cfg.data.test_path = get_or<std::string>(jd, "/data", "test_path", "");
    if (jd.contains("corrupt")) {
        require_keys(jd.at("corrupt"), "/data/corrupt", {"kind", "severity"});
        cfg.data.corrupt_kind = get_or<std::string>(jd.at("corrupt"), "/data/corrupt", "kind", "");
        cfg.data.corrupt_severity =
            get_or<double>(jd.at("corrupt"), "/data/corrupt", "severity", 0.0);
    }
    if (cfg.data.generator.empty() && cfg.data.train_path.empty())
        config_error("/data", "need either a generator or train_path/test_path");

    // model
    if (!j.contains("model")) config_error("/model", "missing section");
    const json& jm = j.at("model");
    require_keys(jm, "/model",
                 {"layers", "activation", "head", "noise_std", "bayes_last_layer",
                  "bayes_all_layers"});
    std::vector<std::size_t> layers =
        get_or<std::vector<std::size_t>>(jm, "/model", "layers", {1, 32, 32, 1});
    std::string act = get_or<std::string>(jm, "/model", "activation", "tanh");
    std::string head = get_or<std::string>(jm, "/model", "head", "gaussian-regression");
    HeadKind hk;
    if (head == "gaussian-regression")
        hk = HeadKind::GaussianRegression;
    else if (head == "categorical")
        hk = HeadKind::Categorical;
    else
        config_error("/model/head", "must be gaussian-regression or categorical");
    cfg.model = NetworkSpec::mlp(layers, activation_from_name(act), hk);
    cfg.model.noise_std = get_or<double>(jm, "/model", "noise_std", 0.2);
    cfg.model.bayes_last_layer = get_or<bool>(jm, "/model", "bayes_last_layer", true);
    cfg.model.bayes_all_layers = get_or<bool>(jm, "/model", "bayes_all_layers", false);
    try {
        cfg.model.validate();
    } catch (const std::exception& e) {
        config_error("/model", e.what());
    }

    // augmentation
    if (!j.contains("augmentation")) config_error("/augmentation", "missing section");
    const json& ja = j.at("augmentation");
    require_keys(ja, "/augmentation",
                 {"family", "init_mu", "init_sigma", "init_alpha", "init_sigma_log_alpha",
                  "temperature", "shifts", "prior_mean", "prior_std", "q_sigma_init"});
    cfg.augmentation.family = get_or<std::string>(ja, "/augmentation", "family", "additive-shift");
    family_kind_from_name(cfg.augmentation.family);  // validates here, at parse time
    cfg.augmentation.init_mu = get_or<double>(ja, "/augmentation", "init_mu", 0.0);
    cfg.augmentation.init_sigma = get_or<double>(ja, "/augmentation", "init_sigma", 0.1);
    cfg.augmentation.init_alpha = get_or<double>(ja, "/augmentation", "init_alpha", 0.2);
    cfg.augmentation.init_sigma_log_alpha =
        get_or<double>(ja, "/augmentation", "init_sigma_log_alpha", 0.1);
    cfg.augmentation.temperature = get_or<double>(ja, "/augmentation", "temperature", 1.0);
    cfg.augmentation.shifts =
        get_or<std::vector<std::vector<double>>>(ja, "/augmentation", "shifts", {});
    cfg.augmentation.prior_mean =
        get_or<std::vector<double>>(ja, "/augmentation", "prior_mean", {});
    cfg.augmentation.prior_std = get_or<std::vector<double>>(ja, "/augmentation", "prior_std", {});
    cfg.augmentation.q_sigma_init = get_or<double>(ja, "/augmentation", "q_sigma_init", 0.1);

    // train
    const json jt = j.contains("train") ? j.at("train") : json::object();
    require_keys(jt, "/train",
                 {"algorithm", "lr_net", "lr_aug", "beta_net", "beta_aug", "epochs", "batch_size",
                  "mc", "clip_norm", "seed", "log_every", "theta_prior_std",
                  "q_theta_log_std_init"});
    cfg.algorithm = get_or<std::string>(jt, "/train", "algorithm", "full-vi");
    if (cfg.algorithm != "full-vi" && cfg.algorithm != "partial-vi")
        config_error("/train/algorithm", "must be full-vi or partial-vi");
    cfg.train.lr_net = get_or<double>(jt, "/train", "lr_net", 1e-4);
    cfg.train.lr_aug = get_or<double>(jt, "/train", "lr_aug", 1e-2);
    cfg.train.beta_net = get_or<double>(jt, "/train", "beta_net", 0.1);
    cfg.train.beta_aug = get_or<double>(jt, "/train", "beta_aug", 1.0);
    cfg.train.epochs = get_or<std::size_t>(jt, "/train", "epochs", 100);
    cfg.train.batch_size = get_or<std::size_t>(jt, "/train", "batch_size", 32);
    cfg.train.clip_norm = get_or<double>(jt, "/train", "clip_norm", 1.0);
    cfg.train.seed = get_or<std::uint64_t>(jt, "/train", "seed", 0);
    cfg.train.log_every = get_or<std::size_t>(jt, "/train", "log_every", 10);
    cfg.train.theta_prior_std = get_or<double>(jt, "/train", "theta_prior_std", 1.0);
    cfg.train.q_theta_log_std_init = get_or<double>(jt, "/train", "q_theta_log_std_init", -5.0);
    if (jt.contains("mc")) {
        require_keys(jt.at("mc"), "/train/mc", {"s_gamma", "k_naive", "s_theta", "s_phi"});
        cfg.train.mc.s_gamma = get_or<std::size_t>(jt.at("mc"), "/train/mc", "s_gamma", 4);
        cfg.train.mc.k_naive = get_or<std::size_t>(jt.at("mc"), "/train/mc", "k_naive", 5);
        cfg.train.mc.s_theta = get_or<std::size_t>(jt.at("mc"), "/train/mc", "s_theta", 1);
        cfg.train.mc.s_phi = get_or<std::size_t>(jt.at("mc"), "/train/mc", "s_phi", 1);
    }
    try {
        cfg.train.validate();
    } catch (const std::exception& e) {
        config_error("/train", e.what());
    }

    // eval
    const json je = j.contains("eval") ? j.at("eval") : json::object();
    require_keys(je, "/eval", {"n_mc_samples", "marginalize_aug"});
    cfg.eval.n_mc_samples = get_or<std::size_t>(je, "/eval", "n_mc_samples", 100);
    cfg.eval.marginalize_aug = get_or<bool>(je, "/eval", "marginalize_aug", false);
    if (cfg.eval.n_mc_samples < 1) config_error("/eval/n_mc_samples", "must be >= 1");

    // baselines
    if (j.contains("baselines")) {
        const json& jb = j.at("baselines");
        if (!jb.is_array()) config_error("/baselines", "expected an array");
        for (std::size_t i = 0; i < jb.size(); ++i) {
            const json& arm = jb[i];
            std::string path = "/baselines/" + std::to_string(i);
            BaselineArm b;
            if (arm.is_string()) {
                b.kind = arm.get<std::string>();
            } else if (arm.is_object()) {
                require_keys(arm, path, {"naive-aug"});
                if (!arm.contains("naive-aug")) config_error(path, "unknown baseline arm");
                require_keys(arm.at("naive-aug"), path + "/naive-aug", {"k"});
                b.kind = "naive-aug";
                b.k = get_or<std::size_t>(arm.at("naive-aug"), path + "/naive-aug", "k", 5);
            } else {
                config_error(path, "expected a string or object");
            }
            if (b.kind != "no-aug" && b.kind != "fixed-aug" && b.kind != "naive-aug")
                config_error(path, "unknown baseline arm '" + b.kind + "'");
            cfg.baselines.push_back(b);
        }
    }

    // resolved copy with defaults materialized
    json r = j;
    r["train"]["lr_net"] = cfg.train.lr_net;
    r["train"]["lr_aug"] = cfg.train.lr_aug;
    r["train"]["beta_net"] = cfg.train.beta_net;
    r["train"]["beta_aug"] = cfg.train.beta_aug;
    r["train"]["epochs"] = cfg.train.epochs;
    r["train"]["batch_size"] = cfg.train.batch_size;
    r["train"]["seed"] = cfg.train.seed;
    r["train"]["clip_norm"] = cfg.train.clip_norm;
    r["train"]["log_every"] = cfg.train.log_every;
    r["train"]["algorithm"] = cfg.algorithm;
    r["train"]["mc"] = {{"s_gamma", cfg.train.mc.s_gamma},
                        {"k_naive", cfg.train.mc.k_naive},
                        {"s_theta", cfg.train.mc.s_theta},
                        {"s_phi", cfg.train.mc.s_phi}};
    r["eval"] = {{"n_mc_samples", cfg.eval.n_mc_samples},
                 {"marginalize_aug", cfg.eval.marginalize_aug}};
    cfg.resolved = std::move(r);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse failure in '" + path + "': " + e.what());
    }
    return parse_run_config(j);
}

FamilySetup make_family(const AugConfig& cfg, const Dataset& data) {
    FamilyKind kind = family_kind_from_name(cfg.family);
    const Array& x0 = data.inputs.at(0);
    std::size_t flat_dim = x0.size();

    AugmentationFamily fam = [&]() {
        switch (kind) {
            case FamilyKind::AdditiveShift: {
                std::vector<double> pm(2 * flat_dim, 0.0);
                for (std::size_t d = 0; d < flat_dim; ++d) pm[flat_dim + d] = std::log(0.2);
                std::vector<double> ps(2 * flat_dim, 0.1);
                if (!cfg.prior_mean.empty()) pm = cfg.prior_mean;
                if (!cfg.prior_std.empty()) ps = cfg.prior_std;
                std::vector<double> pls(ps.size());
                for (std::size_t i = 0; i < ps.size(); ++i) pls[i] = std::log(ps[i]);
                return AugmentationFamily::additive_shift(flat_dim, cfg.init_mu, cfg.init_sigma,
                                                          DiagonalGaussian(pm, pls));
            }
            case FamilyKind::AffineImage: {
                if (x0.rank() != 2)
                    throw ConfigError("affine-image augmentation needs raster inputs");
                std::vector<double> pm{0.0, std::log(cfg.init_sigma), 0.0,
                                       std::log(cfg.init_sigma), 0.0, std::log(cfg.init_sigma)};
                std::vector<double> ps(6, 0.5);
                if (!cfg.prior_mean.empty()) pm = cfg.prior_mean;
                if (!cfg.prior_std.empty()) ps = cfg.prior_std;
                std::vector<double> pls(ps.size());
                for (std::size_t i = 0; i < ps.size(); ++i) pls[i] = std::log(ps[i]);
                return AugmentationFamily::affine_image(x0.shape[0], x0.shape[1], cfg.init_sigma,
                                                        cfg.init_sigma,
                                                        DiagonalGaussian(pm, pls));
            }
            case FamilyKind::CategoricalChoice: {
                auto shifts = cfg.shifts;
                if (shifts.empty())
                    throw ConfigError("categorical-choice augmentation needs /augmentation/shifts");
                for (const auto& s : shifts)
                    if (s.size() != flat_dim)
                        throw ConfigError("categorical shift dimension mismatch");
                std::size_t p = shifts.size() + 1;
                std::vector<double> pm(p, 0.0);
                pm.back() = std::log(cfg.temperature);
                std::vector<double> ps(p, 0.5);
                if (!cfg.prior_mean.empty()) pm = cfg.prior_mean;
                if (!cfg.prior_std.empty()) ps = cfg.prior_std;
                std::vector<double> pls(ps.size());
                for (std::size_t i = 0; i < ps.size(); ++i) pls[i] = std::log(ps[i]);
                return AugmentationFamily::categorical_choice(shifts, cfg.temperature,
                                                              DiagonalGaussian(pm, pls));
            }
            case FamilyKind::MixupBeta: {
                std::vector<double> pm{std::log(cfg.init_alpha), std::log(0.1)};
                std::vector<double> ps(2, 2.0);  // prior std 2.0 over log alpha
                if (!cfg.prior_mean.empty()) pm = cfg.prior_mean;
                if (!cfg.prior_std.empty()) ps = cfg.prior_std;
                std::vector<double> pls(ps.size());
                for (std::size_t i = 0; i < ps.size(); ++i) pls[i] = std::log(ps[i]);
                return AugmentationFamily::mixup_beta(cfg.init_alpha, cfg.init_sigma_log_alpha,
                                                      DiagonalGaussian(pm, pls));
            }
        }
        throw ConfigError("unreachable family kind");
    }();

    if (fam.phi_prior.dim() != fam.phi_dim())
        throw ConfigError("augmentation prior dimension must be " + std::to_string(fam.phi_dim()));
    DiagonalGaussian q0(fam.phi,
                        std::vector<double>(fam.phi_dim(), std::log(cfg.q_sigma_init)));
    return {std::move(fam), std::move(q0)};
}

LoadedData load_data(const DataConfig& cfg) {
    LoadedData out;
    if (!cfg.train_path.empty()) {
        out.train = read_csv(cfg.train_path);
        if (!cfg.test_path.empty()) out.test = read_csv(cfg.test_path);
        else out.test = out.train;
    } else if (cfg.generator == "synthetic-regression") {
        auto [train, test] = gen_synthetic_regression(cfg.n_train, cfg.n_test, cfg.seed);
        out.train = std::move(train);
        out.test = std::move(test);
    } else if (cfg.generator == "glyph-classification") {
        out.train = gen_glyph_classification(cfg.n_train, cfg.size, cfg.n_classes,
                                             cfg.pose_jitter, cfg.seed);
        out.test = gen_glyph_classification(cfg.n_test, cfg.size, cfg.n_classes, cfg.pose_jitter,
                                            cfg.seed + 1000003);
    } else {
        throw ConfigError("unknown generator '" + cfg.generator + "'");
    }
    if (!cfg.corrupt_kind.empty())
        out.corrupted_test = corrupt_dataset(out.test, cfg.corrupt_kind, cfg.corrupt_severity);
    return out;
}

// ---------------------------------------------------------------------------
// checkpoints and traces
// ---------------------------------------------------------------------------

namespace {

json array_to_json(const Array& a) {
    return json{{"shape", a.shape}, {"data", a.data}};
}

Array array_from_json(const json& j) {
    return Array(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

void ensure_parent_dir(const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state,
                     const DiagonalGaussian& q_phi, const AugmentationFamily& family, Task task,
                     std::size_t step) {
    json j;
    j["format"] = "optima-checkpoint-v1";
    j["version"] = kArtifactVersion;
    j["step"] = step;
    j["task"] = task_name(task);

    const NetworkSpec& s = state.spec;
    json spec;
    spec["layers"] = s.layer_sizes;
    std::vector<std::string> acts;
    for (Activation a : s.activations) acts.push_back(activation_name(a));
    spec["activations"] = acts;
    spec["head"] =
        s.head == HeadKind::GaussianRegression ? "gaussian-regression" : "categorical";
    spec["noise_std"] = s.noise_std;
    spec["n_classes"] = s.n_classes;
    spec["bayes_last_layer"] = s.bayes_last_layer;
    spec["bayes_all_layers"] = s.bayes_all_layers;
    j["spec"] = spec;

    json layers = json::array();
    for (const Layer& l : state.layers) {
        json lj;
        lj["W_mu"] = array_to_json(l.W_mu);
        lj["b_mu"] = array_to_json(l.b_mu);
        if (l.bayesian()) {
            lj["W_ls"] = array_to_json(*l.W_ls);
            lj["b_ls"] = array_to_json(*l.b_ls);
        }
        layers.push_back(lj);
    }
    j["layers"] = layers;
    j["q_phi"] = {{"mean", q_phi.mean}, {"log_std", q_phi.log_std}};

    json fj;
    fj["kind"] = family_kind_name(family.kind);
    fj["phi"] = family.phi;
    fj["prior_mean"] = family.phi_prior.mean;
    fj["prior_log_std"] = family.phi_prior.log_std;
    fj["input_dim"] = family.input_dim;
    fj["height"] = family.height;
    fj["width"] = family.width;
    fj["shifts"] = family.discrete_shifts;
    j["family"] = fj;

    ensure_parent_dir(path);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
    out << j.dump(1) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
    json j;
    in >> j;
    if (j.value("format", "") != "optima-checkpoint-v1")
        throw std::runtime_error("load_checkpoint: unrecognized format in '" + path + "'");

    Checkpoint c;
    const json& spec = j.at("spec");
    NetworkSpec s;
    s.layer_sizes = spec.at("layers").get<std::vector<std::size_t>>();
    for (const auto& a : spec.at("activations"))
        s.activations.push_back(activation_from_name(a.get<std::string>()));
    std::string head = spec.at("head").get<std::string>();
    s.head = head == "categorical" ? HeadKind::Categorical : HeadKind::GaussianRegression;
    s.noise_std = spec.at("noise_std").get<double>();
    s.n_classes = spec.at("n_classes").get<std::size_t>();
    s.bayes_last_layer = spec.at("bayes_last_layer").get<bool>();
    s.bayes_all_layers = spec.at("bayes_all_layers").get<bool>();
    s.validate();
    c.state.spec = s;
    for (const auto& lj : j.at("layers")) {
        Layer l;
        l.W_mu = array_from_json(lj.at("W_mu"));
        l.b_mu = array_from_json(lj.at("b_mu"));
        if (lj.contains("W_ls")) {
            l.W_ls = array_from_json(lj.at("W_ls"));
            l.b_ls = array_from_json(lj.at("b_ls"));
        }
        c.state.layers.push_back(std::move(l));
    }
    c.q_phi = DiagonalGaussian(j.at("q_phi").at("mean").get<std::vector<double>>(),
                               j.at("q_phi").at("log_std").get<std::vector<double>>());
    const json& fj = j.at("family");
    c.family.kind = family_kind_from_name(fj.at("kind").get<std::string>());
    c.family.phi = fj.at("phi").get<std::vector<double>>();
    c.family.phi_prior =
        DiagonalGaussian(fj.at("prior_mean").get<std::vector<double>>(),
                         fj.at("prior_log_std").get<std::vector<double>>());
    c.family.input_dim = fj.at("input_dim").get<std::size_t>();
    c.family.height = fj.at("height").get<std::size_t>();
    c.family.width = fj.at("width").get<std::size_t>();
    c.family.discrete_shifts = fj.at("shifts").get<std::vector<std::vector<double>>>();
    c.task = task_from_name(j.at("task").get<std::string>());
    c.step = j.at("step").get<std::size_t>();
    return c;
}

void write_trace_csv(const std::string& path, const TrainTrace& trace) {
    ensure_parent_dir(path);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_trace_csv: cannot open '" + path + "'");
    out << "step,total,data_fit,kl_theta,kl_phi,dphi_mean,train_loss";
    for (const auto& name : trace.phi_coord_names)
        out << ",phi_" << name << "_mean,phi_" << name << "_sigma";
    out << ",test_metric\n";
    for (const auto& e : trace.entries) {
        out << e.step << "," << fmt_g17(e.total) << "," << fmt_g17(e.data_fit) << ","
            << fmt_g17(e.kl_theta) << "," << fmt_g17(e.kl_phi) << "," << fmt_g17(e.dphi_mean)
            << "," << fmt_g17(e.train_loss);
        for (const auto& [mean, sigma] : e.phi_coords)
            out << "," << fmt_g17(mean) << "," << fmt_g17(sigma);
        out << "," << (e.test_metric ? fmt_g17(*e.test_metric) : "");
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// per-arm evaluation
// ---------------------------------------------------------------------------

namespace {

Array flat_input(const Array& x) {
    if (x.rank() <= 1) return x;
    return Array({x.size()}, x.data);
}

PredictionLog predict_log(const ModelState& state, const DiagonalGaussian& q_phi,
                          const AugmentationFamily& family, const Dataset& data,
                          const EvalConfig& eval_cfg, std::uint64_t seed) {
    PredictOptions opts;
    opts.marginalize_aug = eval_cfg.marginalize_aug;
    opts.family = &family;
    opts.q_phi = &q_phi;
    NoiseSource root(seed, 0xE7A1);
    // per-example fan-out with derived streams, reduced in fixed order below
    std::vector<PredictResult> results(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        NoiseSource ex = root.child(i);
        Array x = family.kind == FamilyKind::AffineImage && opts.marginalize_aug
                      ? data.inputs[i]
                      : flat_input(data.inputs[i]);
        results[i] = predict(state, x, eval_cfg.n_mc_samples, ex, opts);
    });
    PredictionLog log;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.task == Task::Classification)
            log.add_classification(results[i].probs, data.labels[i]);
        else
            log.add_regression(results[i].mean, results[i].variance, data.targets[i].data);
    }
    return log;
}

}  // namespace

json arm_report(const ModelState& state, const DiagonalGaussian& q_phi,
                const AugmentationFamily& family, const Dataset& test, const Dataset* corrupted,
                const Dataset& train, const EvalConfig& eval_cfg, const TrainTrace* trace,
                double beta_net, double beta_aug, double theta_prior_std, std::uint64_t eval_seed) {
    json out;
    PredictionLog log = predict_log(state, q_phi, family, test, eval_cfg, eval_seed);
    BasicMetrics bm = basic_metrics(log);

    json metrics;
    if (test.task == Task::Classification) {
        metrics["accuracy"] = bm.accuracy;
        auto ece = expected_calibration_error(log);
        metrics["ece"] = ece.ece;
        json bins = json::array();
        for (const auto& b : ece.table.bins)
            bins.push_back({{"count", b.count},
                            {"mean_confidence", b.mean_confidence},
                            {"accuracy", b.accuracy}});
        out["reliability"] = bins;
        std::vector<double> ents;
        for (const auto& p : log.probs) ents.push_back(predictive_entropy(p));
        double mn = 1e300, mx = -1e300, acc = 0.0;
        for (double e : ents) {
            mn = std::min(mn, e);
            mx = std::max(mx, e);
            acc += e;
        }
        metrics["entropy_mean"] = acc / static_cast<double>(ents.size());
        metrics["entropy_min"] = mn;
        metrics["entropy_max"] = mx;
        if (corrupted != nullptr) {
            PredictionLog clog =
                predict_log(state, q_phi, family, *corrupted, eval_cfg, eval_seed + 1);
            std::vector<double> cents;
            for (const auto& p : clog.probs) cents.push_back(predictive_entropy(p));
            metrics["ood_auroc"] = auroc(ents, cents);
        }
    } else {
        metrics["mse"] = bm.mse;
    }
    out["metrics"] = metrics;

    // PAC-Bayes bound value on the training objective
    {
        double kl_total = state.kl_theta(theta_prior_std) +
                          kl_diagonal_gaussians(q_phi, family.phi_prior);
        NoiseSource rng(eval_seed, 0x9ACB);
        const std::size_t theta_draws = 8, gamma_draws = 8;
        double risk = 0.0;
        for (std::size_t t = 0; t < theta_draws; ++t) {
            NoiseSource ts = rng.child(t);
            std::vector<double> eps(state.theta_noise_dim());
            for (auto& e : eps) e = ts.normal();
            std::vector<double> phi_eps(q_phi.dim());
            for (auto& e : phi_eps) e = ts.normal();
            AugmentationFamily fam = family;
            fam.phi = sample_reparameterized(q_phi, phi_eps);
            for (std::size_t i = 0; i < train.size(); ++i) {
                std::vector<TransformSample> samples;
                NoiseSource gs = ts.child(1000 + i);
                for (std::size_t gidx = 0; gidx < gamma_draws; ++gidx)
                    samples.push_back(sample_gamma(fam, gs));
                std::optional<std::size_t> comp;
                if (fam.kind == FamilyKind::MixupBeta) comp = (i + 1) % train.size();
                risk -= marginalized_loglik(state, eps, fam, samples, train, i, comp);
            }
        }
        risk /= static_cast<double>(theta_draws * train.size());
        double delta = 0.05;
        out["pac_bayes"] = {{"empirical_risk", risk},
                            {"kl_total", kl_total},
                            {"delta", delta},
                            {"n", train.size()},
                            {"bound", pac_bayes_bound(risk, kl_total, train.size(), delta)}};
    }

    if (trace != nullptr) {
        json traj;
        traj["names"] = trace->phi_coord_names;
        json steps = json::array(), means = json::array(), sigmas = json::array(),
             dphi = json::array(), train_loss = json::array(), test_metric = json::array();
        for (const auto& e : trace->entries) {
            steps.push_back(e.step);
            json m = json::array(), s = json::array();
            for (const auto& [mean, sigma] : e.phi_coords) {
                m.push_back(mean);
                s.push_back(sigma);
            }
            means.push_back(m);
            sigmas.push_back(s);
            dphi.push_back(e.dphi_mean);
            train_loss.push_back(e.train_loss);
            if (e.test_metric) test_metric.push_back(*e.test_metric);
        }
        traj["steps"] = steps;
        traj["means"] = means;
        traj["sigmas"] = sigmas;
        out["phi_trajectory"] = traj;
        out["dphi_trajectory"] = dphi;
        out["train_curve"] = {{"steps", steps}, {"train_loss", train_loss}};
        if (!test_metric.empty()) out["train_curve"]["test_metric"] = test_metric;
    }
    out["betas"] = {{"net", beta_net}, {"aug", beta_aug}};
    return out;
}

// ---------------------------------------------------------------------------
// figures
// ---------------------------------------------------------------------------

namespace {

std::string f2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct SvgCanvas {
    std::ostringstream body;
    double width, height;
    SvgCanvas(double w, double h) : width(w), height(h) {}

    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double sw = 1.0, const std::string& dash = "") {
        body << "<line x1=\"" << f2(x1) << "\" y1=\"" << f2(y1) << "\" x2=\"" << f2(x2)
             << "\" y2=\"" << f2(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\""
             << f2(sw) << "\"";
        if (!dash.empty()) body << " stroke-dasharray=\"" << dash << "\"";
        body << "/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill) {
        body << "<rect x=\"" << f2(x) << "\" y=\"" << f2(y) << "\" width=\"" << f2(w)
             << "\" height=\"" << f2(h) << "\" fill=\"" << fill << "\"/>\n";
    }
    void text(double x, double y, const std::string& s, double size = 11.0,
              const std::string& anchor = "start") {
        body << "<text x=\"" << f2(x) << "\" y=\"" << f2(y) << "\" font-size=\"" << f2(size)
             << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << s
             << "</text>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                  double sw = 1.5, const std::string& dash = "") {
        body << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << f2(sw)
             << "\"";
        if (!dash.empty()) body << " stroke-dasharray=\"" << dash << "\"";
        body << " points=\"";
        for (const auto& [x, y] : pts) body << f2(x) << "," << f2(y) << " ";
        body << "\"/>\n";
    }
    void save(const std::string& path) const {
        ensure_parent_dir(path);
        std::ofstream out(path);
        if (!out) throw std::runtime_error("svg: cannot open '" + path + "'");
        out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
            << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f2(width) << "\" height=\""
            << f2(height) << "\" viewBox=\"0 0 " << f2(width) << " " << f2(height) << "\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << body.str() << "</svg>\n";
    }
};

const char* kArmColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

void write_reliability_svg(const std::string& path, const json& report) {
    std::vector<std::string> arms;
    for (const auto& [name, arm] : report.at("arms").items())
        if (arm.contains("reliability")) arms.push_back(name);
    if (arms.empty()) {
        SvgCanvas svg(300, 80);
        svg.text(20, 40, "no classification arms in report");
        svg.save(path);
        return;
    }
    double panel = 220.0, margin = 45.0, gap = 25.0;
    SvgCanvas svg(margin + arms.size() * (panel + gap), panel + 2 * margin);
    for (std::size_t a = 0; a < arms.size(); ++a) {
        double x0 = margin + a * (panel + gap);
        double y0 = margin;
        const json& bins = report.at("arms").at(arms[a]).at("reliability");
        svg.rect(x0, y0, panel, panel, "#f8f8f8");
        for (std::size_t b = 0; b < bins.size(); ++b) {
            double count = bins[b].at("count").get<double>();
            if (count == 0) continue;
            double acc = bins[b].at("accuracy").get<double>();
            double bx = x0 + (static_cast<double>(b) / 10.0) * panel;
            double bh = acc * panel;
            svg.rect(bx, y0 + panel - bh, panel / 10.0 - 1.0, bh, kArmColors[a % 6]);
        }
        svg.line(x0, y0 + panel, x0 + panel, y0, "#444444", 1.0, "4,3");  // diagonal
        svg.line(x0, y0 + panel, x0 + panel, y0 + panel, "black");
        svg.line(x0, y0, x0, y0 + panel, "black");
        double ece = report.at("arms").at(arms[a]).at("metrics").value("ece", 0.0);
        svg.text(x0 + panel / 2.0, y0 - 8.0, arms[a] + " (ECE " + f2(ece) + ")", 12.0, "middle");
        svg.text(x0 + panel / 2.0, y0 + panel + 16.0, "confidence", 10.0, "middle");
    }
    svg.text(12, margin + panel / 2.0, "accuracy", 10.0, "middle");
    svg.save(path);
}

void write_phi_trajectory_svg(const std::string& path, const json& report) {
    const json* traj = nullptr;
    for (const auto& [name, arm] : report.at("arms").items())
        if (arm.contains("phi_trajectory")) {
            traj = &arm.at("phi_trajectory");
            break;
        }
    double w = 480, h = 300, margin = 45;
    SvgCanvas svg(w, h);
    if (traj == nullptr || traj->at("steps").empty()) {
        svg.text(20, 40, "no phi trajectory logged");
        svg.save(path);
        return;
    }
    const auto steps = traj->at("steps").get<std::vector<double>>();
    const auto& means = traj->at("means");
    const auto& sigmas = traj->at("sigmas");
    const auto names = traj->at("names").get<std::vector<std::string>>();
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < steps.size(); ++i)
        for (std::size_t c = 0; c < names.size(); ++c) {
            double m = means[i][c].get<double>(), s = sigmas[i][c].get<double>();
            lo = std::min({lo, m, s});
            hi = std::max({hi, m, s});
        }
    if (hi <= lo) hi = lo + 1.0;
    double smax = steps.back() > 0 ? steps.back() : 1.0;
    auto px = [&](double st) { return margin + (st / smax) * (w - 2 * margin); };
    auto py = [&](double v) { return h - margin - (v - lo) / (hi - lo) * (h - 2 * margin); };
    for (std::size_t c = 0; c < names.size(); ++c) {
        std::vector<std::pair<double, double>> mpts, spts;
        for (std::size_t i = 0; i < steps.size(); ++i) {
            mpts.push_back({px(steps[i]), py(means[i][c].get<double>())});
            spts.push_back({px(steps[i]), py(sigmas[i][c].get<double>())});
        }
        svg.polyline(mpts, kArmColors[c % 6]);
        svg.polyline(spts, kArmColors[c % 6], 1.2, "5,3");
        svg.text(w - margin + 3, py(means.back()[c].get<double>()), names[c], 10.0);
    }
    svg.line(margin, h - margin, w - margin, h - margin, "black");
    svg.line(margin, margin, margin, h - margin, "black");
    svg.text(w / 2.0, h - 10.0, "step (solid: mean, dashed: sigma)", 10.0, "middle");
    svg.save(path);
}

void write_curves_svg(const std::string& path, const json& report) {
    double w = 480, h = 300, margin = 45;
    SvgCanvas svg(w, h);
    double lo = 1e300, hi = -1e300, smax = 1.0;
    bool any = false;
    for (const auto& [name, arm] : report.at("arms").items()) {
        if (!arm.contains("train_curve")) continue;
        for (const auto& v : arm.at("train_curve").at("train_loss")) {
            lo = std::min(lo, v.get<double>());
            hi = std::max(hi, v.get<double>());
            any = true;
        }
        const auto& st = arm.at("train_curve").at("steps");
        if (!st.empty()) smax = std::max(smax, st.back().get<double>());
    }
    if (!any) {
        svg.text(20, 40, "no train curves logged");
        svg.save(path);
        return;
    }
    if (hi <= lo) hi = lo + 1.0;
    auto px = [&](double st) { return margin + (st / smax) * (w - 2 * margin); };
    auto py = [&](double v) { return h - margin - (v - lo) / (hi - lo) * (h - 2 * margin); };
    std::size_t idx = 0;
    for (const auto& [name, arm] : report.at("arms").items()) {
        if (!arm.contains("train_curve")) continue;
        const auto steps = arm.at("train_curve").at("steps").get<std::vector<double>>();
        const auto loss = arm.at("train_curve").at("train_loss").get<std::vector<double>>();
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < steps.size(); ++i) pts.push_back({px(steps[i]), py(loss[i])});
        svg.polyline(pts, kArmColors[idx % 6]);
        svg.text(margin + 8, margin + 14 + 13 * static_cast<double>(idx), name, 10.0);
        ++idx;
    }
    svg.line(margin, h - margin, w - margin, h - margin, "black");
    svg.line(margin, margin, margin, h - margin, "black");
    svg.text(w / 2.0, h - 10.0, "step vs train loss", 10.0, "middle");
    svg.save(path);
}

namespace {
std::string arm_display_name(const std::string& key) {
    if (key == "optima") return "OPTIMA";
    if (key == "no-aug") return "No Aug";
    if (key == "fixed-aug") return "Fixed Aug";
    if (key == "naive-aug") return "Naive Aug";
    return key;
}
}  // namespace

void write_summary_markdown(const std::string& path, const json& report) {
    ensure_parent_dir(path);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("summary: cannot open '" + path + "'");
    out << "# Run summary\n\n";
    bool classification = false;
    for (const auto& [name, arm] : report.at("arms").items())
        if (arm.at("metrics").contains("accuracy")) classification = true;
    if (classification)
        out << "| Arm | Accuracy | ECE | OOD AUROC | PAC-Bayes bound |\n"
            << "|---|---|---|---|---|\n";
    else
        out << "| Arm | Test MSE | PAC-Bayes bound |\n|---|---|---|\n";
    for (const auto& [name, arm] : report.at("arms").items()) {
        const json& m = arm.at("metrics");
        if (classification) {
            out << "| " << arm_display_name(name) << " | " << (m.contains("accuracy") ? f2(m["accuracy"].get<double>()) : "-")
                << " | " << (m.contains("ece") ? f2(m["ece"].get<double>()) : "-") << " | "
                << (m.contains("ood_auroc") ? f2(m["ood_auroc"].get<double>()) : "-") << " | "
                << f2(arm.at("pac_bayes").at("bound").get<double>()) << " |\n";
        } else {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", m.at("mse").get<double>());
            out << "| " << arm_display_name(name) << " | " << buf << " | "
                << f2(arm.at("pac_bayes").at("bound").get<double>()) << " |\n";
        }
    }
    out << "\nSeeds: ";
    for (const auto& s : report.at("seeds")) out << s << " ";
    out << "\n\nGenerated by " << report.value("version", "") << ".\n";
}

}  // namespace optima
