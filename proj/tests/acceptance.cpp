// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned in code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "optima/cli.hpp"
#include "optima/elbo.hpp"
#include "optima/finite_diff.hpp"
#include "optima/metrics.hpp"
#include "optima/theory.hpp"
#include "optima/trainer.hpp"
#include "test_util.hpp"

using namespace optima;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    if (!pass) ++g_failures;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[320];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

// --- criterion 1: synthetic regression reproduction -------------------------

double regression_test_mse(const ModelState& st, const Dataset& test, std::uint64_t seed) {
    PredictionLog log;
    NoiseSource pn(seed, 0xE7A1);
    for (std::size_t i = 0; i < test.size(); ++i) {
        NoiseSource ex = pn.child(i);
        auto pr = predict(st, test.inputs[i], 100, ex);
        log.add_regression(pr.mean, pr.variance, test.targets[i].data);
    }
    return basic_metrics(log).mse;
}

void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    NetworkSpec spec =
        NetworkSpec::mlp({1, 32, 32, 1}, Activation::Tanh, HeadKind::GaussianRegression);
    spec.noise_std = 0.2;
    spec.bayes_last_layer = true;

    std::vector<double> mse_optima, mse_noaug, sigmas;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto [train, test] = gen_synthetic_regression(50, 1000, seed);

        // prior belief over the augmentation distribution: N(0, 0.2^2)
        std::vector<double> pm{0.0, std::log(0.2)};
        std::vector<double> pls{std::log(0.1), std::log(0.1)};
        auto fam = AugmentationFamily::additive_shift(1, 0.0, 0.1, DiagonalGaussian(pm, pls));
        DiagonalGaussian q0(fam.phi, {std::log(0.1), std::log(0.1)});

        TrainConfig tc;
        tc.lr_net = 3e-3;
        tc.lr_aug = 1e-2;
        tc.beta_net = 0.1;
        tc.beta_aug = 1.0;
        tc.epochs = 6000;  // full batch: one step per epoch
        tc.batch_size = 50;
        tc.mc.s_gamma = 4;
        tc.clip_norm = 1.0;
        tc.seed = seed;
        tc.log_every = 1000;
        auto optima_run = train_full_vi(train, spec, fam, q0, tc);

        auto noaug_fam = fam;
        noaug_fam.phi = {0.0, kLogStdMin};
        DiagonalGaussian qn(noaug_fam.phi, {kLogStdMin, kLogStdMin});
        TrainConfig tn = tc;
        tn.learn_phi = false;
        tn.lr_aug = 0.0;
        tn.mc.s_gamma = 1;
        auto noaug_run = train_full_vi(train, spec, noaug_fam, qn, tn);

        mse_optima.push_back(regression_test_mse(optima_run.state, test, seed));
        mse_noaug.push_back(regression_test_mse(noaug_run.state, test, seed));
        sigmas.push_back(std::exp(optima_run.q_phi.mean[1]));
    }
    double med_o = median_of(mse_optima), med_n = median_of(mse_noaug);
    bool ordering = med_o < med_n;
    bool band = true;
    for (double s : sigmas) band = band && s >= 0.12 && s <= 0.25;
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool runtime = dt <= 120.0;
    std::ostringstream sig;
    for (double s : sigmas) sig << fmt("%.3f ", s);
    report(1, ordering && band && runtime,
           "synthetic regression (5 seeds): median test MSE OPTIMA " + fmt("%.4f", med_o) +
               " < No Aug " + fmt("%.4f", med_n) + "; sigma_phi { " + sig.str() +
               "} all in [0.12, 0.25] from 0.10 start; " + fmt("%.1f s (<= 120 s)", dt));
}

// --- criterion 2: posterior shrinkage ----------------------------------------

void criterion_2() {
    auto t0 = std::chrono::steady_clock::now();
    ConjugateGaussianModel m;
    m.prior_var = 1e9;
    m.obs_var = 1.0;
    m.observations.assign(10, 0.0);
    bool weak_prior = true;
    double worst = 0.0;
    for (std::size_t k : {2, 5, 10}) {
        auto r = posterior_shrinkage(m, k);
        double err = std::abs(r.ratio - 1.0 / static_cast<double>(k));
        worst = std::max(worst, err);
        weak_prior = weak_prior && err < 1e-6;
    }
    bool bound_holds = true;
    NoiseSource rng(2);
    for (int t = 0; t < 500; ++t) {
        ConjugateGaussianModel c;
        c.prior_var = std::exp(8.0 * rng.uniform());
        c.obs_var = std::exp(2.0 * rng.uniform() - 1.0);
        c.observations.assign(1 + static_cast<std::size_t>(rng.uniform() * 60), 0.0);
        std::size_t k = 1 + static_cast<std::size_t>(rng.uniform() * 15);
        auto r = posterior_shrinkage(c, k);
        double n = static_cast<double>(c.observations.size());
        double bound = c.obs_var / (static_cast<double>(k) * n * c.prior_var);
        if (std::abs(r.ratio - 1.0 / static_cast<double>(k)) > bound + 1e-15) bound_holds = false;
    }
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(2, weak_prior && bound_holds && dt < 1.0,
           fmt("posterior shrinkage: worst |ratio - 1/K| = %.2e (< 1e-6) at prior_var 1e9, "
               "K in {2,5,10}; exact bound holds on 500 random configs; %.2f s (< 1 s)",
               worst, dt));
}

// --- criterion 3: marginalization advantage ----------------------------------

void criterion_3() {
    auto t0 = std::chrono::steady_clock::now();
    TheoryReport r = dphi_nonnegativity_check(1000, 31415);
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(3, r.pass && dt < 10.0,
           fmt("marginalization advantage: min D_phi %.2e >= -1e-12 over 1000 random triples; "
               "constant-likelihood case exactly 0; batch identity gap %.2e < 1e-10; %.1f s "
               "(< 10 s)",
               r.quantities.at("min_dphi"), r.quantities.at("batch_identity_gap"), dt));
}

// --- criterion 4: Jensen gap --------------------------------------------------

void criterion_4() {
    auto t0 = std::chrono::steady_clock::now();
    TheoryReport sweep = jensen_gap_sweep(100, 20000, 2718);
    DiagonalGaussian gd({0.0}, {std::log(0.5)});
    NoiseSource rng(42);
    TheoryReport lin = jensen_gap_check([](double g) { return g; }, 1.0, gd, 1000000, rng);
    double rel = std::abs(lin.quantities.at("gap") - lin.bound) / lin.bound;
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(4, sweep.pass && rel < 0.02 && dt < 30.0,
           fmt("jensen gap: 100 random Lipschitz functions within L^2 s^2/2 + 3 MC SE; the "
               "linear case attains the bound within %.2f%% (< 2%%) at n = 1e6; %.1f s (< 30 s)",
               rel * 100.0, dt));
}

// --- criterion 5: invariance expansion ----------------------------------------

void criterion_5() {
    TheoryReport sweep = invariance_sweep(10, 100000, 161803);

    NetworkSpec spec = NetworkSpec::mlp({3, 2}, Activation::Tanh, HeadKind::GaussianRegression);
    spec.bayes_last_layer = false;
    NoiseSource rng(5);
    ModelState st = ModelState::init(spec, rng);
    Array x = Array::vector({0.3, -0.2, 0.6});
    NoiseSource mc(6);
    TheoryReport lin = invariance_expansion_check(st, x, {1e-4, 1e-4, 1e-4}, 100000, mc);
    bool linear_ok = lin.pass && lin.quantities.at("second_order") < 1e-12;

    report(5, sweep.pass && linear_ok,
           fmt("invariance expansion: MC vs first+second order within 5%% for 10 random nets "
               "at scale 1e-4 (worst %.2f%%); linear net matches the Jacobian term alone",
               sweep.quantities.at("worst_rel_err") * 100.0));
}

// --- criterion 6: information gain ---------------------------------------------

void criterion_6() {
    TheoryReport r = information_gain_check(100, 271828);
    Array eye({2, 2});
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    double id_gain = information_gain(eye, eye);
    bool id_ok = std::abs(id_gain - std::log(2.0)) < 1e-12;
    report(6, r.pass && id_ok,
           fmt("information gain: 100 random SPD pairs match the independent eigendecomposition "
               "route (worst rel err %.1e < 1e-10); identity pair (d=2) = log 2 = %.6f",
               r.quantities.at("worst_rel_err"), id_gain));
}

// --- criterion 7: gradient integrity -------------------------------------------

void criterion_7() {
    NoiseSource rng(20240601);
    double worst_prim = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        auto rg = testutil::make_random_graph(rng.child(static_cast<std::uint64_t>(trial)));
        auto grads = gradient(*rg.graph, rg.bindings, rg.leaf_names);
        std::vector<double> flat = testutil::flatten_bindings(rg);
        auto f = [&](const std::vector<double>& pt) {
            return evaluate(*rg.graph, testutil::unflatten_bindings(rg, pt)).value();
        };
        auto fd = finite_difference_gradient(f, flat, 1e-5);
        std::vector<double> got;
        for (const auto& nm : rg.leaf_names)
            for (double v : grads[nm].data) got.push_back(v);
        worst_prim = std::max(worst_prim, max_relative_error(got, fd, 1e-5));
    }

    double worst_elbo = 0.0;
    for (int which = 0; which < 2; ++which) {  // full VI and point-theta, additive shift
        Dataset data;
        data.task = Task::Regression;
        NoiseSource gen(100 + static_cast<std::uint64_t>(which));
        for (int i = 0; i < 5; ++i) {
            data.inputs.push_back(Array::vector({gen.normal()}));
            data.targets.push_back(Array::vector({gen.normal()}));
        }
        NetworkSpec spec =
            NetworkSpec::mlp({1, 4, 1}, Activation::Tanh, HeadKind::GaussianRegression);
        spec.noise_std = 0.3;
        spec.bayes_last_layer = which == 0;
        ModelState st = ModelState::init(spec, gen, -2.0);
        auto fam = AugmentationFamily::additive_shift(1, 0.05, 0.2,
                                                      DiagonalGaussian::isotropic(2, 0.0, 0.5));
        DiagonalGaussian q_phi(fam.phi, {std::log(0.1), std::log(0.1)});

        ElboOptions opts;
        opts.mc.s_gamma = 3;
        opts.with_grads = true;
        std::vector<std::size_t> batch{0, 1, 2, 3, 4};
        NoiseSource noise(71);
        auto res = augmented_elbo(data, batch, 5, st, q_phi, fam, noise, opts);

        auto value_at = [&](const ModelState& s2, const DiagonalGaussian& q2) {
            ElboOptions vopts = opts;
            vopts.with_grads = false;
            NoiseSource n2(71);
            return augmented_elbo(data, batch, 5, s2, q2, fam, n2, vopts).estimate.total;
        };
        for (int coord = 0; coord < 2; ++coord) {
            bool is_mu = coord == 0;
            auto f = [&](const std::vector<double>& pt) {
                DiagonalGaussian q2 = q_phi;
                (is_mu ? q2.mean : q2.log_std).assign(pt.begin(), pt.end());
                return value_at(st, q2);
            };
            auto fd = finite_difference_gradient(f, is_mu ? q_phi.mean : q_phi.log_std, 1e-5);
            const Array& g = res.grads.at(is_mu ? "phi.mu" : "phi.ls");
            std::vector<double> got(g.data.begin(), g.data.end());
            worst_elbo = std::max(worst_elbo, max_relative_error(got, fd, 1e-5));
        }
        for (std::size_t li = 0; li < st.layers.size(); ++li) {
            std::string base = "l" + std::to_string(li) + ".";
            auto check = [&](const std::string& slot, bool is_ls, bool is_w) {
                if (!res.grads.count(base + slot)) return;
                auto f = [&](const std::vector<double>& pt) {
                    ModelState s2 = st;
                    Array& t2 = is_w ? (is_ls ? *s2.layers[li].W_ls : s2.layers[li].W_mu)
                                     : (is_ls ? *s2.layers[li].b_ls : s2.layers[li].b_mu);
                    t2.data.assign(pt.begin(), pt.end());
                    return value_at(s2, q_phi);
                };
                const Array& cur = is_w ? (is_ls ? *st.layers[li].W_ls : st.layers[li].W_mu)
                                        : (is_ls ? *st.layers[li].b_ls : st.layers[li].b_mu);
                std::vector<double> flat(cur.data.begin(), cur.data.end());
                auto fd = finite_difference_gradient(f, flat, 1e-5);
                const Array& g = res.grads.at(base + slot);
                std::vector<double> got(g.data.begin(), g.data.end());
                worst_elbo = std::max(worst_elbo, max_relative_error(got, fd, 1e-5));
            };
            check("W_mu", false, true);
            check("b_mu", false, false);
            if (st.layers[li].bayesian()) {
                check("W_ls", true, true);
                check("b_ls", true, false);
            }
        }
    }
    report(7, worst_prim < 1e-4 && worst_elbo < 1e-3,
           fmt("gradient integrity: primitive ops worst rel err %.2e (< 1e-4, 200 random "
               "graphs); end-to-end augmented ELBO worst rel err %.2e (< 1e-3)",
               worst_prim, worst_elbo));
}

// --- criterion 8: metrics fixtures ---------------------------------------------

void criterion_8() {
    PredictionLog log;
    log.add_classification({0.95, 0.05}, 0);
    log.add_classification({0.95, 0.05}, 1);
    log.add_classification({0.65, 0.35}, 0);
    log.add_classification({0.65, 0.35}, 0);
    double ece = expected_calibration_error(log).ece;
    bool ece_ok = std::abs(ece - 0.4) < 1e-15;

    // tie-bearing fixture gives 7.5/9 (7 strict wins + one tie); enumeration
    // of {1,2,3} vs {2,3,4} gives 7/9 and is frozen alongside
    double auroc_tie = auroc({1.0, 2.0, 3.0}, {2.0, 3.5, 4.0});
    bool auroc_ok = std::abs(auroc_tie - 7.5 / 9.0) < 1e-12;
    bool literal_ok = std::abs(auroc({1.0, 2.0, 3.0}, {2.0, 3.0, 4.0}) - 7.0 / 9.0) < 1e-12;

    double ent = predictive_entropy(std::vector<double>(10, 0.1));
    bool ent_ok = std::abs(ent - std::log(10.0)) < 1e-12;

    report(8, ece_ok && auroc_ok && literal_ok && ent_ok,
           fmt("metrics fixtures: 4-example ECE = %.3f exactly 0.4; AUROC = %.6f = 7.5/9 on the "
               "tie fixture; uniform-10 entropy = log 10 to 1e-12",
               ece, auroc_tie));
}

// --- criterion 9: determinism ---------------------------------------------------

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void criterion_9() {
    fs::path dir = fs::temp_directory_path() / "optima_acceptance_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    nlohmann::json cfg;
    cfg["data"] = {{"generator", "synthetic-regression"}, {"n_train", 16}, {"n_test", 16},
                   {"seed", 2}};
    cfg["model"] = {{"layers", {1, 8, 1}},
                    {"activation", "tanh"},
                    {"head", "gaussian-regression"},
                    {"noise_std", 0.2},
                    {"bayes_last_layer", true}};
    cfg["augmentation"] = {{"family", "additive-shift"}, {"init_sigma", 0.1}};
    cfg["train"] = {{"lr_net", 1e-3}, {"epochs", 6},    {"batch_size", 8},
                    {"seed", 11},     {"log_every", 1}, {"mc", {{"s_gamma", 2}}}};
    cfg["eval"] = {{"n_mc_samples", 8}};
    cfg["baselines"] = {"no-aug"};
    std::ofstream((dir / "cfg.json").string()) << cfg.dump();

    bool trains_ok = cmd_train((dir / "cfg.json").string(), (dir / "r1").string()) == 0 &&
                     cmd_train((dir / "cfg.json").string(), (dir / "r2").string()) == 0;
    bool traces_equal = slurp((dir / "r1/optima/trace.csv").string()) ==
                            slurp((dir / "r2/optima/trace.csv").string()) &&
                        slurp((dir / "r1/no-aug/trace.csv").string()) ==
                            slurp((dir / "r2/no-aug/trace.csv").string()) &&
                        !slurp((dir / "r1/optima/trace.csv").string()).empty();

    int verify_rc = cmd_verify("", (dir / "verify").string(), false, {});
    fs::remove_all(dir);
    report(9, trains_ok && traces_equal && verify_rc == 0,
           std::string("determinism: two identical `train` runs give byte-identical traces; "
                       "default verify suite exit code ") +
               std::to_string(verify_rc));
}

// --- criterion 10: PAC-Bayes bound evaluator -------------------------------------

void criterion_10() {
    double complexity = pac_bayes_bound(0.0, 0.0, 100, 0.05);
    double oracle = std::sqrt(std::log(2.0 * std::sqrt(100.0) / 0.05) / 200.0);
    bool exact = std::abs(complexity - oracle) < 1e-12;
    // the spec prints 0.173083; the oracle value is 0.1730818..., so the
    // printed constant is honored at 2e-6 (its own rounding)
    bool printed = std::abs(complexity - 0.173083) < 2e-6;

    NoiseSource rng(10);
    bool monotone = true;
    for (int t = 0; t < 200; ++t) {
        double kl1 = 10.0 * rng.uniform();
        double kl2 = kl1 + 1e-9 + 5.0 * rng.uniform();
        std::size_t n = 10 + static_cast<std::size_t>(rng.uniform() * 2000);
        double d = 0.01 + 0.9 * rng.uniform();
        double r = rng.uniform();
        if (pac_bayes_bound(r, kl2, n, d) <= pac_bayes_bound(r, kl1, n, d)) monotone = false;
        if (pac_bayes_bound(0.0, kl1, 10 * n, d) >= pac_bayes_bound(0.0, kl1, n, d))
            monotone = false;
    }
    report(10, exact && printed && monotone,
           fmt("pac-bayes: complexity term %.7f equals sqrt(ln(400)/200) to 1e-12; monotone in "
               "kl_total and decreasing in N on 200 randomized sweeps",
               complexity));
}

}  // namespace

int main() {
    std::printf("optima acceptance suite\n");
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (g_failures == 0)
        std::printf("all acceptance criteria passed\n");
    else
        std::printf("%d acceptance criteria FAILED\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
