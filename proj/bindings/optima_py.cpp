#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "optima/augmentation.hpp"
#include "optima/cli.hpp"
#include "optima/data.hpp"
#include "optima/distributions.hpp"
#include "optima/elbo.hpp"
#include "optima/metrics.hpp"
#include "optima/report.hpp"
#include "optima/theory.hpp"

namespace py = pybind11;
using namespace optima;

namespace {

// Rank-2 helpers keep the python surface list-of-lists.
Array to_matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("empty matrix");
    Array m({rows.size(), rows[0].size()});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) throw std::invalid_argument("ragged matrix");
        for (std::size_t c = 0; c < rows[r].size(); ++c) m.at(r, c) = rows[r][c];
    }
    return m;
}

std::vector<std::vector<double>> from_matrix(const Array& m) {
    std::vector<std::vector<double>> rows(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) rows[r][c] = m.at(r, c);
    return rows;
}

}  // namespace

PYBIND11_MODULE(_optima, m) {
    m.doc() = "Learned data augmentation by variational model selection (C++ core)";
    m.attr("__version__") = kArtifactVersion;

    m.def(
        "kl_diagonal_gaussians",
        [](std::vector<double> q_mean, std::vector<double> q_log_std, std::vector<double> p_mean,
           std::vector<double> p_log_std) {
            return kl_diagonal_gaussians(DiagonalGaussian(q_mean, q_log_std),
                                         DiagonalGaussian(p_mean, p_log_std));
        },
        py::arg("q_mean"), py::arg("q_log_std"), py::arg("p_mean"), py::arg("p_log_std"),
        "Closed-form KL(q || p) between diagonal Gaussians.");

    m.def("pac_bayes_bound", &pac_bayes_bound, py::arg("empirical_risk"), py::arg("kl_total"),
          py::arg("n"), py::arg("delta"));

    m.def("log_mean_exp", &log_mean_exp, py::arg("values"));

    m.def(
        "information_gain",
        [](const std::vector<std::vector<double>>& h_noaug,
           const std::vector<std::vector<double>>& h_aug) {
            return information_gain(to_matrix(h_noaug), to_matrix(h_aug));
        },
        py::arg("h_noaug"), py::arg("h_aug"),
        "0.5 * log det(I + H_noaug^-1 H_aug) for SPD matrices.");

    m.def(
        "posterior_shrinkage",
        [](double prior_var, double obs_var, std::size_t n_obs, std::size_t k) {
            ConjugateGaussianModel model;
            model.prior_var = prior_var;
            model.obs_var = obs_var;
            model.observations.assign(n_obs, 0.0);
            ShrinkageResult r = posterior_shrinkage(model, k);
            return py::make_tuple(r.var_true, r.var_naive, r.ratio);
        },
        py::arg("prior_var"), py::arg("obs_var"), py::arg("n_obs"), py::arg("k"));

    m.def(
        "expected_calibration_error",
        [](const std::vector<std::vector<double>>& probs, const std::vector<std::size_t>& labels) {
            PredictionLog log;
            for (std::size_t i = 0; i < probs.size(); ++i)
                log.add_classification(probs[i], labels.at(i));
            auto res = expected_calibration_error(log);
            py::list bins;
            for (const auto& b : res.table.bins) {
                py::dict d;
                d["count"] = b.count;
                d["mean_confidence"] = b.mean_confidence;
                d["accuracy"] = b.accuracy;
                bins.append(d);
            }
            return py::make_tuple(res.ece, bins);
        },
        py::arg("probs"), py::arg("labels"));

    m.def("predictive_entropy", &predictive_entropy, py::arg("probs"));
    m.def("auroc", &auroc, py::arg("scores_in"), py::arg("scores_out"));

    m.def(
        "bilinear_affine_warp",
        [](const std::vector<std::vector<double>>& image, double omega, double t_x, double t_y) {
            return from_matrix(bilinear_affine_warp(to_matrix(image), omega, t_x, t_y));
        },
        py::arg("image"), py::arg("omega"), py::arg("t_x"), py::arg("t_y"));

    m.def(
        "gumbel_softmax_sample",
        [](std::vector<double> logits, double temperature, std::uint64_t seed) {
            NoiseSource noise(seed);
            return gumbel_softmax_sample(logits, temperature, noise);
        },
        py::arg("logits"), py::arg("temperature"), py::arg("seed") = 0);

    m.def(
        "gen_synthetic_regression",
        [](std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
            auto [train, test] = gen_synthetic_regression(n_train, n_test, seed);
            auto pack = [](const Dataset& d) {
                std::vector<double> xs, ys;
                for (const auto& x : d.inputs) xs.push_back(x[0]);
                for (const auto& y : d.targets) ys.push_back(y[0]);
                return py::make_tuple(xs, ys);
            };
            return py::make_tuple(pack(train), pack(test));
        },
        py::arg("n_train") = 50, py::arg("n_test") = 1000, py::arg("seed") = 0);

    m.def(
        "run_training",
        [](const std::string& config_json, const std::string& out_dir) {
            nlohmann::json j = nlohmann::json::parse(config_json);
            std::string tmp = out_dir + "/_config.json";
            std::filesystem::create_directories(out_dir);
            std::ofstream f(tmp);
            f << j.dump();
            f.close();
            return cmd_train(tmp, out_dir);
        },
        py::arg("config_json"), py::arg("out_dir"),
        "Runs the train command (all arms) from a JSON config string; returns the exit code.");

    m.def(
        "run_verify",
        [](const std::vector<std::string>& suites, const std::string& out_dir) {
            return cmd_verify("", out_dir, false, suites);
        },
        py::arg("suites") = std::vector<std::string>{}, py::arg("out_dir") = std::string{},
        "Runs the theory verification suites; returns the exit code (0 = all pass).");

    m.def("run_report", &cmd_report, py::arg("report_path"), py::arg("out_dir"),
          "Emits SVG figures and the markdown summary for a report.json.");
}
