#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace optima {

/// Per-example predictions plus ground truth, classification or regression.
struct PredictionLog {
    std::vector<std::vector<double>> probs;  // classification: simplex per example
    std::vector<std::size_t> labels;
    std::vector<std::vector<double>> means;  // regression
    std::vector<std::vector<double>> variances;
    std::vector<std::vector<double>> targets;

    bool classification() const { return !probs.empty(); }
    std::size_t size() const { return classification() ? probs.size() : means.size(); }

    void add_classification(std::vector<double> class_probs, std::size_t label);
    void add_regression(std::vector<double> mean, std::vector<double> variance,
                        std::vector<double> target);
};

struct ReliabilityBin {
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

/// 10 right-closed decile bins over confidence (0, 1]; top bin owns 1.0.
struct ReliabilityTable {
    std::array<ReliabilityBin, 10> bins;
    std::size_t n = 0;
};

struct EceResult {
    double ece = 0.0;
    ReliabilityTable table;
};

EceResult expected_calibration_error(const PredictionLog& log);

/// Natural-log entropy, 0*log(0) = 0.
double predictive_entropy(const std::vector<double>& probs);

/// Rank-based (Mann-Whitney) AUROC with tie correction:
/// P(score_out > score_in) + 0.5 P(equal).
double auroc(const std::vector<double>& scores_in, const std::vector<double>& scores_out);

struct BasicMetrics {
    double accuracy = 0.0;
    double mse = 0.0;
};

BasicMetrics basic_metrics(const PredictionLog& log);

/// Argmax with ties broken to the lowest index.
std::size_t argmax_lowest(const std::vector<double>& v);

}  // namespace optima
