#include "optima/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace optima {

void PredictionLog::add_classification(std::vector<double> class_probs, std::size_t label) {
    if (!means.empty())
        throw std::invalid_argument("PredictionLog: cannot mix classification and regression");
    double sum = 0.0;
    for (double p : class_probs) {
        if (p < 0.0) throw std::invalid_argument("PredictionLog: negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("PredictionLog: probabilities must sum to 1 within 1e-6");
    if (label >= class_probs.size())
        throw std::invalid_argument("PredictionLog: label out of range");
    probs.push_back(std::move(class_probs));
    labels.push_back(label);
}

void PredictionLog::add_regression(std::vector<double> mean, std::vector<double> variance,
                                   std::vector<double> target) {
    if (!probs.empty())
        throw std::invalid_argument("PredictionLog: cannot mix classification and regression");
    for (double v : variance)
        if (v < 0.0) throw std::invalid_argument("PredictionLog: negative variance");
    if (mean.size() != target.size())
        throw std::invalid_argument("PredictionLog: mean/target dimension mismatch");
    means.push_back(std::move(mean));
    variances.push_back(std::move(variance));
    targets.push_back(std::move(target));
}

std::size_t argmax_lowest(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

EceResult expected_calibration_error(const PredictionLog& log) {
    if (!log.classification() || log.size() == 0)
        throw std::invalid_argument("expected_calibration_error: nonempty classification log required");
    EceResult res;
    std::array<double, 10> conf_sum{}, acc_sum{};
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& p = log.probs[i];
        std::size_t pred = argmax_lowest(p);
        double conf = p[pred];
        std::size_t bin = 9;
        for (std::size_t b = 0; b < 10; ++b)
            if (conf <= static_cast<double>(b + 1) / 10.0) {
                bin = b;
                break;
            }
        res.table.bins[bin].count += 1;
        conf_sum[bin] += conf;
        acc_sum[bin] += (pred == log.labels[i]) ? 1.0 : 0.0;
    }
    res.table.n = log.size();
    double ece = 0.0;
    for (std::size_t b = 0; b < 10; ++b) {
        auto& bin = res.table.bins[b];
        if (bin.count == 0) continue;
        bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
        bin.accuracy = acc_sum[b] / static_cast<double>(bin.count);
        ece += static_cast<double>(bin.count) / static_cast<double>(res.table.n) *
               std::abs(bin.accuracy - bin.mean_confidence);
    }
    res.ece = ece;
    return res;
}

double predictive_entropy(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs) {
        if (p < 0.0) throw std::invalid_argument("predictive_entropy: negative probability");
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

double auroc(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
    if (scores_in.empty() || scores_out.empty())
        throw std::invalid_argument("auroc: both score sets must be nonempty");
    struct Item {
        double score;
        bool is_out;
    };
    std::vector<Item> all;
    all.reserve(scores_in.size() + scores_out.size());
    for (double s : scores_in) all.push_back({s, false});
    for (double s : scores_out) all.push_back({s, true});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

    // midranks over tie groups
    double rank_sum_out = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (all[k].is_out) rank_sum_out += midrank;
        i = j;
    }
    double n_out = static_cast<double>(scores_out.size());
    double n_in = static_cast<double>(scores_in.size());
    double u = rank_sum_out - n_out * (n_out + 1.0) / 2.0;
    return u / (n_in * n_out);
}

BasicMetrics basic_metrics(const PredictionLog& log) {
    if (log.size() == 0) throw std::invalid_argument("basic_metrics: empty log");
    BasicMetrics m;
    if (log.classification()) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < log.size(); ++i)
            if (argmax_lowest(log.probs[i]) == log.labels[i]) ++correct;
        m.accuracy = static_cast<double>(correct) / static_cast<double>(log.size());
    } else {
        double acc = 0.0;
        for (std::size_t i = 0; i < log.size(); ++i) {
            double se = 0.0;
            for (std::size_t d = 0; d < log.means[i].size(); ++d) {
                double diff = log.means[i][d] - log.targets[i][d];
                se += diff * diff;
            }
            acc += se;
        }
        m.mse = acc / static_cast<double>(log.size());
    }
    return m;
}

}  // namespace optima
