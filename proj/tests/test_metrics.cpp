#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "optima/metrics.hpp"
#include "optima/rng.hpp"

using namespace optima;

namespace {
std::vector<double> two_class(double p0) { return {p0, 1.0 - p0}; }
}  // namespace

TEST_CASE("ECE: perfectly confident and correct gives zero") {
    PredictionLog log;
    for (int i = 0; i < 5; ++i) log.add_classification({1.0, 0.0}, 0);
    auto res = expected_calibration_error(log);
    CHECK(res.ece == 0.0);
    CHECK(res.table.n == 5);
}

TEST_CASE("ECE: hand-computed 4-example fixture equals 0.4 exactly") {
    PredictionLog log;
    log.add_classification(two_class(0.95), 0);  // correct
    log.add_classification(two_class(0.95), 1);  // wrong
    log.add_classification(two_class(0.65), 0);  // correct
    log.add_classification(two_class(0.65), 0);  // correct
    auto res = expected_calibration_error(log);
    // bin (0.9,1.0]: conf 0.95, acc 0.5; bin (0.6,0.7]: conf 0.65, acc 1.0
    CHECK(res.table.bins[9].count == 2);
    CHECK(res.table.bins[9].mean_confidence == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(res.table.bins[9].accuracy == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(res.table.bins[6].count == 2);
    CHECK(res.table.bins[6].mean_confidence == doctest::Approx(0.65).epsilon(1e-15));
    CHECK(res.table.bins[6].accuracy == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(res.ece == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("ECE: synthetic calibrated generator stays small") {
    // accuracy equals confidence per bin by construction
    NoiseSource rng(1);
    PredictionLog log;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        double conf = 0.5 + 0.5 * rng.uniform();
        bool correct = rng.uniform() < conf;
        log.add_classification(two_class(conf), correct ? 0 : 1);
    }
    auto res = expected_calibration_error(log);
    CHECK(res.ece < 0.02);
}

TEST_CASE("ECE invariants: reordering, range, bin counts") {
    NoiseSource rng(2);
    PredictionLog log;
    const int n = 500;
    std::vector<std::pair<double, std::size_t>> rows;
    for (int i = 0; i < n; ++i) {
        double conf = 1.0 / 3.0 + (2.0 / 3.0) * rng.uniform();
        std::size_t label = rng.uniform() < 0.5 ? 0 : 1;
        rows.push_back({conf, label});
        log.add_classification(two_class(conf), label);
    }
    auto res = expected_calibration_error(log);
    CHECK(res.ece >= 0.0);
    CHECK(res.ece <= 1.0);
    std::size_t total = 0;
    for (const auto& b : res.table.bins) total += b.count;
    CHECK(total == static_cast<std::size_t>(n));

    std::reverse(rows.begin(), rows.end());
    PredictionLog log2;
    for (auto& [c, l] : rows) log2.add_classification(two_class(c), l);
    CHECK(expected_calibration_error(log2).ece == doctest::Approx(res.ece).epsilon(1e-12));

    PredictionLog empty;
    CHECK_THROWS_AS(expected_calibration_error(empty), std::invalid_argument);
}

TEST_CASE("predictive_entropy values") {
    CHECK(predictive_entropy({1.0, 0.0, 0.0}) == 0.0);
    CHECK(predictive_entropy(std::vector<double>(10, 0.1)) ==
          doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(predictive_entropy({0.5, 0.5, 0.0, 0.0}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(predictive_entropy({-0.1, 1.1}), std::invalid_argument);
}

TEST_CASE("auroc fixtures") {
    CHECK(auroc({1.0, 2.0}, {5.0, 6.0, 7.0}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(auroc({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == doctest::Approx(0.5).epsilon(1e-15));

    // exhaustive pair enumeration oracle
    auto enumerate = [](const std::vector<double>& in, const std::vector<double>& out) {
        double acc = 0.0;
        for (double a : in)
            for (double b : out) acc += (b > a) ? 1.0 : (b == a ? 0.5 : 0.0);
        return acc / (static_cast<double>(in.size()) * static_cast<double>(out.size()));
    };
    // one tie: 7 strict wins + 0.5 = 7.5 of 9 pairs
    std::vector<double> in{1.0, 2.0, 3.0}, out{2.0, 3.5, 4.0};
    CHECK(enumerate(in, out) == doctest::Approx(7.5 / 9.0).epsilon(1e-15));
    CHECK(auroc(in, out) == doctest::Approx(7.5 / 9.0).epsilon(1e-12));

    // two ties: 6 strict wins + 2 * 0.5 = 7 of 9 pairs
    std::vector<double> out2{2.0, 3.0, 4.0};
    CHECK(enumerate(in, out2) == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
    CHECK(auroc(in, out2) == doctest::Approx(7.0 / 9.0).epsilon(1e-12));

    CHECK_THROWS_AS(auroc({}, {1.0}), std::invalid_argument);
}

TEST_CASE("auroc: random instances match enumeration and monotone invariance") {
    NoiseSource rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t ni = 1 + static_cast<std::size_t>(rng.uniform() * 12);
        std::size_t no = 1 + static_cast<std::size_t>(rng.uniform() * 12);
        std::vector<double> sin_(ni), sout(no);
        for (double& v : sin_) v = std::floor(rng.uniform() * 6.0);  // force ties
        for (double& v : sout) v = std::floor(rng.uniform() * 6.0);

        double acc = 0.0;
        for (double a : sin_)
            for (double b : sout) acc += (b > a) ? 1.0 : (b == a ? 0.5 : 0.0);
        double want = acc / (static_cast<double>(ni) * static_cast<double>(no));
        double got = auroc(sin_, sout);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
        CHECK(got >= 0.0);
        CHECK(got <= 1.0);

        // strictly monotone transform leaves the ranking unchanged
        auto mono = [](double x) { return std::exp(0.7 * x) + 3.0; };
        std::vector<double> tin(sin_), tout(sout);
        for (double& v : tin) v = mono(v);
        for (double& v : tout) v = mono(v);
        CHECK(auroc(tin, tout) == doctest::Approx(got).epsilon(1e-12));
    }
}

TEST_CASE("basic_metrics") {
    PredictionLog cls;
    cls.add_classification({0.9, 0.1}, 0);
    cls.add_classification({0.2, 0.8}, 1);
    cls.add_classification({0.6, 0.4}, 1);
    CHECK(basic_metrics(cls).accuracy == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    PredictionLog all_correct;
    all_correct.add_classification({1.0, 0.0}, 0);
    all_correct.add_classification({0.0, 1.0}, 1);
    CHECK(basic_metrics(all_correct).accuracy == 1.0);

    // argmax ties break to the lowest class index
    PredictionLog tie;
    tie.add_classification({0.5, 0.5}, 0);
    CHECK(basic_metrics(tie).accuracy == 1.0);

    PredictionLog reg;
    reg.add_regression({1.0}, {0.0}, {1.0});
    reg.add_regression({2.0}, {0.0}, {2.0});
    CHECK(basic_metrics(reg).mse == 0.0);

    PredictionLog reg2;
    reg2.add_regression({1.0}, {0.0}, {2.0});   // off by 1
    reg2.add_regression({0.0}, {0.0}, {3.0});   // off by 3
    CHECK(basic_metrics(reg2).mse == doctest::Approx(5.0).epsilon(1e-15));

    PredictionLog empty;
    CHECK_THROWS_AS(basic_metrics(empty), std::invalid_argument);
}

TEST_CASE("PredictionLog validation") {
    PredictionLog log;
    CHECK_THROWS_AS(log.add_classification({0.5, 0.4}, 0), std::invalid_argument);
    CHECK_THROWS_AS(log.add_classification({-0.1, 1.1}, 0), std::invalid_argument);
    CHECK_THROWS_AS(log.add_classification({0.5, 0.5}, 2), std::invalid_argument);
    log.add_classification({0.5, 0.5}, 1);
    CHECK_THROWS_AS(log.add_regression({1.0}, {0.0}, {1.0}), std::invalid_argument);
    PredictionLog reg;
    CHECK_THROWS_AS(reg.add_regression({1.0}, {-1.0}, {1.0}), std::invalid_argument);
}
