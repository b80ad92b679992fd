#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "optima/finite_diff.hpp"
#include "optima/graph.hpp"
#include "test_util.hpp"

using namespace optima;

TEST_CASE("evaluate: x squared") {
    ComputationGraph g;
    int x = g.input("x", {});
    g.set_output(g.square(x));
    Bindings b{{"x", Array::scalar(3.0)}};
    CHECK(evaluate(g, b).value() == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("evaluate: log-sum-exp of [0,0] is log 2") {
    ComputationGraph g;
    int v = g.input("v", {2});
    g.set_output(g.log_sum_exp(v, 0));
    Bindings b{{"v", Array::vector({0.0, 0.0})}};
    CHECK(evaluate(g, b).value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("evaluate: softmax of [1000, 0] does not overflow") {
    ComputationGraph g;
    int v = g.input("v", {2});
    g.set_output(g.softmax(v, 0));
    Bindings b{{"v", Array::vector({1000.0, 0.0})}};
    Array out = evaluate(g, b);
    // max-shift oracle: exp(0)/(exp(0)+exp(-1000))
    long double e = std::exp(-1000.0L);
    double want0 = static_cast<double>(1.0L / (1.0L + e));
    double want1 = static_cast<double>(e / (1.0L + e));
    CHECK(out[0] == doctest::Approx(want0).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(want1).epsilon(1e-15));
    CHECK(std::isfinite(out[0]));
    CHECK(out[0] + out[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gradient: d(x^2)/dx at 3 is 6") {
    ComputationGraph g;
    int x = g.input("x", {});
    g.set_output(g.square(x));
    Bindings b{{"x", Array::scalar(3.0)}};
    auto grads = gradient(g, b, {"x"});
    CHECK(grads["x"].value() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("gradient: log-sum-exp symmetry gives 0.5") {
    ComputationGraph g;
    int v = g.input("v", {2});
    g.set_output(g.log_sum_exp(v, 0));
    Bindings b{{"v", Array::vector({0.0, 0.0})}};
    auto grads = gradient(g, b, {"v"});
    CHECK(grads["v"][0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(grads["v"][1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("gradient: unreferenced leaf gets a zero array") {
    ComputationGraph g;
    int x = g.input("x", {});
    g.input("unused", {3});
    g.set_output(g.square(x));
    Bindings b{{"x", Array::scalar(2.0)}, {"unused", Array::vector({1.0, 2.0, 3.0})}};
    auto grads = gradient(g, b, {"unused"});
    CHECK(grads["unused"].shape == Shape{3});
    for (double v : grads["unused"].data) CHECK(v == 0.0);
}

TEST_CASE("gradient of a 2-layer tanh network matches finite differences") {
    ComputationGraph g;
    int w1 = g.input("w1", {4, 3});
    int b1 = g.input("b1", {4});
    int w2 = g.input("w2", {1, 4});
    int b2 = g.input("b2", {1});
    int x = g.input("x", {3});
    int h = g.tanh(g.affine(w1, x, b1));
    int out = g.affine(w2, h, b2);
    g.set_output(g.sum_reduce(g.square(out)));

    NoiseSource rng(7);
    Bindings bind;
    std::vector<std::string> names{"w1", "b1", "w2", "b2", "x"};
    for (const auto& nm : names) {
        Array a(g.node(g.leaves().at(nm)).shape);
        for (double& v : a.data) v = 2.0 * rng.uniform() - 1.0;
        bind[nm] = std::move(a);
    }
    auto grads = gradient(g, bind, names);

    for (const auto& nm : names) {
        const Array& base = bind.at(nm);
        for (std::size_t i = 0; i < base.size(); ++i) {
            auto f = [&](const std::vector<double>& pt) {
                Bindings b2c = bind;
                b2c[nm].data[i] = pt[0];
                return evaluate(g, b2c).value();
            };
            auto fd = finite_difference_gradient(f, {base.data[i]}, 1e-5);
            CHECK(relative_error(grads[nm].data[i], fd[0]) < 1e-4);
        }
    }
}

TEST_CASE("finite_difference_gradient oracle cases") {
    auto sq = [](const std::vector<double>& v) { return v[0] * v[0]; };
    auto g1 = finite_difference_gradient(sq, {3.0}, 1e-5);
    CHECK(g1[0] == doctest::Approx(6.0).epsilon(1e-8));

    auto constant = [](const std::vector<double>&) { return 4.2; };
    auto g2 = finite_difference_gradient(constant, {1.0, -2.0, 0.5}, 1e-5);
    for (double v : g2) CHECK(v == 0.0);

    // Taylor remainder for sin is h^2/6 ~ 1.7e-11 at h = 1e-5
    auto sine = [](const std::vector<double>& v) { return std::sin(v[0]); };
    auto g3 = finite_difference_gradient(sine, {0.0}, 1e-5);
    CHECK(g3[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("finite_difference_gradient rejects non-finite probes") {
    auto f = [](const std::vector<double>& v) { return std::log(v[0]); };
    CHECK_THROWS(finite_difference_gradient(f, {1e-9}, 1e-5));
}

TEST_CASE("200 random graphs: reverse-mode matches finite differences") {
    NoiseSource rng(20240601);
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
        double err = max_relative_error(got, fd, 1e-5);
        CAPTURE(trial);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("log-sum-exp shift invariance") {
    NoiseSource rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 7);
        std::vector<double> v(n);
        for (double& x : v) x = 8.0 * rng.uniform() - 4.0;
        double c = 6.0 * rng.uniform() - 3.0;

        ComputationGraph g;
        int in = g.input("v", {n});
        g.set_output(g.log_sum_exp(in, 0));
        Bindings b{{"v", Array::vector(v)}};
        double base = evaluate(g, b).value();
        for (double& x : b["v"].data) x += c;
        double shifted = evaluate(g, b).value();
        CHECK(std::abs(shifted - (base + c)) < 1e-12);
    }
}

TEST_CASE("evaluate is pure: identical bindings give bitwise-identical outputs") {
    NoiseSource rng(5);
    auto rg = testutil::make_random_graph(rng);
    Array a = evaluate(*rg.graph, rg.bindings);
    Array b = evaluate(*rg.graph, rg.bindings);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("errors: shape mismatch names the offending slot") {
    ComputationGraph g;
    int x = g.input("x", {3});
    g.set_output(g.sum_reduce(x));
    Bindings b{{"x", Array::vector({1.0, 2.0})}};
    CHECK_THROWS_WITH_AS(evaluate(g, b), doctest::Contains("'x'"), std::runtime_error);
}

TEST_CASE("errors: non-finite intermediate names the node") {
    ComputationGraph g;
    int x = g.input("x", {});
    g.set_output(g.log(x));
    Bindings b{{"x", Array::scalar(-1.0)}};
    CHECK_THROWS_WITH_AS(evaluate(g, b), doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("errors: gradient requires scalar output") {
    ComputationGraph g;
    int x = g.input("x", {3});
    g.set_output(g.relu(x));
    Bindings b{{"x", Array::vector({1.0, 2.0, 3.0})}};
    CHECK_THROWS_AS(gradient(g, b, {"x"}), std::runtime_error);
}

TEST_CASE("errors: unknown slot in wrt") {
    ComputationGraph g;
    int x = g.input("x", {});
    g.set_output(g.square(x));
    Bindings b{{"x", Array::scalar(1.0)}};
    CHECK_THROWS_WITH_AS(gradient(g, b, {"nope"}), doctest::Contains("unknown slot"),
                         std::runtime_error);
}

TEST_CASE("builder rejects inconsistent shapes at construction") {
    ComputationGraph g;
    int a = g.input("a", {2});
    int b = g.input("b", {3});
    CHECK_THROWS_AS(g.add(a, b), std::invalid_argument);
    int m = g.input("m", {2, 2});
    CHECK_THROWS_AS(g.matmul(m, b), std::invalid_argument);
}
