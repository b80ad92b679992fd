#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace optima {

// Dense row-major array of doubles, rank 0 (scalar), 1 (vector) or 2 (matrix).
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    if (s.empty()) return "[]";
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct Array {
    Shape shape;
    std::vector<double> data;

    Array() : shape{}, data(1, 0.0) {}
    explicit Array(Shape s) : shape(std::move(s)), data(numel(shape), 0.0) {}
    Array(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != numel(shape))
            throw std::invalid_argument("Array: data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static Array scalar(double v) {
        Array a;
        a.data[0] = v;
        return a;
    }
    static Array zeros(Shape s) { return Array(std::move(s)); }
    static Array full(Shape s, double v) {
        Array a(std::move(s));
        for (double& x : a.data) x = v;
        return a;
    }
    static Array vector(std::vector<double> v) {
        Shape s{v.size()};
        return Array(std::move(s), std::move(v));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return rank() >= 1 ? shape[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape[1] : 1; }

    double value() const {
        if (size() != 1) throw std::invalid_argument("Array::value on non-scalar " + shape_str(shape));
        return data[0];
    }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm_sq(const std::vector<double>& a) { return dot(a, a); }

}  // namespace optima
