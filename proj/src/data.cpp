#include "optima/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "optima/augmentation.hpp"
#include "optima/rng.hpp"

namespace optima {

const char* task_name(Task t) { return t == Task::Regression ? "regression" : "classification"; }

Task task_from_name(const std::string& name) {
    if (name == "regression") return Task::Regression;
    if (name == "classification") return Task::Classification;
    throw std::invalid_argument("unknown task '" + name + "'");
}

void Dataset::validate() const {
    if (inputs.empty()) throw std::invalid_argument("Dataset: empty");
    for (const auto& x : inputs)
        if (x.shape != inputs[0].shape)
            throw std::invalid_argument("Dataset: inconsistent input shapes");
    if (task == Task::Regression) {
        if (targets.size() != inputs.size())
            throw std::invalid_argument("Dataset: targets length mismatch");
    } else {
        if (labels.size() != inputs.size())
            throw std::invalid_argument("Dataset: labels length mismatch");
        for (std::size_t l : labels)
            if (l >= n_classes) throw std::invalid_argument("Dataset: label out of range");
    }
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double synthetic_regression_mean(double x) {
    return std::sin(2.0 * x) + 0.5 * std::cos(3.0 * x);
}

namespace {

Dataset sample_regression(std::size_t n, NoiseSource rng, std::uint64_t seed, const char* split) {
    Dataset d;
    d.task = Task::Regression;
    d.metadata["generator"] = "synthetic-regression";
    d.metadata["seed"] = std::to_string(seed);
    d.metadata["split"] = split;
    for (std::size_t i = 0; i < n; ++i) {
        NoiseSource ex = rng.child(i);
        double x = -3.0 + 6.0 * ex.uniform();
        double e1 = 0.2 * ex.normal();
        double e2 = 0.15 * ex.normal();
        double y = synthetic_regression_mean(x) + e1 + e2 * std::sin(x);
        d.inputs.push_back(Array::vector({x}));
        d.targets.push_back(Array::vector({y}));
    }
    return d;
}

}  // namespace

std::pair<Dataset, Dataset> gen_synthetic_regression(std::size_t n_train, std::size_t n_test,
                                                     std::uint64_t seed) {
    if (n_train < 1 || n_test < 1)
        throw std::invalid_argument("gen_synthetic_regression: counts must be >= 1");
    NoiseSource root(seed, 0xDA7A);
    Dataset train = sample_regression(n_train, root.child(1), seed, "train");
    Dataset test = sample_regression(n_test, root.child(2), seed, "test");
    return {std::move(train), std::move(test)};
}

namespace {

Array render_glyph(std::size_t cls, std::size_t size) {
    Array img({size, size});
    std::size_t mid = size / 2;
    std::size_t lo = size / 4, hi = size - 1 - size / 4;
    switch (cls % 4) {
        case 0:  // vertical bar
            for (std::size_t r = lo; r <= hi; ++r) img.at(r, mid) = 1.0;
            break;
        case 1:  // cross
            for (std::size_t r = lo; r <= hi; ++r) img.at(r, mid) = 1.0;
            for (std::size_t c = lo; c <= hi; ++c) img.at(mid, c) = 1.0;
            break;
        case 2:  // L
            for (std::size_t r = lo; r <= hi; ++r) img.at(r, lo) = 1.0;
            for (std::size_t c = lo; c <= hi; ++c) img.at(hi, c) = 1.0;
            break;
        case 3:  // diagonal
            for (std::size_t k = lo; k <= hi; ++k) img.at(k, k) = 1.0;
            break;
    }
    return img;
}

}  // namespace

Dataset gen_glyph_classification(std::size_t n, std::size_t size, std::size_t n_classes,
                                 double pose_jitter, std::uint64_t seed) {
    if (size < 8) throw std::invalid_argument("gen_glyph_classification: size must be >= 8");
    if (n_classes < 2 || n_classes > 4)
        throw std::invalid_argument("gen_glyph_classification: n_classes must be in [2, 4]");
    Dataset d;
    d.task = Task::Classification;
    d.n_classes = n_classes;
    d.metadata["generator"] = "glyph-classification";
    d.metadata["seed"] = std::to_string(seed);
    d.metadata["pose_jitter"] = fmt_g17(pose_jitter);
    NoiseSource root(seed, 0x61F9);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t cls = i % n_classes;
        Array base = render_glyph(cls, size);
        if (pose_jitter > 0.0) {
            NoiseSource ex = root.child(i);
            double om = pose_jitter * (2.0 * ex.uniform() - 1.0);
            double tx = pose_jitter * (2.0 * ex.uniform() - 1.0);
            double ty = pose_jitter * (2.0 * ex.uniform() - 1.0);
            base = bilinear_affine_warp(base, om, tx, ty);
        }
        d.inputs.push_back(std::move(base));
        d.labels.push_back(cls);
    }
    return d;
}

Dataset corrupt_dataset(const Dataset& data, const std::string& kind, double severity) {
    if (severity < 0.0) throw std::invalid_argument("corrupt_dataset: severity must be >= 0");
    if (kind != "gaussian-noise" && kind != "extra-rotation" && kind != "mean-shift")
        throw std::invalid_argument("corrupt_dataset: unknown kind '" + kind + "'");
    Dataset out = data;
    out.metadata["corruption"] = kind;
    out.metadata["severity"] = fmt_g17(severity);
    if (severity == 0.0) return out;

    std::uint64_t seed = 0;
    if (auto it = data.metadata.find("seed"); it != data.metadata.end())
        seed = std::stoull(it->second);
    NoiseSource root(seed, 0xC0 + static_cast<std::uint64_t>(severity * 1e6));

    for (std::size_t i = 0; i < out.inputs.size(); ++i) {
        Array& x = out.inputs[i];
        if (kind == "gaussian-noise") {
            NoiseSource ex = root.child(i);
            for (double& v : x.data) v += severity * ex.normal();
        } else if (kind == "mean-shift") {
            for (double& v : x.data) v += severity;
        } else {  // extra-rotation
            if (x.rank() != 2)
                throw std::invalid_argument("corrupt_dataset: extra-rotation needs raster inputs");
            NoiseSource ex = root.child(i);
            double om = severity * ex.normal();
            x = bilinear_affine_warp(x, om, 0.0, 0.0);
        }
    }
    return out;
}

namespace {

std::string shape_token(const Shape& s) {
    if (s.size() == 1) return std::to_string(s[0]);
    return std::to_string(s[0]) + "x" + std::to_string(s[1]);
}

Shape parse_shape_token(const std::string& tok) {
    auto x = tok.find('x');
    if (x == std::string::npos) return {static_cast<std::size_t>(std::stoull(tok))};
    return {static_cast<std::size_t>(std::stoull(tok.substr(0, x))),
            static_cast<std::size_t>(std::stoull(tok.substr(x + 1)))};
}

[[noreturn]] void csv_error(const std::string& path, std::size_t line, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

void write_csv(const std::string& path, const Dataset& data) {
    data.validate();
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open '" + path + "'");

    std::string gen = "unknown", seed = "0";
    if (auto it = data.metadata.find("generator"); it != data.metadata.end()) gen = it->second;
    if (auto it = data.metadata.find("seed"); it != data.metadata.end()) seed = it->second;
    out << "# task=" << task_name(data.task) << " shape=" << shape_token(data.inputs[0].shape)
        << " seed=" << seed << " generator=" << gen;
    if (data.task == Task::Classification && !data.metadata.count("n_classes"))
        out << " n_classes=" << data.n_classes;
    for (const auto& [k, v] : data.metadata)
        if (k != "generator" && k != "seed") out << " " << k << "=" << v;
    out << "\n";

    std::size_t d = data.inputs[0].size();
    for (std::size_t i = 0; i < d; ++i) out << "x" << i << ",";
    if (data.task == Task::Regression) {
        std::size_t o = data.targets[0].size();
        for (std::size_t i = 0; i < o; ++i) out << (i ? "," : "") << "y" << i;
    } else {
        out << "label";
    }
    out << "\n";

    for (std::size_t r = 0; r < data.size(); ++r) {
        for (std::size_t i = 0; i < d; ++i) out << fmt_g17(data.inputs[r].data[i]) << ",";
        if (data.task == Task::Regression) {
            const Array& y = data.targets[r];
            for (std::size_t i = 0; i < y.size(); ++i)
                out << (i ? "," : "") << fmt_g17(y.data[i]);
        } else {
            out << data.labels[r];
        }
        out << "\n";
    }
}

Dataset read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_csv: cannot open '" + path + "'");
    std::string line;
    std::size_t lineno = 0;

    if (!std::getline(in, line)) csv_error(path, 1, "missing header line");
    ++lineno;
    if (line.rfind("# ", 0) != 0) csv_error(path, lineno, "first line must start with '# '");

    Dataset d;
    Shape input_shape;
    std::istringstream hdr(line.substr(2));
    std::string tok;
    while (hdr >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) csv_error(path, lineno, "malformed header token '" + tok + "'");
        std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "task")
            d.task = task_from_name(val);
        else if (key == "shape")
            input_shape = parse_shape_token(val);
        else
            d.metadata[key] = val;
    }
    if (input_shape.empty()) csv_error(path, lineno, "header missing shape");

    if (!std::getline(in, line)) csv_error(path, 2, "missing column header line");
    ++lineno;
    std::size_t n_cols = 1;
    for (char c : line) n_cols += (c == ',');
    std::size_t in_dim = numel(input_shape);
    if (n_cols <= in_dim) csv_error(path, lineno, "too few columns for declared shape");
    std::size_t out_dim = n_cols - in_dim;
    bool classification = d.task == Task::Classification;

    std::size_t max_label = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<double> cells;
        while (std::getline(row, cell, ','))
            try {
                cells.push_back(std::stod(cell));
            } catch (const std::exception&) {
                csv_error(path, lineno, "unparseable cell '" + cell + "'");
            }
        if (cells.size() != n_cols)
            csv_error(path, lineno, "expected " + std::to_string(n_cols) + " cells, got " +
                                        std::to_string(cells.size()));
        Array x(input_shape);
        for (std::size_t i = 0; i < in_dim; ++i) x.data[i] = cells[i];
        d.inputs.push_back(std::move(x));
        if (classification) {
            double lv = cells[in_dim];
            if (lv < 0 || lv != std::floor(lv))
                csv_error(path, lineno, "label must be a nonnegative integer");
            std::size_t l = static_cast<std::size_t>(lv);
            max_label = std::max(max_label, l);
            d.labels.push_back(l);
        } else {
            Array y({out_dim});
            for (std::size_t i = 0; i < out_dim; ++i) y.data[i] = cells[in_dim + i];
            d.targets.push_back(std::move(y));
        }
    }
    if (d.inputs.empty()) csv_error(path, lineno, "no data rows");
    if (classification) {
        d.n_classes = max_label + 1;
        if (auto it = d.metadata.find("n_classes"); it != d.metadata.end())
            d.n_classes = std::stoull(it->second);
    }
    d.validate();
    return d;
}

}  // namespace optima
