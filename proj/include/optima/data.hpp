#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "optima/array.hpp"

namespace optima {

enum class Task { Regression, Classification };

const char* task_name(Task t);
Task task_from_name(const std::string& name);

struct Dataset {
    Task task = Task::Regression;
    std::vector<Array> inputs;             // rank-1 vectors or rank-2 rasters
    std::vector<Array> targets;            // regression targets
    std::vector<std::size_t> labels;       // classification labels in [0, n_classes)
    std::size_t n_classes = 0;
    std::map<std::string, std::string> metadata;

    std::size_t size() const { return inputs.size(); }
    void validate() const;
};

/// App-E style toy data: y = sin(2x) + 0.5 cos(3x) + e1 + e2 sin(x),
/// e1 ~ N(0, 0.2^2), e2 ~ N(0, 0.15^2); x uniform on [-3, 3].
std::pair<Dataset, Dataset> gen_synthetic_regression(std::size_t n_train = 50,
                                                     std::size_t n_test = 1000,
                                                     std::uint64_t seed = 0);
double synthetic_regression_mean(double x);

/// Procedural glyph rasters (bar, cross, L, diagonal) with pose jitter:
/// rotation and translation uniform in [-pose_jitter, +pose_jitter]
/// (radians / size fractions). Labels assigned round-robin.
Dataset gen_glyph_classification(std::size_t n, std::size_t size = 16, std::size_t n_classes = 4,
                                 double pose_jitter = 0.2, std::uint64_t seed = 0);

/// kinds: gaussian-noise, extra-rotation, mean-shift; severity 0 is identity.
Dataset corrupt_dataset(const Dataset& data, const std::string& kind, double severity);

void write_csv(const std::string& path, const Dataset& data);
Dataset read_csv(const std::string& path);

/// %.17g formatting shared by every text emitter (traces, CSV) so round trips
/// and byte-level determinism hold.
std::string fmt_g17(double v);

}  // namespace optima
