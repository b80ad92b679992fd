#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "optima/augmentation.hpp"
#include "optima/data.hpp"
#include "optima/model.hpp"
#include "optima/trainer.hpp"

namespace optima {

inline constexpr const char* kArtifactVersion = "optima 0.1.0";

/// Config/schema violations carry the JSON path of the offending key.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataConfig {
    std::string generator;           // synthetic-regression | glyph-classification
    std::size_t n_train = 50;
    std::size_t n_test = 1000;
    std::uint64_t seed = 0;
    std::size_t size = 16;           // glyphs
    std::size_t n_classes = 4;
    double pose_jitter = 0.2;
    std::string train_path, test_path;  // alternative to a generator
    std::string corrupt_kind;        // optional OOD variant for eval
    double corrupt_severity = 0.0;
};

struct AugConfig {
    std::string family = "additive-shift";
    double init_mu = 0.0;
    double init_sigma = 0.1;                  // sigma_aug init (paper's fixed baseline value)
    double init_alpha = 0.2;                  // mixup
    double init_sigma_log_alpha = 0.1;
    double temperature = 1.0;                 // categorical
    std::vector<std::vector<double>> shifts;  // categorical discrete transforms
    std::vector<double> prior_mean;           // over phi; empty -> family default
    std::vector<double> prior_std;
    double q_sigma_init = 0.1;                // q(phi) per-coordinate std at start
};

struct EvalConfig {
    std::size_t n_mc_samples = 100;
    bool marginalize_aug = false;
};

struct BaselineArm {
    std::string kind;  // no-aug | fixed-aug | naive-aug
    std::size_t k = 5;
};

struct RunConfig {
    DataConfig data;
    NetworkSpec model;
    AugConfig augmentation;
    TrainConfig train;
    std::string algorithm = "full-vi";  // or partial-vi
    EvalConfig eval;
    std::vector<BaselineArm> baselines;

    nlohmann::json resolved;  // the fully-defaulted document
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Builds the augmentation family + q(phi) init the config describes, given
/// the (flattened) input dimensionality / raster geometry of the dataset.
struct FamilySetup {
    AugmentationFamily family;
    DiagonalGaussian q_phi_init;
};
FamilySetup make_family(const AugConfig& cfg, const Dataset& data);

/// Datasets named by the config: generated in-memory or loaded from CSV.
struct LoadedData {
    Dataset train;
    Dataset test;
    std::optional<Dataset> corrupted_test;
};
LoadedData load_data(const DataConfig& cfg);

// --- artifacts ---

void save_checkpoint(const std::string& path, const ModelState& state,
                     const DiagonalGaussian& q_phi, const AugmentationFamily& family, Task task,
                     std::size_t step);

struct Checkpoint {
    ModelState state;
    DiagonalGaussian q_phi;
    AugmentationFamily family;
    Task task = Task::Regression;
    std::size_t step = 0;
};
Checkpoint load_checkpoint(const std::string& path);

void write_trace_csv(const std::string& path, const TrainTrace& trace);

/// Metrics + trajectories for one run arm, as embedded in the report.
nlohmann::json arm_report(const ModelState& state, const DiagonalGaussian& q_phi,
                          const AugmentationFamily& family, const Dataset& test,
                          const Dataset* corrupted, const Dataset& train,
                          const EvalConfig& eval_cfg, const TrainTrace* trace, double beta_net,
                          double beta_aug, double theta_prior_std, std::uint64_t eval_seed);

// --- figures ---

void write_reliability_svg(const std::string& path, const nlohmann::json& report);
void write_phi_trajectory_svg(const std::string& path, const nlohmann::json& report);
void write_curves_svg(const std::string& path, const nlohmann::json& report);
void write_summary_markdown(const std::string& path, const nlohmann::json& report);

}  // namespace optima
