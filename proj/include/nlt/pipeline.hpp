/**
 * @file pipeline.hpp
 * @brief Experiment driver: generate -> learn -> predict -> report, and sweeps.
 *
 * Every stage reads and writes plain files under the output directory
 * (layout in docs/formats.md), so stages can run as separate CLI calls.
 * Numeric outputs are CSV with a leading provenance comment; parameters and
 * provenance are JSON. Nothing depends on wall-clock time, so reruns with
 * the same config and seed are byte-identical.
 */
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlt/baselines.hpp"
#include "nlt/coarse_grain.hpp"
#include "nlt/flow.hpp"
#include "nlt/learning.hpp"
#include "nlt/tracking.hpp"

namespace nlt {

inline constexpr const char* kConfigSchema = "nlt.experiment/1";
std::string code_version();

struct ExperimentConfig {
    MediumSpec medium;
    std::size_t grid_nx = 22000;
    std::size_t grid_ny = 200;
    std::size_t unit_cell_nx = 100;  ///< resolution of the effective-advection cell solve
    std::size_t unit_cell_ny = 100;
    DarcySolverOptions solver;
    TrackingConfig tracking;

    int smoothing_cells = 20;  ///< m
    /// "formula", "drift" or a fixed number (stored in frame_velocity_value).
    std::string frame_velocity = "formula";
    double frame_velocity_value = 0.0;

    std::vector<double> probes;                ///< training locations (moving frame)
    std::vector<double> evaluation_locations;  ///< predict/compare locations
    double tt = 72.0;                          ///< end of the training window

    std::vector<std::string> models{"nonlocal", "fractal", "classical", "mlp"};
    double beta = 100.0;
    int horizon_cells = 4;
    OptimizerSettings optimizer;
    std::string initial_condition = "data";  ///< "data" or "spike"
    double spike_amplitude = 1.0;
    SurrogateTraining mlp;

    std::vector<double> sweep_tt;
    std::vector<std::vector<double>> sweep_probe_sets;
    std::vector<double> sweep_evaluation_locations;  ///< empty uses evaluation_locations
    int sweep_threads = 0;  ///< 0 uses the hardware concurrency

    std::string out_dir = "out";
    std::uint64_t seed = 1;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
    std::size_t training_steps() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string version;
    nlohmann::json to_json() const;
    /// One-line CSV comment, "# config_hash=...,seed=...,version=...".
    std::string csv_comment() const;
};
Provenance provenance_of(const ExperimentConfig& cfg);

/// Everything the learning stages need from the generate stage.
struct Dataset {
    CoarseDensity coarse;  ///< density in the moving frame x_d = x - v t
    EffectiveAdvection advection;
    double drift = 0.0;           ///< least-squares slope of the mean particle position
    double frame_velocity = 0.0;  ///< value actually used for the frame shift
    std::vector<DisplacementStats> stats;
    double msd_loglog_slope = 0.0;  ///< over the second half of the run
};

/// Stage outputs under cfg.out_dir.
Dataset cmd_generate(const ExperimentConfig& cfg);
Dataset load_dataset(const ExperimentConfig& cfg);

/// Learning problem for one PDE model, training on samples t_1..t_n <= tt.
LearningProblem make_problem(const ExperimentConfig& cfg, const Dataset& data, ModelKind model,
                             double tt, const std::vector<double>& probes);

/// Fitted model of any kind, as stored in fits/<model>.json.
struct ModelFit {
    std::string model;
    FitResult pde;       ///< for nonlocal, fractal, classical
    SurrogateNet net;    ///< for mlp
    double train_loss = 0.0;
};

ModelFit learn_model(const ExperimentConfig& cfg, const Dataset& data, const std::string& model,
                     double tt, const std::vector<double>& probes);
void cmd_learn(const ExperimentConfig& cfg, const std::vector<std::string>& models);

/// Predicted curves at the given locations over the full snapshot grid.
std::vector<BreakthroughCurve> predict_curves(const ExperimentConfig& cfg, const Dataset& data,
                                              const ModelFit& fit,
                                              const std::vector<double>& locations);

struct MseRow {
    std::string model;
    double location = 0.0;
    bool training_probe = false;
    double train_mse = 0.0;  ///< samples t_1..t_n, n = tt / dt
    double test_mse = 0.0;   ///< samples after tt
};

/// Mean squared errors of predictions against reference curves on one grid.
std::vector<MseRow> compare(const std::string& model, const std::vector<BreakthroughCurve>& reference,
                            const std::vector<BreakthroughCurve>& predicted, std::size_t train_steps,
                            const std::vector<double>& probes);

std::vector<MseRow> cmd_predict(const ExperimentConfig& cfg, const std::vector<std::string>& models);
nlohmann::json cmd_report(const ExperimentConfig& cfg);

struct SweepRow {
    double tt = 0.0;
    std::size_t probe_set = 0;
    MseRow row;
};
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::vector<std::string>& models);

std::string btc_file_name(double location);

}  // namespace nlt
