/**
 * @file learning.hpp
 * @brief Fitting the dynamic kernel (and the PDE baselines) to BTC data.
 *
 * loss = sum_i sum_j (f_i(t_j) - f*_i(t_j))^2 + beta (sum_j j phi_j)^2
 *
 * Kernel weights are phi_j = softplus(rho_j) so they stay nonnegative while
 * the optimizer works on unconstrained rho. Gradients come from the discrete
 * adjoint of the backward-Euler time stepper and are exact up to round-off.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlt/baselines.hpp"
#include "nlt/nonlocal.hpp"

namespace nlt {

enum class ModelKind { nonlocal, fractal, classical };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct OptimizerSettings {
    int max_iterations = 500;
    double gradient_tolerance = 1e-8;  ///< on the max-norm of the raw gradient
    int history = 10;
    double armijo = 1e-4;
    /// Stop when the relative loss decrease stays below this for 5 iterations.
    double stagnation_tolerance = 1e-15;
    /// Largest trial change of any raw parameter per iteration (0 disables).
    double max_step = 1.0;
};

struct LearningProblem {
    std::vector<BreakthroughCurve> curves;  ///< samples at t_1..t_n of the solver grid
    double beta = 100.0;
    ModelKind model = ModelKind::nonlocal;
    int horizon_cells = 4;
    double cell_width = 0.5773502691896258;
    int num_cells = 220;
    double dt = 0.1;
    std::vector<double> initial;  ///< model initial condition, one value per cell
    OptimizerSettings optimizer;
    std::uint64_t seed = 1;

    /// Sorts curves by location and checks grids; throws ConfigError.
    void validate_and_normalize();
    std::size_t steps() const;
    std::size_t parameter_count() const;
};

struct LossValue {
    double loss = 0.0;
    double mse = 0.0;
    double penalty = 0.0;  ///< (sum_j j phi_j)^2
};

/// Documented starting point: phi_j = 0.1 everywhere, p = 0 (or the
/// equivalent D for the baselines).
std::vector<double> initial_parameters(const LearningProblem& problem);

/// Kernel represented by raw parameters (baselines map to a one-cell horizon).
DynamicKernel kernel_from_raw(const LearningProblem& problem, std::span<const double> raw);

LossValue evaluate_loss(const LearningProblem& problem, std::span<const double> raw);
std::vector<double> gradient(const LearningProblem& problem, std::span<const double> raw);
LossValue evaluate_loss_and_gradient(const LearningProblem& problem, std::span<const double> raw,
                                     std::vector<double>& grad);

// --- optimizer -----------------------------------------------------------

struct TraceEntry {
    int iteration = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
};

struct LbfgsResult {
    std::vector<double> x;
    double f = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string reason;
    std::vector<TraceEntry> trace;
};

/// Objective returning f(x) and writing the gradient; may throw
/// NumericalError, which the line search treats as an infinite value.
using Objective = std::function<double(std::span<const double>, std::vector<double>&)>;

LbfgsResult minimize_lbfgs(const Objective& objective, std::vector<double> x0,
                           const OptimizerSettings& settings);

struct FitResult {
    ModelKind model = ModelKind::nonlocal;
    std::vector<double> raw;
    DynamicKernel kernel;       ///< fitted kernel (baselines: one-cell equivalent)
    FractalParams fractal;      ///< set for fractal
    ClassicalParams classical;  ///< set for classical
    LossValue value;
    double beta = 0.0;
    int iterations = 0;
    double grad_norm = 0.0;
    bool converged = false;
    std::string reason;
    std::vector<TraceEntry> trace;
};

FitResult fit(const LearningProblem& problem);
/// Same as fit, from a given raw starting point.
FitResult fit_from(const LearningProblem& problem, std::vector<double> raw0);

/// Penalty continuation: fits for ascending beta, the first from the
/// documented start and each later one from the previous optimum.
std::vector<FitResult> fit_penalty_path(const LearningProblem& problem, std::vector<double> betas);

nlohmann::json fit_to_json(const FitResult& fit);
FitResult fit_from_json(const nlohmann::json& j);

}  // namespace nlt
