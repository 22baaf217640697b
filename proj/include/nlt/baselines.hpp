/**
 * @file baselines.hpp
 * @brief Comparison models: time-scaled ("fractal derivative") diffusion,
 *        classical diffusion and a small MLP surrogate of the BTCs.
 *
 * Both PDE baselines run through the nonlocal solver with a one-cell
 * horizon, phi_{+-1} = D / l1^2, which is exactly the standard three-point
 * Laplacian. They therefore share grid, initial condition, time stepping
 * and BTC extraction with the nonlocal model.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "nlt/nonlocal.hpp"

namespace nlt {

/// dc/dt = D_bar / t^q c_xx
struct FractalParams {
    double D_bar = 0.0;
    double q = 0.0;
};

/// dc/dt = D0_bar c_xx
struct ClassicalParams {
    double D0_bar = 0.0;
};

DynamicKernel fractal_kernel(const FractalParams& params, double cell_width);

NonlocalSolution solve_fractal(const FractalParams& params, double cell_width,
                               std::span<const double> initial, double dt, std::size_t steps);
NonlocalSolution solve_classical(const ClassicalParams& params, double cell_width,
                                 std::span<const double> initial, double dt, std::size_t steps);

// --- MLP surrogate ---------------------------------------------------------

/// Maps [lo, hi] onto [-1, 1].
struct AffineRange {
    double lo = 0.0;
    double hi = 1.0;
    double normalize(double v) const { return hi > lo ? 2.0 * (v - lo) / (hi - lo) - 1.0 : 0.0; }
};

/**
 * @brief Fully connected net (x, t) -> softplus output with tanh hidden layers.
 *
 * Parameters are stored flat, layer by layer: weights row-major
 * [out][in], then biases.
 */
struct SurrogateNet {
    std::vector<int> layer_sizes{2, 4, 4, 4, 1};
    std::vector<double> params;
    AffineRange x_range;
    AffineRange t_range;

    static SurrogateNet zeros(int hidden_layers = 3, int width = 4);
    std::size_t parameter_count() const;
};

double surrogate_eval(const SurrogateNet& net, double x, double t);

struct SurrogateSample {
    double x = 0.0;
    double t = 0.0;
    double target = 0.0;
};

/// Mean squared error over samples and its gradient with respect to params.
double surrogate_loss(const SurrogateNet& net, std::span<const SurrogateSample> samples,
                      std::vector<double>* gradient = nullptr);

struct SurrogateTraining {
    int hidden_layers = 3;
    int width = 4;
    std::size_t epochs = 20000;
    double learning_rate = 1e-3;
    std::size_t batch_size = 0;  ///< 0 trains on the full set each step
    std::uint64_t seed = 1;
};

std::vector<SurrogateSample> samples_from_curves(std::span<const BreakthroughCurve> curves);

/// Adam on the mean squared error. Input ranges come from the samples.
SurrogateNet train_surrogate(std::span<const SurrogateSample> samples, const SurrogateTraining& cfg);

nlohmann::json surrogate_to_json(const SurrogateNet& net);
SurrogateNet surrogate_from_json(const nlohmann::json& j);

}  // namespace nlt
