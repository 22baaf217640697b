/**
 * @file nonlocal.hpp
 * @brief 1D nonlocal diffusion with a separable dynamic kernel.
 *
 *   d c_i / dt = t^p * sum_{j=-Nd..Nd} phi_j (c_{i+j} - c_i),   i = 1..N
 *
 * with c = 0 on the Nd-cell collar outside [1, N] (homogeneous volume
 * constraint). phi_j are cell-integrated kernel values. Time stepping is
 * backward Euler on a uniform grid t_n = n dt with the time factor taken at
 * the new level; the first step from t = 0 uses the step average
 * dt^p / (p + 1) so that p in (-1, 0) stays finite.
 */
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"
#include "nlt/banded.hpp"
#include "nlt/coarse_grain.hpp"

namespace nlt {

struct DynamicKernel {
    std::vector<double> phi;  ///< phi_{-Nd}, ..., phi_{Nd}
    double p = 0.0;
    int horizon_cells = 1;    ///< Nd
    double cell_width = 1.0;  ///< l1

    double horizon() const { return horizon_cells * cell_width; }
    double weight(int j) const { return phi[static_cast<std::size_t>(j + horizon_cells)]; }
    double& weight(int j) { return phi[static_cast<std::size_t>(j + horizon_cells)]; }

    /// sum_{j != 0} phi_j j^k; phi_0 never enters the operator.
    double moment(int order) const;
    /// sum_j j phi_j, the discrete drift of the kernel.
    double first_moment() const { return moment(1); }
    /// d MSD / dt divided by t^p: sum_j phi_j (j l1)^2.
    double msd_rate() const;

    void validate() const;

    /// Symmetric kernel from phi_1..phi_Nd.
    static DynamicKernel symmetric(std::span<const double> one_sided, double p, double cell_width);
};

struct NonlocalSolution {
    double dt = 0.0;
    double cell_width = 1.0;
    std::vector<double> times;                ///< t_n = n dt
    std::vector<std::vector<double>> values;  ///< [step][cell]; collar cells are zero and not stored
};

/// Operator A with (A c)_i = sum_j phi_j (c_{i+j} - c_i), t-independent part.
BandedMatrix assemble_operator(const DynamicKernel& kernel, int num_cells);

/// Time factor for the step ending at t_next. Throws NumericalError when the
/// first-step average diverges (p <= -1).
double step_coefficient(double p, double t_next, double dt);
/// d step_coefficient / dp.
double step_coefficient_dp(double p, double t_next, double dt);

/// True when the step ending at t_next starts at t = 0.
bool is_first_step(double t_next, double dt);

/// (I - dt theta A) system matrix for one step.
BandedMatrix step_matrix(const BandedMatrix& op, double dt, double theta);

std::vector<double> step_implicit(std::span<const double> c, const DynamicKernel& kernel,
                                  double t_next, double dt);

/// Unit spike: c_k = amplitude in 1-based cell k, zero elsewhere.
std::vector<double> spike(int num_cells, int cell, double amplitude = 1.0);

NonlocalSolution solve(const DynamicKernel& kernel, std::span<const double> initial, double dt,
                       std::size_t steps);

std::vector<BreakthroughCurve> model_btc(const NonlocalSolution& solution,
                                         std::span<const double> locations);

struct ProfileMoments {
    double mass = 0.0;   ///< sum_i c_i
    double mean = 0.0;   ///< center of mass, x_i = (i + 1/2) l1 with i 0-based
    double msd = 0.0;    ///< variance about the mean
};

ProfileMoments profile_moments(std::span<const double> c, double cell_width);

nlohmann::json kernel_to_json(const DynamicKernel& kernel);
DynamicKernel kernel_from_json(const nlohmann::json& j);

}  // namespace nlt
