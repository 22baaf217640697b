/**
 * @file coarse_grain.hpp
 * @brief Upscaling of the 2D particle density to a 1D cell-wise density.
 *
 * The coarse density in unit cell i is the fine-scale mass contained in the
 * window of cells i, ..., i+m-1 divided by the window area m l1 l2. Windows
 * that run past x = L are clipped and normalized by the clipped width.
 */
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nlt/flow.hpp"
#include "nlt/tracking.hpp"

namespace nlt {

struct CoarseDensity {
    int num_cells = 0;
    int smoothing_cells = 1;  ///< window width m
    double cell_width = 0.0;
    double height = 0.0;
    std::vector<double> times;
    std::vector<std::vector<double>> values;  ///< [snapshot][cell], cell 0 is C_1

    double value(std::size_t cell, std::size_t snapshot) const { return values[snapshot][cell]; }
    /// Number of cells in the (clipped) window starting at cell i.
    int window_width(std::size_t cell) const;
};

struct BreakthroughCurve {
    double location = 0.0;
    std::vector<double> times;
    std::vector<double> values;
};

struct EffectiveAdvection {
    double v_bar_cell = 0.0;   ///< homogenized speed under a unit head drop across one cell
    double kappa_bar_x = 0.0;  ///< v_bar_cell * l1
    double v_bar = 0.0;        ///< h0 / (N kappa_bar_x)
};

/// Per-unit-cell mass [snapshot][cell] from fine densities on a grid whose
/// nx is a multiple of N.
std::vector<std::vector<double>> unit_cell_masses(std::span<const Field2D> fine,
                                                  const DensityGrid& grid, int num_cells);

CoarseDensity upscale(std::span<const Field2D> fine, const DensityGrid& grid,
                      std::span<const double> times, const MediumSpec& spec, int m);

/// Same as upscale, starting from per-unit-cell masses.
CoarseDensity upscale_cell_masses(const std::vector<std::vector<double>>& cell_masses,
                                  std::span<const double> times, const MediumSpec& spec, int m);

/// Inverts the window averaging: per-cell masses reproduced from the coarse values.
std::vector<double> recover_cell_masses(const CoarseDensity& coarse, std::size_t snapshot);
double total_mass(const CoarseDensity& coarse, std::size_t snapshot);

/// 0-based owning cell of x; throws ConfigError outside (0, L).
std::size_t owning_cell(double x, int num_cells, double cell_width);

std::vector<BreakthroughCurve> extract_btc(const CoarseDensity& coarse,
                                           std::span<const double> locations);

EffectiveAdvection effective_advection(const MediumSpec& spec, const FlowField& unit_cell_flow);

/// Least-squares slope of the mean particle position over the snapshots.
double ensemble_drift(std::span<const DisplacementStats> stats);

/// Re-indexes the density to x_d = x - v_bar t with linear interpolation
/// between cell centers and zero outside the domain.
CoarseDensity shift_frame(const CoarseDensity& coarse, double v_bar);

}  // namespace nlt
