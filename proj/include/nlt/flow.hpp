/**
 * @file flow.hpp
 * @brief Steady Darcy flow through a periodic layer with diamond inclusions.
 *
 * Solves
 *
 *   v = -kappa grad h,   div v = 0     on [0, L] x [0, l2]
 *
 * with h = h0 on the left edge, h = 0 on the right edge and no flow across
 * the top and bottom walls. Discretization is cell-centered finite volume
 * with two-point fluxes and harmonic face transmissibilities, which gives
 * locally conservative face velocities for Pollock tracking.
 */
#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>

#include "nlt/grid.hpp"

namespace nlt {

/// Geometry and conductivities of the periodic heterogeneous layer.
struct MediumSpec {
    double kappa_matrix = 1.0;      ///< background conductivity
    double kappa_inclusion = 0.01;  ///< diamond conductivity
    double cell_width = 0.5773502691896258;  ///< unit-cell length l1
    double layer_height = 1.0;               ///< layer thickness l2
    int num_cells = 220;                     ///< number of unit cells N
    double head_left = 60.0;                 ///< hydraulic head h0 at x = 0
    /// Diamond half-diagonal as a fraction of the unit-cell half-width
    /// (and half-height). 1 puts the vertices on the edge midpoints.
    double inclusion_fraction = 0.8;

    double length() const { return num_cells * cell_width; }

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

struct FlowField {
    std::size_t grid_nx = 0;
    std::size_t grid_ny = 0;
    int num_cells = 0;     ///< unit cells spanned by the grid
    double cell_width = 0; ///< l1
    double height = 0;     ///< l2

    Field2D face_velocity_x;  ///< (grid_nx + 1) x grid_ny, normal velocity on x-faces
    Field2D face_velocity_y;  ///< grid_nx x (grid_ny + 1), normal velocity on y-faces
    Field2D head;             ///< grid_nx x grid_ny, cell-centered head

    double length() const { return num_cells * cell_width; }
    double dx() const { return length() / static_cast<double>(grid_nx); }
    double dy() const { return height / static_cast<double>(grid_ny); }
    std::size_t columns_per_cell() const { return grid_nx / static_cast<std::size_t>(num_cells); }

    /// Cell-centered velocity from averaging opposite face values.
    double center_vx(std::size_t i, std::size_t j) const;
    double center_vy(std::size_t i, std::size_t j) const;
    double center_speed(std::size_t i, std::size_t j) const;

    /// Volumetric flux in through x = 0 and out through x = L (per unit depth).
    double inflow() const;
    double outflow() const;
};

struct DarcySolverOptions {
    /// Above this many unknowns a Jacobi-preconditioned CG replaces the
    /// sparse Cholesky factorization.
    std::size_t direct_max_unknowns = 200000;
    double relative_tolerance = 1e-12;
};

/// Conductivity per grid cell, classified by cell-center membership in the
/// diamond of each unit cell.
Field2D build_conductivity(const MediumSpec& spec, std::size_t grid_nx, std::size_t grid_ny);

FlowField solve_darcy(const Field2D& conductivity, const MediumSpec& spec,
                      const DarcySolverOptions& options = {});

/// Flow through a single unit cell [0, l1] x [0, l2] under a unit head drop.
FlowField solve_unit_cell(const MediumSpec& spec, std::size_t cell_nx, std::size_t cell_ny,
                          const DarcySolverOptions& options = {});

/// Largest |net outflux| of any cell, divided by the mean |face flux|.
double max_relative_divergence(const FlowField& flow);

/// Text container: see docs/formats.md.
void write_flow_field(std::ostream& out, const FlowField& flow);
FlowField read_flow_field(std::istream& in);
void save_flow_field(const std::string& path, const FlowField& flow);
FlowField load_flow_field(const std::string& path);

}  // namespace nlt
