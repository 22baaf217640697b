/**
 * @file tracking.hpp
 * @brief Lagrangian particle tracking with Pollock's semi-analytical scheme.
 *
 * Inside each grid cell the velocity components are interpolated linearly
 * between opposite faces, so dx/dt = vx0 + Ax (x - x0) integrates to an
 * exponential in time and the exit time through each face is closed-form.
 * Particles move cell to cell along exact trajectories of the discrete
 * velocity field; the recording interval only decides when positions are
 * sampled. The outlet x = L is absorbing.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nlt/flow.hpp"

namespace nlt {

struct TrackingConfig {
    int injection_cell = 7;              ///< 1-based unit cell index k
    std::size_t num_particles = 100000;
    double dt = 0.01;                    ///< recording interval
    double t_end = 144.0;
    std::uint64_t rng_seed = 1;

    void validate(int num_cells) const;
    /// Number of recording intervals; snapshot k is at time k * dt.
    std::size_t num_steps() const;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

enum class ParticleStatus : std::uint8_t { active, exited, stagnant };

struct ParticleEnsemble {
    std::vector<double> snapshot_times;
    std::vector<std::vector<Point>> positions;           ///< [snapshot][particle]
    std::vector<std::vector<ParticleStatus>> status;     ///< [snapshot][particle]
    std::size_t num_particles() const { return positions.empty() ? 0 : positions.front().size(); }
};

/// Flux-proportional injection into unit cell C_k by rejection sampling.
std::vector<Point> inject(const FlowField& flow, const TrackingConfig& cfg);

/// Velocity at an arbitrary point, from the per-cell linear face interpolation.
Point interpolated_velocity(const FlowField& flow, Point p);

/**
 * @brief Advances a particle cloud through a fixed flow field.
 *
 * The tracker keeps a reference to the flow; it must outlive the tracker.
 */
class Tracker {
public:
    Tracker(const FlowField& flow, std::span<const Point> start);

    /// Moves every unfinished particle to time t (t must not decrease).
    void advance_to(double t);

    double time() const { return time_; }
    std::span<const Point> positions() const { return positions_; }
    std::span<const ParticleStatus> status() const { return status_; }

private:
    struct CellIndex {
        std::size_t i = 0;
        std::size_t j = 0;
    };

    void advance_particle(std::size_t p, double t_target);

    const FlowField& flow_;
    double speed_floor_ = 0.0;
    double time_ = 0.0;
    std::vector<Point> positions_;
    std::vector<CellIndex> cells_;
    std::vector<ParticleStatus> status_;
};

/// Tracks and records every particle at t = 0, dt, 2 dt, ..., t_end.
ParticleEnsemble track(const FlowField& flow, std::span<const Point> start,
                       const TrackingConfig& cfg);

/// Uniform histogram grid covering [0, length] x [0, height].
struct DensityGrid {
    std::size_t nx = 1;
    std::size_t ny = 1;
    double length = 1.0;
    double height = 1.0;
};

/// Particle density on a grid, normalized so that the domain integral is 1
/// when no particle has left. Exited particles carry no mass.
Field2D histogram(std::span<const Point> positions, std::span<const ParticleStatus> status,
                  const DensityGrid& grid);

std::vector<Field2D> fine_density(const ParticleEnsemble& ensemble, const DensityGrid& grid);

struct DisplacementStats {
    double t = 0.0;
    double mean_x = 0.0;
    double msd = 0.0;  ///< <x^2> - <x>^2 over non-exited particles
    std::size_t n_active = 0;
    std::size_t n_exited = 0;
    std::size_t n_stagnant = 0;
};

DisplacementStats displacement_stats(double t, std::span<const Point> positions,
                                     std::span<const ParticleStatus> status);
std::vector<DisplacementStats> displacement_stats(const ParticleEnsemble& ensemble);

}  // namespace nlt
