#include "nlt/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "nlt/error.hpp"

namespace nlt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Per-axis linear velocity on [lo, lo + width]: v(s) = v_lo + slope (s - lo).
struct Axis {
    double lo;
    double width;
    double v_lo;
    double v_hi;
    double slope() const { return (v_hi - v_lo) / width; }
    double velocity(double s) const { return v_lo + slope() * (s - lo); }
};

/// Position after time tau starting at s with local velocity v.
double advance(double s, double v, double slope, double tau)
{
    if (slope == 0.0) return s + v * tau;
    return s + v * std::expm1(slope * tau) / slope;
}

/// Time to reach a face, or +inf when the flow stagnates before reaching it.
double exit_time(const Axis& ax, double s, double v)
{
    const double a = ax.slope();
    double dist = 0.0;
    if (v > 0.0) {
        if (ax.v_hi <= 0.0) return kInf;
        dist = ax.lo + ax.width - s;
    } else if (v < 0.0) {
        if (ax.v_lo >= 0.0) return kInf;
        dist = ax.lo - s;
    } else {
        return kInf;
    }
    if (a == 0.0) return std::max(0.0, dist / v);
    // v(t) = v exp(a t) reaches v + a dist; log1p keeps this accurate for small a.
    return std::max(0.0, std::log1p(a * dist / v) / a);
}

std::uint64_t next_u64(std::mt19937_64& rng) { return rng(); }

double uniform01(std::mt19937_64& rng)
{
    return static_cast<double>(next_u64(rng) >> 11) * 0x1.0p-53;
}

}  // namespace

void TrackingConfig::validate(int num_cells) const
{
    if (injection_cell < 1 || injection_cell > num_cells)
        throw ConfigError("injection_cell must lie in [1, " + std::to_string(num_cells) + "]");
    if (num_particles < 1) throw ConfigError("num_particles must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(t_end >= dt)) throw ConfigError("t_end must be >= dt");
}

std::size_t TrackingConfig::num_steps() const
{
    return static_cast<std::size_t>(std::llround(t_end / dt));
}

Point interpolated_velocity(const FlowField& flow, Point p)
{
    const double dx = flow.dx();
    const double dy = flow.dy();
    const auto i = std::min(flow.grid_nx - 1, static_cast<std::size_t>(std::max(0.0, p.x / dx)));
    const auto j = std::min(flow.grid_ny - 1, static_cast<std::size_t>(std::max(0.0, p.y / dy)));
    const Axis ax{double(i) * dx, dx, flow.face_velocity_x(i, j), flow.face_velocity_x(i + 1, j)};
    const Axis ay{double(j) * dy, dy, flow.face_velocity_y(i, j), flow.face_velocity_y(i, j + 1)};
    return {ax.velocity(p.x), ay.velocity(p.y)};
}

std::vector<Point> inject(const FlowField& flow, const TrackingConfig& cfg)
{
    cfg.validate(flow.num_cells);
    const std::size_t per_cell = flow.columns_per_cell();
    const std::size_t i_begin = static_cast<std::size_t>(cfg.injection_cell - 1) * per_cell;
    const std::size_t i_end = i_begin + per_cell;

    // Upper bound of the interpolated speed inside C_k.
    double vmax = 0.0;
    for (std::size_t j = 0; j < flow.grid_ny; ++j) {
        for (std::size_t i = i_begin; i < i_end; ++i) {
            const double ux = std::max(std::abs(flow.face_velocity_x(i, j)),
                                       std::abs(flow.face_velocity_x(i + 1, j)));
            const double uy = std::max(std::abs(flow.face_velocity_y(i, j)),
                                       std::abs(flow.face_velocity_y(i, j + 1)));
            vmax = std::max(vmax, std::hypot(ux, uy));
        }
    }
    if (!(vmax > 0.0)) throw NumericalError("injection cell has zero velocity everywhere");

    const double x0 = double(i_begin) * flow.dx();
    const double width = flow.cell_width;
    std::vector<Point> points(cfg.num_particles);
    for (std::size_t p = 0; p < cfg.num_particles; ++p) {
        // One stream per particle keeps sampling independent of ordering.
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.rng_seed),
                          static_cast<std::uint32_t>(cfg.rng_seed >> 32),
                          static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(p >> 32)};
        std::mt19937_64 rng(seq);
        while (true) {
            const Point cand{x0 + width * uniform01(rng), flow.height * uniform01(rng)};
            const Point v = interpolated_velocity(flow, cand);
            if (uniform01(rng) * vmax < std::hypot(v.x, v.y)) {
                points[p] = cand;
                break;
            }
        }
    }
    return points;
}

Tracker::Tracker(const FlowField& flow, std::span<const Point> start)
    : flow_(flow), positions_(start.begin(), start.end()), cells_(start.size()),
      status_(start.size(), ParticleStatus::active)
{
    double total = 0.0;
    for (std::size_t j = 0; j < flow.grid_ny; ++j)
        for (std::size_t i = 0; i < flow.grid_nx; ++i) total += flow.center_speed(i, j);
    speed_floor_ = 1e-14 * total / double(flow.grid_nx * flow.grid_ny);

    const double dx = flow.dx();
    const double dy = flow.dy();
    const double length = flow.length();
    for (std::size_t p = 0; p < positions_.size(); ++p) {
        const Point q = positions_[p];
        if (!(q.x >= 0.0 && q.x <= length && q.y >= 0.0 && q.y <= flow.height))
            throw ConfigError("particle start position outside the domain");
        cells_[p].i = std::min(flow.grid_nx - 1, static_cast<std::size_t>(q.x / dx));
        cells_[p].j = std::min(flow.grid_ny - 1, static_cast<std::size_t>(q.y / dy));
        if (q.x >= length) status_[p] = ParticleStatus::exited;
    }
}

void Tracker::advance_to(double t)
{
    if (t < time_) throw ConfigError("tracker cannot move backwards in time");
    for (std::size_t p = 0; p < positions_.size(); ++p) {
        if (status_[p] == ParticleStatus::active) advance_particle(p, t);
    }
    time_ = t;
}

void Tracker::advance_particle(std::size_t p, double t_target)
{
    const double dx = flow_.dx();
    const double dy = flow_.dy();
    Point q = positions_[p];
    CellIndex c = cells_[p];
    double remaining = t_target - time_;

    while (remaining > 0.0) {
        const Axis ax{double(c.i) * dx, dx, flow_.face_velocity_x(c.i, c.j),
                      flow_.face_velocity_x(c.i + 1, c.j)};
        const Axis ay{double(c.j) * dy, dy, flow_.face_velocity_y(c.i, c.j),
                      flow_.face_velocity_y(c.i, c.j + 1)};
        const double vx = ax.velocity(q.x);
        const double vy = ay.velocity(q.y);
        if (std::hypot(vx, vy) < speed_floor_) {
            status_[p] = ParticleStatus::stagnant;
            break;
        }
        const double tx = exit_time(ax, q.x, vx);
        const double ty = exit_time(ay, q.y, vy);
        const double tau = std::min(tx, ty);

        if (tau >= remaining) {
            q.x = std::clamp(advance(q.x, vx, ax.slope(), remaining), ax.lo, ax.lo + dx);
            q.y = std::clamp(advance(q.y, vy, ay.slope(), remaining), ay.lo, ay.lo + dy);
            break;
        }

        remaining -= tau;
        if (tx <= ty) {
            q.y = std::clamp(advance(q.y, vy, ay.slope(), tau), ay.lo, ay.lo + dy);
            if (vx > 0.0) {
                q.x = ax.lo + dx;
                if (c.i + 1 == flow_.grid_nx) {
                    q.x = flow_.length();
                    status_[p] = ParticleStatus::exited;
                    break;
                }
                ++c.i;
            } else {
                q.x = ax.lo;
                if (c.i == 0) {
                    // Inflow boundary: only reachable through round-off; stay put.
                    status_[p] = ParticleStatus::stagnant;
                    break;
                }
                --c.i;
            }
        } else {
            q.x = std::clamp(advance(q.x, vx, ax.slope(), tau), ax.lo, ax.lo + dx);
            if (vy > 0.0) {
                q.y = ay.lo + dy;
                if (c.j + 1 == flow_.grid_ny) break;  // no-flow wall; cannot happen for vy = 0
                ++c.j;
            } else {
                q.y = ay.lo;
                if (c.j == 0) break;
                --c.j;
            }
        }
    }
    positions_[p] = q;
    cells_[p] = c;
}

ParticleEnsemble track(const FlowField& flow, std::span<const Point> start,
                       const TrackingConfig& cfg)
{
    cfg.validate(flow.num_cells);
    Tracker tracker(flow, start);
    ParticleEnsemble ens;
    const std::size_t steps = cfg.num_steps();
    ens.snapshot_times.reserve(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) {
        const double t = double(k) * cfg.dt;
        tracker.advance_to(t);
        ens.snapshot_times.push_back(t);
        ens.positions.emplace_back(tracker.positions().begin(), tracker.positions().end());
        ens.status.emplace_back(tracker.status().begin(), tracker.status().end());
    }
    return ens;
}

Field2D histogram(std::span<const Point> positions, std::span<const ParticleStatus> status,
                  const DensityGrid& grid)
{
    if (positions.empty()) throw ConfigError("empty particle ensemble");
    Field2D h(grid.nx, grid.ny);
    const double cell_area = (grid.length / double(grid.nx)) * (grid.height / double(grid.ny));
    const double weight = 1.0 / (double(positions.size()) * cell_area);
    for (std::size_t p = 0; p < positions.size(); ++p) {
        if (status[p] == ParticleStatus::exited) continue;
        const auto i = std::min(grid.nx - 1,
                                static_cast<std::size_t>(positions[p].x / grid.length * double(grid.nx)));
        const auto j = std::min(grid.ny - 1,
                                static_cast<std::size_t>(positions[p].y / grid.height * double(grid.ny)));
        h(i, j) += weight;
    }
    return h;
}

std::vector<Field2D> fine_density(const ParticleEnsemble& ensemble, const DensityGrid& grid)
{
    if (ensemble.num_particles() == 0) throw ConfigError("empty particle ensemble");
    std::vector<Field2D> out;
    out.reserve(ensemble.positions.size());
    for (std::size_t s = 0; s < ensemble.positions.size(); ++s)
        out.push_back(histogram(ensemble.positions[s], ensemble.status[s], grid));
    return out;
}

DisplacementStats displacement_stats(double t, std::span<const Point> positions,
                                     std::span<const ParticleStatus> status)
{
    DisplacementStats st;
    st.t = t;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < positions.size(); ++p) {
        switch (status[p]) {
        case ParticleStatus::exited: ++st.n_exited; continue;
        case ParticleStatus::stagnant: ++st.n_stagnant; break;
        case ParticleStatus::active: ++st.n_active; break;
        }
        sum += positions[p].x;
        ++n;
    }
    if (n == 0) return st;
    st.mean_x = sum / double(n);
    // Centered second pass avoids cancellation in <x^2> - <x>^2.
    double var = 0.0;
    for (std::size_t p = 0; p < positions.size(); ++p) {
        if (status[p] == ParticleStatus::exited) continue;
        const double d = positions[p].x - st.mean_x;
        var += d * d;
    }
    st.msd = var / double(n);
    return st;
}

std::vector<DisplacementStats> displacement_stats(const ParticleEnsemble& ensemble)
{
    std::vector<DisplacementStats> out;
    out.reserve(ensemble.snapshot_times.size());
    for (std::size_t s = 0; s < ensemble.snapshot_times.size(); ++s)
        out.push_back(displacement_stats(ensemble.snapshot_times[s], ensemble.positions[s],
                                         ensemble.status[s]));
    return out;
}

}  // namespace nlt
