#include "nlt/coarse_grain.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nlt/error.hpp"
#include "nlt/io.hpp"

namespace nlt {

int CoarseDensity::window_width(std::size_t cell) const
{
    return std::min(smoothing_cells, num_cells - static_cast<int>(cell));
}

std::vector<std::vector<double>> unit_cell_masses(std::span<const Field2D> fine,
                                                  const DensityGrid& grid, int num_cells)
{
    if (num_cells < 1 || grid.nx % static_cast<std::size_t>(num_cells) != 0)
        throw ConfigError("density grid nx must be a multiple of num_cells");
    const std::size_t per_cell = grid.nx / static_cast<std::size_t>(num_cells);
    const double area = (grid.length / double(grid.nx)) * (grid.height / double(grid.ny));
    std::vector<std::vector<double>> masses;
    masses.reserve(fine.size());
    for (const Field2D& c : fine) {
        if (c.nx() != grid.nx || c.ny() != grid.ny) throw ConfigError("density grid mismatch");
        std::vector<double> m(static_cast<std::size_t>(num_cells), 0.0);
        for (std::size_t j = 0; j < grid.ny; ++j)
            for (std::size_t i = 0; i < grid.nx; ++i) m[i / per_cell] += c(i, j) * area;
        masses.push_back(std::move(m));
    }
    return masses;
}

CoarseDensity upscale_cell_masses(const std::vector<std::vector<double>>& cell_masses,
                                  std::span<const double> times, const MediumSpec& spec, int m)
{
    if (m < 1) throw ConfigError("smoothing window m must be >= 1");
    if (m > spec.num_cells)
        throw ConfigError("smoothing window m = " + std::to_string(m) + " exceeds N = " +
                          std::to_string(spec.num_cells));
    if (cell_masses.size() != times.size()) throw ConfigError("snapshot count mismatch");

    CoarseDensity out;
    out.num_cells = spec.num_cells;
    out.smoothing_cells = m;
    out.cell_width = spec.cell_width;
    out.height = spec.layer_height;
    out.times.assign(times.begin(), times.end());
    const auto n = static_cast<std::size_t>(spec.num_cells);
    const double cell_area = spec.cell_width * spec.layer_height;

    for (const auto& masses : cell_masses) {
        if (masses.size() != n) throw ConfigError("cell mass vector has wrong length");
        std::vector<double> row(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int w = out.window_width(i);
            double sum = 0.0;
            for (int k = 0; k < w; ++k) sum += masses[i + static_cast<std::size_t>(k)];
            row[i] = sum / (double(w) * cell_area);
        }
        out.values.push_back(std::move(row));
    }
    return out;
}

CoarseDensity upscale(std::span<const Field2D> fine, const DensityGrid& grid,
                      std::span<const double> times, const MediumSpec& spec, int m)
{
    return upscale_cell_masses(unit_cell_masses(fine, grid, spec.num_cells), times, spec, m);
}

std::vector<double> recover_cell_masses(const CoarseDensity& coarse, std::size_t snapshot)
{
    const auto n = static_cast<std::size_t>(coarse.num_cells);
    const double cell_area = coarse.cell_width * coarse.height;
    std::vector<double> masses(n, 0.0);
    // Window sums S_i = M_i + ... + M_{i+w_i-1}; peel from the right edge.
    for (std::size_t r = n; r-- > 0;) {
        const int w = coarse.window_width(r);
        double tail = 0.0;
        for (int k = 1; k < w; ++k) tail += masses[r + static_cast<std::size_t>(k)];
        masses[r] = coarse.values[snapshot][r] * double(w) * cell_area - tail;
    }
    return masses;
}

double total_mass(const CoarseDensity& coarse, std::size_t snapshot)
{
    double sum = 0.0;
    for (double m : recover_cell_masses(coarse, snapshot)) sum += m;
    return sum;
}

std::size_t owning_cell(double x, int num_cells, double cell_width)
{
    const double length = num_cells * cell_width;
    if (!(x > 0.0 && x < length))
        throw ConfigError("location " + io::format_double(x) + " outside (0, " +
                          io::format_double(length) + ")");
    return std::min(static_cast<std::size_t>(num_cells - 1),
                    static_cast<std::size_t>(std::floor(x / cell_width)));
}

std::vector<BreakthroughCurve> extract_btc(const CoarseDensity& coarse,
                                           std::span<const double> locations)
{
    std::vector<BreakthroughCurve> curves;
    for (double x : locations) {
        const std::size_t cell = owning_cell(x, coarse.num_cells, coarse.cell_width);
        BreakthroughCurve c;
        c.location = x;
        c.times = coarse.times;
        c.values.reserve(coarse.times.size());
        for (const auto& row : coarse.values) c.values.push_back(row[cell]);
        curves.push_back(std::move(c));
    }
    return curves;
}

EffectiveAdvection effective_advection(const MediumSpec& spec, const FlowField& flow)
{
    const double dx = flow.dx();
    const double dy = flow.dy();
    double total = 0.0;
    double denominator = 0.0;
    for (std::size_t i = 0; i < flow.grid_nx; ++i) {
        double speed_sum = 0.0;
        double flux_sum = 0.0;
        for (std::size_t j = 0; j < flow.grid_ny; ++j) {
            const double speed = flow.center_speed(i, j);
            speed_sum += speed * dy;
            flux_sum += flow.center_vx(i, j) * speed * dy;
        }
        if (!(flux_sum > 0.0))
            throw NumericalError("degenerate unit-cell flow: column " + std::to_string(i) +
                                 " carries no forward flux");
        total += speed_sum * dx;
        denominator += speed_sum * speed_sum / flux_sum * dx;
    }
    EffectiveAdvection adv;
    adv.v_bar_cell = total / denominator;
    adv.kappa_bar_x = adv.v_bar_cell * spec.cell_width;
    adv.v_bar = spec.head_left / (double(spec.num_cells) * adv.kappa_bar_x);
    return adv;
}

double ensemble_drift(std::span<const DisplacementStats> stats)
{
    double st = 0.0, sx = 0.0, stt = 0.0, stx = 0.0;
    std::size_t n = 0;
    for (const auto& s : stats) {
        if (s.n_active + s.n_stagnant == 0) continue;
        st += s.t;
        sx += s.mean_x;
        stt += s.t * s.t;
        stx += s.t * s.mean_x;
        ++n;
    }
    if (n < 2) throw NumericalError("need at least two populated snapshots for a drift fit");
    const double dn = double(n);
    const double denom = dn * stt - st * st;
    if (denom == 0.0) throw NumericalError("degenerate snapshot times for drift fit");
    return (dn * stx - st * sx) / denom;
}

CoarseDensity shift_frame(const CoarseDensity& coarse, double v_bar)
{
    if (v_bar < 0.0) throw ConfigError("frame velocity must be non-negative");
    CoarseDensity out = coarse;
    if (v_bar == 0.0) return out;
    const auto n = static_cast<long long>(coarse.num_cells);
    for (std::size_t s = 0; s < coarse.times.size(); ++s) {
        const auto& src = coarse.values[s];
        auto sample = [&](long long k) {
            return (k < 0 || k >= n) ? 0.0 : src[static_cast<std::size_t>(k)];
        };
        // Shift in units of cells: x_d + v t maps center i to i + offset.
        const double offset = v_bar * coarse.times[s] / coarse.cell_width;
        const double base = std::floor(offset);
        const double w = offset - base;
        const auto k0 = static_cast<long long>(base);
        for (long long i = 0; i < n; ++i) {
            out.values[s][static_cast<std::size_t>(i)] =
                (1.0 - w) * sample(i + k0) + w * sample(i + k0 + 1);
        }
    }
    return out;
}

}  // namespace nlt
