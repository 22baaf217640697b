#include "nlt/nonlocal.hpp"

#include <cmath>
#include <string>

#include "nlt/error.hpp"
#include "nlt/io.hpp"

namespace nlt {

double DynamicKernel::moment(int order) const
{
    // Pairing +j with -j makes odd moments of symmetric kernels exactly zero.
    const double sign = (order % 2 == 0) ? 1.0 : -1.0;
    double sum = 0.0;
    for (int j = 1; j <= horizon_cells; ++j)
        sum += std::pow(double(j), order) * (weight(j) + sign * weight(-j));
    return sum;
}

double DynamicKernel::msd_rate() const
{
    return moment(2) * cell_width * cell_width;
}

void DynamicKernel::validate() const
{
    if (horizon_cells < 1) throw ConfigError("kernel horizon must be >= 1 cell");
    if (phi.size() != static_cast<std::size_t>(2 * horizon_cells + 1))
        throw ConfigError("kernel must have 2 Nd + 1 weights");
    if (!(cell_width > 0.0)) throw ConfigError("kernel cell width must be positive");
    for (double w : phi) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("kernel weights must be finite and >= 0");
    }
    if (!std::isfinite(p)) throw ConfigError("kernel exponent must be finite");
}

DynamicKernel DynamicKernel::symmetric(std::span<const double> one_sided, double p, double cell_width)
{
    DynamicKernel k;
    k.horizon_cells = static_cast<int>(one_sided.size());
    k.phi.assign(2 * one_sided.size() + 1, 0.0);
    k.p = p;
    k.cell_width = cell_width;
    for (int j = 1; j <= k.horizon_cells; ++j) {
        k.weight(j) = one_sided[static_cast<std::size_t>(j - 1)];
        k.weight(-j) = one_sided[static_cast<std::size_t>(j - 1)];
    }
    return k;
}

BandedMatrix assemble_operator(const DynamicKernel& kernel, int num_cells)
{
    kernel.validate();
    if (num_cells <= 2 * kernel.horizon_cells)
        throw ConfigError("N = " + std::to_string(num_cells) + " too small for horizon " +
                          std::to_string(kernel.horizon_cells));
    const auto n = static_cast<std::ptrdiff_t>(num_cells);
    const int hb = kernel.horizon_cells;
    BandedMatrix a(static_cast<std::size_t>(num_cells), static_cast<std::size_t>(hb));
    double total = 0.0;
    for (int j = -hb; j <= hb; ++j)
        if (j != 0) total += kernel.weight(j);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        a.at(static_cast<std::size_t>(i), 0) = -total;
        for (int j = -hb; j <= hb; ++j) {
            if (j == 0) continue;
            if (i + j < 0 || i + j >= n) continue;  // collar value is zero
            a.at(static_cast<std::size_t>(i), j) = kernel.weight(j);
        }
    }
    return a;
}

bool is_first_step(double t_next, double dt)
{
    return t_next - dt <= 0.5 * dt;
}

double step_coefficient(double p, double t_next, double dt)
{
    if (is_first_step(t_next, dt)) {
        if (!(p > -1.0))
            throw NumericalError("time factor t^p not integrable at t = 0 for p = " + io::format_double(p));
        return std::pow(dt, p) / (p + 1.0);
    }
    return std::pow(t_next, p);
}

double step_coefficient_dp(double p, double t_next, double dt)
{
    if (is_first_step(t_next, dt)) {
        const double base = std::pow(dt, p);
        return base * std::log(dt) / (p + 1.0) - base / ((p + 1.0) * (p + 1.0));
    }
    return std::pow(t_next, p) * std::log(t_next);
}

BandedMatrix step_matrix(const BandedMatrix& op, double dt, double theta)
{
    BandedMatrix m = op;
    const auto hb = static_cast<std::ptrdiff_t>(op.half_bandwidth());
    const double scale = -dt * theta;
    for (std::size_t i = 0; i < op.size(); ++i) {
        for (std::ptrdiff_t d = -hb; d <= hb; ++d) m.at(i, d) *= scale;
        m.at(i, 0) += 1.0;
    }
    return m;
}

std::vector<double> step_implicit(std::span<const double> c, const DynamicKernel& kernel,
                                  double t_next, double dt)
{
    if (!(dt > 0.0) || !(t_next > 0.0)) throw ConfigError("step needs dt > 0 and t_next > 0");
    const auto op = assemble_operator(kernel, static_cast<int>(c.size()));
    const BandedLU lu(step_matrix(op, dt, step_coefficient(kernel.p, t_next, dt)));
    std::vector<double> next(c.begin(), c.end());
    lu.solve(next);
    return next;
}

std::vector<double> spike(int num_cells, int cell, double amplitude)
{
    if (cell < 1 || cell > num_cells) throw ConfigError("spike cell outside [1, N]");
    std::vector<double> c(static_cast<std::size_t>(num_cells), 0.0);
    c[static_cast<std::size_t>(cell - 1)] = amplitude;
    return c;
}

NonlocalSolution solve(const DynamicKernel& kernel, std::span<const double> initial, double dt,
                       std::size_t steps)
{
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    const auto op = assemble_operator(kernel, static_cast<int>(initial.size()));
    NonlocalSolution sol;
    sol.dt = dt;
    sol.cell_width = kernel.cell_width;
    sol.times.reserve(steps + 1);
    sol.values.reserve(steps + 1);
    sol.times.push_back(0.0);
    sol.values.emplace_back(initial.begin(), initial.end());

    // Every step after the first shares the same factor when p = 0.
    BandedLU constant_lu;
    const bool constant = kernel.p == 0.0;
    if (constant) constant_lu = BandedLU(step_matrix(op, dt, 1.0));

    for (std::size_t n = 1; n <= steps; ++n) {
        const double t = double(n) * dt;
        std::vector<double> c = sol.values.back();
        if (constant) {
            constant_lu.solve(c);
        } else {
            BandedLU(step_matrix(op, dt, step_coefficient(kernel.p, t, dt))).solve(c);
        }
        sol.times.push_back(t);
        sol.values.push_back(std::move(c));
    }
    return sol;
}

std::vector<BreakthroughCurve> model_btc(const NonlocalSolution& solution,
                                         std::span<const double> locations)
{
    const int n = static_cast<int>(solution.values.front().size());
    std::vector<BreakthroughCurve> curves;
    for (double x : locations) {
        const std::size_t cell = owning_cell(x, n, solution.cell_width);
        BreakthroughCurve c;
        c.location = x;
        c.times = solution.times;
        c.values.reserve(solution.values.size());
        for (const auto& row : solution.values) c.values.push_back(row[cell]);
        curves.push_back(std::move(c));
    }
    return curves;
}

ProfileMoments profile_moments(std::span<const double> c, double cell_width)
{
    ProfileMoments m;
    double first = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        m.mass += c[i];
        first += c[i] * (double(i) + 0.5) * cell_width;
    }
    if (m.mass == 0.0) return m;
    m.mean = first / m.mass;
    double second = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double d = (double(i) + 0.5) * cell_width - m.mean;
        second += c[i] * d * d;
    }
    m.msd = second / m.mass;
    return m;
}

nlohmann::json kernel_to_json(const DynamicKernel& kernel)
{
    return {{"phi", kernel.phi}, {"p", kernel.p}, {"N_delta", kernel.horizon_cells}, {"l1", kernel.cell_width}};
}

DynamicKernel kernel_from_json(const nlohmann::json& j)
{
    DynamicKernel k;
    try {
        k.phi = j.at("phi").get<std::vector<double>>();
        k.p = j.at("p").get<double>();
        k.horizon_cells = j.at("N_delta").get<int>();
        k.cell_width = j.at("l1").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad kernel record: ") + e.what());
    }
    k.validate();
    return k;
}

}  // namespace nlt
