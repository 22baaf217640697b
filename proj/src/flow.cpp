#include "nlt/flow.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nlt/error.hpp"
#include "nlt/io.hpp"

namespace nlt {

void MediumSpec::validate() const
{
    if (!(kappa_matrix > 0.0) || !(kappa_inclusion > 0.0))
        throw ConfigError("conductivities must be strictly positive");
    if (num_cells < 1) throw ConfigError("num_cells must be >= 1");
    if (!(cell_width > 0.0) || !(layer_height > 0.0))
        throw ConfigError("cell_width and layer_height must be positive");
    if (!(inclusion_fraction > 0.0) || inclusion_fraction > 1.0)
        throw ConfigError("inclusion_fraction must lie in (0, 1]");
}

double FlowField::center_vx(std::size_t i, std::size_t j) const
{
    return 0.5 * (face_velocity_x(i, j) + face_velocity_x(i + 1, j));
}

double FlowField::center_vy(std::size_t i, std::size_t j) const
{
    return 0.5 * (face_velocity_y(i, j) + face_velocity_y(i, j + 1));
}

double FlowField::center_speed(std::size_t i, std::size_t j) const
{
    return std::hypot(center_vx(i, j), center_vy(i, j));
}

double FlowField::inflow() const
{
    double q = 0.0;
    for (std::size_t j = 0; j < grid_ny; ++j) q += face_velocity_x(0, j) * dy();
    return q;
}

double FlowField::outflow() const
{
    double q = 0.0;
    for (std::size_t j = 0; j < grid_ny; ++j) q += face_velocity_x(grid_nx, j) * dy();
    return q;
}

Field2D build_conductivity(const MediumSpec& spec, std::size_t grid_nx, std::size_t grid_ny)
{
    spec.validate();
    const auto cells = static_cast<std::size_t>(spec.num_cells);
    if (grid_nx == 0 || grid_nx % cells != 0)
        throw ConfigError("grid_nx (" + std::to_string(grid_nx) +
                          ") must be a positive multiple of num_cells (" +
                          std::to_string(cells) + ")");
    if (grid_ny < 2) throw ConfigError("grid_ny must be >= 2");

    const std::size_t per_cell = grid_nx / cells;
    const double f = spec.inclusion_fraction;
    Field2D kappa(grid_nx, grid_ny, spec.kappa_matrix);

    // Distances are evaluated in integer index space so that the pattern is
    // exactly periodic in x and exactly mirror-symmetric in y.
    for (std::size_t j = 0; j < grid_ny; ++j) {
        const double ry = std::abs(2.0 * double(j) + 1.0 - double(grid_ny)) / (double(grid_ny) * f);
        for (std::size_t i = 0; i < grid_nx; ++i) {
            const std::size_t ic = i % per_cell;
            const double rx =
                std::abs(2.0 * double(ic) + 1.0 - double(per_cell)) / (double(per_cell) * f);
            if (rx + ry <= 1.0) kappa(i, j) = spec.kappa_inclusion;
        }
    }
    return kappa;
}

namespace {

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

using SpMat = Eigen::SparseMatrix<double>;

}  // namespace

FlowField solve_darcy(const Field2D& conductivity, const MediumSpec& spec,
                      const DarcySolverOptions& options)
{
    const std::size_t nx = conductivity.nx();
    const std::size_t ny = conductivity.ny();
    if (nx == 0 || ny == 0) throw ConfigError("empty conductivity field");
    for (double k : conductivity.data()) {
        if (!(k > 0.0) || !std::isfinite(k))
            throw NumericalError("singular Darcy system: conductivity must be strictly positive "
                                 "and finite (found " + io::format_double(k) + ")");
    }

    FlowField flow;
    flow.grid_nx = nx;
    flow.grid_ny = ny;
    flow.num_cells = spec.num_cells;
    flow.cell_width = spec.cell_width;
    flow.height = spec.layer_height;
    const double dx = flow.dx();
    const double dy = flow.dy();
    const double h0 = spec.head_left;

    const auto idx = [nx](std::size_t i, std::size_t j) { return static_cast<int>(j * nx + i); };
    const std::size_t n = nx * ny;

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(5 * n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));

    for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t i = 0; i < nx; ++i) {
            const int row = idx(i, j);
            const double k = conductivity(i, j);
            double diag = 0.0;
            auto couple = [&](std::size_t in, std::size_t jn, double trans) {
                diag += trans;
                triplets.emplace_back(row, idx(in, jn), -trans);
            };
            if (i > 0) couple(i - 1, j, harmonic(k, conductivity(i - 1, j)) * dy / dx);
            else {
                const double t = k * dy / (0.5 * dx);
                diag += t;
                rhs[row] += t * h0;
            }
            if (i + 1 < nx) couple(i + 1, j, harmonic(k, conductivity(i + 1, j)) * dy / dx);
            else diag += k * dy / (0.5 * dx);
            if (j > 0) couple(i, j - 1, harmonic(k, conductivity(i, j - 1)) * dx / dy);
            if (j + 1 < ny) couple(i, j + 1, harmonic(k, conductivity(i, j + 1)) * dx / dy);
            triplets.emplace_back(row, row, diag);
        }
    }

    SpMat a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    a.setFromTriplets(triplets.begin(), triplets.end());

    // The head is carried in extended precision: differences of neighbouring
    // heads lose digits, and the rounding error of a smooth double-precision
    // field is correlated, so fluxes taken from it leave a global imbalance
    // well above the per-face rounding level.
    using Ext = long double;
    std::vector<Ext> head(n, 0.0L);

    auto fill = [&] {
        flow.head = Field2D(nx, ny);
        for (std::size_t j = 0; j < ny; ++j)
            for (std::size_t i = 0; i < nx; ++i) flow.head(i, j) = static_cast<double>(head[idx(i, j)]);
        const auto at = [&](std::size_t i, std::size_t j) { return head[idx(i, j)]; };

        flow.face_velocity_x = Field2D(nx + 1, ny);
        for (std::size_t j = 0; j < ny; ++j) {
            flow.face_velocity_x(0, j) =
                static_cast<double>(-Ext(conductivity(0, j)) * (at(0, j) - h0) / (0.5L * dx));
            for (std::size_t i = 1; i < nx; ++i) {
                const Ext t = harmonic(conductivity(i - 1, j), conductivity(i, j));
                flow.face_velocity_x(i, j) = static_cast<double>(-t * (at(i, j) - at(i - 1, j)) / dx);
            }
            flow.face_velocity_x(nx, j) =
                static_cast<double>(Ext(conductivity(nx - 1, j)) * at(nx - 1, j) / (0.5L * dx));
        }
        flow.face_velocity_y = Field2D(nx, ny + 1);
        for (std::size_t j = 1; j < ny; ++j) {
            for (std::size_t i = 0; i < nx; ++i) {
                const Ext t = harmonic(conductivity(i, j - 1), conductivity(i, j));
                flow.face_velocity_y(i, j) = static_cast<double>(-t * (at(i, j) - at(i, j - 1)) / dy);
            }
        }
    };

    // Residual b - A h written as minus the net outflux of each cell, with the
    // face coefficients fill() uses. Assembling the diagonal as a rounded sum
    // of transmissibilities leaves a spurious sink proportional to the head,
    // which sums to a global imbalance well above rounding.
    auto refine_rhs = [&] {
        std::vector<Ext> net(n, 0.0L);
        const auto at = [&](std::size_t i, std::size_t j) { return head[idx(i, j)]; };
        for (std::size_t j = 0; j < ny; ++j) {
            net[idx(0, j)] += Ext(conductivity(0, j)) * (at(0, j) - h0) / (0.5L * dx) * dy;
            for (std::size_t i = 1; i < nx; ++i) {
                const Ext q = Ext(harmonic(conductivity(i - 1, j), conductivity(i, j))) *
                              (at(i - 1, j) - at(i, j)) / dx * dy;
                net[idx(i - 1, j)] += q;
                net[idx(i, j)] -= q;
            }
            net[idx(nx - 1, j)] += Ext(conductivity(nx - 1, j)) * at(nx - 1, j) / (0.5L * dx) * dy;
        }
        for (std::size_t j = 1; j < ny; ++j) {
            for (std::size_t i = 0; i < nx; ++i) {
                const Ext q = Ext(harmonic(conductivity(i, j - 1), conductivity(i, j))) *
                              (at(i, j - 1) - at(i, j)) / dy * dx;
                net[idx(i, j - 1)] += q;
                net[idx(i, j)] -= q;
            }
        }
        Eigen::VectorXd r(static_cast<Eigen::Index>(n));
        for (std::size_t k = 0; k < n; ++k) r[static_cast<Eigen::Index>(k)] = static_cast<double>(-net[k]);
        return r;
    };
    auto add = [&](const Eigen::VectorXd& c) {
        for (std::size_t k = 0; k < n; ++k) head[k] += c[static_cast<Eigen::Index>(k)];
    };
    auto conservative = [&] {
        const double imbalance = std::abs(flow.inflow() - flow.outflow()) / std::abs(flow.inflow());
        return max_relative_divergence(flow) <= 1e-12 && imbalance <= 1e-12;
    };

    if (n <= options.direct_max_unknowns) {
        Eigen::SimplicialLDLT<SpMat> ldlt(a);
        if (ldlt.info() != Eigen::Success) throw NumericalError("Darcy factorization failed");
        add(ldlt.solve(rhs));
        for (int pass = 0; pass < 6; ++pass) {
            fill();
            if (conservative()) break;
            add(ldlt.solve(refine_rhs()));
        }
    } else {
        Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper,
                                 Eigen::DiagonalPreconditioner<double>> cg(a);
        cg.setMaxIterations(static_cast<Eigen::Index>(20 * n));
        cg.setTolerance(options.relative_tolerance);
        auto cg_solve = [&](const Eigen::VectorXd& b) {
            Eigen::VectorXd x = cg.solve(b);
            if (cg.info() != Eigen::Success)
                throw NumericalError("Darcy CG did not converge: " + std::to_string(cg.iterations()) +
                                     " iterations, estimated error " + io::format_double(cg.error()));
            return x;
        };
        add(cg_solve(rhs));
        for (int pass = 0; pass < 8; ++pass) {
            fill();
            if (conservative()) break;
            add(cg_solve(refine_rhs()));
        }
    }
    fill();
    Eigen::VectorXd h(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) h[static_cast<Eigen::Index>(k)] = static_cast<double>(head[k]);
    const double residual = (a * h - rhs).norm() / std::max(rhs.norm(), 1e-300);
    if (!std::isfinite(residual) || residual > 1e3 * options.relative_tolerance + 1e-10)
        throw NumericalError("Darcy solve inaccurate: relative residual " + io::format_double(residual));
    return flow;
}

FlowField solve_unit_cell(const MediumSpec& spec, std::size_t cell_nx, std::size_t cell_ny,
                          const DarcySolverOptions& options)
{
    MediumSpec cell = spec;
    cell.num_cells = 1;
    cell.head_left = 1.0;
    return solve_darcy(build_conductivity(cell, cell_nx, cell_ny), cell, options);
}

double max_relative_divergence(const FlowField& flow)
{
    const double dx = flow.dx();
    const double dy = flow.dy();
    double total = 0.0;
    std::size_t faces = 0;
    for (double v : flow.face_velocity_x.data()) total += std::abs(v) * dy, ++faces;
    for (double v : flow.face_velocity_y.data()) total += std::abs(v) * dx, ++faces;
    const double mean_flux = total / static_cast<double>(faces);
    if (mean_flux == 0.0) return 0.0;

    double worst = 0.0;
    for (std::size_t j = 0; j < flow.grid_ny; ++j) {
        for (std::size_t i = 0; i < flow.grid_nx; ++i) {
            const double net = (flow.face_velocity_x(i + 1, j) - flow.face_velocity_x(i, j)) * dy +
                               (flow.face_velocity_y(i, j + 1) - flow.face_velocity_y(i, j)) * dx;
            worst = std::max(worst, std::abs(net));
        }
    }
    return worst / mean_flux;
}

// --- text container -------------------------------------------------------

namespace {

void write_block(std::ostream& out, const char* name, const Field2D& f)
{
    out << name << ',' << f.ny() << ',' << f.nx() << '\n';
    for (std::size_t j = 0; j < f.ny(); ++j) {
        for (std::size_t i = 0; i < f.nx(); ++i) {
            if (i) out << ',';
            out << io::format_double(f(i, j));
        }
        out << '\n';
    }
}

std::string next_line(std::istream& in, const char* what)
{
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(std::string("flow file truncated at ") + what);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

Field2D read_block(std::istream& in, const char* name, std::size_t nx, std::size_t ny)
{
    const auto header = next_line(in, name);
    const auto parts = io::split(header, ',');
    if (parts.size() != 3 || parts[0] != name)
        throw ConfigError(std::string("flow file: expected block ") + name);
    const auto rows = static_cast<std::size_t>(io::parse_int(parts[1]));
    const auto cols = static_cast<std::size_t>(io::parse_int(parts[2]));
    if (rows != ny || cols != nx) throw ConfigError(std::string("flow file: bad shape for ") + name);
    Field2D f(nx, ny);
    for (std::size_t j = 0; j < ny; ++j) {
        const auto line = next_line(in, name);
        const auto values = io::split(line, ',');
        if (values.size() != nx) throw ConfigError(std::string("flow file: bad row in ") + name);
        for (std::size_t i = 0; i < nx; ++i) f(i, j) = io::parse_double(values[i]);
    }
    return f;
}

}  // namespace

void write_flow_field(std::ostream& out, const FlowField& flow)
{
    out << "nlt_flowfield,1\n";
    out << "grid_nx,grid_ny,num_cells,l1,l2\n";
    out << flow.grid_nx << ',' << flow.grid_ny << ',' << flow.num_cells << ','
        << io::format_double(flow.cell_width) << ',' << io::format_double(flow.height) << '\n';
    write_block(out, "face_velocity_x", flow.face_velocity_x);
    write_block(out, "face_velocity_y", flow.face_velocity_y);
    write_block(out, "head", flow.head);
}

FlowField read_flow_field(std::istream& in)
{
    if (next_line(in, "magic") != "nlt_flowfield,1") throw ConfigError("not an nlt flow file");
    if (next_line(in, "header") != "grid_nx,grid_ny,num_cells,l1,l2")
        throw ConfigError("flow file: unexpected header");
    const std::string line = next_line(in, "header values");
    const auto values = io::split(line, ',');
    if (values.size() != 5) throw ConfigError("flow file: bad header values");
    FlowField flow;
    flow.grid_nx = static_cast<std::size_t>(io::parse_int(values[0]));
    flow.grid_ny = static_cast<std::size_t>(io::parse_int(values[1]));
    flow.num_cells = static_cast<int>(io::parse_int(values[2]));
    flow.cell_width = io::parse_double(values[3]);
    flow.height = io::parse_double(values[4]);
    flow.face_velocity_x = read_block(in, "face_velocity_x", flow.grid_nx + 1, flow.grid_ny);
    flow.face_velocity_y = read_block(in, "face_velocity_y", flow.grid_nx, flow.grid_ny + 1);
    flow.head = read_block(in, "head", flow.grid_nx, flow.grid_ny);
    return flow;
}

void save_flow_field(const std::string& path, const FlowField& flow)
{
    std::ostringstream ss;
    write_flow_field(ss, flow);
    io::write_file(path, ss.str());
}

FlowField load_flow_field(const std::string& path)
{
    std::istringstream ss(io::read_file(path));
    return read_flow_field(ss);
}

}  // namespace nlt
