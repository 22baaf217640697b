#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "nlt/error.hpp"
#include "nlt/flow.hpp"
#include "nlt/tracking.hpp"

using namespace nlt;

namespace {

/// Hand-built field with constant vx on every x-face and vy = 0.
FlowField uniform_flow(std::size_t nx, std::size_t ny, int cells, double l1, double vx)
{
    FlowField f;
    f.grid_nx = nx;
    f.grid_ny = ny;
    f.num_cells = cells;
    f.cell_width = l1;
    f.height = 1.0;
    f.face_velocity_x = Field2D(nx + 1, ny, vx);
    f.face_velocity_y = Field2D(nx, ny + 1, 0.0);
    f.head = Field2D(nx, ny, 0.0);
    return f;
}

MediumSpec paper_medium(int cells)
{
    MediumSpec s;
    s.num_cells = cells;
    s.head_left = 60.0 * cells / 220.0;
    return s;
}

/// Asymptotic Kolmogorov distribution tail, P(D_n > d).
double ks_p_value(std::vector<double> u)
{
    std::sort(u.begin(), u.end());
    const double n = double(u.size());
    double d = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        d = std::max({d, (double(i) + 1.0) / n - u[i], u[i] - double(i) / n});
    const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k)
        p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    return std::clamp(p, 0.0, 1.0);
}

}  // namespace

TEST_CASE("uniform flow: straight-line trajectories across many cells")
{
    const double vx = 0.7;
    const auto flow = uniform_flow(40, 4, 4, 0.5, vx);
    const std::vector<Point> start{{0.013, 0.2}, {0.4, 0.77}, {1.0, 0.5}, {0.0, 0.0}};
    Tracker tr(flow, start);
    for (double t : {0.1, 0.35, 1.0, 1.4}) {
        tr.advance_to(t);
        for (std::size_t p = 0; p < start.size(); ++p) {
            CHECK(std::abs(tr.positions()[p].x - (start[p].x + vx * t)) <= 1e-12);
            CHECK(tr.positions()[p].y == start[p].y);
            CHECK(tr.status()[p] == ParticleStatus::active);
        }
    }
    tr.advance_to(10.0);
    for (std::size_t p = 0; p < start.size(); ++p) {
        CHECK(tr.status()[p] == ParticleStatus::exited);
        CHECK(tr.positions()[p].x == flow.length());
    }
}

TEST_CASE("Pollock exit time matches the logarithmic closed form")
{
    const double dx = 0.3, v0 = 0.5, v1 = 2.0;
    auto flow = uniform_flow(1, 1, 1, dx, 0.0);
    flow.face_velocity_x(0, 0) = v0;
    flow.face_velocity_x(1, 0) = v1;
    // oracle: dx/dt = v0 + (v1 - v0) x / dx from x = 0
    const double t_exit = dx / (v1 - v0) * std::log(v1 / v0);
    const double a = (v1 - v0) / dx;

    const std::vector<Point> start{{0.0, 0.5}};
    Tracker tr(flow, start);
    tr.advance_to(0.5 * t_exit);
    CHECK(std::abs(tr.positions()[0].x - v0 * std::expm1(a * 0.5 * t_exit) / a) <= 1e-12);
    tr.advance_to(t_exit * (1.0 - 1e-11));
    CHECK(tr.status()[0] == ParticleStatus::active);
    CHECK(std::abs(tr.positions()[0].x - dx) <= 1e-10);
    tr.advance_to(t_exit * (1.0 + 1e-11));
    CHECK(tr.status()[0] == ParticleStatus::exited);

    // the same formula applies cell by cell on a two-cell grid
    auto two = uniform_flow(2, 1, 1, 2 * dx, 0.0);
    two.face_velocity_x(0, 0) = v0;
    two.face_velocity_x(1, 0) = v1;
    two.face_velocity_x(2, 0) = v1;
    Tracker tr2(two, start);
    const double t_total = t_exit + dx / v1;
    tr2.advance_to(t_total * (1.0 - 1e-11));
    CHECK(tr2.status()[0] == ParticleStatus::active);
    tr2.advance_to(t_total * (1.0 + 1e-11));
    CHECK(tr2.status()[0] == ParticleStatus::exited);
}

TEST_CASE("stagnant cell flags the particle instead of aborting")
{
    auto flow = uniform_flow(3, 1, 1, 0.9, 1.0);
    flow.face_velocity_x(1, 0) = 0.0;
    flow.face_velocity_x(2, 0) = 0.0;
    const std::vector<Point> start{{0.45, 0.5}, {0.1, 0.5}};
    Tracker tr(flow, start);
    tr.advance_to(5.0);
    CHECK(tr.status()[0] == ParticleStatus::stagnant);
    // a particle flowing into a zero-velocity face never reaches it
    CHECK(tr.status()[1] == ParticleStatus::active);
    CHECK(tr.positions()[1].x < 0.3);
}

TEST_CASE("start positions outside the domain are rejected")
{
    const auto flow = uniform_flow(4, 2, 1, 1.0, 1.0);
    const std::vector<Point> bad{{-0.1, 0.5}};
    CHECK_THROWS_AS(Tracker(flow, bad), ConfigError);
    TrackingConfig cfg;
    cfg.injection_cell = 2;
    CHECK_THROWS_AS(inject(flow, cfg), ConfigError);
}

TEST_CASE("injection in homogeneous flow is uniform in the cell")
{
    auto spec = paper_medium(3);
    spec.kappa_inclusion = spec.kappa_matrix;
    const auto flow = solve_darcy(build_conductivity(spec, 30, 10), spec);
    TrackingConfig cfg;
    cfg.injection_cell = 2;
    cfg.num_particles = 10000;
    const auto pts = inject(flow, cfg);
    REQUIRE(pts.size() == cfg.num_particles);
    std::vector<double> ux, uy;
    for (const auto& p : pts) {
        ux.push_back((p.x - spec.cell_width) / spec.cell_width);
        uy.push_back(p.y / spec.layer_height);
    }
    CHECK(*std::min_element(ux.begin(), ux.end()) >= 0.0);
    CHECK(*std::max_element(ux.begin(), ux.end()) <= 1.0);
    CHECK(ks_p_value(ux) > 0.01);
    CHECK(ks_p_value(uy) > 0.01);
}

TEST_CASE("injection fraction inside the inclusion follows the flux")
{
    const auto spec = paper_medium(3);
    const std::size_t cpc = 20, ny = 36;
    const auto kappa = build_conductivity(spec, 3 * cpc, ny);
    const auto flow = solve_darcy(kappa, spec);
    TrackingConfig cfg;
    cfg.injection_cell = 2;
    cfg.num_particles = 20000;
    const auto pts = inject(flow, cfg);

    // oracle: midpoint quadrature of the face-interpolated speed
    const double dx = flow.dx(), dy = flow.dy();
    const int sub = 8;
    double in_int = 0.0, all_int = 0.0;
    for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t i = cpc; i < 2 * cpc; ++i) {
            double s = 0.0;
            for (int a = 0; a < sub; ++a) {
                for (int b = 0; b < sub; ++b) {
                    const double fx = (a + 0.5) / sub, fy = (b + 0.5) / sub;
                    const double vx = (1 - fx) * flow.face_velocity_x(i, j) + fx * flow.face_velocity_x(i + 1, j);
                    const double vy = (1 - fy) * flow.face_velocity_y(i, j) + fy * flow.face_velocity_y(i, j + 1);
                    s += std::hypot(vx, vy);
                }
            }
            all_int += s;
            if (kappa(i, j) < spec.kappa_matrix) in_int += s;
        }
    }
    const double expected = in_int / all_int;
    std::size_t inside = 0;
    for (const auto& p : pts) {
        const auto i = static_cast<std::size_t>(p.x / dx);
        const auto j = static_cast<std::size_t>(p.y / dy);
        if (kappa(i, j) < spec.kappa_matrix) ++inside;
    }
    const double n = double(pts.size());
    const double observed = double(inside) / n;
    const double sigma = std::sqrt(expected * (1.0 - expected) / n);
    MESSAGE("inclusion fraction " << observed << " expected " << expected);
    CHECK(expected > 0.0);
    CHECK(std::abs(observed - expected) <= 3.0 * sigma);
}

TEST_CASE("tracking on the heterogeneous layer: walls, accounting, determinism")
{
    const auto spec = paper_medium(6);
    const auto flow = solve_darcy(build_conductivity(spec, 60, 20), spec);
    TrackingConfig cfg;
    cfg.injection_cell = 1;
    cfg.num_particles = 400;
    cfg.dt = 0.5;
    cfg.t_end = 20.0;
    const auto start = inject(flow, cfg);
    const auto ens = track(flow, start, cfg);
    REQUIRE(ens.snapshot_times.size() == cfg.num_steps() + 1);

    std::size_t exited_last = 0;
    for (std::size_t s = 0; s < ens.snapshot_times.size(); ++s) {
        CHECK(ens.snapshot_times[s] == double(s) * cfg.dt);
        for (const auto& p : ens.positions[s]) {
            CHECK(p.y >= 0.0);
            CHECK(p.y <= spec.layer_height);
            CHECK(p.x >= 0.0);
            CHECK(p.x <= spec.length());
        }
        const auto st = displacement_stats(ens.snapshot_times[s], ens.positions[s], ens.status[s]);
        CHECK(st.n_active + st.n_exited + st.n_stagnant == cfg.num_particles);
        CHECK(st.n_exited >= exited_last);
        exited_last = st.n_exited;
    }
    CHECK(exited_last > 0);  // some particles reach the outlet in this short layer

    const auto again = track(flow, inject(flow, cfg), cfg);
    CHECK(again.positions == ens.positions);
    CHECK(again.status == ens.status);

    auto other = cfg;
    other.rng_seed = 2;
    CHECK(inject(flow, other) != start);
}

TEST_CASE("snapshot interval does not change positions")
{
    const auto spec = paper_medium(4);
    const auto flow = solve_darcy(build_conductivity(spec, 40, 16), spec);
    TrackingConfig cfg;
    cfg.injection_cell = 1;
    cfg.num_particles = 200;
    cfg.dt = 0.4;
    cfg.t_end = 8.0;
    const auto start = inject(flow, cfg);
    const auto coarse = track(flow, start, cfg);
    auto fine_cfg = cfg;
    fine_cfg.dt = 0.2;
    const auto fine = track(flow, start, fine_cfg);
    double worst = 0.0;
    for (std::size_t s = 0; s < coarse.snapshot_times.size(); ++s) {
        for (std::size_t p = 0; p < start.size(); ++p) {
            CHECK(coarse.status[s][p] == fine.status[2 * s][p]);
            worst = std::max(worst, std::abs(coarse.positions[s][p].x - fine.positions[2 * s][p].x));
            worst = std::max(worst, std::abs(coarse.positions[s][p].y - fine.positions[2 * s][p].y));
        }
    }
    MESSAGE("largest position change " << worst);
    CHECK(worst <= 1e-10);
}

TEST_CASE("fine density: normalization, support and mass decay")
{
    const auto spec = paper_medium(4);
    const auto flow = solve_darcy(build_conductivity(spec, 40, 10), spec);
    TrackingConfig cfg;
    cfg.injection_cell = 3;
    cfg.num_particles = 1000;
    cfg.dt = 1.0;
    cfg.t_end = 30.0;
    const auto ens = track(flow, inject(flow, cfg), cfg);
    const DensityGrid grid{40, 10, spec.length(), spec.layer_height};
    const auto dens = fine_density(ens, grid);
    const double area = (spec.length() / 40.0) * (spec.layer_height / 10.0);

    double previous = 2.0;
    for (std::size_t s = 0; s < dens.size(); ++s) {
        double mass = 0.0;
        for (double v : dens[s].data()) mass += v * area;
        if (s == 0) CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(mass <= previous + 1e-12);
        previous = mass;
    }
    for (std::size_t j = 0; j < 10; ++j)
        for (std::size_t i = 0; i < 40; ++i)
            if (i < 20 || i >= 30) CHECK(dens[0](i, j) == 0.0);

    const ParticleEnsemble empty;
    CHECK_THROWS_AS(fine_density(empty, grid), ConfigError);
}

TEST_CASE("displacement statistics")
{
    const std::vector<Point> same{{1.0, 0.1}, {1.0, 0.2}, {1.0, 0.9}};
    const std::vector<ParticleStatus> act(3, ParticleStatus::active);
    const auto st = displacement_stats(0.0, same, act);
    CHECK(st.msd == 0.0);
    CHECK(st.mean_x == 1.0);

    const std::vector<Point> pts{{1.0, 0}, {2.0, 0}, {4.0, 0}, {9.0, 0}};
    const std::vector<ParticleStatus> status{ParticleStatus::active, ParticleStatus::stagnant,
                                             ParticleStatus::active, ParticleStatus::exited};
    const auto s2 = displacement_stats(1.0, pts, status);
    CHECK(s2.n_active == 2);
    CHECK(s2.n_stagnant == 1);
    CHECK(s2.n_exited == 1);
    CHECK(s2.mean_x == doctest::Approx(7.0 / 3.0));
    CHECK(s2.msd == doctest::Approx((16.0 / 9 + 1.0 / 9 + 25.0 / 9) / 3.0));

    // uniform flow moves the mean and leaves the spread alone
    const auto flow = uniform_flow(20, 2, 2, 1.0, 0.5);
    TrackingConfig cfg;
    cfg.injection_cell = 1;
    cfg.num_particles = 50;
    cfg.dt = 0.5;
    cfg.t_end = 2.0;
    const auto start = inject(flow, cfg);
    const auto stats = displacement_stats(track(flow, start, cfg));
    CHECK(stats.front().mean_x > 0.0);
    CHECK(stats.front().mean_x < 1.0);
    for (const auto& s : stats) {
        CHECK(s.mean_x == doctest::Approx(stats.front().mean_x + 0.5 * s.t).epsilon(1e-12));
        CHECK(s.msd == doctest::Approx(stats.front().msd).epsilon(1e-9));
    }
}
