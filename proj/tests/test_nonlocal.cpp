#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "nlt/error.hpp"
#include "nlt/nonlocal.hpp"

using namespace nlt;

namespace {

/// Dense copy of (A c)_i = sum_j phi_j (c_{i+j} - c_i), built from the definition.
Eigen::MatrixXd dense_operator(const DynamicKernel& k, int n)
{
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = -k.horizon_cells; j <= k.horizon_cells; ++j) {
            if (j == 0) continue;
            a(i, i) -= k.weight(j);
            if (i + j >= 0 && i + j < n) a(i, i + j) += k.weight(j);
        }
    }
    return a;
}

/// exp(t A) c for a symmetric A by eigendecomposition.
Eigen::VectorXd expm_apply(const Eigen::MatrixXd& a, double t, const Eigen::VectorXd& c)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    const Eigen::VectorXd e = (es.eigenvalues().array() * t).exp();
    return es.eigenvectors() * (e.asDiagonal() * (es.eigenvectors().transpose() * c));
}

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    double xb = 0, yb = 0;
    for (std::size_t i = 0; i < x.size(); ++i) xb += x[i], yb += y[i];
    xb /= double(x.size());
    yb /= double(x.size());
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (x[i] - xb) * (y[i] - yb);
        den += (x[i] - xb) * (x[i] - xb);
    }
    return num / den;
}

const std::vector<double> kSmallKernel{0.04, 0.02, 0.005, 0.0025};

}  // namespace

TEST_CASE("operator assembly")
{
    DynamicKernel zero = DynamicKernel::symmetric(std::vector<double>{0.0, 0.0}, 0.0, 1.0);
    const auto a0 = assemble_operator(zero, 10);
    for (std::size_t r = 0; r < 10; ++r)
        for (std::size_t c = 0; c < 10; ++c) CHECK(a0(r, c) == 0.0);

    const auto lap = assemble_operator(DynamicKernel::symmetric(std::vector<double>{1.0}, 0.0, 1.0), 8);
    for (std::size_t r = 1; r < 7; ++r) {
        CHECK(lap(r, r - 1) == 1.0);
        CHECK(lap(r, r) == -2.0);
        CHECK(lap(r, r + 1) == 1.0);
    }

    DynamicKernel k;
    k.horizon_cells = 3;
    k.phi = {0.3, 0.0, 1.1, 7.0, 0.2, 0.5, 0.9};
    k.cell_width = 0.5;
    const int n = 12;
    const auto a = assemble_operator(k, n);
    const auto ref = dense_operator(k, n);
    for (int r = 0; r < n; ++r) {
        double row = 0.0;
        for (int c = 0; c < n; ++c) {
            CHECK(a(std::size_t(r), std::size_t(c)) == ref(r, c));
            row += a(std::size_t(r), std::size_t(c));
        }
        if (r >= 3 && r < n - 3) CHECK(row == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
        else CHECK(row < 0.0);
    }
    CHECK_THROWS_AS(assemble_operator(k, 6), ConfigError);
    k.phi[1] = -0.1;
    CHECK_THROWS_AS(assemble_operator(k, 12), ConfigError);
}

TEST_CASE("kernel moments")
{
    DynamicKernel k;
    k.horizon_cells = 2;
    k.phi = {0.1, 0.4, 9.0, 0.3, 0.2};
    k.cell_width = 2.0;
    CHECK(k.moment(0) == doctest::Approx(1.0));
    CHECK(k.first_moment() == doctest::Approx(-0.2 - 0.4 + 0.3 + 0.4));
    CHECK(k.moment(2) == doctest::Approx(0.4 + 0.4 + 0.3 + 0.8));
    CHECK(k.msd_rate() == doctest::Approx(4.0 * 1.9));
    CHECK(k.horizon() == 4.0);
    const auto s = DynamicKernel::symmetric(kSmallKernel, 1.2, 0.5);
    CHECK(s.first_moment() == 0.0);
}

TEST_CASE("step coefficient: fully implicit, averaged first step")
{
    CHECK(step_coefficient(0.0, 0.1, 0.1) == 1.0);
    CHECK(step_coefficient(0.7, 0.5, 0.1) == std::pow(0.5, 0.7));
    CHECK(step_coefficient(-0.5, 0.1, 0.1) == doctest::Approx(std::pow(0.1, -0.5) / 0.5));
    CHECK_THROWS_AS(step_coefficient(-1.0, 0.1, 0.1), NumericalError);
    CHECK(step_coefficient(-1.5, 0.3, 0.1) == std::pow(0.3, -1.5));
    for (double p : {-0.4, 0.0, 1.2}) {
        for (double t : {0.1, 0.7}) {
            const double h = 1e-6;
            const double fd = (step_coefficient(p + h, t, 0.1) - step_coefficient(p - h, t, 0.1)) / (2 * h);
            CHECK(step_coefficient_dp(p, t, 0.1) == doctest::Approx(fd).epsilon(1e-7));
        }
    }
}

TEST_CASE("implicit step: identity for zero kernel, mass and sign")
{
    const auto zero = DynamicKernel::symmetric(std::vector<double>{0.0, 0.0}, 0.5, 1.0);
    const auto c0 = spike(9, 5, 1.0);
    CHECK(step_implicit(c0, zero, 0.3, 0.1) == c0);

    const auto k = DynamicKernel::symmetric(kSmallKernel, 0.8, 1.0);
    const auto sol = solve(k, spike(30, 4), 0.1, 400);
    double previous = 1.0;
    for (const auto& row : sol.values) {
        double mass = 0.0;
        for (double v : row) {
            CHECK(v >= 0.0);
            mass += v;
        }
        CHECK(mass <= previous + 1e-14);
        previous = mass;
    }
    CHECK(previous < 0.999);  // mass reached the absorbing collar
}

TEST_CASE("implicit Euler converges to the matrix exponential at first order")
{
    const int n = 16;
    const auto k = DynamicKernel::symmetric(std::vector<double>{0.5, 0.2}, 0.0, 1.0);
    const auto a = dense_operator(k, n);
    std::vector<double> c0(n, 0.0);
    c0[5] = 1.0;
    c0[6] = 0.5;
    const double t_end = 2.0;
    const Eigen::VectorXd exact = expm_apply(a, t_end, Eigen::Map<const Eigen::VectorXd>(c0.data(), n));

    std::vector<double> errors;
    for (int steps : {20, 40, 80, 160}) {
        const auto sol = solve(k, c0, t_end / steps, std::size_t(steps));
        double err = 0.0;
        for (int i = 0; i < n; ++i) err = std::max(err, std::abs(sol.values.back()[std::size_t(i)] - exact[i]));
        errors.push_back(err);
    }
    for (std::size_t r = 1; r < errors.size(); ++r) {
        const double ratio = errors[r - 1] / errors[r];
        MESSAGE("error ratio " << ratio);
        CHECK(ratio >= 1.8);
        CHECK(ratio <= 2.2);
    }

    // single step is second order locally
    const auto one = step_implicit(c0, k, 0.01, 0.01);
    const Eigen::VectorXd e1 = expm_apply(a, 0.01, Eigen::Map<const Eigen::VectorXd>(c0.data(), n));
    const auto half = step_implicit(c0, k, 0.005, 0.005);
    const Eigen::VectorXd e2 = expm_apply(a, 0.005, Eigen::Map<const Eigen::VectorXd>(c0.data(), n));
    double d1 = 0, d2 = 0;
    for (int i = 0; i < n; ++i) {
        d1 = std::max(d1, std::abs(one[std::size_t(i)] - e1[i]));
        d2 = std::max(d2, std::abs(half[std::size_t(i)] - e2[i]));
    }
    CHECK(d1 / d2 == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("symmetric kernel: mirror symmetry and fixed center of mass")
{
    const int n = 81;
    const auto k = DynamicKernel::symmetric(kSmallKernel, 1.2, 0.5);
    const auto sol = solve(k, spike(n, 41), 0.1, 300);
    const double l = n * k.cell_width;
    const double center = 40.5 * k.cell_width;
    for (const auto& row : sol.values) {
        for (int d = 1; d <= 40; ++d)
            CHECK(std::abs(row[std::size_t(40 - d)] - row[std::size_t(40 + d)]) <= 1e-12);
        const auto m = profile_moments(row, k.cell_width);
        CHECK(std::abs(m.mean - center) <= 1e-8 * l);
    }
}

TEST_CASE("asymmetric kernel with zero drift keeps the mean")
{
    DynamicKernel k;
    k.horizon_cells = 2;
    k.phi = {0.01, 0.0, 0.0, 0.02, 0.0};  // -2*0.01 + 1*0.02 = 0
    k.cell_width = 1.0;
    k.p = 0.5;
    CHECK(k.first_moment() == 0.0);
    const auto sol = solve(k, spike(120, 60), 0.1, 400);
    const auto m0 = profile_moments(sol.values.front(), 1.0);
    for (const auto& row : sol.values) {
        const auto m = profile_moments(row, 1.0);
        CHECK(std::abs(m.mean - m0.mean) <= 1e-8 * m0.mean);
    }
}

TEST_CASE("MSD grows at the rate t^p sum phi_j (j l1)^2")
{
    const int n = 201;
    const double dt = 0.05;
    for (double p : {0.0, 0.6}) {
        const auto k = DynamicKernel::symmetric(kSmallKernel, p, 0.5);
        const auto sol = solve(k, spike(n, 101), dt, 800);
        for (std::size_t s : {100u, 400u, 700u}) {
            const double fd = (profile_moments(sol.values[s + 1], k.cell_width).msd -
                               profile_moments(sol.values[s - 1], k.cell_width).msd) / (2 * dt);
            const double rate = std::pow(sol.times[s], p) * k.msd_rate();
            CHECK(fd == doctest::Approx(rate).epsilon(0.01));
        }
        if (p == 0.0) {
            // affine in t with slope sum phi_j (j l1)^2
            std::vector<double> t, msd;
            for (std::size_t s = 0; s < sol.times.size(); ++s) {
                t.push_back(sol.times[s]);
                msd.push_back(profile_moments(sol.values[s], k.cell_width).msd);
            }
            CHECK(least_squares_slope(t, msd) == doctest::Approx(k.msd_rate()).epsilon(0.01));
        }
    }
}

TEST_CASE("p = 1.2 kernel: MSD follows t^2.2")
{
    const int n = 481;
    const auto k = DynamicKernel::symmetric(kSmallKernel, 1.2, 0.5);
    const auto sol = solve(k, spike(n, 241), 0.05, 1200);
    std::vector<double> lt, lm;
    for (std::size_t s = 120; s < sol.times.size(); s += 10) {
        lt.push_back(std::log(sol.times[s]));
        lm.push_back(std::log(profile_moments(sol.values[s], k.cell_width).msd));
    }
    const double back = profile_moments(sol.values.back(), k.cell_width).mass;
    CHECK(back > 1.0 - 1e-6);  // mass still interior
    const double slope = least_squares_slope(lt, lm);
    MESSAGE("log-log slope " << slope);
    CHECK(slope == doctest::Approx(2.2).epsilon(0.02));
}

TEST_CASE("model breakthrough curves")
{
    const auto zero = DynamicKernel::symmetric(std::vector<double>{0.0}, 0.0, 1.0);
    const auto sol = solve(zero, spike(10, 7), 0.1, 5);
    const std::vector<double> where{6.5, 2.5};
    const auto btc = model_btc(sol, where);
    for (double v : btc[0].values) CHECK(v == 1.0);
    for (double v : btc[1].values) CHECK(v == 0.0);

    const auto k = DynamicKernel::symmetric(kSmallKernel, 0.3, 1.0);
    const auto sol2 = solve(k, spike(20, 7), 0.1, 30);
    const std::vector<double> at{8.2};
    const auto b = model_btc(sol2, at);
    for (std::size_t s = 0; s < sol2.values.size(); ++s) CHECK(b[0].values[s] == sol2.values[s][8]);
    CHECK(b[0].times == sol2.times);
    const std::vector<double> outside{25.0};
    CHECK_THROWS_AS(model_btc(sol2, outside), ConfigError);
}

TEST_CASE("kernel JSON round trip")
{
    DynamicKernel k;
    k.horizon_cells = 2;
    k.phi = {0.1, 0.123456789012345, 0.0, 1e-300, 3.5};
    k.p = 1.104;
    k.cell_width = std::sqrt(3.0) / 3.0;
    const auto text = kernel_to_json(k).dump();
    const auto back = kernel_from_json(nlohmann::json::parse(text));
    CHECK(back.phi == k.phi);
    CHECK(back.p == k.p);
    CHECK(back.horizon_cells == k.horizon_cells);
    CHECK(back.cell_width == k.cell_width);
    CHECK_THROWS_AS(kernel_from_json(nlohmann::json::parse(R"({"phi":[1,2,3]})")), ConfigError);
    CHECK_THROWS_AS(kernel_from_json(nlohmann::json::parse(R"({"phi":[1,2],"p":0,"N_delta":1,"l1":1})")),
                    ConfigError);
}
