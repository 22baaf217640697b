#include "doctest.h"

#include <cmath>
#include <vector>

#include "nlt/baselines.hpp"
#include "nlt/error.hpp"

using namespace nlt;

namespace {

const double kL1 = std::sqrt(3.0) / 3.0;

double slope(const std::vector<double>& x, const std::vector<double>& y)
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

}  // namespace

TEST_CASE("fractal with q = 0 is the classical model, bitwise")
{
    const auto c0 = spike(60, 20, 1.7);
    const auto a = solve_fractal(FractalParams{0.07, 0.0}, kL1, c0, 0.1, 200);
    const auto b = solve_classical(ClassicalParams{0.07}, kL1, c0, 0.1, 200);
    CHECK(a.values == b.values);
    CHECK(a.times == b.times);
}

TEST_CASE("zero diffusivity freezes the profile")
{
    const auto c0 = spike(30, 9, 2.0);
    for (const auto& row : solve_classical(ClassicalParams{0.0}, kL1, c0, 0.1, 20).values) CHECK(row == c0);
    for (const auto& row : solve_fractal(FractalParams{0.0, 0.5}, kL1, c0, 0.1, 20).values) CHECK(row == c0);
}

TEST_CASE("parameter checks")
{
    const auto c0 = spike(30, 9);
    CHECK_THROWS_AS(solve_fractal(FractalParams{0.1, 1.0}, kL1, c0, 0.1, 2), ConfigError);
    CHECK_THROWS_AS(solve_classical(ClassicalParams{-0.1}, kL1, c0, 0.1, 2), ConfigError);
    CHECK_NOTHROW(solve_fractal(FractalParams{0.1, 0.9}, kL1, c0, 0.1, 2));
}

TEST_CASE("classical model: Gaussian heat kernel variance, mass and sign")
{
    const double d0 = 0.1, dt = 0.1;
    const auto sol = solve_classical(ClassicalParams{d0}, kL1, spike(220, 110), dt, 360);
    REQUIRE(sol.times.back() == doctest::Approx(36.0));
    const auto m = profile_moments(sol.values.back(), kL1);
    const double expected = 2.0 * d0 * 36.0;
    MESSAGE("variance " << m.msd << " heat kernel " << expected);
    CHECK(std::abs(m.msd - expected) / expected < 0.02);

    // second check against the Gaussian itself, cell by cell
    const double center = 109.5 * kL1;
    double worst = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < 220; ++i) {
        const double x = (double(i) + 0.5) * kL1 - center;
        const double g = kL1 * std::exp(-x * x / (2 * expected)) / std::sqrt(2 * M_PI * expected);
        worst = std::max(worst, std::abs(sol.values.back()[i] - g));
        peak = std::max(peak, g);
    }
    CHECK(worst < 0.02 * peak);

    std::vector<double> t, msd;
    double previous = 1.0;
    for (std::size_t s = 0; s < sol.values.size(); ++s) {
        double mass = 0.0;
        for (double v : sol.values[s]) {
            CHECK(v >= 0.0);
            mass += v;
        }
        CHECK(mass <= previous + 1e-14);
        previous = mass;
        t.push_back(sol.times[s]);
        msd.push_back(profile_moments(sol.values[s], kL1).msd);
    }
    CHECK(slope(t, msd) == doctest::Approx(2.0 * d0).epsilon(0.01));
}

TEST_CASE("fractal model: MSD grows like t^(1 - q)")
{
    for (double q : {0.3, 0.6}) {
        const auto sol = solve_fractal(FractalParams{0.2, q}, kL1, spike(300, 150), 0.05, 1400);
        std::vector<double> lt, lm;
        for (std::size_t s = 140; s < sol.times.size(); s += 10) {
            lt.push_back(std::log(sol.times[s]));
            lm.push_back(std::log(profile_moments(sol.values[s], kL1).msd));
        }
        const double fit = slope(lt, lm);
        MESSAGE("q " << q << " log-log slope " << fit);
        CHECK(fit == doctest::Approx(1.0 - q).epsilon(0.02));
    }
}

TEST_CASE("surrogate: zero weights give ln 2, output stays positive")
{
    auto net = SurrogateNet::zeros();
    CHECK(net.layer_sizes == std::vector<int>{2, 4, 4, 4, 1});
    CHECK(net.parameter_count() == 12 + 20 + 20 + 5);
    for (double x : {-5.0, 0.0, 17.0})
        for (double t : {0.0, 3.0, 1e4}) CHECK(surrogate_eval(net, x, t) == std::log(2.0));
    for (std::size_t k = 0; k < net.params.size(); ++k) net.params[k] = (k % 3 == 0) ? -4.0 : 2.5;
    for (double x : {-50.0, 0.0, 50.0})
        for (double t : {-10.0, 100.0}) CHECK(surrogate_eval(net, x, t) > 0.0);
}

TEST_CASE("surrogate gradient matches finite differences")
{
    auto net = SurrogateNet::zeros();
    net.x_range = {0.0, 10.0};
    net.t_range = {0.0, 5.0};
    for (std::size_t k = 0; k < net.params.size(); ++k) net.params[k] = std::sin(1.7 * double(k) + 0.3);
    const std::vector<SurrogateSample> samples{{1.0, 0.5, 0.2}, {7.0, 2.0, 0.05}, {4.0, 4.5, 0.9}};
    std::vector<double> grad;
    surrogate_loss(net, samples, &grad);
    for (std::size_t k = 0; k < net.params.size(); ++k) {
        const double h = 1e-6;
        auto plus = net, minus = net;
        plus.params[k] += h;
        minus.params[k] -= h;
        const double fd = (surrogate_loss(plus, samples) - surrogate_loss(minus, samples)) / (2 * h);
        CHECK(grad[k] == doctest::Approx(fd).epsilon(1e-6).scale(1e-8));
    }
}

TEST_CASE("surrogate training: zero targets, single sample, determinism")
{
    std::vector<SurrogateSample> zeros;
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 5; ++k) zeros.push_back({double(i), 0.5 * k, 0.0});
    SurrogateTraining cfg;
    const auto net = train_surrogate(zeros, cfg);
    CHECK(surrogate_loss(net, zeros) < 1e-6);

    const std::vector<SurrogateSample> one{{3.0, 2.0, 0.37}};
    cfg.epochs = 5000;
    const auto fit = train_surrogate(one, cfg);
    CHECK(surrogate_loss(fit, one) < 1e-8);

    cfg.epochs = 300;
    cfg.batch_size = 7;
    const auto a = train_surrogate(zeros, cfg);
    const auto b = train_surrogate(zeros, cfg);
    CHECK(a.params == b.params);
    cfg.seed = 9;
    CHECK(train_surrogate(zeros, cfg).params != a.params);
}

TEST_CASE("surrogate JSON round trip")
{
    auto net = SurrogateNet::zeros();
    net.x_range = {10.0, 30.0};
    net.t_range = {0.1, 72.0};
    for (std::size_t k = 0; k < net.params.size(); ++k) net.params[k] = 0.1 * double(k) - 1.234567890123;
    const auto j = nlohmann::json::parse(surrogate_to_json(net).dump());
    CHECK(j.at("model") == "mlp");
    const auto back = surrogate_from_json(j);
    CHECK(back.params == net.params);
    CHECK(back.layer_sizes == net.layer_sizes);
    CHECK(surrogate_eval(back, 12.0, 7.0) == surrogate_eval(net, 12.0, 7.0));
    auto bad = j;
    bad["params"] = std::vector<double>{1.0};
    CHECK_THROWS_AS(surrogate_from_json(bad), ConfigError);
}
