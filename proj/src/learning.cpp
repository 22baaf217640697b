#include "nlt/learning.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "nlt/error.hpp"
#include "nlt/io.hpp"
#include "nlt/softplus.hpp"

namespace nlt {

std::string to_string(ModelKind kind)
{
    switch (kind) {
    case ModelKind::nonlocal: return "nonlocal";
    case ModelKind::fractal: return "fractal";
    case ModelKind::classical: return "classical";
    }
    return "unknown";
}

ModelKind model_kind_from_string(const std::string& name)
{
    if (name == "nonlocal") return ModelKind::nonlocal;
    if (name == "fractal") return ModelKind::fractal;
    if (name == "classical") return ModelKind::classical;
    throw ConfigError("unknown PDE model '" + name + "'");
}

void LearningProblem::validate_and_normalize()
{
    if (curves.empty()) throw ConfigError("learning problem needs at least one training curve");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (static_cast<int>(initial.size()) != num_cells)
        throw ConfigError("initial condition must have one value per cell");
    const int horizon = model == ModelKind::nonlocal ? horizon_cells : 1;
    if (horizon < 1 || num_cells <= 2 * horizon) throw ConfigError("horizon incompatible with N");
    std::stable_sort(curves.begin(), curves.end(),
                     [](const auto& a, const auto& b) { return a.location < b.location; });
    const std::size_t n = curves.front().times.size();
    if (n == 0) throw ConfigError("empty training window");
    for (const auto& c : curves) {
        owning_cell(c.location, num_cells, cell_width);
        if (c.times.size() != n || c.values.size() != n)
            throw ConfigError("training curves must share one time grid");
        for (std::size_t k = 0; k < n; ++k) {
            const double expected = double(k + 1) * dt;
            if (std::abs(c.times[k] - expected) > 1e-9 * std::max(1.0, expected))
                throw ConfigError("training curve time " + io::format_double(c.times[k]) +
                                  " is not on the solver grid t = k dt");
        }
    }
}

std::size_t LearningProblem::steps() const
{
    return curves.empty() ? 0 : curves.front().times.size();
}

std::size_t LearningProblem::parameter_count() const
{
    switch (model) {
    case ModelKind::nonlocal: return static_cast<std::size_t>(2 * horizon_cells + 2);
    case ModelKind::fractal: return 2;
    case ModelKind::classical: return 1;
    }
    return 0;
}

std::vector<double> initial_parameters(const LearningProblem& problem)
{
    const double rho = softplus_inverse(0.1);
    switch (problem.model) {
    case ModelKind::nonlocal: {
        std::vector<double> raw(problem.parameter_count(), rho);
        raw.back() = 0.0;
        return raw;
    }
    case ModelKind::fractal:
        return {softplus_inverse(0.1 * problem.cell_width * problem.cell_width), 0.0};
    case ModelKind::classical:
        return {softplus_inverse(0.1 * problem.cell_width * problem.cell_width)};
    }
    return {};
}

DynamicKernel kernel_from_raw(const LearningProblem& problem, std::span<const double> raw)
{
    if (raw.size() != problem.parameter_count()) throw ConfigError("wrong parameter count");
    switch (problem.model) {
    case ModelKind::nonlocal: {
        DynamicKernel k;
        k.horizon_cells = problem.horizon_cells;
        k.cell_width = problem.cell_width;
        k.phi.resize(raw.size() - 1);
        for (std::size_t j = 0; j < k.phi.size(); ++j) k.phi[j] = softplus(raw[j]);
        k.p = raw.back();
        return k;
    }
    case ModelKind::fractal:
        return fractal_kernel({softplus(raw[0]), raw[1]}, problem.cell_width);
    case ModelKind::classical:
        return fractal_kernel({softplus(raw[0]), 0.0}, problem.cell_width);
    }
    return {};
}

namespace {

struct KernelSensitivity {
    std::vector<double> dphi;  ///< d loss / d phi_j, j = -Nd..Nd
    double dp = 0.0;
};

std::string describe(std::span<const double> raw)
{
    std::string s = "[";
    for (std::size_t k = 0; k < raw.size(); ++k) {
        if (k) s += ", ";
        s += io::format_double(raw[k]);
    }
    return s + "]";
}

LossValue forward_and_adjoint(const LearningProblem& problem, const DynamicKernel& kernel,
                              KernelSensitivity* sens)
{
    const std::size_t steps = problem.steps();
    const double dt = problem.dt;
    const NonlocalSolution sol = solve(kernel, problem.initial, dt, steps);

    std::vector<std::size_t> cells;
    for (const auto& c : problem.curves)
        cells.push_back(owning_cell(c.location, problem.num_cells, problem.cell_width));

    LossValue value;
    for (std::size_t c = 0; c < problem.curves.size(); ++c) {
        double sum = 0.0;
        for (std::size_t k = 0; k < steps; ++k) {
            const double d = sol.values[k + 1][cells[c]] - problem.curves[c].values[k];
            sum += d * d;
        }
        value.mse += sum;
    }
    const double drift = kernel.first_moment();
    value.penalty = drift * drift;
    value.loss = value.mse + problem.beta * value.penalty;
    if (!sens) return value;

    const int hb = kernel.horizon_cells;
    const auto n = static_cast<std::ptrdiff_t>(problem.num_cells);
    sens->dphi.assign(kernel.phi.size(), 0.0);
    sens->dp = 0.0;
    for (int j = -hb; j <= hb; ++j)
        sens->dphi[static_cast<std::size_t>(j + hb)] = problem.beta * 2.0 * drift * double(j);

    const BandedMatrix op = assemble_operator(kernel, problem.num_cells);
    auto add_direct = [&](std::size_t step, std::vector<double>& lambda) {
        for (std::size_t c = 0; c < cells.size(); ++c)
            lambda[cells[c]] += 2.0 * (sol.values[step][cells[c]] - problem.curves[c].values[step - 1]);
    };

    std::vector<double> lambda(static_cast<std::size_t>(n), 0.0);
    add_direct(steps, lambda);
    std::vector<double> jump(static_cast<std::size_t>(2 * hb + 1));
    for (std::size_t s = steps; s-- > 0;) {
        const double t_next = double(s + 1) * dt;
        const double theta = step_coefficient(kernel.p, t_next, dt);
        const BandedLU lu(step_matrix(op, dt, theta));
        lu.solve_transposed(lambda);  // lambda now holds mu_s
        const auto& c1 = sol.values[s + 1];

        std::fill(jump.begin(), jump.end(), 0.0);
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const double mu = lambda[static_cast<std::size_t>(i)];
            if (mu == 0.0) continue;
            const double ci = c1[static_cast<std::size_t>(i)];
            for (int j = -hb; j <= hb; ++j) {
                const std::ptrdiff_t nb = i + j;
                const double cn = (nb < 0 || nb >= n) ? 0.0 : c1[static_cast<std::size_t>(nb)];
                jump[static_cast<std::size_t>(j + hb)] += mu * (cn - ci);
            }
        }
        double applied = 0.0;
        for (int j = -hb; j <= hb; ++j) {
            const double sj = jump[static_cast<std::size_t>(j + hb)];
            sens->dphi[static_cast<std::size_t>(j + hb)] += dt * theta * sj;
            applied += kernel.weight(j) * sj;
        }
        sens->dp += dt * step_coefficient_dp(kernel.p, t_next, dt) * applied;
        if (s > 0) add_direct(s, lambda);
    }
    return value;
}

/// sigmoid with underflow flushed to zero
double softplus_slope(double rho)
{
    const double s = sigmoid(rho);
    return s < 1e-300 ? 0.0 : s;
}

}  // namespace

LossValue evaluate_loss_and_gradient(const LearningProblem& problem, std::span<const double> raw,
                                     std::vector<double>& grad)
{
    KernelSensitivity sens;
    LossValue value;
    try {
        value = forward_and_adjoint(problem, kernel_from_raw(problem, raw), &sens);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (parameters " + describe(raw) + ")");
    }
    grad.assign(raw.size(), 0.0);
    const double l1sq = problem.cell_width * problem.cell_width;
    switch (problem.model) {
    case ModelKind::nonlocal:
        for (std::size_t j = 0; j < sens.dphi.size(); ++j) grad[j] = sens.dphi[j] * softplus_slope(raw[j]);
        grad.back() = sens.dp;
        break;
    case ModelKind::fractal:
        grad[0] = (sens.dphi[0] + sens.dphi[2]) / l1sq * softplus_slope(raw[0]);
        grad[1] = -sens.dp;
        break;
    case ModelKind::classical:
        grad[0] = (sens.dphi[0] + sens.dphi[2]) / l1sq * softplus_slope(raw[0]);
        break;
    }
    return value;
}

LossValue evaluate_loss(const LearningProblem& problem, std::span<const double> raw)
{
    try {
        return forward_and_adjoint(problem, kernel_from_raw(problem, raw), nullptr);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (parameters " + describe(raw) + ")");
    }
}

std::vector<double> gradient(const LearningProblem& problem, std::span<const double> raw)
{
    std::vector<double> g;
    evaluate_loss_and_gradient(problem, raw, g);
    return g;
}

// --- L-BFGS ------------------------------------------------------------------

namespace {

double dot(std::span<const double> a, std::span<const double> b)
{
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double max_norm(std::span<const double> v)
{
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

struct CurvaturePair {
    std::vector<double> s;
    std::vector<double> y;
    double rho;
};

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& objective, std::vector<double> x0,
                           const OptimizerSettings& settings)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    LbfgsResult res;
    res.x = std::move(x0);
    std::vector<double> g;
    res.f = objective(res.x, g);
    if (!std::isfinite(res.f)) throw NumericalError("objective is not finite at the starting point");
    res.grad_norm = max_norm(g);
    res.trace.push_back({0, res.f, res.grad_norm});

    const std::size_t n = res.x.size();
    std::deque<CurvaturePair> memory;
    std::vector<double> d(n), xn(n), gn, alpha_hist;
    int flat_iterations = 0;

    for (int it = 1; it <= settings.max_iterations; ++it) {
        if (res.grad_norm <= settings.gradient_tolerance) {
            res.converged = true;
            res.reason = "gradient tolerance";
            return res;
        }

        bool restarted = false;
        double fn = inf;
        double step = 1.0;
        while (true) {
            // Two-loop recursion for d = -H g.
            for (std::size_t k = 0; k < n; ++k) d[k] = -g[k];
            alpha_hist.assign(memory.size(), 0.0);
            for (std::size_t m = memory.size(); m-- > 0;) {
                alpha_hist[m] = memory[m].rho * dot(memory[m].s, d);
                for (std::size_t k = 0; k < n; ++k) d[k] -= alpha_hist[m] * memory[m].y[k];
            }
            if (!memory.empty()) {
                const auto& last = memory.back();
                const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
                for (double& v : d) v *= gamma;
            }
            for (std::size_t m = 0; m < memory.size(); ++m) {
                const double beta = memory[m].rho * dot(memory[m].y, d);
                for (std::size_t k = 0; k < n; ++k) d[k] += (alpha_hist[m] - beta) * memory[m].s[k];
            }
            double slope = dot(g, d);
            if (!(slope < 0.0)) {
                memory.clear();
                for (std::size_t k = 0; k < n; ++k) d[k] = -g[k];
                slope = -dot(g, g);
            }
            step = memory.empty() ? std::min(1.0, 1.0 / std::sqrt(dot(g, g))) : 1.0;
            if (settings.max_step > 0.0) step = std::min(step, settings.max_step / max_norm(d));

            bool accepted = false;
            for (int bt = 0; bt < 60; ++bt) {
                for (std::size_t k = 0; k < n; ++k) xn[k] = res.x[k] + step * d[k];
                try {
                    fn = objective(xn, gn);
                } catch (const NumericalError&) {
                    fn = inf;
                }
                if (std::isfinite(fn) && fn <= res.f + settings.armijo * step * slope) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (accepted) break;
            if (memory.empty() || restarted) {
                res.reason = "line search failed";
                return res;
            }
            memory.clear();
            restarted = true;
        }

        std::vector<double> s(n), y(n);
        for (std::size_t k = 0; k < n; ++k) {
            s[k] = xn[k] - res.x[k];
            y[k] = gn[k] - g[k];
        }
        const double sy = dot(s, y);
        if (sy > 1e-12 * std::sqrt(dot(s, s) * dot(y, y))) {
            memory.push_back({std::move(s), std::move(y), 1.0 / sy});
            if (static_cast<int>(memory.size()) > settings.history) memory.pop_front();
        }

        const double decrease = (res.f - fn) / std::max(std::abs(res.f), 1e-300);
        flat_iterations = decrease < settings.stagnation_tolerance ? flat_iterations + 1 : 0;
        res.x = xn;
        res.f = fn;
        g = gn;
        res.grad_norm = max_norm(g);
        res.iterations = it;
        res.trace.push_back({it, res.f, res.grad_norm});
        if (flat_iterations >= 5) {
            res.converged = true;
            res.reason = "loss stagnation";
            return res;
        }
    }
    res.converged = res.grad_norm <= settings.gradient_tolerance;
    res.reason = res.converged ? "gradient tolerance" : "max iterations";
    return res;
}

FitResult fit_from(const LearningProblem& input, std::vector<double> raw0)
{
    LearningProblem problem = input;
    problem.validate_and_normalize();
    Objective objective = [&problem](std::span<const double> x, std::vector<double>& g) {
        return evaluate_loss_and_gradient(problem, x, g).loss;
    };
    const LbfgsResult opt = minimize_lbfgs(objective, std::move(raw0), problem.optimizer);

    FitResult out;
    out.model = problem.model;
    out.raw = opt.x;
    out.kernel = kernel_from_raw(problem, opt.x);
    if (problem.model == ModelKind::fractal) out.fractal = {softplus(opt.x[0]), opt.x[1]};
    if (problem.model == ModelKind::classical) out.classical = {softplus(opt.x[0])};
    out.value = evaluate_loss(problem, opt.x);
    out.beta = problem.beta;
    out.iterations = opt.iterations;
    out.grad_norm = opt.grad_norm;
    out.converged = opt.converged;
    out.reason = opt.reason;
    out.trace = opt.trace;
    return out;
}

FitResult fit(const LearningProblem& problem)
{
    return fit_from(problem, initial_parameters(problem));
}

std::vector<FitResult> fit_penalty_path(const LearningProblem& problem, std::vector<double> betas)
{
    if (betas.empty()) throw ConfigError("penalty path needs at least one beta");
    std::sort(betas.begin(), betas.end());
    std::vector<FitResult> path;
    LearningProblem pr = problem;
    for (double beta : betas) {
        pr.beta = beta;
        path.push_back(path.empty() ? fit(pr) : fit_from(pr, path.back().raw));
    }
    return path;
}

nlohmann::json fit_to_json(const FitResult& fit)
{
    nlohmann::json j;
    j["model"] = to_string(fit.model);
    j["raw"] = fit.raw;
    j["kernel"] = kernel_to_json(fit.kernel);
    switch (fit.model) {
    case ModelKind::nonlocal: j["params"] = {{"phi", fit.kernel.phi}, {"p", fit.kernel.p}}; break;
    case ModelKind::fractal: j["params"] = {{"D_bar", fit.fractal.D_bar}, {"q", fit.fractal.q}}; break;
    case ModelKind::classical: j["params"] = {{"D0_bar", fit.classical.D0_bar}}; break;
    }
    j["loss"] = fit.value.loss;
    j["mse"] = fit.value.mse;
    j["penalty"] = fit.value.penalty;
    j["beta"] = fit.beta;
    j["iterations"] = fit.iterations;
    j["grad_norm"] = fit.grad_norm;
    j["converged"] = fit.converged;
    j["reason"] = fit.reason;
    auto& trace = j["trace"] = nlohmann::json::array();
    for (const auto& t : fit.trace) trace.push_back({{"iteration", t.iteration}, {"loss", t.loss}, {"grad_norm", t.grad_norm}});
    return j;
}

FitResult fit_from_json(const nlohmann::json& j)
{
    FitResult f;
    try {
        f.model = model_kind_from_string(j.at("model").get<std::string>());
        f.raw = j.at("raw").get<std::vector<double>>();
        f.kernel = kernel_from_json(j.at("kernel"));
        const auto& p = j.at("params");
        if (f.model == ModelKind::fractal) f.fractal = {p.at("D_bar").get<double>(), p.at("q").get<double>()};
        if (f.model == ModelKind::classical) f.classical = {p.at("D0_bar").get<double>()};
        f.value = {j.at("loss").get<double>(), j.at("mse").get<double>(), j.at("penalty").get<double>()};
        f.beta = j.at("beta").get<double>();
        f.iterations = j.at("iterations").get<int>();
        f.grad_norm = j.at("grad_norm").get<double>();
        f.converged = j.at("converged").get<bool>();
        f.reason = j.at("reason").get<std::string>();
        for (const auto& t : j.at("trace"))
            f.trace.push_back({t.at("iteration").get<int>(), t.at("loss").get<double>(), t.at("grad_norm").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad fit record: ") + e.what());
    }
    return f;
}

}  // namespace nlt
