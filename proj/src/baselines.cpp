#include "nlt/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nlt/error.hpp"
#include "nlt/softplus.hpp"

namespace nlt {

DynamicKernel fractal_kernel(const FractalParams& params, double cell_width)
{
    if (!(params.D_bar >= 0.0)) throw ConfigError("D_bar must be >= 0");
    const double w = params.D_bar / (cell_width * cell_width);
    const double one_sided[] = {w};
    return DynamicKernel::symmetric(one_sided, -params.q, cell_width);
}

NonlocalSolution solve_fractal(const FractalParams& params, double cell_width,
                               std::span<const double> initial, double dt, std::size_t steps)
{
    if (params.q >= 1.0)
        throw ConfigError("fractal exponent q >= 1 is not integrable from t = 0");
    return solve(fractal_kernel(params, cell_width), initial, dt, steps);
}

NonlocalSolution solve_classical(const ClassicalParams& params, double cell_width,
                                 std::span<const double> initial, double dt, std::size_t steps)
{
    if (!(params.D0_bar >= 0.0)) throw ConfigError("D0_bar must be >= 0");
    return solve_fractal(FractalParams{params.D0_bar, 0.0}, cell_width, initial, dt, steps);
}

// --- surrogate ---------------------------------------------------------------

SurrogateNet SurrogateNet::zeros(int hidden_layers, int width)
{
    SurrogateNet net;
    net.layer_sizes.assign(1, 2);
    for (int l = 0; l < hidden_layers; ++l) net.layer_sizes.push_back(width);
    net.layer_sizes.push_back(1);
    net.params.assign(net.parameter_count(), 0.0);
    return net;
}

std::size_t SurrogateNet::parameter_count() const
{
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
        n += static_cast<std::size_t>(layer_sizes[l + 1]) * static_cast<std::size_t>(layer_sizes[l] + 1);
    return n;
}

namespace {

/// Activations of every layer for one input; last layer holds the raw
/// pre-softplus output.
struct ForwardTrace {
    std::vector<std::vector<double>> act;
};

void forward(const SurrogateNet& net, double x, double t, ForwardTrace& tr)
{
    const std::size_t layers = net.layer_sizes.size();
    tr.act.resize(layers);
    tr.act[0] = {net.x_range.normalize(x), net.t_range.normalize(t)};
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        const auto in = static_cast<std::size_t>(net.layer_sizes[l]);
        const auto out = static_cast<std::size_t>(net.layer_sizes[l + 1]);
        const double* w = net.params.data() + offset;
        const double* b = w + in * out;
        auto& next = tr.act[l + 1];
        next.assign(out, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            double z = b[o];
            for (std::size_t k = 0; k < in; ++k) z += w[o * in + k] * tr.act[l][k];
            next[o] = (l + 2 < layers) ? std::tanh(z) : z;
        }
        offset += in * out + out;
    }
}

}  // namespace

double surrogate_eval(const SurrogateNet& net, double x, double t)
{
    ForwardTrace tr;
    forward(net, x, t, tr);
    return softplus(tr.act.back()[0]);
}

double surrogate_loss(const SurrogateNet& net, std::span<const SurrogateSample> samples,
                      std::vector<double>* gradient)
{
    if (samples.empty()) throw ConfigError("surrogate needs at least one sample");
    const std::size_t layers = net.layer_sizes.size();
    if (gradient) gradient->assign(net.params.size(), 0.0);
    ForwardTrace tr;
    std::vector<std::vector<double>> delta(layers);
    double sum = 0.0;
    const double scale = 1.0 / double(samples.size());

    for (const auto& s : samples) {
        forward(net, s.x, s.t, tr);
        const double z_out = tr.act.back()[0];
        const double err = softplus(z_out) - s.target;
        sum += err * err;
        if (!gradient) continue;

        delta[layers - 1] = {2.0 * err * scale * sigmoid(z_out)};
        std::size_t offset = net.params.size();
        for (std::size_t l = layers - 1; l-- > 0;) {
            const auto in = static_cast<std::size_t>(net.layer_sizes[l]);
            const auto out = static_cast<std::size_t>(net.layer_sizes[l + 1]);
            offset -= in * out + out;
            const double* w = net.params.data() + offset;
            double* gw = gradient->data() + offset;
            double* gb = gw + in * out;
            delta[l].assign(in, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                const double d = delta[l + 1][o];
                gb[o] += d;
                for (std::size_t k = 0; k < in; ++k) {
                    gw[o * in + k] += d * tr.act[l][k];
                    delta[l][k] += d * w[o * in + k];
                }
            }
            if (l > 0) {
                for (std::size_t k = 0; k < in; ++k) {
                    const double a = tr.act[l][k];
                    delta[l][k] *= 1.0 - a * a;
                }
            }
        }
    }
    return sum * scale;
}

std::vector<SurrogateSample> samples_from_curves(std::span<const BreakthroughCurve> curves)
{
    std::vector<SurrogateSample> out;
    for (const auto& c : curves)
        for (std::size_t k = 0; k < c.times.size(); ++k) out.push_back({c.location, c.times[k], c.values[k]});
    return out;
}

SurrogateNet train_surrogate(std::span<const SurrogateSample> samples, const SurrogateTraining& cfg)
{
    if (samples.empty()) throw ConfigError("surrogate training set is empty");
    SurrogateNet net = SurrogateNet::zeros(cfg.hidden_layers, cfg.width);
    auto [xmin, xmax] = std::minmax_element(samples.begin(), samples.end(),
                                            [](const auto& a, const auto& b) { return a.x < b.x; });
    auto [tmin, tmax] = std::minmax_element(samples.begin(), samples.end(),
                                            [](const auto& a, const auto& b) { return a.t < b.t; });
    net.x_range = {xmin->x, xmax->x};
    net.t_range = {tmin->t, tmax->t};

    std::mt19937_64 rng(cfg.seed);
    auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    {
        // Glorot-uniform weights, zero biases.
        std::size_t offset = 0;
        for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
            const auto in = static_cast<std::size_t>(net.layer_sizes[l]);
            const auto out = static_cast<std::size_t>(net.layer_sizes[l + 1]);
            const double limit = std::sqrt(6.0 / double(in + out));
            for (std::size_t k = 0; k < in * out; ++k) net.params[offset + k] = limit * (2.0 * uniform() - 1.0);
            offset += in * out + out;
        }
    }

    const std::size_t n = samples.size();
    const std::size_t batch = (cfg.batch_size == 0 || cfg.batch_size >= n) ? n : cfg.batch_size;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<SurrogateSample> minibatch;
    std::vector<double> grad, m(net.params.size(), 0.0), v(net.params.size(), 0.0);
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double b1t = 1.0, b2t = 1.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < n) {
            for (std::size_t k = n - 1; k > 0; --k) std::swap(order[k], order[rng() % (k + 1)]);
        }
        for (std::size_t start = 0; start < n; start += batch) {
            std::span<const SurrogateSample> view = samples;
            if (batch < n) {
                minibatch.clear();
                for (std::size_t k = start; k < std::min(n, start + batch); ++k) minibatch.push_back(samples[order[k]]);
                view = minibatch;
            }
            surrogate_loss(net, view, &grad);
            b1t *= beta1;
            b2t *= beta2;
            for (std::size_t k = 0; k < net.params.size(); ++k) {
                m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
                const double mh = m[k] / (1.0 - b1t);
                const double vh = v[k] / (1.0 - b2t);
                net.params[k] -= cfg.learning_rate * mh / (std::sqrt(vh) + eps);
            }
        }
    }
    return net;
}

nlohmann::json surrogate_to_json(const SurrogateNet& net)
{
    return {{"model", "mlp"},
            {"layer_sizes", net.layer_sizes},
            {"activation", "tanh"},
            {"output", "softplus"},
            {"params", net.params},
            {"normalization", {{"x", {net.x_range.lo, net.x_range.hi}}, {"t", {net.t_range.lo, net.t_range.hi}}}}};
}

SurrogateNet surrogate_from_json(const nlohmann::json& j)
{
    SurrogateNet net;
    try {
        net.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
        net.params = j.at("params").get<std::vector<double>>();
        const auto& norm = j.at("normalization");
        net.x_range = {norm.at("x").at(0).get<double>(), norm.at("x").at(1).get<double>()};
        net.t_range = {norm.at("t").at(0).get<double>(), norm.at("t").at(1).get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad surrogate record: ") + e.what());
    }
    if (net.layer_sizes.size() < 2 || net.layer_sizes.front() != 2 || net.layer_sizes.back() != 1 ||
        net.params.size() != net.parameter_count())
        throw ConfigError("surrogate record has inconsistent layer sizes");
    return net;
}

}  // namespace nlt
