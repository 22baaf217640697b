#include "nlt/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <set>
#include <sstream>
#include <thread>

#include "nlt/error.hpp"
#include "nlt/io.hpp"
#include "nlt/nonlocal.hpp"

#ifndef NLT_VERSION
#define NLT_VERSION "0.0.0"
#endif

namespace nlt {

using nlohmann::json;

std::string code_version() { return NLT_VERSION; }

namespace {

// --- config reading ----------------------------------------------------------

class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name))
    {
        if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(name_ + "." + key + ": wrong type");
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    Section child(const char* key)
    {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, name_ + "." + key);
    }

    const json& raw(const char* key)
    {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const
    {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError(name_ + ": unknown key '" + key + "'");
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

bool on_grid(double t, double dt)
{
    const double k = t / dt;
    return std::abs(k - std::round(k)) <= 1e-9 * std::max(1.0, k);
}

const std::vector<std::string>& known_models()
{
    static const std::vector<std::string> names{"nonlocal", "fractal", "classical", "mlp"};
    return names;
}

void check_locations(const std::vector<double>& xs, double length, const std::string& what)
{
    if (xs.empty()) throw ConfigError(what + " must not be empty");
    for (double x : xs)
        if (!(x > 0.0 && x < length))
            throw ConfigError(what + ": location " + io::format_double(x) + " outside (0, L)");
}

// --- CSV helpers ---------------------------------------------------------------

std::string join_path(const std::string& dir, const std::string& name) { return dir + "/" + name; }

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path)
{
    const std::string text = io::read_file(path);
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        for (auto part : io::split(line, ',')) cells.emplace_back(part);
        if (t.header.empty())
            t.header = std::move(cells);
        else if (cells.size() != t.header.size())
            throw ConfigError(path + ": ragged row");
        else
            t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) throw ConfigError(path + ": no header");
    return t;
}

std::string fmt(double v) { return io::format_double(v); }

template <class F>
auto stage(const std::string& name, F&& f)
{
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError(name + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(name + ": " + e.what());
    } catch (const MissingArtifact& e) {
        throw MissingArtifact(name + ": " + e.what());
    }
}

std::vector<double> initial_profile(const ExperimentConfig& cfg, const Dataset& data)
{
    if (cfg.initial_condition == "spike")
        return spike(cfg.medium.num_cells, cfg.tracking.injection_cell, cfg.spike_amplitude);
    return data.coarse.values.front();
}

double loglog_slope_second_half(const std::vector<DisplacementStats>& stats)
{
    if (stats.empty()) return 0.0;
    const double t_half = 0.5 * stats.back().t;
    std::vector<double> lt, lm;
    for (const auto& s : stats)
        if (s.t >= t_half && s.t > 0.0 && s.msd > 0.0) {
            lt.push_back(std::log(s.t));
            lm.push_back(std::log(s.msd));
        }
    if (lt.size() < 2) throw NumericalError("too few positive MSD samples for a log-log slope");
    double tb = 0.0, mb = 0.0;
    for (std::size_t k = 0; k < lt.size(); ++k) tb += lt[k], mb += lm[k];
    tb /= double(lt.size());
    mb /= double(lt.size());
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < lt.size(); ++k) {
        num += (lt[k] - tb) * (lm[k] - mb);
        den += (lt[k] - tb) * (lt[k] - tb);
    }
    return num / den;
}

json generation_block(const ExperimentConfig& cfg)
{
    const json all = config_to_json(cfg);
    json g;
    g["medium"] = all["medium"];
    g["flow"] = all["flow"];
    g["tracking"] = all["tracking"];
    g["smoothing_cells"] = cfg.smoothing_cells;
    g["frame_velocity"] = all["coarse_grain"]["frame_velocity"];
    g["seed"] = cfg.seed;
    return g;
}

std::string curves_csv(const Provenance& prov, const std::vector<BreakthroughCurve>& curves)
{
    std::string out = prov.csv_comment();
    out += "t";
    for (const auto& c : curves) out += ",x=" + fmt(c.location);
    out += "\n";
    for (std::size_t k = 0; k < curves.front().times.size(); ++k) {
        out += fmt(curves.front().times[k]);
        for (const auto& c : curves) out += "," + fmt(c.values[k]);
        out += "\n";
    }
    return out;
}

void append_mse(std::string& out, const MseRow& r)
{
    out += r.model + "," + fmt(r.location) + "," + (r.training_probe ? "1" : "0") + "," +
           fmt(r.train_mse) + "," + fmt(r.test_mse) + "\n";
}

ModelFit load_fit(const ExperimentConfig& cfg, const std::string& model)
{
    const std::string path = join_path(cfg.out_dir, "fits/" + model + ".json");
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const MissingArtifact&) {
        throw MissingArtifact("no fit for model '" + model + "' (" + path + "); run learn first");
    }
    const json j = json::parse(text);
    ModelFit f;
    f.model = model;
    f.train_loss = j.at("train_loss").get<double>();
    if (model == "mlp")
        f.net = surrogate_from_json(j.at("fit"));
    else
        f.pde = fit_from_json(j.at("fit"));
    return f;
}

json fit_record(const ExperimentConfig& cfg, const ModelFit& f, double tt,
                const std::vector<double>& probes)
{
    json j;
    j["provenance"] = provenance_of(cfg).to_json();
    j["model"] = f.model;
    j["tt"] = tt;
    j["probes"] = probes;
    j["train_loss"] = f.train_loss;
    j["fit"] = f.model == "mlp" ? surrogate_to_json(f.net) : fit_to_json(f.pde);
    return j;
}

}  // namespace

// --- config -----------------------------------------------------------------------

void ExperimentConfig::validate() const
{
    medium.validate();
    if (grid_nx == 0 || grid_nx % static_cast<std::size_t>(medium.num_cells) != 0)
        throw ConfigError("flow.grid_nx must be a positive multiple of medium.num_cells");
    if (grid_ny < 2) throw ConfigError("flow.grid_ny must be >= 2");
    if (unit_cell_nx < 2 || unit_cell_ny < 2) throw ConfigError("flow.unit_cell grid must be >= 2x2");
    tracking.validate(medium.num_cells);
    if (smoothing_cells < 1 || smoothing_cells > medium.num_cells)
        throw ConfigError("coarse_grain.smoothing_cells must lie in [1, N]");
    if (frame_velocity != "formula" && frame_velocity != "drift" && frame_velocity != "value")
        throw ConfigError("coarse_grain.frame_velocity must be \"formula\", \"drift\" or a number");
    if (frame_velocity == "value" && !(frame_velocity_value >= 0.0 && std::isfinite(frame_velocity_value)))
        throw ConfigError("coarse_grain.frame_velocity must be nonnegative");
    check_locations(probes, medium.length(), "coarse_grain.probes");
    check_locations(evaluation_locations, medium.length(), "coarse_grain.evaluation_locations");
    if (!(tt > 0.0 && tt < tracking.t_end)) throw ConfigError("learning.tt must lie in (0, t_end)");
    if (!on_grid(tt, tracking.dt)) throw ConfigError("learning.tt must be a multiple of tracking.dt");
    if (models.empty()) throw ConfigError("learning.models must not be empty");
    for (const auto& m : models)
        if (std::find(known_models().begin(), known_models().end(), m) == known_models().end())
            throw ConfigError("unknown model '" + m + "'");
    if (!(beta >= 0.0)) throw ConfigError("learning.beta must be >= 0");
    if (horizon_cells < 1 || horizon_cells >= medium.num_cells)
        throw ConfigError("learning.horizon_cells must lie in [1, N)");
    if (initial_condition != "data" && initial_condition != "spike")
        throw ConfigError("learning.initial_condition must be \"data\" or \"spike\"");
    if (optimizer.max_iterations < 1 || optimizer.history < 1)
        throw ConfigError("optimizer iterations and history must be >= 1");
    if (mlp.epochs < 1 || !(mlp.learning_rate > 0.0) || mlp.hidden_layers < 1 || mlp.width < 1)
        throw ConfigError("mlp settings must be positive");
    for (double t : sweep_tt) {
        if (!(t > 0.0 && t < tracking.t_end)) throw ConfigError("sweep.tt values must lie in (0, t_end)");
        if (!on_grid(t, tracking.dt)) throw ConfigError("sweep.tt values must be multiples of tracking.dt");
    }
    for (const auto& set : sweep_probe_sets) check_locations(set, medium.length(), "sweep.probe_sets");
    if (!sweep_evaluation_locations.empty())
        check_locations(sweep_evaluation_locations, medium.length(), "sweep.evaluation_locations");
    if (sweep_threads < 0) throw ConfigError("sweep.threads must be >= 0");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

std::size_t ExperimentConfig::training_steps() const
{
    return static_cast<std::size_t>(std::llround(tt / tracking.dt));
}

ExperimentConfig config_from_json(const json& j)
{
    ExperimentConfig c;
    Section top(j, "config");
    std::string schema;
    top.get("schema", schema);
    if (schema != kConfigSchema)
        throw ConfigError("config.schema must be \"" + std::string(kConfigSchema) + "\", got \"" + schema + "\"");
    top.get("seed", c.seed);
    top.get("out_dir", c.out_dir);

    auto medium = top.child("medium");
    medium.get("kappa_matrix", c.medium.kappa_matrix);
    medium.get("kappa_inclusion", c.medium.kappa_inclusion);
    medium.get("cell_width", c.medium.cell_width);
    medium.get("layer_height", c.medium.layer_height);
    medium.get("num_cells", c.medium.num_cells);
    medium.get("head_left", c.medium.head_left);
    medium.get("inclusion_fraction", c.medium.inclusion_fraction);
    medium.finish();

    auto flow = top.child("flow");
    flow.get("grid_nx", c.grid_nx);
    flow.get("grid_ny", c.grid_ny);
    flow.get("unit_cell_nx", c.unit_cell_nx);
    flow.get("unit_cell_ny", c.unit_cell_ny);
    flow.get("direct_max_unknowns", c.solver.direct_max_unknowns);
    flow.get("relative_tolerance", c.solver.relative_tolerance);
    flow.finish();

    auto tracking = top.child("tracking");
    tracking.get("injection_cell", c.tracking.injection_cell);
    tracking.get("num_particles", c.tracking.num_particles);
    tracking.get("dt", c.tracking.dt);
    tracking.get("t_end", c.tracking.t_end);
    tracking.finish();

    auto coarse = top.child("coarse_grain");
    coarse.get("smoothing_cells", c.smoothing_cells);
    if (coarse.has("frame_velocity")) {
        const json& fv = coarse.raw("frame_velocity");
        if (fv.is_number()) {
            c.frame_velocity = "value";
            c.frame_velocity_value = fv.get<double>();
        } else if (fv.is_string()) {
            c.frame_velocity = fv.get<std::string>();
            if (c.frame_velocity == "value") c.frame_velocity = "invalid";
        } else {
            throw ConfigError("config.coarse_grain.frame_velocity: wrong type");
        }
    }
    coarse.get("probes", c.probes);
    coarse.get("evaluation_locations", c.evaluation_locations);
    coarse.finish();
    if (c.evaluation_locations.empty()) c.evaluation_locations = c.probes;

    auto learning = top.child("learning");
    learning.get("tt", c.tt);
    learning.get("models", c.models);
    learning.get("beta", c.beta);
    learning.get("horizon_cells", c.horizon_cells);
    learning.get("initial_condition", c.initial_condition);
    learning.get("spike_amplitude", c.spike_amplitude);
    auto opt = learning.child("optimizer");
    opt.get("max_iterations", c.optimizer.max_iterations);
    opt.get("gradient_tolerance", c.optimizer.gradient_tolerance);
    opt.get("history", c.optimizer.history);
    opt.get("armijo", c.optimizer.armijo);
    opt.get("stagnation_tolerance", c.optimizer.stagnation_tolerance);
    opt.get("max_step", c.optimizer.max_step);
    opt.finish();
    learning.finish();

    auto mlp = top.child("mlp");
    mlp.get("hidden_layers", c.mlp.hidden_layers);
    mlp.get("width", c.mlp.width);
    mlp.get("epochs", c.mlp.epochs);
    mlp.get("learning_rate", c.mlp.learning_rate);
    mlp.get("batch_size", c.mlp.batch_size);
    mlp.finish();

    auto sweep = top.child("sweep");
    sweep.get("tt", c.sweep_tt);
    sweep.get("probe_sets", c.sweep_probe_sets);
    sweep.get("evaluation_locations", c.sweep_evaluation_locations);
    sweep.get("threads", c.sweep_threads);
    sweep.finish();
    top.finish();

    c.validate();
    return c;
}

json config_to_json(const ExperimentConfig& c)
{
    json j;
    j["schema"] = kConfigSchema;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["medium"] = {{"kappa_matrix", c.medium.kappa_matrix},
                   {"kappa_inclusion", c.medium.kappa_inclusion},
                   {"cell_width", c.medium.cell_width},
                   {"layer_height", c.medium.layer_height},
                   {"num_cells", c.medium.num_cells},
                   {"head_left", c.medium.head_left},
                   {"inclusion_fraction", c.medium.inclusion_fraction}};
    j["flow"] = {{"grid_nx", c.grid_nx},
                 {"grid_ny", c.grid_ny},
                 {"unit_cell_nx", c.unit_cell_nx},
                 {"unit_cell_ny", c.unit_cell_ny},
                 {"direct_max_unknowns", c.solver.direct_max_unknowns},
                 {"relative_tolerance", c.solver.relative_tolerance}};
    j["tracking"] = {{"injection_cell", c.tracking.injection_cell},
                     {"num_particles", c.tracking.num_particles},
                     {"dt", c.tracking.dt},
                     {"t_end", c.tracking.t_end}};
    json fv = c.frame_velocity == "value" ? json(c.frame_velocity_value) : json(c.frame_velocity);
    j["coarse_grain"] = {{"smoothing_cells", c.smoothing_cells},
                         {"frame_velocity", fv},
                         {"probes", c.probes},
                         {"evaluation_locations", c.evaluation_locations}};
    j["learning"] = {{"tt", c.tt},
                     {"models", c.models},
                     {"beta", c.beta},
                     {"horizon_cells", c.horizon_cells},
                     {"initial_condition", c.initial_condition},
                     {"spike_amplitude", c.spike_amplitude},
                     {"optimizer",
                      {{"max_iterations", c.optimizer.max_iterations},
                       {"gradient_tolerance", c.optimizer.gradient_tolerance},
                       {"history", c.optimizer.history},
                       {"armijo", c.optimizer.armijo},
                       {"stagnation_tolerance", c.optimizer.stagnation_tolerance},
                       {"max_step", c.optimizer.max_step}}}};
    j["mlp"] = {{"hidden_layers", c.mlp.hidden_layers},
                {"width", c.mlp.width},
                {"epochs", c.mlp.epochs},
                {"learning_rate", c.mlp.learning_rate},
                {"batch_size", c.mlp.batch_size}};
    j["sweep"] = {{"tt", c.sweep_tt},
                  {"probe_sets", c.sweep_probe_sets},
                  {"evaluation_locations", c.sweep_evaluation_locations},
                  {"threads", c.sweep_threads}};
    return j;
}

ExperimentConfig load_config(const std::string& path)
{
    const std::string text = io::read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j);
}

// --- provenance ---------------------------------------------------------------------

json Provenance::to_json() const
{
    return {{"config_hash", config_hash}, {"seed", seed}, {"version", version}};
}

std::string Provenance::csv_comment() const
{
    return "# config_hash=" + config_hash + ",seed=" + std::to_string(seed) + ",version=" + version + "\n";
}

Provenance provenance_of(const ExperimentConfig& cfg)
{
    json j = config_to_json(cfg);
    j.erase("out_dir");  // the same experiment hashes the same wherever it is written
    return Provenance{io::fnv1a_hex(j.dump()), cfg.seed, code_version()};
}

std::string btc_file_name(double location) { return "loc_" + fmt(location) + ".csv"; }

// --- generate -------------------------------------------------------------------------

Dataset cmd_generate(const ExperimentConfig& cfg)
{
    cfg.validate();
    const auto prov = provenance_of(cfg);
    const auto& spec = cfg.medium;
    io::ensure_directory(cfg.out_dir);
    io::ensure_directory(join_path(cfg.out_dir, "btc"));

    const FlowField flow = stage("flow", [&] {
        return solve_darcy(build_conductivity(spec, cfg.grid_nx, cfg.grid_ny), spec, cfg.solver);
    });
    Dataset data;
    data.advection = stage("effective advection", [&] {
        return effective_advection(spec, solve_unit_cell(spec, cfg.unit_cell_nx, cfg.unit_cell_ny, cfg.solver));
    });

    // Track and bin one snapshot at a time so full-scale runs fit in memory.
    std::vector<double> times;
    std::vector<std::vector<double>> masses;
    stage("tracking", [&] {
        const DensityGrid grid{cfg.grid_nx, cfg.grid_ny, spec.length(), spec.layer_height};
        auto tracking = cfg.tracking;
        tracking.rng_seed = cfg.seed;
        Tracker tracker(flow, inject(flow, tracking));
        for (std::size_t k = 0; k <= cfg.tracking.num_steps(); ++k) {
            const double t = double(k) * cfg.tracking.dt;
            tracker.advance_to(t);
            times.push_back(t);
            data.stats.push_back(displacement_stats(t, tracker.positions(), tracker.status()));
            const Field2D fine = histogram(tracker.positions(), tracker.status(), grid);
            masses.push_back(unit_cell_masses(std::span<const Field2D>(&fine, 1), grid, spec.num_cells)[0]);
        }
        return 0;
    });

    const CoarseDensity lab = stage("coarse grain", [&] {
        data.drift = ensemble_drift(data.stats);
        data.frame_velocity = cfg.frame_velocity == "formula" ? data.advection.v_bar
                              : cfg.frame_velocity == "drift" ? data.drift
                                                              : cfg.frame_velocity_value;
        data.msd_loglog_slope = loglog_slope_second_half(data.stats);
        return upscale_cell_masses(masses, times, spec, cfg.smoothing_cells);
    });
    data.coarse = stage("frame shift", [&] { return shift_frame(lab, data.frame_velocity); });

    // dataset.json: what predict/learn need besides the CSVs
    json meta;
    meta["provenance"] = prov.to_json();
    meta["generation"] = generation_block(cfg);
    meta["v_bar_formula"] = data.advection.v_bar;
    meta["v_bar_cell"] = data.advection.v_bar_cell;
    meta["kappa_bar_x"] = data.advection.kappa_bar_x;
    meta["drift"] = data.drift;
    meta["frame_velocity"] = data.frame_velocity;
    meta["msd_loglog_slope"] = data.msd_loglog_slope;
    meta["num_cells"] = spec.num_cells;
    meta["cell_width"] = spec.cell_width;
    meta["height"] = spec.layer_height;
    meta["smoothing_cells"] = cfg.smoothing_cells;
    meta["max_divergence"] = max_relative_divergence(flow);
    meta["exited"] = data.stats.back().n_exited;
    meta["stagnant"] = data.stats.back().n_stagnant;
    io::write_file(join_path(cfg.out_dir, "dataset.json"), meta.dump(2) + "\n");

    std::string coarse_csv = prov.csv_comment() + "t";
    for (int i = 1; i <= spec.num_cells; ++i) coarse_csv += ",c_" + std::to_string(i);
    coarse_csv += "\n";
    for (std::size_t s = 0; s < data.coarse.times.size(); ++s) {
        coarse_csv += fmt(data.coarse.times[s]);
        for (double v : data.coarse.values[s]) coarse_csv += "," + fmt(v);
        coarse_csv += "\n";
    }
    io::write_file(join_path(cfg.out_dir, "coarse.csv"), coarse_csv);

    const auto btc = extract_btc(data.coarse, cfg.probes);
    std::string long_form = prov.csv_comment() + "location,t,value\n";
    for (const auto& c : btc) {
        std::string one = prov.csv_comment() + "t,value\n";
        for (std::size_t k = 0; k < c.times.size(); ++k) {
            one += fmt(c.times[k]) + "," + fmt(c.values[k]) + "\n";
            long_form += fmt(c.location) + "," + fmt(c.times[k]) + "," + fmt(c.values[k]) + "\n";
        }
        io::write_file(join_path(cfg.out_dir, "btc/" + btc_file_name(c.location)), one);
    }
    io::write_file(join_path(cfg.out_dir, "btc_dataset.csv"), long_form);

    std::string msd = prov.csv_comment() + "t,mean_x,msd,n_active,n_exited,n_stagnant\n";
    for (const auto& s : data.stats)
        msd += fmt(s.t) + "," + fmt(s.mean_x) + "," + fmt(s.msd) + "," + std::to_string(s.n_active) + "," +
               std::to_string(s.n_exited) + "," + std::to_string(s.n_stagnant) + "\n";
    io::write_file(join_path(cfg.out_dir, "msd.csv"), msd);

    // lab-frame coarse profiles at six evenly spaced times
    std::vector<std::size_t> picks;
    for (int q = 0; q <= 5; ++q)
        picks.push_back(static_cast<std::size_t>(std::llround(double(q) / 5.0 * double(times.size() - 1))));
    std::string profile = prov.csv_comment() + "x";
    for (std::size_t s : picks) profile += ",t=" + fmt(times[s]);
    profile += "\n";
    for (int i = 0; i < spec.num_cells; ++i) {
        profile += fmt((i + 0.5) * spec.cell_width);
        for (std::size_t s : picks) profile += "," + fmt(lab.values[s][static_cast<std::size_t>(i)]);
        profile += "\n";
    }
    io::write_file(join_path(cfg.out_dir, "density_profile.csv"), profile);
    return data;
}

Dataset load_dataset(const ExperimentConfig& cfg)
{
    const std::string meta_path = join_path(cfg.out_dir, "dataset.json");
    std::string text;
    try {
        text = io::read_file(meta_path);
    } catch (const MissingArtifact&) {
        throw MissingArtifact("no dataset at " + meta_path + "; run generate first");
    }
    const json meta = json::parse(text);
    if (meta.at("generation") != generation_block(cfg))
        throw ConfigError("dataset in " + cfg.out_dir + " was generated from a different config; rerun generate");

    Dataset d;
    d.advection.v_bar = meta.at("v_bar_formula").get<double>();
    d.advection.v_bar_cell = meta.at("v_bar_cell").get<double>();
    d.advection.kappa_bar_x = meta.at("kappa_bar_x").get<double>();
    d.drift = meta.at("drift").get<double>();
    d.frame_velocity = meta.at("frame_velocity").get<double>();
    d.msd_loglog_slope = meta.at("msd_loglog_slope").get<double>();

    const auto coarse = read_csv(join_path(cfg.out_dir, "coarse.csv"));
    if (coarse.header.size() != static_cast<std::size_t>(cfg.medium.num_cells) + 1)
        throw ConfigError("coarse.csv does not match num_cells");
    d.coarse.num_cells = cfg.medium.num_cells;
    d.coarse.smoothing_cells = cfg.smoothing_cells;
    d.coarse.cell_width = cfg.medium.cell_width;
    d.coarse.height = cfg.medium.layer_height;
    for (const auto& row : coarse.rows) {
        d.coarse.times.push_back(io::parse_double(row[0]));
        std::vector<double> v;
        for (std::size_t i = 1; i < row.size(); ++i) v.push_back(io::parse_double(row[i]));
        d.coarse.values.push_back(std::move(v));
    }
    if (d.coarse.times.size() != cfg.tracking.num_steps() + 1)
        throw ConfigError("coarse.csv does not match the tracking time grid");

    const auto msd = read_csv(join_path(cfg.out_dir, "msd.csv"));
    for (const auto& row : msd.rows) {
        DisplacementStats s;
        s.t = io::parse_double(row[0]);
        s.mean_x = io::parse_double(row[1]);
        s.msd = io::parse_double(row[2]);
        s.n_active = static_cast<std::size_t>(io::parse_int(row[3]));
        s.n_exited = static_cast<std::size_t>(io::parse_int(row[4]));
        s.n_stagnant = static_cast<std::size_t>(io::parse_int(row[5]));
        d.stats.push_back(s);
    }
    return d;
}

// --- learn ----------------------------------------------------------------------------

LearningProblem make_problem(const ExperimentConfig& cfg, const Dataset& data, ModelKind model,
                             double tt, const std::vector<double>& probes)
{
    LearningProblem pr;
    pr.model = model;
    pr.num_cells = cfg.medium.num_cells;
    pr.cell_width = cfg.medium.cell_width;
    pr.dt = cfg.tracking.dt;
    pr.horizon_cells = cfg.horizon_cells;
    pr.beta = cfg.beta;
    pr.optimizer = cfg.optimizer;
    pr.seed = cfg.seed;
    pr.initial = initial_profile(cfg, data);
    const auto n = static_cast<std::size_t>(std::llround(tt / cfg.tracking.dt));
    if (n == 0) throw ConfigError("training window [0, tt] holds no samples");
    if (n >= data.coarse.times.size()) throw ConfigError("training window exceeds the data");
    for (auto& c : extract_btc(data.coarse, probes)) {
        BreakthroughCurve tr;
        tr.location = c.location;
        tr.times.assign(c.times.begin() + 1, c.times.begin() + 1 + static_cast<std::ptrdiff_t>(n));
        tr.values.assign(c.values.begin() + 1, c.values.begin() + 1 + static_cast<std::ptrdiff_t>(n));
        pr.curves.push_back(std::move(tr));
    }
    pr.validate_and_normalize();
    return pr;
}

ModelFit learn_model(const ExperimentConfig& cfg, const Dataset& data, const std::string& model,
                     double tt, const std::vector<double>& probes)
{
    ModelFit f;
    f.model = model;
    if (model == "mlp") {
        const auto pr = make_problem(cfg, data, ModelKind::classical, tt, probes);
        const auto samples = samples_from_curves(pr.curves);
        auto settings = cfg.mlp;
        settings.seed = cfg.seed;
        f.net = train_surrogate(samples, settings);
        f.train_loss = surrogate_loss(f.net, samples);
    } else {
        f.pde = fit(make_problem(cfg, data, model_kind_from_string(model), tt, probes));
        f.train_loss = f.pde.value.loss;
    }
    return f;
}

void cmd_learn(const ExperimentConfig& cfg, const std::vector<std::string>& models)
{
    cfg.validate();
    const Dataset data = load_dataset(cfg);
    io::ensure_directory(join_path(cfg.out_dir, "fits"));
    for (const auto& m : models) {
        const auto f = stage("learn " + m, [&] { return learn_model(cfg, data, m, cfg.tt, cfg.probes); });
        io::write_file(join_path(cfg.out_dir, "fits/" + m + ".json"),
                       fit_record(cfg, f, cfg.tt, cfg.probes).dump(2) + "\n");
    }
}

// --- predict / compare ------------------------------------------------------------------

std::vector<BreakthroughCurve> predict_curves(const ExperimentConfig& cfg, const Dataset& data,
                                              const ModelFit& fit, const std::vector<double>& locations)
{
    const auto& times = data.coarse.times;
    if (fit.model == "mlp") {
        std::vector<BreakthroughCurve> out;
        for (double x : locations) {
            BreakthroughCurve c;
            c.location = x;
            c.times = times;
            for (double t : times) c.values.push_back(surrogate_eval(fit.net, x, t));
            out.push_back(std::move(c));
        }
        return out;
    }
    const auto sol = solve(fit.pde.kernel, initial_profile(cfg, data), cfg.tracking.dt, times.size() - 1);
    auto out = model_btc(sol, locations);
    for (auto& c : out) c.times = times;  // identical grid, bit-exact labels
    return out;
}

std::vector<MseRow> compare(const std::string& model, const std::vector<BreakthroughCurve>& reference,
                            const std::vector<BreakthroughCurve>& predicted, std::size_t train_steps,
                            const std::vector<double>& probes)
{
    if (reference.size() != predicted.size()) throw ConfigError("curve count mismatch");
    std::vector<MseRow> rows;
    for (std::size_t l = 0; l < reference.size(); ++l) {
        const auto& a = reference[l].values;
        const auto& b = predicted[l].values;
        if (a.size() != b.size() || train_steps + 1 >= a.size())
            throw ConfigError("curve length mismatch");
        MseRow r;
        r.model = model;
        r.location = reference[l].location;
        r.training_probe = std::find(probes.begin(), probes.end(), r.location) != probes.end();
        for (std::size_t k = 1; k < a.size(); ++k) {
            const double e = (a[k] - b[k]) * (a[k] - b[k]);
            (k <= train_steps ? r.train_mse : r.test_mse) += e;
        }
        r.train_mse /= double(train_steps);
        r.test_mse /= double(a.size() - 1 - train_steps);
        rows.push_back(r);
    }
    return rows;
}

std::vector<MseRow> cmd_predict(const ExperimentConfig& cfg, const std::vector<std::string>& models)
{
    cfg.validate();
    const auto prov = provenance_of(cfg);
    const Dataset data = load_dataset(cfg);
    std::vector<ModelFit> fits;
    for (const auto& m : models) fits.push_back(load_fit(cfg, m));

    const std::string dir = join_path(cfg.out_dir, "predictions");
    io::ensure_directory(dir);
    const auto reference = extract_btc(data.coarse, cfg.evaluation_locations);
    io::write_file(join_path(dir, "reference.csv"), curves_csv(prov, reference));

    std::vector<MseRow> all;
    for (const auto& f : fits) {
        const auto curves = stage("predict " + f.model, [&] {
            return predict_curves(cfg, data, f, cfg.evaluation_locations);
        });
        io::write_file(join_path(dir, "curves_" + f.model + ".csv"), curves_csv(prov, curves));
        if (f.model != "mlp") {
            const auto sol = solve(f.pde.kernel, initial_profile(cfg, data), cfg.tracking.dt,
                                   data.coarse.times.size() - 1);
            std::string msd = prov.csv_comment() + "t,mean_x,msd\n";
            for (std::size_t s = 0; s < sol.values.size(); ++s) {
                const auto m = profile_moments(sol.values[s], cfg.medium.cell_width);
                msd += fmt(data.coarse.times[s]) + "," + fmt(m.mean) + "," + fmt(m.msd) + "\n";
            }
            io::write_file(join_path(dir, "msd_" + f.model + ".csv"), msd);
        }
        const auto rows = compare(f.model, reference, curves, cfg.training_steps(), cfg.probes);
        all.insert(all.end(), rows.begin(), rows.end());
    }
    std::string table = prov.csv_comment() + "model,location,training_probe,train_mse,test_mse\n";
    for (const auto& r : all) append_mse(table, r);
    io::write_file(join_path(cfg.out_dir, "mse.csv"), table);
    return all;
}

// --- report ------------------------------------------------------------------------------

json cmd_report(const ExperimentConfig& cfg)
{
    cfg.validate();
    const auto prov = provenance_of(cfg);
    const json meta = json::parse(io::read_file(join_path(cfg.out_dir, "dataset.json")));
    CsvTable table;
    try {
        table = read_csv(join_path(cfg.out_dir, "mse.csv"));
    } catch (const MissingArtifact&) {
        throw MissingArtifact("no mse.csv in " + cfg.out_dir + "; run predict first");
    }

    json report;
    report["provenance"] = prov.to_json();
    report["dataset"] = {{"v_bar_formula", meta.at("v_bar_formula")},
                         {"drift", meta.at("drift")},
                         {"frame_velocity", meta.at("frame_velocity")},
                         {"msd_loglog_slope", meta.at("msd_loglog_slope")}};
    report["tt"] = cfg.tt;
    report["probes"] = cfg.probes;

    std::vector<std::string> models;
    std::map<std::string, std::map<std::string, std::pair<double, double>>> by_loc;
    std::vector<std::string> locations;
    std::map<std::string, bool> is_probe;
    for (const auto& row : table.rows) {
        if (std::find(models.begin(), models.end(), row[0]) == models.end()) models.push_back(row[0]);
        if (std::find(locations.begin(), locations.end(), row[1]) == locations.end()) locations.push_back(row[1]);
        is_probe[row[1]] = row[2] == "1";
        by_loc[row[1]][row[0]] = {io::parse_double(row[3]), io::parse_double(row[4])};
    }

    json fits = json::object();
    for (const auto& m : models) {
        const auto f = load_fit(cfg, m);
        json e;
        e["train_loss"] = f.train_loss;
        if (m == "nonlocal") {
            e["p"] = f.pde.kernel.p;
            e["phi"] = f.pde.kernel.phi;
            e["first_moment"] = f.pde.kernel.first_moment();
            e["iterations"] = f.pde.iterations;
            e["reason"] = f.pde.reason;
        } else if (m == "fractal") {
            e["D_bar"] = f.pde.fractal.D_bar;
            e["q"] = f.pde.fractal.q;
            e["iterations"] = f.pde.iterations;
        } else if (m == "classical") {
            e["D0_bar"] = f.pde.classical.D0_bar;
            e["iterations"] = f.pde.iterations;
        }
        fits[m] = e;
    }
    report["fits"] = fits;

    std::string pivot = prov.csv_comment() + "location,training_probe";
    for (const auto& m : models) pivot += "," + m + "_train_mse," + m + "_test_mse";
    pivot += "\n";
    json rows = json::array();
    for (const auto& x : locations) {
        pivot += x + "," + (is_probe[x] ? "1" : "0");
        json r{{"location", io::parse_double(x)}, {"training_probe", is_probe[x]}};
        for (const auto& m : models) {
            const auto [tr, te] = by_loc[x][m];
            pivot += "," + fmt(tr) + "," + fmt(te);
            r[m] = {{"train_mse", tr}, {"test_mse", te}};
        }
        pivot += "\n";
        rows.push_back(r);
    }
    report["mse"] = rows;
    io::write_file(join_path(cfg.out_dir, "summary.csv"), pivot);
    io::write_file(join_path(cfg.out_dir, "report.json"), report.dump(2) + "\n");
    return report;
}

// --- sweep -------------------------------------------------------------------------------

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::vector<std::string>& models)
{
    cfg.validate();
    const auto prov = provenance_of(cfg);
    const Dataset data = load_dataset(cfg);
    const auto tts = cfg.sweep_tt.empty() ? std::vector<double>{cfg.tt} : cfg.sweep_tt;
    const auto sets = cfg.sweep_probe_sets.empty() ? std::vector<std::vector<double>>{cfg.probes}
                                                   : cfg.sweep_probe_sets;
    struct Job {
        double tt;
        std::size_t set;
        std::string model;
    };
    std::vector<Job> jobs;
    for (double tt : tts)
        for (std::size_t s = 0; s < sets.size(); ++s)
            for (const auto& m : models) jobs.push_back({tt, s, m});

    // union of the evaluation locations and every probe set, ascending
    std::vector<double> locations =
        cfg.sweep_evaluation_locations.empty() ? cfg.evaluation_locations : cfg.sweep_evaluation_locations;
    for (const auto& set : sets) locations.insert(locations.end(), set.begin(), set.end());
    std::sort(locations.begin(), locations.end());
    locations.erase(std::unique(locations.begin(), locations.end()), locations.end());
    const auto reference = extract_btc(data.coarse, locations);

    std::vector<std::vector<MseRow>> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) {
            try {
                const auto& job = jobs[k];
                const auto f = learn_model(cfg, data, job.model, job.tt, sets[job.set]);
                const auto n = static_cast<std::size_t>(std::llround(job.tt / cfg.tracking.dt));
                results[k] = compare(job.model, reference, predict_curves(cfg, data, f, locations), n,
                                     sets[job.set]);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    std::size_t threads = cfg.sweep_threads > 0 ? static_cast<std::size_t>(cfg.sweep_threads)
                                                : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, jobs.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<SweepRow> out;
    std::string csv = prov.csv_comment() + "tt,probe_set,model,location,training_probe,train_mse,test_mse\n";
    for (std::size_t k = 0; k < jobs.size(); ++k)
        for (const auto& r : results[k]) {
            out.push_back({jobs[k].tt, jobs[k].set, r});
            csv += fmt(jobs[k].tt) + "," + std::to_string(jobs[k].set) + ",";
            append_mse(csv, r);
        }
    io::ensure_directory(join_path(cfg.out_dir, "sweep"));
    io::write_file(join_path(cfg.out_dir, "sweep/mse_sweep.csv"), csv);

    std::string sets_csv = prov.csv_comment() + "probe_set,location\n";
    for (std::size_t s = 0; s < sets.size(); ++s)
        for (double x : sets[s]) sets_csv += std::to_string(s) + "," + fmt(x) + "\n";
    io::write_file(join_path(cfg.out_dir, "sweep/probe_sets.csv"), sets_csv);
    return out;
}

}  // namespace nlt
