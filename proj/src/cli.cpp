#include "mapctl/cli.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mapctl/error.hpp"
#include "mapctl/experiment.hpp"
#include "mapctl/io.hpp"

namespace mapctl {

namespace {

namespace fs = std::filesystem;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::string format;  // empty writes every format
    unsigned workers = 0;
};

/// Settings shared by the single-run subcommands, from --config.
struct RunConfig {
    VehicleConfig vehicle{default_vehicle(), default_tires()};
    ControllerConfig controller;
    SimConfig sim;
    LutGrid grid = LutGrid::defaults();
    TuneGrid tune;
};

nlohmann::json read_json(const std::string& path) {
    try {
        return nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(path + ": " + e.what());
    }
}

LutGrid grid_from_json(const nlohmann::json& j) {
    const auto defaults = LutGrid::defaults();
    return LutGrid::uniform(j.value("v_min", defaults.velocities.front()), j.value("v_max", defaults.velocities.back()),
                            j.value("v_step", 0.25), j.value("steer_max", defaults.steering.back()),
                            j.value("steer_step", 0.01));
}

RunConfig load_run_config(const Globals& g) {
    RunConfig rc;
    if (!g.config.empty()) {
        const auto j = read_json(g.config);
        if (!j.is_object()) throw ConfigInvalid(g.config + ": config must be a JSON object");
        const auto base = fs::path(g.config).parent_path();
        try {
            if (j.contains("vehicle")) {
                const auto& v = j.at("vehicle");
                rc.vehicle = v.is_string() ? load_vehicle_config((base / v.get<std::string>()).string())
                                           : vehicle_config_from_json(v);
            }
            if (j.contains("controller")) rc.controller = controller_config_from_json(j.at("controller"));
            if (j.contains("sim")) rc.sim = sim_config_from_json(j.at("sim"));
            if (j.contains("lut")) rc.grid = grid_from_json(j.at("lut"));
            if (j.contains("tune")) {
                const auto& t = j.at("tune");
                if (t.contains("m")) rc.tune.offsets = t.at("m").get<std::vector<double>>();
                if (t.contains("q")) rc.tune.slopes = t.at("q").get<std::vector<double>>();
                rc.tune.scale = t.value("scale", rc.tune.scale);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigInvalid(g.config + ": " + e.what());
        }
    }
    if (g.seed) rc.sim.seed = *g.seed;
    return rc;
}

bool want(const Globals& g, const char* format) { return g.format.empty() || g.format == format; }

std::string output(const Globals& g, const std::string& name) {
    fs::create_directories(g.out_dir);
    return (fs::path(g.out_dir) / name).string();
}

void write_json(const std::string& path, const nlohmann::json& j) { io::write_text(path, j.dump(2) + "\n"); }

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc{} || ptr != item.data() + item.size() || !std::isfinite(v))
            throw InvalidArgument("bad number in list: '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw InvalidArgument("empty list");
    return out;
}

unsigned workers_or(const Globals& g, unsigned fallback) { return g.workers > 0 ? g.workers : fallback; }

// fit-tires

int run_fit(const Globals& g, const std::string& log_path, const std::string& model, bool rear_prior,
            std::ostream& out) {
    const auto rc = load_run_config(g);
    const auto samples = load_cornering_log(log_path);
    FitOptions options;
    if (rear_prior) options.rear_prior = rc.vehicle.tires.rear;
    const bool linear = model == "linear";
    const auto report = linear ? fit_linear(samples, rc.vehicle.params, options)
                               : fit_pacejka(samples, rc.vehicle.params, options);
    if (want(g, "json")) write_json(output(g, "fit_report.json"), to_json(report, linear));
    if (want(g, "csv")) {
        std::string csv = "axle,B,C,D,E,stiffness,mean_abs_residual,rejected_fraction\n";
        for (const auto* f : {&report.front, &report.rear}) {
            csv += f == &report.front ? "front" : "rear";
            for (double v : {f->tire.B, f->tire.C, f->tire.D, f->tire.E, f->stiffness, f->mean_abs_residual,
                             f->rejected_fraction})
                csv += "," + io::format_double(v);
            csv += "\n";
        }
        io::write_text(output(g, "fit_report.csv"), csv);
    }
    for (const auto& w : report.warnings) out << "warning: " << w << "\n";
    out << "rejected fraction " << io::format_double(report.rejected_fraction) << "\n";
    return kExitOk;
}

// gen-lut

int run_gen_lut(const Globals& g, const std::string& vehicle_path, const std::string& tires, std::ostream& out) {
    auto rc = load_run_config(g);
    rc.vehicle = load_vehicle_config(vehicle_path);
    TireModel model = rc.vehicle.tires;
    if (tires == "linear") model = identify_linear_tires(rc.vehicle);
    else if (tires == "noslip") model = NoSlipTires{};
    const auto lut = build_lut(rc.grid, rc.vehicle.params, model, {}, workers_or(g, 1));
    save_lut(lut, output(g, "lut.csv"), output(g, "lut.meta.json"));
    std::size_t stable = 0;
    for (std::size_t i = 0; i < lut.grid().velocities.size(); ++i) stable += lut.stable_count(i);
    out << "lut " << lut.grid().velocities.size() << "x" << lut.grid().steering.size() << ", " << stable
        << " stable cells\n";
    return kExitOk;
}

// tune

int run_tune(const Globals& g, const std::string& raceline_path, const std::string& variant,
             const std::vector<double>& offsets, const std::vector<double>& slopes, std::optional<double> scale,
             std::ostream& out) {
    auto rc = load_run_config(g);
    if (!offsets.empty()) rc.tune.offsets = offsets;
    if (!slopes.empty()) rc.tune.slopes = slopes;
    if (scale) rc.tune.scale = *scale;
    const auto raceline = load_raceline(raceline_path);
    const auto bench = make_workbench(rc.vehicle, rc.grid, workers_or(g, 1));
    std::vector<std::string> variants = variant == "all" ? variant_names() : std::vector<std::string>{variant};
    std::vector<TuneResult> results;
    std::size_t crashed = 0;
    for (const auto& v : variants) {
        try {
            results.push_back(tune_lookahead(v, raceline, rc.tune, rc.controller, rc.sim, bench, workers_or(g, 1)));
            out << v << ": m=" << io::format_double(results.back().best.offset)
                << " q=" << io::format_double(results.back().best.slope) << "\n";
        } catch (const AllCrashed& e) {
            out << v << ": " << e.what() << "\n";
            ++crashed;
        }
    }
    if (want(g, "json")) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : results) j.push_back(to_json(r));
        write_json(output(g, "tune.json"), j);
    }
    if (want(g, "csv")) io::write_text(output(g, "tune.csv"), tune_csv(results));
    return crashed == variants.size() ? kExitCrash : kExitOk;
}

// simulate

std::string lut_meta_path(const std::string& csv) {
    fs::path p(csv);
    return (p.parent_path() / (p.stem().string() + ".meta.json")).string();
}

int run_simulate(const Globals& g, const std::string& raceline_path, const std::string& variant_name_arg,
                 double scale, std::optional<int> laps, std::optional<double> m, std::optional<double> q,
                 const std::string& lut_path, std::ostream& out) {
    auto rc = load_run_config(g);
    if (laps) rc.sim.laps = *laps;
    if (m) rc.controller.schedule.offset = *m;
    if (q) rc.controller.schedule.slope = *q;
    rc.controller.validate();
    rc.sim.validate();
    const auto raceline = scale_profile(load_raceline(raceline_path), scale);

    ControllerVariant variant = PurePursuit{};
    if (variant_name_arg != "pp") {
        std::shared_ptr<const SteeringLut> lut;
        if (!lut_path.empty()) {
            lut = std::make_shared<SteeringLut>(load_lut(lut_path, lut_meta_path(lut_path)));
        } else {
            TireModel model = rc.vehicle.tires;
            if (variant_name_arg == "map_linear") model = identify_linear_tires(rc.vehicle);
            lut = std::make_shared<SteeringLut>(build_lut(rc.grid, rc.vehicle.params, model, {}, workers_or(g, 1)));
        }
        if (variant_name_arg == "map_pacejka") variant = MapPacejka{lut};
        else if (variant_name_arg == "map_linear") variant = MapLinear{lut};
        else throw InvalidArgument("unknown controller variant '" + variant_name_arg + "'");
    }

    const auto r = run_lap_batch(rc.sim, raceline, rc.controller, variant, {rc.vehicle.params, rc.vehicle.tires});
    if (want(g, "json")) {
        nlohmann::json laps_json = nlohmann::json::array();
        for (const auto& l : r.laps)
            laps_json.push_back({{"lap", l.lap},
                                 {"lap_time", std::isfinite(l.lap_time) ? nlohmann::json(l.lap_time) : nullptr},
                                 {"rms_d", l.rms_d},
                                 {"mean_abs_d", l.mean_abs_d},
                                 {"max_abs_d", l.max_abs_d},
                                 {"crashed", l.crashed}});
        nlohmann::json j{{"variant", variant_name(variant)},
                         {"scale", scale},
                         {"crashed", r.crashed},
                         {"crash_lap", r.crash_lap},
                         {"sim_time", r.sim_time},
                         {"controller", to_json(rc.controller)},
                         {"sim", to_json(rc.sim)},
                         {"laps", laps_json}};
        if (r.crashed) j["crash_position"] = {r.crash_position.x, r.crash_position.y};
        write_json(output(g, "metrics.json"), j);
    }
    if (want(g, "csv")) {
        std::string csv = "lap,lap_time,rms_d,mean_abs_d,max_abs_d,crashed\n";
        for (const auto& l : r.laps)
            csv += std::to_string(l.lap) + "," + io::format_double(l.lap_time) + "," + io::format_double(l.rms_d) +
                   "," + io::format_double(l.mean_abs_d) + "," + io::format_double(l.max_abs_d) + "," +
                   (l.crashed ? "1" : "0") + "\n";
        io::write_text(output(g, "metrics.csv"), csv);
    }
    io::write_text(output(g, "trace.csv"), trace_csv(r.trace));
    out << variant_name(variant) << ": " << r.completed_laps() << " laps completed";
    if (r.crashed) out << ", crashed in lap " << r.crash_lap;
    out << "\n";
    return r.crashed ? kExitCrash : kExitOk;
}

// sweep / ablation

struct Experiment {
    ExperimentSpec spec;
    Raceline raceline;
    Workbench bench;
};

Experiment load_experiment(const Globals& g, const std::string& spec_path) {
    auto spec = experiment_spec_from_json(read_json(spec_path), fs::path(spec_path).parent_path().string());
    if (g.seed) spec.sim.seed = *g.seed;
    spec.workers = workers_or(g, spec.workers);
    auto rc = load_run_config(g);
    const VehicleConfig vehicle = spec.vehicle ? load_vehicle_config(*spec.vehicle) : rc.vehicle;
    auto raceline = load_raceline(spec.raceline);
    auto bench = make_workbench(vehicle, rc.grid, spec.workers);
    return {std::move(spec), std::move(raceline), std::move(bench)};
}

void write_tuning(const Globals& g, const std::vector<TuneResult>& tuned) {
    if (tuned.empty()) return;
    if (want(g, "json")) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : tuned) j.push_back(to_json(r));
        write_json(output(g, "tune.json"), j);
    }
    if (want(g, "csv")) io::write_text(output(g, "tune.csv"), tune_csv(tuned));
}

int run_sweep(const Globals& g, const std::string& spec_path, std::ostream& out) {
    const auto ex = load_experiment(g, spec_path);
    std::vector<TuneResult> tuned;
    const auto controllers = resolve_controllers(ex.spec, ex.raceline, ex.bench, &tuned);
    write_tuning(g, tuned);
    const auto result = velocity_sweep(ex.spec, ex.raceline, ex.bench, controllers);
    if (want(g, "csv")) io::write_text(output(g, ex.spec.sweep_csv), sweep_csv(result));
    if (want(g, "json")) write_json(output(g, ex.spec.sweep_json), to_json(result));
    bool any_completed = false;
    for (const auto& c : result.cells) any_completed = any_completed || c.laps_completed > 0;
    for (const auto& [v, s] : result.first_crash)
        out << v << ": first crash at scale " << (s ? io::format_double(*s) : std::string("none")) << "\n";
    return any_completed ? kExitOk : kExitCrash;
}

int run_ablation(const Globals& g, const std::string& spec_path, std::ostream& out) {
    const auto ex = load_experiment(g, spec_path);
    std::vector<TuneResult> tuned;
    const auto controllers = resolve_controllers(ex.spec, ex.raceline, ex.bench, &tuned);
    write_tuning(g, tuned);
    const auto report = ablation_report(ex.spec, ex.raceline, ex.bench, controllers);
    if (want(g, "csv")) io::write_text(output(g, ex.spec.ablation_csv), ablation_csv(report));
    if (want(g, "json")) write_json(output(g, ex.spec.ablation_json), to_json(report));
    bool any_completed = false;
    for (const auto& r : report.rows) any_completed = any_completed || r.completed;
    out << ablation_csv(report);
    return any_completed ? kExitOk : kExitCrash;
}

// gen-sweep-log

int run_gen_sweep_log(const Globals& g, const std::string& profile_path, std::ostream& out) {
    const auto rc = load_run_config(g);
    auto profile = sweep_profile_from_json(read_json(profile_path));
    if (g.seed) profile.seed = *g.seed;
    const auto log = generate_sweep_log(profile, rc.vehicle.params, rc.vehicle.tires);
    io::write_text(output(g, "sweep_log.csv"), cornering_log_csv(log));
    out << log.samples.size() << " samples" << (log.truncated ? " (ramp ended in spin-out)" : "") << "\n";
    return kExitOk;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"MAP lateral controller: tire identification, steering tables and closed-loop experiments", "mapctl"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "JSON with optional vehicle, controller, sim, lut and tune sections")
        ->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "RNG seed override");
    app.add_option("--out-dir", g.out_dir, "Directory for output files")->capture_default_str();
    app.add_option("--format", g.format, "Output format (default: both)")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--workers", g.workers, "Worker threads for tables, tuning and sweeps")->check(CLI::PositiveNumber);

    std::function<int()> action;

    auto* fit = app.add_subcommand("fit-tires", "Fit tire models to a cornering log");
    std::string log_path, fit_model = "pacejka";
    bool rear_prior = false;
    fit->add_option("log", log_path, "Cornering log CSV (t,v,delta,ay,yaw_rate[,vy])")->required()->check(CLI::ExistingFile);
    fit->add_option("--model", fit_model, "pacejka or linear")->check(CLI::IsMember({"pacejka", "linear"}))->capture_default_str();
    fit->add_flag("--rear-prior", rear_prior, "Recover missing vy from the configured rear tire");
    fit->callback([&] { action = [&] { return run_fit(g, log_path, fit_model, rear_prior, out); }; });

    auto* lut = app.add_subcommand("gen-lut", "Generate the steady-state steering table");
    std::string vehicle_path, lut_tires = "pacejka";
    lut->add_option("vehicle", vehicle_path, "Vehicle JSON")->required()->check(CLI::ExistingFile);
    lut->add_option("--tires", lut_tires, "pacejka, linear or noslip")
        ->check(CLI::IsMember({"pacejka", "linear", "noslip"}))
        ->capture_default_str();
    lut->callback([&] { action = [&] { return run_gen_lut(g, vehicle_path, lut_tires, out); }; });

    auto* tune = app.add_subcommand("tune", "Grid-search the lookahead schedule");
    std::string tune_raceline, tune_variant = "all", m_list, q_list;
    double tune_scale = 0.0;
    tune->add_option("raceline", tune_raceline, "Raceline CSV or builtin:NAME")->required();
    tune->add_option("--variant", tune_variant, "pp, map_pacejka, map_linear or all")
        ->check(CLI::IsMember({"pp", "map_pacejka", "map_linear", "all"}))
        ->capture_default_str();
    tune->add_option("--m", m_list, "Comma-separated offsets");
    tune->add_option("--q", q_list, "Comma-separated slopes");
    auto* tune_scale_opt = tune->add_option("--scale", tune_scale, "Speed scale of the tuning runs");
    tune->callback([&] {
        action = [&] {
            return run_tune(g, tune_raceline, tune_variant, m_list.empty() ? std::vector<double>{} : parse_list(m_list),
                            q_list.empty() ? std::vector<double>{} : parse_list(q_list),
                            tune_scale_opt->count() ? std::optional<double>(tune_scale) : std::nullopt, out);
        };
    });

    auto* sim = app.add_subcommand("simulate", "Closed-loop laps on a raceline");
    std::string sim_raceline, sim_variant = "map_pacejka", sim_lut;
    double sim_scale = 0.6, sim_m = 0.0, sim_q = 0.0;
    int sim_laps = 0;
    sim->add_option("raceline", sim_raceline, "Raceline CSV or builtin:NAME")->required();
    sim->add_option("--variant", sim_variant, "pp, map_pacejka or map_linear")
        ->check(CLI::IsMember({"pp", "map_pacejka", "map_linear"}))
        ->capture_default_str();
    sim->add_option("--scale", sim_scale, "Speed scale")->capture_default_str();
    auto* laps_opt = sim->add_option("--laps", sim_laps, "Lap count")->check(CLI::PositiveNumber);
    auto* m_opt = sim->add_option("--m", sim_m, "Lookahead offset, m");
    auto* q_opt = sim->add_option("--q", sim_q, "Lookahead slope, s");
    sim->add_option("--lut", sim_lut, "Steering table CSV (meta JSON next to it)")->check(CLI::ExistingFile);
    sim->callback([&] {
        action = [&] {
            return run_simulate(g, sim_raceline, sim_variant, sim_scale,
                                laps_opt->count() ? std::optional<int>(sim_laps) : std::nullopt,
                                m_opt->count() ? std::optional<double>(sim_m) : std::nullopt,
                                q_opt->count() ? std::optional<double>(sim_q) : std::nullopt, sim_lut, out);
        };
    });

    auto* sweep = app.add_subcommand("sweep", "Velocity-scale sweep from an experiment spec");
    std::string sweep_spec;
    sweep->add_option("spec", sweep_spec, "Experiment spec JSON")->required()->check(CLI::ExistingFile);
    sweep->callback([&] { action = [&] { return run_sweep(g, sweep_spec, out); }; });

    auto* ablation = app.add_subcommand("ablation", "Controller ablation at two speed scales");
    std::string ablation_spec;
    ablation->add_option("spec", ablation_spec, "Experiment spec JSON")->required()->check(CLI::ExistingFile);
    ablation->callback([&] { action = [&] { return run_ablation(g, ablation_spec, out); }; });

    auto* gen_log = app.add_subcommand("gen-sweep-log", "Synthetic steering-ramp cornering log");
    std::string profile_path;
    gen_log->add_option("profile", profile_path, "Sweep profile JSON")->required()->check(CLI::ExistingFile);
    gen_log->callback([&] { action = [&] { return run_gen_sweep_log(g, profile_path, out); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitInvalid;
    }
    if (seed_opt->count()) g.seed = seed;

    try {
        return action();
    } catch (const AllCrashed& e) {
        err << "error: " << e.what() << "\n";
        return kExitCrash;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
}

}  // namespace mapctl
