#include "mapctl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "mapctl/error.hpp"
#include "mapctl/io.hpp"

namespace mapctl {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
const double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double num_from(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }
}  // namespace

void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

LinearTires identify_linear_tires(const VehicleConfig& vehicle) {
    SweepProfile profile;
    profile.speeds = {3.0, 5.0, 7.0};
    const auto log = generate_sweep_log(profile, vehicle.params, vehicle.tires);
    const auto report = fit_linear(log.samples, vehicle.params);
    return {report.front.stiffness, report.rear.stiffness};
}

Workbench make_workbench(const VehicleConfig& vehicle, const LutGrid& grid, unsigned workers) {
    Workbench b;
    b.vehicle = vehicle;
    b.linear_tires = identify_linear_tires(vehicle);
    b.pacejka_lut = std::make_shared<SteeringLut>(build_lut(grid, vehicle.params, vehicle.tires, {}, workers));
    b.linear_lut = std::make_shared<SteeringLut>(build_lut(grid, vehicle.params, b.linear_tires, {}, workers));
    return b;
}

const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names{"pp", "map_pacejka", "map_linear"};
    return names;
}

ControllerVariant make_variant(const std::string& name, const Workbench& bench) {
    if (name == "pp") return PurePursuit{};
    if (name == "map_pacejka") return MapPacejka{bench.pacejka_lut};
    if (name == "map_linear") return MapLinear{bench.linear_lut};
    throw InvalidArgument("unknown controller variant '" + name + "' (known: pp, map_pacejka, map_linear)");
}

void TuneGrid::validate() const {
    if (offsets.empty() || slopes.empty()) throw InvalidArgument("tuning grid must not be empty");
    if (!(scale > 0.0 && scale <= 1.2)) throw InvalidArgument("tuning scale must be in (0, 1.2]");
    if (warmup_laps < 0 || scored_laps < 1) throw InvalidArgument("tuning needs warmup_laps >= 0 and scored_laps >= 1");
}

TuneResult tune_lookahead(const std::string& variant, const Raceline& raceline, const TuneGrid& grid,
                          const ControllerConfig& base, const SimConfig& sim, const Workbench& bench,
                          unsigned workers) {
    grid.validate();
    const auto controller = make_variant(variant, bench);
    const auto track = scale_profile(raceline, grid.scale);
    const auto plant = bench.plant();
    SimConfig cfg = sim;
    cfg.laps = grid.warmup_laps + grid.scored_laps;

    TuneResult out;
    out.variant = variant;
    for (double m : grid.offsets)
        for (double q : grid.slopes) out.cells.push_back({m, q, kInf});

    parallel_for(out.cells.size(), workers, [&](std::size_t i) {
        auto& cell = out.cells[i];
        ControllerConfig cc = base;
        cc.schedule = {cell.offset, cell.slope};
        try {
            cc.validate();
        } catch (const ConfigInvalid&) {
            return;  // schedule not positive over the speed range
        }
        const auto r = run_lap_batch(cfg, track, cc, controller, plant);
        if (r.crashed || r.completed_laps() < cfg.laps) return;
        double sum = 0.0;
        for (int k = grid.warmup_laps; k < cfg.laps; ++k) sum += r.laps[k].rms_d;
        cell.score = sum / grid.scored_laps;
    });

    const TuneCell* best = nullptr;
    for (const auto& c : out.cells) {
        if (!std::isfinite(c.score)) continue;
        if (!best || c.score < best->score || (c.score == best->score && c.offset > best->offset)) best = &c;
    }
    if (!best) throw AllCrashed("every lookahead cell crashed for variant " + variant);
    out.best = {best->offset, best->slope};
    out.best_score = best->score;
    return out;
}

nlohmann::json to_json(const TuneResult& r) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.cells) cells.push_back({{"m", c.offset}, {"q", c.slope}, {"score", num(c.score)}});
    return {{"variant", r.variant},
            {"best", {{"m", r.best.offset}, {"q", r.best.slope}}},
            {"best_score", r.best_score},
            {"cells", cells}};
}

std::string tune_csv(const std::vector<TuneResult>& results) {
    std::string out = "variant,m,q,score,best\n";
    for (const auto& r : results)
        for (const auto& c : r.cells) {
            const bool best = c.offset == r.best.offset && c.slope == r.best.slope;
            out += r.variant + "," + io::format_double(c.offset) + "," + io::format_double(c.slope) + "," +
                   (std::isfinite(c.score) ? io::format_double(c.score) : "inf") + "," + (best ? "1" : "0") + "\n";
        }
    return out;
}

BoxStats box_stats(std::vector<double> values) {
    BoxStats b;
    b.count = values.size();
    if (values.empty()) {
        b.min = b.q1 = b.median = b.q3 = b.max = kNaN;
        return b;
    }
    std::sort(values.begin(), values.end());
    auto quantile = [&](double p) {
        const double h = p * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    b.min = values.front();
    b.q1 = quantile(0.25);
    b.median = quantile(0.5);
    b.q3 = quantile(0.75);
    b.max = values.back();
    return b;
}

std::vector<double> ExperimentSpec::default_scales() {
    std::vector<double> s;
    for (int k = 0; k <= 16; ++k) s.push_back((600.0 + 25.0 * k) / 1000.0);
    return s;
}

void ExperimentSpec::validate() const {
    if (variants.empty()) throw ConfigInvalid("experiment needs at least one variant");
    for (const auto& v : variants)
        if (std::find(variant_names().begin(), variant_names().end(), v) == variant_names().end())
            throw ConfigInvalid("unknown controller variant '" + v + "'");
    for (const auto* list : {&scales, &ablation_scales}) {
        for (std::size_t i = 0; i < list->size(); ++i) {
            if (!((*list)[i] > 0.0 && (*list)[i] <= 1.2)) throw ConfigInvalid("speed scales must be in (0, 1.2]");
            if (i > 0 && !((*list)[i] > (*list)[i - 1])) throw ConfigInvalid("speed scales must be strictly ascending");
        }
    }
    if (laps < 1 || ablation_laps < 1) throw ConfigInvalid("laps must be >= 1");
    if (workers < 1) throw ConfigInvalid("workers must be >= 1");
    for (const auto& [name, cfg] : controllers) {
        if (std::find(variant_names().begin(), variant_names().end(), name) == variant_names().end())
            throw ConfigInvalid("controller config for unknown variant '" + name + "'");
        cfg.validate();
    }
    controller.validate();
    tune.validate();
    sim.validate();
}

namespace {

std::vector<double> scales_from_json(const nlohmann::json& j) {
    if (j.is_array()) return j.get<std::vector<double>>();
    if (!j.is_object()) throw ConfigInvalid("scales must be an array or {start, stop, step}");
    const double start = j.at("start").get<double>();
    const double stop = j.at("stop").get<double>();
    const double step = j.at("step").get<double>();
    if (!(step > 0.0) || stop < start) throw ConfigInvalid("scale range needs step > 0 and stop >= start");
    std::vector<double> out;
    const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
    for (long k = 0; k <= n; ++k) out.push_back(start + step * static_cast<double>(k));
    return out;
}

std::string resolve_path(const std::string& p, const std::string& base_dir) {
    if (p.rfind("builtin:", 0) == 0 || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (std::filesystem::path(base_dir) / p).string();
}

}  // namespace

ExperimentSpec experiment_spec_from_json(const nlohmann::json& j, const std::string& base_dir) {
    if (!j.is_object()) throw ConfigInvalid("experiment spec must be a JSON object");
    ExperimentSpec s;
    s.scales = ExperimentSpec::default_scales();
    try {
        if (j.contains("raceline")) s.raceline = resolve_path(j.at("raceline").get<std::string>(), base_dir);
        if (j.contains("variants")) s.variants = j.at("variants").get<std::vector<std::string>>();
        if (j.contains("scales")) s.scales = scales_from_json(j.at("scales"));
        s.laps = j.value("laps", s.laps);
        if (j.contains("ablation_scales")) s.ablation_scales = scales_from_json(j.at("ablation_scales"));
        s.ablation_laps = j.value("ablation_laps", s.ablation_laps);
        if (j.contains("vehicle")) s.vehicle = resolve_path(j.at("vehicle").get<std::string>(), base_dir);
        if (j.contains("controller")) s.controller = controller_config_from_json(j.at("controller"));
        if (j.contains("controllers"))
            for (const auto& [name, cfg] : j.at("controllers").items()) {
                auto merged = to_json(s.controller);
                merged.update(cfg);
                s.controllers[name] = controller_config_from_json(merged);
            }
        if (j.contains("tune")) {
            const auto& t = j.at("tune");
            if (t.contains("m")) s.tune.offsets = t.at("m").get<std::vector<double>>();
            if (t.contains("q")) s.tune.slopes = t.at("q").get<std::vector<double>>();
            s.tune.scale = t.value("scale", s.tune.scale);
            s.tune.warmup_laps = t.value("warmup_laps", s.tune.warmup_laps);
            s.tune.scored_laps = t.value("scored_laps", s.tune.scored_laps);
        }
        if (j.contains("sim")) s.sim = sim_config_from_json(j.at("sim"));
        s.workers = j.value("workers", s.workers);
        if (j.contains("outputs")) {
            const auto& o = j.at("outputs");
            s.sweep_csv = o.value("sweep_csv", s.sweep_csv);
            s.sweep_json = o.value("sweep_json", s.sweep_json);
            s.ablation_csv = o.value("ablation_csv", s.ablation_csv);
            s.ablation_json = o.value("ablation_json", s.ablation_json);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigInvalid(std::string("experiment spec: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::json to_json(const ExperimentSpec& s) {
    nlohmann::json controllers = nlohmann::json::object();
    for (const auto& [name, cfg] : s.controllers) controllers[name] = to_json(cfg);
    nlohmann::json j{{"raceline", s.raceline},
                     {"variants", s.variants},
                     {"scales", s.scales},
                     {"laps", s.laps},
                     {"ablation_scales", s.ablation_scales},
                     {"ablation_laps", s.ablation_laps},
                     {"controller", to_json(s.controller)},
                     {"controllers", controllers},
                     {"tune",
                      {{"m", s.tune.offsets},
                       {"q", s.tune.slopes},
                       {"scale", s.tune.scale},
                       {"warmup_laps", s.tune.warmup_laps},
                       {"scored_laps", s.tune.scored_laps}}},
                     {"sim", to_json(s.sim)},
                     {"workers", s.workers},
                     {"outputs",
                      {{"sweep_csv", s.sweep_csv},
                       {"sweep_json", s.sweep_json},
                       {"ablation_csv", s.ablation_csv},
                       {"ablation_json", s.ablation_json}}}};
    if (s.vehicle) j["vehicle"] = *s.vehicle;
    return j;
}

std::map<std::string, ControllerConfig> resolve_controllers(const ExperimentSpec& spec, const Raceline& raceline,
                                                            const Workbench& bench, std::vector<TuneResult>* tuned) {
    std::map<std::string, ControllerConfig> out;
    for (const auto& v : spec.variants) {
        if (auto it = spec.controllers.find(v); it != spec.controllers.end()) {
            out[v] = it->second;
            continue;
        }
        auto r = tune_lookahead(v, raceline, spec.tune, spec.controller, spec.sim, bench, spec.workers);
        ControllerConfig cc = spec.controller;
        cc.schedule = r.best;
        out[v] = cc;
        if (tuned) tuned->push_back(std::move(r));
    }
    return out;
}

SweepResult velocity_sweep(const ExperimentSpec& spec, const Raceline& raceline, const Workbench& bench,
                           const std::map<std::string, ControllerConfig>& controllers) {
    spec.validate();
    SweepResult out;
    const auto plant = bench.plant();
    SimConfig sim = spec.sim;
    sim.laps = spec.laps;
    std::vector<ControllerVariant> variants;
    for (const auto& v : spec.variants) {
        variants.push_back(make_variant(v, bench));
        if (!controllers.count(v)) throw InvalidArgument("no controller config for variant " + v);
        out.schedules[v] = controllers.at(v).schedule;
    }
    for (const auto& v : spec.variants)
        for (double s : spec.scales) {
            SweepCell c;
            c.variant = v;
            c.scale = s;
            out.cells.push_back(c);
        }

    parallel_for(out.cells.size(), spec.workers, [&](std::size_t i) {
        auto& cell = out.cells[i];
        const std::size_t vi = i / spec.scales.size();
        const auto r = run_lap_batch(sim, scale_profile(raceline, cell.scale), controllers.at(cell.variant),
                                     variants[vi], plant);
        std::vector<double> times;
        std::vector<double> rms;
        for (const auto& lap : r.laps) {
            if (lap.crashed) continue;
            times.push_back(lap.lap_time);
            rms.push_back(lap.rms_d);
        }
        cell.laps_completed = static_cast<int>(times.size());
        cell.crashed = r.crashed;
        cell.crash_lap = r.crash_lap;
        cell.lap_time = box_stats(times);
        cell.rms = box_stats(rms);
    });

    for (const auto& v : spec.variants) {
        out.first_crash[v] = std::nullopt;
        for (const auto& c : out.cells)
            if (c.variant == v && c.crashed) {
                out.first_crash[v] = c.scale;
                break;
            }
    }
    return out;
}

std::string sweep_csv(const SweepResult& r) {
    std::string out =
        "variant,scale,laps_completed,crashed,crash_lap,lap_time_min,lap_time_q1,lap_time_median,lap_time_q3,"
        "lap_time_max,rms_min,rms_q1,rms_median,rms_q3,rms_max\n";
    for (const auto& c : r.cells) {
        const std::vector<double> row{c.scale,           static_cast<double>(c.laps_completed),
                                      c.crashed ? 1.0 : 0.0, static_cast<double>(c.crash_lap),
                                      c.lap_time.min,    c.lap_time.q1,
                                      c.lap_time.median, c.lap_time.q3,
                                      c.lap_time.max,    c.rms.min,
                                      c.rms.q1,          c.rms.median,
                                      c.rms.q3,          c.rms.max};
        out += c.variant;
        for (double v : row) out += "," + io::format_double(v);
        out += "\n";
    }
    return out;
}

namespace {
nlohmann::json to_json(const BoxStats& b) {
    return {{"min", num(b.min)},
            {"q1", num(b.q1)},
            {"median", num(b.median)},
            {"q3", num(b.q3)},
            {"max", num(b.max)},
            {"count", b.count}};
}
}  // namespace

nlohmann::json to_json(const SweepResult& r) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.cells)
        cells.push_back({{"variant", c.variant},
                         {"scale", c.scale},
                         {"laps_completed", c.laps_completed},
                         {"crashed", c.crashed},
                         {"crash_lap", c.crash_lap},
                         {"lap_time", to_json(c.lap_time)},
                         {"rms", to_json(c.rms)}});
    nlohmann::json first = nlohmann::json::object();
    for (const auto& [v, s] : r.first_crash) first[v] = s ? nlohmann::json(*s) : nlohmann::json(nullptr);
    nlohmann::json schedules = nlohmann::json::object();
    for (const auto& [v, s] : r.schedules) schedules[v] = {{"m", s.offset}, {"q", s.slope}};
    return {{"cells", cells}, {"first_crash", first}, {"schedules", schedules}};
}

const AblationRow* AblationReport::find(const std::string& variant, double scale) const {
    for (const auto& r : rows)
        if (r.variant == variant && std::abs(r.scale - scale) < 1e-12) return &r;
    return nullptr;
}

AblationReport ablation_report(const ExperimentSpec& spec, const Raceline& raceline, const Workbench& bench,
                               const std::map<std::string, ControllerConfig>& controllers) {
    spec.validate();
    AblationReport out;
    out.scales = spec.ablation_scales;
    out.laps = spec.ablation_laps;
    const auto plant = bench.plant();
    SimConfig sim = spec.sim;
    sim.laps = spec.ablation_laps;
    for (double s : spec.ablation_scales)
        for (const auto& v : spec.variants) {
            if (!controllers.count(v)) throw InvalidArgument("no controller config for variant " + v);
            AblationRow row;
            row.variant = v;
            row.scale = s;
            out.rows.push_back(row);
        }

    parallel_for(out.rows.size(), spec.workers, [&](std::size_t i) {
        auto& row = out.rows[i];
        const auto r = run_lap_batch(sim, scale_profile(raceline, row.scale), controllers.at(row.variant),
                                     make_variant(row.variant, bench), plant);
        row.completed = !r.crashed && r.completed_laps() == spec.ablation_laps;
        row.laps_completed = r.completed_laps();
        double time_sum = 0.0;
        double abs_sum = 0.0;
        std::size_t n = 0;
        row.max_abs_d = 0.0;
        for (const auto& lap : r.laps) {
            if (!lap.crashed) time_sum += lap.lap_time;
            abs_sum += lap.mean_abs_d * static_cast<double>(lap.samples);
            n += lap.samples;
            row.max_abs_d = std::max(row.max_abs_d, lap.max_abs_d);
        }
        row.lap_time = row.laps_completed > 0 ? time_sum / row.laps_completed : kNaN;
        row.mean_abs_d = n > 0 ? abs_sum / static_cast<double>(n) : kNaN;
    });
    return out;
}

nlohmann::json to_json(const AblationReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"variant", row.variant},
                        {"scale", row.scale},
                        {"status", row.completed ? "ok" : "N.C."},
                        {"laps_completed", row.laps_completed},
                        {"lap_time", num(row.lap_time)},
                        {"mean_abs_d", num(row.mean_abs_d)},
                        {"max_abs_d", num(row.max_abs_d)}});
    return {{"scales", r.scales}, {"laps", r.laps}, {"rows", rows}};
}

AblationReport ablation_from_json(const nlohmann::json& j) {
    AblationReport r;
    try {
        r.scales = j.at("scales").get<std::vector<double>>();
        r.laps = j.at("laps").get<int>();
        for (const auto& row : j.at("rows")) {
            AblationRow a;
            a.variant = row.at("variant").get<std::string>();
            a.scale = row.at("scale").get<double>();
            a.completed = row.at("status").get<std::string>() == "ok";
            a.laps_completed = row.at("laps_completed").get<int>();
            a.lap_time = num_from(row.at("lap_time"));
            a.mean_abs_d = num_from(row.at("mean_abs_d"));
            a.max_abs_d = num_from(row.at("max_abs_d"));
            r.rows.push_back(a);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("ablation report: ") + e.what());
    }
    return r;
}

std::string ablation_csv(const AblationReport& r) {
    std::string out = "scale,variant,status,laps_completed,lap_time,mean_abs_d,max_abs_d\n";
    for (const auto& row : r.rows)
        out += io::format_double(row.scale) + "," + row.variant + "," + (row.completed ? "ok" : "N.C.") + "," +
               std::to_string(row.laps_completed) + "," + io::format_double(row.lap_time) + "," +
               io::format_double(row.mean_abs_d) + "," + io::format_double(row.max_abs_d) + "\n";
    return out;
}

}  // namespace mapctl
