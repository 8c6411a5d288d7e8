// Acceptance checks. Prints one PASS/FAIL line per criterion; with a numeric
// argument only that criterion runs. Exit status is non-zero on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mapctl/experiment.hpp"
#include "mapctl/io.hpp"

using namespace mapctl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const std::string kData = MAPCTL_DATA_DIR;

// 1: MAP steering with a no-slip table equals pure pursuit.
Outcome pp_reduction() {
    const auto t0 = Clock::now();
    const auto params = default_vehicle();
    const auto lut = std::make_shared<const SteeringLut>(build_lut(LutGrid::defaults(), params, NoSlipTires{}));
    const ControllerVariant map = MapPacejka{lut};
    const ControllerVariant pp = PurePursuit{};

    double worst = 0.0;
    int count = 0;
    for (int iv = 0; iv < 10; ++iv) {
        const double v = 1.0 + iv * 10.0 / 9.0;
        const auto rl = straight_track(40.0, v, 2.0);
        for (int il = 0; il < 10; ++il) {
            const double ld = 1.0 + il * 3.0 / 9.0;
            ControllerConfig cfg;
            cfg.schedule = {ld, 0.0};
            for (int ip = 0; ip < 10; ++ip) {
                VehicleState s;
                s.x = 10.0;
                s.y = -0.9 + ip * 0.2;
                s.yaw = 0.3 - ip * 0.06;
                s.vx = v;
                const auto a = map_steering(s, rl, cfg, map, params);
                const auto b = map_steering(s, rl, cfg, pp, params);
                worst = std::max(worst, std::abs(a.steer - b.steer));
                ++count;
            }
        }
    }
    const double elapsed = seconds_since(t0);
    return {count == 1000 && worst < 1e-3 && elapsed < 1.0,
            fmt("%d triples, max |delta_map - delta_pp| = %.3g rad, %.3f s", count, worst, elapsed)};
}

// 2: tire parameter recovery from noisy synthetic logs.
Outcome tire_recovery() {
    const auto t0 = Clock::now();
    const auto params = default_vehicle();
    const auto truth = default_tires();
    double worst_param = 0.0;
    double rej_lo = 1.0, rej_hi = 0.0;
    bool thresholds_ok = true;
    int seeds_ok = 0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SweepProfile prof;
        prof.speeds = {3.0, 4.0, 5.0, 6.0, 7.0};
        prof.samples = 500;
        prof.noise = 0.05;
        prof.outlier_fraction = 0.25;
        prof.outlier_force = 20.0;
        prof.seed = seed;
        const auto log = generate_sweep_log(prof, params, truth);
        const auto r = fit_pacejka(log.samples, params);

        for (const char* axle : {"front", "rear"}) {
            std::vector<double> th;
            for (const auto& it : r.trace)
                if (it.axle == axle && it.step > 0) th.push_back(it.threshold);
            thresholds_ok = thresholds_ok && th == std::vector<double>{5.0, 2.5, 1.25};
        }
        double seed_worst = 0.0;
        for (auto [got, want] : {std::pair{r.front.tire, truth.front}, std::pair{r.rear.tire, truth.rear}}) {
            seed_worst = std::max({seed_worst, std::abs(got.B / want.B - 1.0), std::abs(got.C / want.C - 1.0),
                                   std::abs(got.D / want.D - 1.0), std::abs(got.E / want.E - 1.0)});
        }
        worst_param = std::max(worst_param, seed_worst);
        rej_lo = std::min(rej_lo, r.rejected_fraction);
        rej_hi = std::max(rej_hi, r.rejected_fraction);
        const bool ok = seed_worst <= 0.05 && std::abs(r.rejected_fraction - 0.25) <= 0.05;
        seeds_ok += ok;
        per_seed += fmt(" s%llu:%.0f%%/%.1f%%", static_cast<unsigned long long>(seed), 100.0 * seed_worst,
                        100.0 * r.rejected_fraction);
    }
    const double elapsed = seconds_since(t0);
    return {seeds_ok == 10 && thresholds_ok && elapsed < 30.0,
            fmt("%d/10 seeds within 5%% and 25+-5 pp; worst param error %.1f%%, rejected %.1f..%.1f%%, "
                "thresholds %s, %.1f s; per seed (param err/rejected):",
                seeds_ok, 100.0 * worst_param, 100.0 * rej_lo, 100.0 * rej_hi, thresholds_ok ? "{5,2.5,1.25}" : "WRONG",
                elapsed) +
                per_seed};
}

// 3: steady-state table correctness.
Outcome lut_correctness() {
    const auto t0 = Clock::now();
    const auto lut = build_lut(LutGrid::defaults(), default_vehicle(), default_tires());
    const double build = seconds_since(t0);
    const auto& g = lut.grid();
    const double step = g.steering[1] - g.steering[0];
    const double l = default_vehicle().wheelbase();

    std::size_t nodes = 0, roundtrip_ok = 0;
    double worst_ack = 0.0;
    bool ack_ok = true, suffix_ok = true;
    for (std::size_t vi = 0; vi < g.velocities.size(); ++vi) {
        const double v = g.velocities[vi];
        for (std::size_t di = 0; di < lut.stable_count(vi); ++di) {
            ++nodes;
            const auto r = lookup_steering(lut, v, lut.at(vi, di));
            roundtrip_ok += std::abs(r.steer - g.steering[di]) <= step;
        }
        if (v <= 2.0) {
            for (std::size_t di = 1; di < g.steering.size() && g.steering[di] <= 0.2 + 1e-12; ++di) {
                const double kin = v * v * std::tan(g.steering[di]) / l;
                if (!lut.stable(vi, di)) {
                    ack_ok = false;
                    continue;
                }
                const double e = std::abs(lut.at(vi, di) - kin) / kin;
                worst_ack = std::max(worst_ack, e);
                ack_ok = ack_ok && e <= 0.1;
            }
        }
        if (v >= 6.0) {
            // a non-empty run of NaN cells that reaches the end of the row
            std::size_t first_nan = g.steering.size();
            for (std::size_t di = 0; di < g.steering.size(); ++di)
                if (std::isnan(lut.at(vi, di))) {
                    first_nan = di;
                    break;
                }
            bool contiguous = first_nan < g.steering.size();
            for (std::size_t di = first_nan; di < g.steering.size(); ++di) contiguous = contiguous && std::isnan(lut.at(vi, di));
            suffix_ok = suffix_ok && contiguous;
        }
    }
    const bool pass = roundtrip_ok == nodes && ack_ok && suffix_ok && build < 60.0;
    return {pass, fmt("round trip %zu/%zu stable nodes, worst Ackermann error %.2f%%, NaN suffix for v>=6: %s, "
                      "build %.2f s",
                      roundtrip_ok, nodes, 100.0 * worst_ack, suffix_ok ? "yes" : "no", build)};
}

struct Recovery {
    double omega = 0.0;
    double c1 = 0.0;
    double r2 = 0.0;
};

// Fits d'' = -c1 d' - c0 d to the offset response on a straight.
Recovery offset_recovery(double v, const LookaheadSchedule& schedule, const Workbench& bench) {
    const auto rl = straight_track(80.0, v, 2.0);
    SimConfig sim;
    sim.laps = 1;
    sim.initial_offset = 0.3;
    sim.initial_speed = v;
    ControllerConfig cfg;
    cfg.schedule = schedule;
    const auto r = run_lap_batch(sim, rl, cfg, make_variant("map_pacejka", bench), bench.plant());
    const double dt = sim.control_period;
    std::vector<double> d;
    for (const auto& s : r.trace) {
        if (s.progress > 80.0 - schedule.at(v) - 1.0) break;
        d.push_back(s.d);
    }
    // stop once the response has died out
    std::size_t n = d.size();
    for (std::size_t i = d.size(); i-- > 0;)
        if (std::abs(d[i]) > 0.003) {
            n = std::min(d.size(), i + 2);
            break;
        }
    Eigen::MatrixXd a(n - 2, 2);
    Eigen::VectorXd b(n - 2);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        a(i - 1, 0) = -(d[i + 1] - d[i - 1]) / (2.0 * dt);
        a(i - 1, 1) = -d[i];
        b(i - 1) = (d[i + 1] - 2.0 * d[i] + d[i - 1]) / (dt * dt);
    }
    const Eigen::Vector2d c = a.colPivHouseholderQr().solve(b);
    const double ss_res = (a * c - b).squaredNorm();
    const double ss_tot = (b.array() - b.mean()).matrix().squaredNorm();
    return {std::sqrt(std::max(c[1], 0.0)), c[0], 1.0 - ss_res / ss_tot};
}

// 4: second-order offset recovery.
Outcome guidance_dynamics() {
    const auto bench = make_workbench({default_vehicle(), default_tires()});
    bool pass = true;
    std::string detail;
    for (double v : {3.0, 5.0, 7.0}) {
        const auto rec = offset_recovery(v, {2.0, 0.0}, bench);
        const double expect = std::sqrt(2.0) * v / 2.0;
        const double err = std::abs(rec.omega - expect) / expect;
        pass = pass && err <= 0.25 && rec.c1 > 0.0;
        detail += fmt("v=%g: omega_n %.3f vs %.3f (%.1f%%, R2 %.3f); ", v, rec.omega, expect, 100.0 * err, rec.r2);
    }
    double lo = 1e9, hi = 0.0;
    for (double v : {3.0, 5.0, 7.0}) {
        const auto rec = offset_recovery(v, {0.0, 0.3}, bench);
        lo = std::min(lo, rec.omega);
        hi = std::max(hi, rec.omega);
        detail += fmt("q=0.3 v=%g: %.3f; ", v, rec.omega);
    }
    const double spread = hi / lo - 1.0;
    pass = pass && spread < 0.1;
    detail += fmt("spread %.1f%%", 100.0 * spread);
    return {pass, detail};
}

struct Study {
    ExperimentSpec spec;
    Raceline raceline;
    std::unique_ptr<Workbench> bench;
    std::map<std::string, ControllerConfig> controllers;
};

const Study& study() {
    static const Study s = [] {
        Study st;
        const auto path = kData + "/experiment.json";
        st.spec = experiment_spec_from_json(nlohmann::json::parse(io::read_text(path)), kData);
        st.raceline = load_raceline(st.spec.raceline);
        const auto vehicle = st.spec.vehicle ? load_vehicle_config(*st.spec.vehicle)
                                             : VehicleConfig{default_vehicle(), default_tires()};
        st.bench = std::make_unique<Workbench>(make_workbench(vehicle));
        st.controllers = resolve_controllers(st.spec, st.raceline, *st.bench);
        return st;
    }();
    return s;
}

// 5: velocity sweep trend on the reference track.
Outcome sweep_trend() {
    const auto& st = study();
    ExperimentSpec spec = st.spec;
    spec.variants = {"pp", "map_pacejka"};
    const auto r = velocity_sweep(spec, st.raceline, *st.bench, st.controllers);
    std::map<double, const SweepCell*> pp, map;
    for (const auto& c : r.cells) (c.variant == "pp" ? pp : map)[c.scale] = &c;

    bool lower_everywhere = true;
    double top = -1.0;
    for (double scale : spec.scales) {
        const auto* a = pp.at(scale);
        const auto* b = map.at(scale);
        if (a->laps_completed < spec.laps || b->laps_completed < spec.laps) break;
        top = scale;
        lower_everywhere = lower_everywhere && b->rms.median < a->rms.median;
    }
    const auto crash = [&](const char* v) {
        const auto& c = r.first_crash.at(v);
        return c ? *c : std::numeric_limits<double>::infinity();
    };
    const bool crash_order = crash("map_pacejka") >= crash("pp");
    double ratio = std::nan("");
    if (top > 0.0) ratio = map.at(top)->rms.median / pp.at(top)->rms.median;
    const bool pass = top > 0.0 && lower_everywhere && crash_order && ratio <= 0.6;
    const auto crash_str = [&](const char* v) {
        const double c = crash(v);
        return std::isinf(c) ? std::string("none") : fmt("%.3f", c);
    };
    return {pass, fmt("highest mutual scale %.3f, MAP lower at every scale: %s, MAP/PP at top %.3f, first crash "
                      "PP %s / MAP %s",
                      top, lower_everywhere ? "yes" : "no", ratio, crash_str("pp").c_str(),
                      crash_str("map_pacejka").c_str())};
}

// 6: ablation ordering.
Outcome ablation_order() {
    const auto& st = study();
    const auto rep = ablation_report(st.spec, st.raceline, *st.bench, st.controllers);
    bool pass = st.spec.ablation_scales.size() == 2;
    std::string detail;
    for (double scale : st.spec.ablation_scales) {
        const auto* map = rep.find("map_pacejka", scale);
        const auto* pp = rep.find("pp", scale);
        const auto* lin = rep.find("map_linear", scale);
        pass = pass && map->completed;
        for (const auto* other : {pp, lin})
            pass = pass && (!other->completed || other->mean_abs_d > map->mean_abs_d);
        const auto cell = [](const AblationRow* r) {
            return r->completed ? fmt("%.4f", r->mean_abs_d) : fmt("N.C.(%.4f)", r->mean_abs_d);
        };
        detail += fmt("scale %.2f mean|d| PP %s MAP-lin %s MAP-pac %s; ", scale, cell(pp).c_str(), cell(lin).c_str(),
                      cell(map).c_str());
    }
    const double hi = *std::max_element(st.spec.ablation_scales.begin(), st.spec.ablation_scales.end());
    const auto* map = rep.find("map_pacejka", hi);
    bool gap = false;
    for (const char* v : {"pp", "map_linear"}) {
        const auto* r = rep.find(v, hi);
        gap = gap || !r->completed || r->mean_abs_d >= 2.0 * map->mean_abs_d;
    }
    pass = pass && gap;
    detail += fmt("baseline N.C. or >= 2x at %.2f: %s", hi, gap ? "yes" : "no");
    return {pass, detail};
}

// 7: controller step cost.
Outcome compute_budget() {
    const auto& st = study();
    const auto variant = make_variant("map_pacejka", *st.bench);
    const auto params = st.bench->vehicle.params;
    const auto rl = scale_profile(st.raceline, 0.8);
    ControllerConfig cfg = st.controllers.at("map_pacejka");

    constexpr int kCalls = 100000;
    std::vector<VehicleState> states(1000);
    for (std::size_t i = 0; i < states.size(); ++i) {
        const double s = rl.length() * static_cast<double>(i) / states.size();
        const auto p = rl.position_at(s);
        states[i].x = p.x + 0.05 * std::sin(0.1 * i);
        states[i].y = p.y + 0.05 * std::cos(0.13 * i);
        states[i].yaw = rl.waypoints()[rl.segment_at(s)].psi;
        states[i].vx = rl.v_ref_at(s);
        states[i].vy = 0.02;
    }
    double sink = 0.0;
    double hint = rl.waypoints().front().s;
    const auto t0 = Clock::now();
    for (int k = 0; k < kCalls; ++k) {
        const auto& s = states[static_cast<std::size_t>(k) % states.size()];
        const auto proj = project_near({s.x, s.y}, rl, hint, 3.0);
        hint = proj.s;
        sink += map_steering(s, rl, proj, cfg, variant, params).steer;
    }
    const double mean_us = 1e6 * seconds_since(t0) / kCalls;
    return {mean_us < 1000.0 && std::isfinite(sink),
            fmt("mean step %.2f us over %d calls (projection + guidance + table lookup)", mean_us, kCalls)};
}

// 8: every subcommand twice, byte-identical outputs.
std::map<std::string, std::string> read_tree(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream f(e.path(), std::ios::binary);
        std::ostringstream s;
        s << f.rdbuf();
        files[fs::relative(e.path(), dir).string()] = s.str();
    }
    return files;
}

Outcome cli_determinism() {
    const auto root = fs::temp_directory_path() / "mapctl_acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    {
        std::ofstream f(root / "spec.json");
        f << R"({"raceline": ")" << kData << R"(/oval.csv", "variants": ["pp", "map_pacejka"],
"scales": [0.6, 0.7], "laps": 2, "ablation_scales": [0.6, 0.7], "ablation_laps": 2,
"tune": {"m": [0.5, 1.0], "q": [0.1, 0.2], "scored_laps": 1}})";
        std::ofstream c(root / "config.json");
        c << R"({"sim": {"position_noise": 0.01}})";
    }
    const std::string cli = MAPCTL_CLI_PATH;
    const std::string cfg = (root / "config.json").string();
    struct Cmd {
        std::string name;
        std::string args;
    };
    // the second run of each command uses two workers
    const std::vector<Cmd> cmds{
        {"gen-sweep-log", "gen-sweep-log " + kData + "/sweep_profile.json"},
        {"fit-tires", "fit-tires " + (root / "log.csv").string()},
        {"fit-tires-linear", "fit-tires --model linear " + (root / "log.csv").string()},
        {"gen-lut", "gen-lut " + kData + "/vehicle.json"},
        {"tune", "tune " + kData + "/oval.csv --variant pp --m 0.5,1.0 --q 0.1,0.2"},
        {"simulate", "simulate " + kData + "/oval.csv --laps 2"},
        {"sweep", "sweep " + (root / "spec.json").string()},
        {"ablation", "ablation " + (root / "spec.json").string()},
    };
    bool pass = true;
    std::string detail;
    for (const auto& cmd : cmds) {
        std::map<std::string, std::string> outputs[2];
        bool ran = true;
        for (int run = 0; run < 2; ++run) {
            const auto dir = root / (cmd.name + "_" + std::to_string(run));
            fs::create_directories(dir);
            const std::string line = cli + " --seed 1 --config " + cfg + " --workers " + std::to_string(run + 1) +
                                     " --out-dir " + dir.string() + " " + cmd.args + " > " +
                                     (root / (cmd.name + ".log")).string() + " 2>&1";
            ran = ran && std::system(line.c_str()) == 0;
            outputs[run] = read_tree(dir);
        }
        if (cmd.name == "gen-sweep-log" && outputs[0].count("sweep_log.csv")) {
            std::ofstream f(root / "log.csv", std::ios::binary);
            f << outputs[0].at("sweep_log.csv");
        }
        const bool same = ran && !outputs[0].empty() && outputs[0] == outputs[1];
        pass = pass && same;
        detail += fmt("%s %s (%zu files); ", cmd.name.c_str(), same ? "identical" : (ran ? "DIFFERENT" : "FAILED"),
                      outputs[0].size());
    }
    fs::remove_all(root);
    return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"PP reduction", pp_reduction},
        {"tire fit recovery", tire_recovery},
        {"LUT correctness", lut_correctness},
        {"guidance dynamics", guidance_dynamics},
        {"sweep trend", sweep_trend},
        {"ablation ordering", ablation_order},
        {"compute budget", compute_budget},
        {"CLI determinism", cli_determinism},
    };
    int only = 0;
    if (argc > 1) only = std::atoi(argv[1]);
    if (only < 0 || only > static_cast<int>(criteria.size())) {
        std::fprintf(stderr, "usage: %s [criterion 1-%zu]\n", argv[0], criteria.size());
        return 2;
    }
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only != 0 && static_cast<int>(i) + 1 != only) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
