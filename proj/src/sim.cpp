#include "mapctl/sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include "mapctl/error.hpp"
#include "mapctl/io.hpp"

namespace mapctl {

int SimConfig::substeps() const {
    if (!(physics_dt > 0.0) || !(control_period > 0.0)) throw ConfigInvalid("physics_dt and control_period must be > 0");
    if (control_period < physics_dt) throw ConfigInvalid("control_period must be >= physics_dt");
    const double ratio = control_period / physics_dt;
    const double n = std::round(ratio);
    if (std::abs(ratio - n) > 1e-9 * n) throw ConfigInvalid("control_period must be an integer multiple of physics_dt");
    return static_cast<int>(n);
}

void SimConfig::validate() const {
    substeps();
    if (!(actuator_lag >= 0.0)) throw ConfigInvalid("actuator_lag must be >= 0");
    if (!(steer_rate_limit > 0.0)) throw ConfigInvalid("steer_rate_limit must be > 0");
    if (delay_ticks < 0) throw ConfigInvalid("delay_ticks must be >= 0");
    if (laps < 1) throw ConfigInvalid("laps must be >= 1");
    if (!(position_noise >= 0.0) || !(yaw_noise >= 0.0)) throw ConfigInvalid("noise levels must be >= 0");
    if (!(max_lap_time > 0.0)) throw ConfigInvalid("max_lap_time must be > 0");
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigInvalid("sim config must be a JSON object");
    SimConfig c;
    c.physics_dt = j.value("physics_dt", c.physics_dt);
    c.control_period = j.value("control_period", c.control_period);
    c.actuator_lag = j.value("actuator_lag", c.actuator_lag);
    c.steer_rate_limit = j.value("steer_rate_limit", c.steer_rate_limit);
    c.delay_ticks = j.value("delay_ticks", c.delay_ticks);
    c.laps = j.value("laps", c.laps);
    c.seed = j.value("seed", c.seed);
    c.position_noise = j.value("position_noise", c.position_noise);
    c.yaw_noise = j.value("yaw_noise", c.yaw_noise);
    c.max_lap_time = j.value("max_lap_time", c.max_lap_time);
    c.initial_offset = j.value("initial_offset", c.initial_offset);
    c.initial_heading = j.value("initial_heading", c.initial_heading);
    c.initial_speed = j.value("initial_speed", c.initial_speed);
    c.validate();
    return c;
}

nlohmann::json to_json(const SimConfig& c) {
    return {{"physics_dt", c.physics_dt},         {"control_period", c.control_period},
            {"actuator_lag", c.actuator_lag},     {"steer_rate_limit", c.steer_rate_limit},
            {"delay_ticks", c.delay_ticks},       {"laps", c.laps},
            {"seed", c.seed},                     {"position_noise", c.position_noise},
            {"yaw_noise", c.yaw_noise},           {"max_lap_time", c.max_lap_time},
            {"initial_offset", c.initial_offset}, {"initial_heading", c.initial_heading},
            {"initial_speed", c.initial_speed}};
}

int BatchResult::completed_laps() const {
    return static_cast<int>(std::count_if(laps.begin(), laps.end(), [](const LapMetrics& m) { return !m.crashed; }));
}

namespace {

double wrap_delta(double ds, double length) {
    ds = std::fmod(ds, length);
    if (ds > 0.5 * length) ds -= length;
    if (ds <= -0.5 * length) ds += length;
    return ds;
}

void split_laps(BatchResult& out, const Raceline& raceline, int max_laps) {
    const double L = raceline.length();
    const auto& tr = out.trace;
    std::size_t begin = 0;
    for (int lap = 0; lap < max_laps && begin < tr.size(); ++lap) {
        const double mark = lap * L;
        // lap_metrics wants the sample just before the start crossing
        while (begin + 1 < tr.size() && tr[begin + 1].progress < mark) ++begin;
        if (lap > 0 && tr.back().progress < mark) break;
        std::size_t end = begin;
        while (end < tr.size() && tr[end].progress < mark + L) ++end;
        const std::size_t stop = std::min(end + 1, tr.size());
        LapMetrics m;
        try {
            m = lap_metrics(std::span<const TraceSample>(tr.data() + begin, stop - begin), raceline);
        } catch (const IncompleteLap&) {
            if (!out.crashed) break;  // trace simply ended on the line
            m = LapMetrics{};
            m.crashed = true;
            m.lap_time = std::nan("");
        }
        m.lap = lap;
        out.laps.push_back(m);
        if (m.crashed) break;
        begin = end == 0 ? 0 : end - 1;
    }
}

}  // namespace

BatchResult run_lap_batch(const SimConfig& config, const Raceline& raceline, const ControllerConfig& controller,
                          const ControllerVariant& variant, const Plant& plant) {
    config.validate();
    controller.validate();
    plant.params.validate();
    validate(plant.tires);
    check_variant(variant, plant.params);

    const int substeps = config.substeps();
    const double L = raceline.length();
    const auto& w0 = raceline.waypoints().front();

    VehicleState state;
    state.x = w0.x - std::sin(w0.psi) * config.initial_offset;
    state.y = w0.y + std::cos(w0.psi) * config.initial_offset;
    state.yaw = normalize_angle(w0.psi + config.initial_heading);
    state.vx = config.initial_speed >= 0.0 ? config.initial_speed : w0.v_ref;

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    double steer_act = 0.0;
    std::deque<double> pending(static_cast<std::size_t>(config.delay_ticks), 0.0);

    auto proj = project({state.x, state.y}, raceline);
    double progress = wrap_delta(proj.s - w0.s, L);
    double last_s = proj.s;

    BatchResult out;
    const double horizon = config.laps * config.max_lap_time;
    for (long tick = 0;; ++tick) {
        const double t = static_cast<double>(tick) * config.control_period;
        if (tick > 0) {
            proj = project_near({state.x, state.y}, raceline, last_s, 2.0 + 2.0 * std::abs(state.vx) * config.control_period);
            progress += wrap_delta(proj.s - last_s, L);
            last_s = proj.s;
        }
        TraceSample smp{t, state.x, state.y, state.yaw, state.vx, state.vy, state.yaw_rate,
                        0.0, steer_act, proj.s, proj.d, progress};

        const bool finite = std::isfinite(state.x) && std::isfinite(state.y) && std::isfinite(state.vx) &&
                            std::isfinite(state.vy) && std::isfinite(state.yaw_rate);
        const bool outside = !finite || outside_track(smp, raceline);
        const bool finished = progress >= config.laps * L;
        const bool stalled = t > horizon || state.vx < 0.0;
        if (outside || finished || stalled) {
            smp.delta_cmd = pending.empty() ? steer_act : pending.front();
            out.trace.push_back(smp);
            if (outside || (stalled && !finished)) {
                out.crashed = true;
                out.crash_position = {state.x, state.y};
                out.crash_lap = static_cast<int>(std::floor(std::max(progress, 0.0) / L));
            }
            out.sim_time = t;
            break;
        }

        VehicleState measured = state;
        if (config.position_noise > 0.0) {
            measured.x += config.position_noise * unit(rng);
            measured.y += config.position_noise * unit(rng);
        }
        if (config.yaw_noise > 0.0) measured.yaw = normalize_angle(measured.yaw + config.yaw_noise * unit(rng));
        const auto meas_proj = (config.position_noise > 0.0)
                                   ? project_near({measured.x, measured.y}, raceline, proj.s, 2.0)
                                   : proj;
        const auto cmd = map_steering(measured, raceline, meas_proj, controller, variant, plant.params);
        const double a_long = longitudinal_accel(cmd.v_ctrl, state.vx, controller.speed_gain, controller.max_accel);

        double steer_cmd = cmd.steer;
        if (!pending.empty()) {
            pending.push_back(cmd.steer);
            steer_cmd = pending.front();
            pending.pop_front();
        }
        smp.delta_cmd = steer_cmd;
        out.trace.push_back(smp);

        for (int k = 0; k < substeps; ++k) {
            double rate = config.actuator_lag > 0.0 ? (steer_cmd - steer_act) / config.actuator_lag
                                                    : (steer_cmd - steer_act) / config.physics_dt;
            rate = std::clamp(rate, -config.steer_rate_limit, config.steer_rate_limit);
            steer_act = std::clamp(steer_act + rate * config.physics_dt, -controller.max_steer, controller.max_steer);
            state = rk4_step(state, steer_act, a_long, config.physics_dt, plant.params, plant.tires);
        }
    }
    split_laps(out, raceline, config.laps);
    return out;
}

std::string trace_csv(const std::vector<TraceSample>& trace) {
    io::CsvTable t;
    t.header = {"t", "x", "y", "psi", "vx", "vy", "yawrate", "delta_cmd", "delta_act", "s", "d"};
    t.rows.reserve(trace.size());
    for (const auto& s : trace)
        t.rows.push_back({s.t, s.x, s.y, s.psi, s.vx, s.vy, s.yaw_rate, s.delta_cmd, s.delta_act, s.s, s.d});
    return io::to_csv_text(t);
}

}  // namespace mapctl
