#ifndef MAPCTL_SIM_HPP
#define MAPCTL_SIM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mapctl/control.hpp"
#include "mapctl/raceline.hpp"
#include "mapctl/vehicle.hpp"

namespace mapctl {

/// Closed-loop run settings. Actuator and noise defaults are modelling
/// choices, not measured values.
struct SimConfig {
    double physics_dt = 0.001;      // s
    double control_period = 0.02;   // s, integer multiple of physics_dt
    double actuator_lag = 0.05;     // first-order steering lag, s
    double steer_rate_limit = 4.0;  // rad/s
    int delay_ticks = 0;            // actuation delay in control ticks
    int laps = 10;
    std::uint64_t seed = 1;
    double position_noise = 0.0;    // std dev of the controller's position estimate, m
    double yaw_noise = 0.0;         // rad
    double max_lap_time = 60.0;     // a lap slower than this counts as stalled
    // initial state relative to the raceline point at s = 0
    double initial_offset = 0.0;    // m, positive left
    double initial_heading = 0.0;   // rad, relative to the raceline heading
    double initial_speed = -1.0;    // m/s; negative means v_ref at s = 0

    /// Steps of physics_dt per control period; throws ConfigInvalid.
    int substeps() const;
    void validate() const;
};

SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimConfig& c);

struct Plant {
    VehicleParams params;
    TireModel tires;
};

struct BatchResult {
    std::vector<LapMetrics> laps;    // one per started lap; the last may be crashed
    std::vector<TraceSample> trace;  // control-tick samples
    bool crashed = false;
    int crash_lap = -1;              // 0-based lap index of the crash
    Vec2 crash_position;
    double sim_time = 0.0;
    int completed_laps() const;
};

/// Integrates the plant with RK4 at physics_dt, evaluates the controller
/// every control period and drives the steering through the actuator model
/// (delay, first-order lag, rate limit, steering limit). Stops at the first
/// sample outside the track or after config.laps laps.
BatchResult run_lap_batch(const SimConfig& config, const Raceline& raceline, const ControllerConfig& controller,
                          const ControllerVariant& variant, const Plant& plant);

std::string trace_csv(const std::vector<TraceSample>& trace);

}  // namespace mapctl

#endif  // MAPCTL_SIM_HPP
