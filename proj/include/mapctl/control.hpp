#ifndef MAPCTL_CONTROL_HPP
#define MAPCTL_CONTROL_HPP

#include <memory>
#include <string>
#include <variant>

#include "mapctl/lut.hpp"
#include "mapctl/raceline.hpp"
#include "mapctl/vehicle.hpp"

namespace mapctl {

/// Affine lookahead L_d = offset + slope * v_ctrl.
struct LookaheadSchedule {
    double offset = 0.6;  // m
    double slope = 0.2;   // s

    double at(double v_ctrl) const { return offset + slope * v_ctrl; }
    /// Throws unless L_d > 0 on (0, v_max].
    void validate(double v_max) const;
};

struct PurePursuit {};
struct MapPacejka {
    std::shared_ptr<const SteeringLut> lut;
};
struct MapLinear {
    std::shared_ptr<const SteeringLut> lut;
};

using ControllerVariant = std::variant<PurePursuit, MapPacejka, MapLinear>;

std::string variant_name(const ControllerVariant& v);

enum class SteeringReference {
    VelocityVector,  // heading plus side slip
    Heading,
};

struct ControllerConfig {
    LookaheadSchedule schedule;
    double max_steer = 0.45;       // rad
    SteeringReference reference = SteeringReference::VelocityVector;
    double speed_gain = 2.0;       // K_v, 1/s
    double max_accel = 6.0;        // |a_long| limit, m/s^2

    void validate() const;
};

struct ControlCommand {
    double steer = 0.0;
    double v_ctrl = 0.0;
    double lookahead = 0.0;
    double eta = 0.0;
    double a_des = 0.0;
    bool saturated = false;
    bool lookahead_fallback = false;
    double s = 0.0;  // projection used for this command
    double d = 0.0;
};

/// a_des = 2 v_t^2 sin(eta) / L_d.
double lateral_accel_demand(double v_t, double eta, double lookahead);
double lateral_accel_demand(const VehicleState& state, double eta, double lookahead);

/// delta = atan(2 sin(eta) l_wb / L_d).
double pure_pursuit_steering(double eta, double lookahead, double wheelbase);

/// World angle of the reference ray for eta.
double reference_direction(const VehicleState& state, SteeringReference reference);

/// Throws StaleLut when a MAP variant's table was built for other chassis constants.
void check_variant(const ControllerVariant& variant, const VehicleParams& params);

/// One lateral control step. `proj` is the car's current projection onto
/// the raceline (the caller tracks it between ticks).
ControlCommand map_steering(const VehicleState& state, const Raceline& raceline, const Projection& proj,
                            const ControllerConfig& config, const ControllerVariant& variant,
                            const VehicleParams& params);
ControlCommand map_steering(const VehicleState& state, const Raceline& raceline,
                            const ControllerConfig& config, const ControllerVariant& variant,
                            const VehicleParams& params);

/// Reference speed at the projection.
double longitudinal_command(const Raceline& raceline, const Projection& proj);

/// a_long = clamp(K_v (v_ctrl - vx), +-a_max).
double longitudinal_accel(double v_ctrl, double vx, double gain, double a_max);

ControllerConfig controller_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ControllerConfig& c);

}  // namespace mapctl

#endif  // MAPCTL_CONTROL_HPP
