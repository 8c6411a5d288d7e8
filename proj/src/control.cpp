#include "mapctl/control.hpp"

#include <algorithm>
#include <cmath>

#include "mapctl/error.hpp"

namespace mapctl {

void LookaheadSchedule::validate(double v_max) const {
    if (!std::isfinite(offset) || !std::isfinite(slope)) throw ConfigInvalid("lookahead schedule must be finite");
    if (offset < 0.0 || !(at(kMinDynamicSpeed) > 0.0) || !(at(v_max) > 0.0))
        throw ConfigInvalid("lookahead schedule must give L_d > 0 over the operating speed range");
}

void ControllerConfig::validate() const {
    schedule.validate(20.0);
    if (!(max_steer > 0.0 && max_steer < 1.5)) throw ConfigInvalid("max_steer must be in (0, 1.5) rad");
    if (!(speed_gain > 0.0)) throw ConfigInvalid("speed_gain must be > 0");
    if (!(max_accel > 0.0)) throw ConfigInvalid("max_accel must be > 0");
}

std::string variant_name(const ControllerVariant& v) {
    if (std::holds_alternative<PurePursuit>(v)) return "pp";
    if (std::holds_alternative<MapPacejka>(v)) return "map_pacejka";
    return "map_linear";
}

double lateral_accel_demand(double v_t, double eta, double lookahead) {
    if (!(lookahead > 0.0)) throw InvalidArgument("lookahead distance must be > 0");
    return 2.0 * v_t * v_t / lookahead * std::sin(eta);
}

double lateral_accel_demand(const VehicleState& state, double eta, double lookahead) {
    return lateral_accel_demand(std::hypot(state.vx, state.vy), eta, lookahead);
}

double pure_pursuit_steering(double eta, double lookahead, double wheelbase) {
    if (!(lookahead > 0.0)) throw InvalidArgument("lookahead distance must be > 0");
    return std::atan(2.0 * std::sin(eta) * wheelbase / lookahead);
}

double reference_direction(const VehicleState& state, SteeringReference reference) {
    if (reference == SteeringReference::VelocityVector && std::hypot(state.vx, state.vy) > kMinDynamicSpeed)
        return state.yaw + std::atan2(state.vy, state.vx);
    return state.yaw;
}

void check_variant(const ControllerVariant& variant, const VehicleParams& params) {
    const SteeringLut* lut = nullptr;
    if (const auto* m = std::get_if<MapPacejka>(&variant)) lut = m->lut.get();
    if (const auto* m = std::get_if<MapLinear>(&variant)) lut = m->lut.get();
    if (std::holds_alternative<PurePursuit>(variant)) return;
    if (lut == nullptr) throw InvalidArgument("MAP controller requires a steering LUT");
    if (lut->params_hash() != params_hash(params))
        throw StaleLut("steering LUT was generated for vehicle params " + lut->params_hash() + ", active params are " +
                       params_hash(params));
}

ControlCommand map_steering(const VehicleState& state, const Raceline& raceline, const Projection& proj,
                            const ControllerConfig& config, const ControllerVariant& variant,
                            const VehicleParams& params) {
    ControlCommand cmd;
    cmd.s = proj.s;
    cmd.d = proj.d;
    cmd.v_ctrl = longitudinal_command(raceline, proj);
    cmd.lookahead = config.schedule.at(cmd.v_ctrl);
    if (!(cmd.lookahead > 0.0)) throw ConfigInvalid("lookahead schedule produced L_d <= 0");

    const double dir = reference_direction(state, config.reference);
    const auto target = lookahead_point({state.x, state.y}, dir, cmd.lookahead, raceline, proj);
    cmd.eta = target.eta;
    cmd.lookahead_fallback = target.fallback;
    cmd.a_des = lateral_accel_demand(state, cmd.eta, cmd.lookahead);

    const SteeringLut* lut = nullptr;
    if (const auto* m = std::get_if<MapPacejka>(&variant)) lut = m->lut.get();
    if (const auto* m = std::get_if<MapLinear>(&variant)) lut = m->lut.get();

    if (lut == nullptr || state.vx < kMinDynamicSpeed) {
        if (lut == nullptr && !std::holds_alternative<PurePursuit>(variant))
            throw InvalidArgument("MAP controller requires a steering LUT");
        cmd.steer = pure_pursuit_steering(cmd.eta, cmd.lookahead, params.wheelbase());
    } else {
        const auto r = lookup_steering(*lut, state.vx, cmd.a_des);
        cmd.steer = r.steer;
        cmd.saturated = r.saturated;
    }
    if (std::abs(cmd.steer) > config.max_steer) {
        cmd.steer = std::copysign(config.max_steer, cmd.steer);
        cmd.saturated = true;
    }
    return cmd;
}

ControlCommand map_steering(const VehicleState& state, const Raceline& raceline,
                            const ControllerConfig& config, const ControllerVariant& variant,
                            const VehicleParams& params) {
    check_variant(variant, params);
    return map_steering(state, raceline, project({state.x, state.y}, raceline), config, variant, params);
}

double longitudinal_command(const Raceline& raceline, const Projection& proj) { return raceline.v_ref_at(proj.s); }

double longitudinal_accel(double v_ctrl, double vx, double gain, double a_max) {
    return std::clamp(gain * (v_ctrl - vx), -a_max, a_max);
}

ControllerConfig controller_config_from_json(const nlohmann::json& j) {
    ControllerConfig c;
    if (!j.is_object()) throw ConfigInvalid("controller config must be a JSON object");
    c.schedule.offset = j.value("m", c.schedule.offset);
    c.schedule.slope = j.value("q", c.schedule.slope);
    c.max_steer = j.value("max_steer", c.max_steer);
    c.speed_gain = j.value("K_v", c.speed_gain);
    c.max_accel = j.value("max_accel", c.max_accel);
    const auto mode = j.value("steering_reference", std::string("velocity"));
    if (mode == "velocity") c.reference = SteeringReference::VelocityVector;
    else if (mode == "heading") c.reference = SteeringReference::Heading;
    else throw ConfigInvalid("steering_reference must be 'velocity' or 'heading'");
    c.validate();
    return c;
}

nlohmann::json to_json(const ControllerConfig& c) {
    return {{"m", c.schedule.offset},
            {"q", c.schedule.slope},
            {"max_steer", c.max_steer},
            {"K_v", c.speed_gain},
            {"max_accel", c.max_accel},
            {"steering_reference", c.reference == SteeringReference::VelocityVector ? "velocity" : "heading"}};
}

}  // namespace mapctl
