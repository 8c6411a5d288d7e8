#ifndef MAPCTL_VEHICLE_HPP
#define MAPCTL_VEHICLE_HPP

#include <string>
#include <utility>
#include <variant>

#include <json.hpp>

namespace mapctl {

/// Below this longitudinal speed slip angles are ill-conditioned and the
/// kinematic model takes over.
inline constexpr double kMinDynamicSpeed = 0.5;

struct VehicleParams {
    double mass = 3.5;      // kg
    double yaw_inertia = 0.05;  // kg m^2
    double l_f = 0.15;      // CG to front axle, m
    double l_r = 0.17;      // CG to rear axle, m
    double h_cg = 0.07;     // m
    double mu = 1.31;       // reported only; tire D absorbs friction
    double g = 9.81;

    double wheelbase() const { return l_f + l_r; }

    /// Throws InvalidArgument when any field is non-positive or non-finite.
    void validate() const;
};

/// Magic Formula coefficients of one axle.
struct AxleTireParams {
    double B = 0.0;
    double C = 0.0;
    double D = 0.0;
    double E = 0.0;

    void validate() const;
};

struct PacejkaTires {
    AxleTireParams front;
    AxleTireParams rear;
};

/// Cornering stiffness per axle, N/rad.
struct LinearTires {
    double front = 0.0;
    double rear = 0.0;
};

/// Infinitely stiff tires: the vehicle follows Ackermann geometry.
struct NoSlipTires {};

using TireModel = std::variant<PacejkaTires, LinearTires, NoSlipTires>;

void validate(const TireModel& tires);

struct VehicleState {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    double yaw_rate = 0.0;
};

struct StateDerivative {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    double yaw_rate = 0.0;
};

struct SlipAngles {
    double front = 0.0;
    double rear = 0.0;
};

struct AxleLoads {
    double front = 0.0;
    double rear = 0.0;
    bool clamped = false;  // an axle load went negative and was set to zero
};

double normalize_angle(double angle);

SlipAngles slip_angles(const VehicleState& state, double steer, const VehicleParams& params);

AxleLoads axle_loads(double a_long, const VehicleParams& params);

/// Lateral force of the Magic Formula without shift factors.
double pacejka_force(double alpha, double fz, double mu, const AxleTireParams& p);

double linear_force(double alpha, double stiffness);

/// Lateral force of each axle at the given slip angles and loads. The
/// tire model friction is fixed to 1; D carries the friction coefficient.
std::pair<double, double> axle_forces(const SlipAngles& slip, const AxleLoads& loads,
                                      const TireModel& tires);

StateDerivative dynamics_derivative(const VehicleState& state, double steer, double a_long,
                                    const VehicleParams& params, const TireModel& tires);

StateDerivative kinematic_derivative(const VehicleState& state, double steer, double a_long,
                                     const VehicleParams& params);

VehicleState advance(const VehicleState& s, const StateDerivative& d, double dt);

/// One classic RK4 step of the single-track model with inputs held constant.
/// Falls back to the kinematic model below kMinDynamicSpeed or for NoSlipTires.
VehicleState rk4_step(const VehicleState& s, double steer, double a_long, double dt,
                      const VehicleParams& params, const TireModel& tires);

/// Plausible F1TENTH-scale parameters. Geometry, inertia and tire values are
/// not measured quantities.
VehicleParams default_vehicle();
PacejkaTires default_tires();

/// Parameter bundle as stored in vehicle.json.
struct VehicleConfig {
    VehicleParams params;
    PacejkaTires tires;
};

VehicleConfig load_vehicle_config(const std::string& path);
VehicleConfig vehicle_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VehicleConfig& cfg);
nlohmann::json to_json(const AxleTireParams& p);
AxleTireParams axle_from_json(const nlohmann::json& j);

/// Stable 64-bit hash of the chassis constants (hex string).
std::string params_hash(const VehicleParams& params);
std::string tire_hash(const TireModel& tires);

}  // namespace mapctl

#endif  // MAPCTL_VEHICLE_HPP
