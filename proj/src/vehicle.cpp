#include "mapctl/vehicle.hpp"

#include <cmath>
#include <numbers>

#include "mapctl/error.hpp"
#include "mapctl/io.hpp"

namespace mapctl {

namespace {

void require_positive(double v, const char* name) {
    if (!std::isfinite(v) || v <= 0.0)
        throw InvalidArgument(std::string("vehicle parameter '") + name + "' must be positive and finite");
}

}  // namespace

void VehicleParams::validate() const {
    require_positive(mass, "mass");
    require_positive(yaw_inertia, "yaw_inertia");
    require_positive(l_f, "l_f");
    require_positive(l_r, "l_r");
    require_positive(h_cg, "h_cg");
    require_positive(mu, "mu");
    require_positive(g, "g");
}

void AxleTireParams::validate() const {
    if (!(B > 0.0) || !std::isfinite(B)) throw InvalidArgument("tire B must be > 0");
    if (!(C > 0.0 && C <= 1.5)) throw InvalidArgument("tire C must be in (0, 1.5]");
    if (!(D > 0.0) || !std::isfinite(D)) throw InvalidArgument("tire D must be > 0");
    if (!(E <= 1.1) || !std::isfinite(E)) throw InvalidArgument("tire E must be <= 1.1");
}

void validate(const TireModel& tires) {
    if (const auto* p = std::get_if<PacejkaTires>(&tires)) {
        p->front.validate();
        p->rear.validate();
    } else if (const auto* l = std::get_if<LinearTires>(&tires)) {
        if (!(l->front > 0.0) || !(l->rear > 0.0) || !std::isfinite(l->front) || !std::isfinite(l->rear))
            throw InvalidArgument("linear cornering stiffness must be > 0");
    }
}

double normalize_angle(double angle) {
    constexpr double pi = std::numbers::pi;
    double a = std::remainder(angle, 2.0 * pi);  // [-pi, pi]
    if (a <= -pi) a += 2.0 * pi;
    return a;
}

SlipAngles slip_angles(const VehicleState& state, double steer, const VehicleParams& params) {
    if (!(state.vx > 0.0)) throw InvalidArgument("slip angles undefined for vx <= 0");
    return {std::atan((state.vy + state.yaw_rate * params.l_f) / state.vx) - steer,
            std::atan((state.vy - state.yaw_rate * params.l_r) / state.vx)};
}

AxleLoads axle_loads(double a_long, const VehicleParams& params) {
    const double l = params.l_r + params.l_f;
    const double m = params.mass;
    AxleLoads loads{(m * params.g * params.l_r - m * a_long * params.h_cg) / l,
                    (m * params.g * params.l_f + m * a_long * params.h_cg) / l, false};
    if (loads.front < 0.0) {
        loads.front = 0.0;
        loads.clamped = true;
    }
    if (loads.rear < 0.0) {
        loads.rear = 0.0;
        loads.clamped = true;
    }
    return loads;
}

double pacejka_force(double alpha, double fz, double mu, const AxleTireParams& p) {
    const double x = p.B * alpha;
    return mu * fz * p.D * std::sin(p.C * std::atan(x - p.E * (x - std::atan(x))));
}

double linear_force(double alpha, double stiffness) { return -stiffness * alpha; }

std::pair<double, double> axle_forces(const SlipAngles& slip, const AxleLoads& loads,
                                      const TireModel& tires) {
    if (const auto* p = std::get_if<PacejkaTires>(&tires)) {
        // The Magic Formula is odd with the slip's sign; the force opposes slip.
        return {-pacejka_force(slip.front, loads.front, 1.0, p->front),
                -pacejka_force(slip.rear, loads.rear, 1.0, p->rear)};
    }
    if (const auto* l = std::get_if<LinearTires>(&tires))
        return {linear_force(slip.front, l->front), linear_force(slip.rear, l->rear)};
    throw InvalidArgument("no-slip tires produce no finite lateral force");
}

StateDerivative kinematic_derivative(const VehicleState& state, double steer, double a_long,
                                     const VehicleParams& params) {
    StateDerivative d;
    const double c = std::cos(state.yaw);
    const double s = std::sin(state.yaw);
    d.x = state.vx * c;
    d.y = state.vx * s;
    d.yaw = state.vx * std::tan(steer) / params.wheelbase();
    d.vx = a_long;
    d.vy = 0.0;
    d.yaw_rate = 0.0;
    return d;
}

StateDerivative dynamics_derivative(const VehicleState& state, double steer, double a_long,
                                    const VehicleParams& params, const TireModel& tires) {
    const auto slip = slip_angles(state, steer, params);
    const auto loads = axle_loads(a_long, params);
    const auto [fy_f, fy_r] = axle_forces(slip, loads, tires);

    StateDerivative d;
    const double c = std::cos(state.yaw);
    const double s = std::sin(state.yaw);
    d.x = state.vx * c - state.vy * s;
    d.y = state.vx * s + state.vy * c;
    d.yaw = state.yaw_rate;
    d.vx = a_long;
    d.vy = (fy_r + fy_f) / params.mass - state.vx * state.yaw_rate;
    d.yaw_rate = (-params.l_r * fy_r + params.l_f * fy_f) / params.yaw_inertia;
    return d;
}

VehicleState advance(const VehicleState& s, const StateDerivative& d, double dt) {
    return {s.x + dt * d.x, s.y + dt * d.y, s.yaw + dt * d.yaw,
            s.vx + dt * d.vx, s.vy + dt * d.vy, s.yaw_rate + dt * d.yaw_rate};
}

namespace {

template <class Fn>
VehicleState rk4(const VehicleState& s, double dt, Fn&& f) {
    const auto k1 = f(s);
    const auto k2 = f(advance(s, k1, 0.5 * dt));
    const auto k3 = f(advance(s, k2, 0.5 * dt));
    const auto k4 = f(advance(s, k3, dt));
    StateDerivative sum;
    sum.x = k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x;
    sum.y = k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y;
    sum.yaw = k1.yaw + 2.0 * k2.yaw + 2.0 * k3.yaw + k4.yaw;
    sum.vx = k1.vx + 2.0 * k2.vx + 2.0 * k3.vx + k4.vx;
    sum.vy = k1.vy + 2.0 * k2.vy + 2.0 * k3.vy + k4.vy;
    sum.yaw_rate = k1.yaw_rate + 2.0 * k2.yaw_rate + 2.0 * k3.yaw_rate + k4.yaw_rate;
    return advance(s, sum, dt / 6.0);
}

}  // namespace

VehicleState rk4_step(const VehicleState& s, double steer, double a_long, double dt,
                      const VehicleParams& params, const TireModel& tires) {
    const bool kinematic = std::holds_alternative<NoSlipTires>(tires) || s.vx < kMinDynamicSpeed;
    VehicleState next;
    if (kinematic) {
        next = rk4(s, dt, [&](const VehicleState& x) { return kinematic_derivative(x, steer, a_long, params); });
        // No side slip: lateral velocity and yaw rate follow the geometry.
        next.vy = 0.0;
        next.yaw_rate = next.vx * std::tan(steer) / params.wheelbase();
    } else {
        next = rk4(s, dt, [&](const VehicleState& x) {
            return dynamics_derivative(x, steer, a_long, params, tires);
        });
    }
    next.yaw = normalize_angle(next.yaw);
    return next;
}

VehicleParams default_vehicle() { return VehicleParams{}; }

PacejkaTires default_tires() {
    return {AxleTireParams{6.0, 1.45, 1.35, 0.3}, AxleTireParams{10.0, 1.5, 1.28, 0.5}};
}

namespace {

double get_num(const nlohmann::json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw InvalidArgument(std::string("'") + key + "' must be a number");
    return j.at(key).get<double>();
}

}  // namespace

nlohmann::json to_json(const AxleTireParams& p) {
    return {{"B", p.B}, {"C", p.C}, {"D", p.D}, {"E", p.E}};
}

AxleTireParams axle_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("tire entry must be an object with B, C, D, E");
    for (const char* k : {"B", "C", "D", "E"})
        if (!j.contains(k)) throw InvalidArgument(std::string("tire entry missing '") + k + "'");
    AxleTireParams p{get_num(j, "B", 0), get_num(j, "C", 0), get_num(j, "D", 0), get_num(j, "E", 0)};
    p.validate();
    return p;
}

VehicleConfig vehicle_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("vehicle config must be a JSON object");
    VehicleConfig cfg;
    cfg.params = default_vehicle();
    cfg.tires = default_tires();
    const auto& v = j.contains("vehicle") ? j.at("vehicle") : j;
    auto& p = cfg.params;
    p.mass = get_num(v, "mass", p.mass);
    p.yaw_inertia = get_num(v, "yaw_inertia", p.yaw_inertia);
    p.l_f = get_num(v, "l_f", p.l_f);
    p.l_r = get_num(v, "l_r", p.l_r);
    p.h_cg = get_num(v, "h_cg", p.h_cg);
    p.mu = get_num(v, "mu", p.mu);
    p.g = get_num(v, "g", p.g);
    if (v.contains("l_wb")) {
        const double wb = get_num(v, "l_wb", 0.0);
        if (std::abs(wb - p.wheelbase()) > 1e-12)
            throw InvalidArgument("l_wb must equal l_f + l_r");
    }
    p.validate();
    if (j.contains("tires")) {
        const auto& t = j.at("tires");
        if (t.contains("front")) cfg.tires.front = axle_from_json(t.at("front"));
        if (t.contains("rear")) cfg.tires.rear = axle_from_json(t.at("rear"));
    }
    return cfg;
}

VehicleConfig load_vehicle_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(path + ": " + e.what());
    }
    return vehicle_config_from_json(j);
}

nlohmann::json to_json(const VehicleConfig& cfg) {
    const auto& p = cfg.params;
    return {{"vehicle",
             {{"mass", p.mass}, {"yaw_inertia", p.yaw_inertia}, {"l_f", p.l_f}, {"l_r", p.l_r},
              {"l_wb", p.wheelbase()}, {"h_cg", p.h_cg}, {"mu", p.mu}, {"g", p.g}}},
            {"tires", {{"front", to_json(cfg.tires.front)}, {"rear", to_json(cfg.tires.rear)}}}};
}

std::string params_hash(const VehicleParams& p) {
    std::string key;
    for (double v : {p.mass, p.yaw_inertia, p.l_f, p.l_r, p.h_cg, p.mu, p.g}) {
        key += io::format_double(v);
        key += ';';
    }
    return io::hex64(io::fnv1a(key));
}

std::string tire_hash(const TireModel& tires) {
    std::string key;
    if (const auto* p = std::get_if<PacejkaTires>(&tires)) {
        key = "pacejka;";
        for (const auto* a : {&p->front, &p->rear})
            for (double v : {a->B, a->C, a->D, a->E}) key += io::format_double(v) + ';';
    } else if (const auto* l = std::get_if<LinearTires>(&tires)) {
        key = "linear;" + io::format_double(l->front) + ';' + io::format_double(l->rear);
    } else {
        key = "noslip";
    }
    return io::hex64(io::fnv1a(key));
}

}  // namespace mapctl
