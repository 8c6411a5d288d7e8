#ifndef MAPCTL_LUT_HPP
#define MAPCTL_LUT_HPP

#include <optional>
#include <string>
#include <vector>

#include "mapctl/vehicle.hpp"

namespace mapctl {

struct LutGrid {
    std::vector<double> velocities;  // ascending, m/s
    std::vector<double> steering;    // ascending, starts at 0, rad

    /// 0.5..12.0 m/s step 0.25, 0..0.45 rad step 0.01.
    static LutGrid defaults();
    static LutGrid uniform(double v_lo, double v_hi, double v_step, double d_hi, double d_step);
    void validate() const;
};

/// Steady-state search settings.
struct SteadyStateOptions {
    double dt = 1e-3;
    double tolerance = 1e-3;       // on |dvy/dt| (m/s^2) and |d(yaw rate)/dt| (rad/s^2)
    double hold_time = 0.5;        // tolerance must hold continuously this long, s
    double max_time = 5.0;
    double max_rear_slip = 0.5235987755982988;  // 30 deg
    double warm_start_tolerance = 0.05;          // relative disagreement of the re-verification
};

struct SteadyState {
    double a_ss = 0.0;
    double vy = 0.0;
    double yaw_rate = 0.0;
};

/// Propagates the single-track model at constant (vx, steer) from the given
/// lateral state until the lateral derivatives settle. Empty when the model
/// drifts (rear slip beyond the limit) or does not settle in time.
std::optional<SteadyState> propagate_to_steady_state(double vx, double steer, const VehicleParams& params,
                                                     const TireModel& tires, const SteadyStateOptions& opt,
                                                     double vy0 = 0.0, double yaw_rate0 = 0.0);

/// Steady-state centripetal acceleration, from rest.
std::optional<double> steady_state_accel(double vx, double steer, const VehicleParams& params,
                                         const TireModel& tires, const SteadyStateOptions& opt = {});

struct SteeringLookup {
    double steer = 0.0;
    bool saturated = false;        // demand beyond the table's achievable acceleration
    bool speed_clamped = false;    // vx outside the velocity grid
};

/// Steady-state acceleration table over (vx, steer). NaN marks cells
/// without a steady state; in every row those form a suffix in steer.
class SteeringLut {
public:
    SteeringLut() = default;
    SteeringLut(LutGrid grid, std::vector<double> a_ss, std::string params_hash, std::string tire_hash,
                std::string tire_kind, SteadyStateOptions options);

    const LutGrid& grid() const { return grid_; }
    double at(std::size_t vi, std::size_t di) const { return a_ss_[vi * grid_.steering.size() + di]; }
    bool stable(std::size_t vi, std::size_t di) const;
    /// Number of stable cells at the start of row vi.
    std::size_t stable_count(std::size_t vi) const { return stable_count_[vi]; }
    /// Steering angle of the last stable cell of row vi.
    double boundary_steer(std::size_t vi) const;
    double max_accel(std::size_t vi) const;

    const std::string& params_hash() const { return params_hash_; }
    const std::string& tire_hash() const { return tire_hash_; }
    const std::string& tire_kind() const { return tire_kind_; }
    const SteadyStateOptions& options() const { return options_; }
    const std::vector<double>& values() const { return a_ss_; }

private:
    LutGrid grid_;
    std::vector<double> a_ss_;
    std::vector<std::size_t> stable_count_;
    std::string params_hash_;
    std::string tire_hash_;
    std::string tire_kind_;
    SteadyStateOptions options_;
};

/// Fills every cell from rest, re-verifies the last stable cells of each
/// row with a warm start from their stable neighbour, and cuts each row at
/// the first cell that is unstable or does not increase the acceleration.
SteeringLut build_lut(const LutGrid& grid, const VehicleParams& params, const TireModel& tires,
                      const SteadyStateOptions& opt = {}, unsigned workers = 1);

/// Steering angle for a desired lateral acceleration. Each bracketing
/// velocity row is inverted by linear interpolation at the path curvature
/// a_des / vx^2 and the two angles are blended linearly in vx. Odd in a_des.
SteeringLookup lookup_steering(const SteeringLut& lut, double vx, double a_des);

/// lut.csv (v,delta,a_ss) text and lut.meta.json content.
std::string lut_csv(const SteeringLut& lut);
nlohmann::json lut_meta(const SteeringLut& lut);
void save_lut(const SteeringLut& lut, const std::string& csv_path, const std::string& meta_path);
SteeringLut load_lut(const std::string& csv_path, const std::string& meta_path);

}  // namespace mapctl

#endif  // MAPCTL_LUT_HPP
