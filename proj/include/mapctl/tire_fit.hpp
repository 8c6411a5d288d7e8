#ifndef MAPCTL_TIRE_FIT_HPP
#define MAPCTL_TIRE_FIT_HPP

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mapctl/vehicle.hpp"

namespace mapctl {

/// One logged steady-state cornering point. yaw_rate and vy are NaN when
/// not logged; vy comes from the state estimator when available.
struct CorneringSample {
    double t = 0.0;
    double v = 0.0;
    double delta = 0.0;
    double ay = 0.0;
    double yaw_rate = std::numeric_limits<double>::quiet_NaN();
    double vy = std::numeric_limits<double>::quiet_NaN();
};

/// Lateral axle forces from the measured lateral acceleration.
std::pair<double, double> forces_from_imu(const CorneringSample& sample, const VehicleParams& params);

/// Slip angles of a steady-state sample. The yaw rate is ay / v. The lateral
/// velocity is the logged vy when present; otherwise it is recovered from the
/// rear-axle force balance by inverting `rear_prior`.
SlipAngles slip_angles_steady(const CorneringSample& sample, const VehicleParams& params,
                              const std::optional<AxleTireParams>& rear_prior = std::nullopt);

/// Outlier rejection thresholds 10 / 2^k N for k = 1, 2, 3.
inline constexpr std::array<double, 3> kEmThresholds{5.0, 2.5, 1.25};

struct FitOptions {
    std::optional<AxleTireParams> rear_prior;  // for samples without vy
    double max_yaw_accel = 0.5;                // steady-state filter, rad/s^2
    std::size_t min_inliers = 10;
    std::size_t min_samples = 30;
    double min_slip_span = 0.1;                // rad
    int b_starts = 8;                          // log-spaced over [b_min, b_max]
    double b_min = 1.0;
    double b_max = 40.0;
    std::vector<double> c_starts{1.0, 1.3, 1.5};
    int max_iterations = 300;
};

struct FitIteration {
    std::string axle;          // "front" / "rear"
    int step = 0;              // 0 = fit on all samples, then 1..3
    double threshold = 0.0;    // N; +inf for step 0
    std::size_t inliers = 0;
    double mean_abs_residual = 0.0;  // N, over this step's inliers after refitting
    std::array<double, 4> params{};  // B C D E, or stiffness in params[0]
};

struct AxleFit {
    AxleTireParams tire;
    double stiffness = 0.0;         // linear fits only, N/rad
    std::vector<bool> inliers;      // per input sample; filtered samples are false
    double mean_abs_residual = 0.0;
    double rejected_fraction = 0.0;
};

struct FitReport {
    AxleFit front;
    AxleFit rear;
    std::vector<bool> used;         // passed the steady-state filter
    double rejected_fraction = 0.0; // samples rejected on either axle / samples used
    std::vector<FitIteration> trace;
    std::vector<std::string> warnings;
};

/// Per-axle bound-constrained least squares of the Magic Formula
/// (C <= 1.5, E <= 1.1, B > 0, D > 0) followed by three outlier-rejection
/// steps, each keeping samples with residual below 10/2^k N and refitting.
FitReport fit_pacejka(const std::vector<CorneringSample>& samples, const VehicleParams& params,
                      const FitOptions& options = {});

/// Same rejection loop with a force-proportional-to-slip model through the origin.
FitReport fit_linear(const std::vector<CorneringSample>& samples, const VehicleParams& params,
                     const FitOptions& options = {});

/// Single least-squares fit of the Magic Formula to (slip, force) pairs at
/// load fz; force follows the physical sign, F = -pacejka_force(alpha).
AxleTireParams fit_pacejka_axle(const std::vector<double>& slip, const std::vector<double>& force, double fz,
                                const FitOptions& options, const std::optional<AxleTireParams>& start = std::nullopt);

nlohmann::json to_json(const FitReport& report, bool linear);

/// Constant-speed steering ramp used to collect identification data.
struct SweepProfile {
    std::vector<double> speeds{5.0};
    double ramp_rate = 0.02;        // rad/s
    double max_steer = 0.45;        // rad
    double duration = 30.0;         // per speed, s; bounds zero-rate ramps
    double record_period = 0.01;    // s
    std::size_t samples = 0;        // when > 0, evenly thin the log to this many samples
    double noise = 0.0;             // relative std dev on measured ay
    double outlier_fraction = 0.0;
    double outlier_force = 20.0;    // N, offset on the less loaded axle
    std::uint64_t seed = 1;
    double max_rear_slip = 0.5235987755982988;
    double max_vy_rate = 0.2;       // |dvy/dt| beyond this counts as leaving steady state, m/s^2

    void validate() const;
};

SweepProfile sweep_profile_from_json(const nlohmann::json& j);

struct SweepLog {
    std::vector<CorneringSample> samples;
    std::vector<bool> outlier;      // ground-truth labels of injected outliers
    bool truncated = false;         // a ramp ended in spin-out
};

SweepLog generate_sweep_log(const SweepProfile& profile, const VehicleParams& params, const TireModel& tires);

/// CSV with header t,v,delta,ay,yaw_rate (optional vy and outlier columns).
std::vector<CorneringSample> load_cornering_log(const std::string& path);
std::string cornering_log_csv(const SweepLog& log);

}  // namespace mapctl

#endif  // MAPCTL_TIRE_FIT_HPP
