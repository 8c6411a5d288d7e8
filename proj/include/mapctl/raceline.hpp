#ifndef MAPCTL_RACELINE_HPP
#define MAPCTL_RACELINE_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mapctl {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct Waypoint {
    double s = 0.0;
    double x = 0.0;
    double y = 0.0;
    double psi = 0.0;
    double kappa = 0.0;
    double v_ref = 0.0;
    double w_left = 0.0;
    double w_right = 0.0;
};

/// Closed loop of waypoints. The last waypoint repeats the first position,
/// so segment i runs from waypoint i to i + 1.
class Raceline {
public:
    Raceline() = default;
    /// Validates ordering, closure, widths and chord lengths.
    explicit Raceline(std::vector<Waypoint> waypoints, double speed_scale = 1.0);

    const std::vector<Waypoint>& waypoints() const { return waypoints_; }
    std::size_t segment_count() const { return waypoints_.empty() ? 0 : waypoints_.size() - 1; }
    double length() const { return length_; }
    double speed_scale() const { return speed_scale_; }

    /// Wraps any arc length into [s0, s0 + length).
    double wrap_s(double s) const;
    /// Segment containing the (wrapped) arc length.
    std::size_t segment_at(double s) const;
    Vec2 position_at(double s) const;
    double v_ref_at(double s) const;
    double w_left_at(double s) const;
    double w_right_at(double s) const;

private:
    double interpolate(double s, double Waypoint::*field) const;

    std::vector<Waypoint> waypoints_;
    double length_ = 0.0;
    double speed_scale_ = 1.0;
};

struct Projection {
    double s = 0.0;   // arc length of the foot point
    double d = 0.0;   // signed lateral distance, positive to the left
    Vec2 foot;
    std::size_t segment = 0;
};

/// Nearest point on the piecewise-linear raceline.
Projection project(Vec2 point, const Raceline& raceline);

/// Same, restricted to segments within `window` metres of arc length
/// around `hint_s`. Used in the control loop where the previous projection
/// is known.
Projection project_near(Vec2 point, const Raceline& raceline, double hint_s, double window);

struct LookaheadResult {
    Vec2 point;
    double eta = 0.0;        // signed angle from the reference direction to the point
    double s = 0.0;          // arc length of the point
    bool fallback = false;   // no circle intersection; point taken at s* + L_d
};

/// First intersection of the circle of radius `lookahead` around `position`
/// with the raceline, searched forward from the projection `proj`.
/// `direction` is the world angle of the reference ray (velocity or heading).
LookaheadResult lookahead_point(Vec2 position, double direction, double lookahead,
                                const Raceline& raceline, const Projection& proj);
LookaheadResult lookahead_point(Vec2 position, double direction, double lookahead,
                                const Raceline& raceline);

Raceline scale_profile(const Raceline& raceline, double scale);

/// Curvature-limited speed with forward (acceleration) and backward
/// (braking) passes around the loop.
Raceline forward_backward_profile(const Raceline& raceline, double a_long_max, double a_lat_max,
                                  double v_max);

Raceline load_raceline(const std::string& path);
void save_raceline(const std::string& path, const Raceline& raceline);
std::string raceline_csv(const Raceline& raceline);
Raceline raceline_from_csv_text(const std::string& text, const std::string& origin);

/// One control-tick sample of a closed-loop run. `progress` is the
/// unwrapped arc length travelled along the raceline.
struct TraceSample {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    double psi = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    double yaw_rate = 0.0;
    double delta_cmd = 0.0;
    double delta_act = 0.0;
    double s = 0.0;
    double d = 0.0;
    double progress = 0.0;
};

struct LapMetrics {
    int lap = 0;
    double lap_time = 0.0;     // NaN for an unfinished lap
    double rms_d = 0.0;
    double mean_abs_d = 0.0;
    double max_abs_d = 0.0;
    bool crashed = false;
    std::size_t samples = 0;
};

/// True when |d| exceeds the local half-width on the side of the offset.
bool outside_track(const TraceSample& sample, const Raceline& raceline);

/// Metrics for the lap that begins at the first start-line crossing at or
/// after the trace's first sample. Lap time is interpolated between the
/// samples bracketing each crossing. Throws IncompleteLap when the trace
/// neither completes the lap nor leaves the track.
LapMetrics lap_metrics(std::span<const TraceSample> trace, const Raceline& raceline);

/// Builtin desk-scale tracks: "oval" and "reference" (a loop with a chicane).
/// Speeds come from forward_backward_profile with v_max = 8.5 m/s.
Raceline builtin_track(const std::string& name);
std::vector<std::string> builtin_track_names();

/// Straight raceline along +x, used for offset-recovery experiments.
Raceline straight_track(double length, double v_ref, double half_width);

}  // namespace mapctl

#endif  // MAPCTL_RACELINE_HPP
