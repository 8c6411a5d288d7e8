#ifndef MAPCTL_EXPERIMENT_HPP
#define MAPCTL_EXPERIMENT_HPP

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mapctl/control.hpp"
#include "mapctl/lut.hpp"
#include "mapctl/sim.hpp"
#include "mapctl/tire_fit.hpp"

namespace mapctl {

/// Runs fn(0..n-1) on up to `workers` threads. Results must be written by
/// index so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

/// Vehicle plus the steering tables every controller variant needs.
struct Workbench {
    VehicleConfig vehicle;
    LinearTires linear_tires;
    std::shared_ptr<const SteeringLut> pacejka_lut;
    std::shared_ptr<const SteeringLut> linear_lut;

    Plant plant() const { return {vehicle.params, vehicle.tires}; }
};

/// Cornering stiffnesses for the linear ablation: fit_linear on a noiseless
/// steering-ramp log of the plant.
LinearTires identify_linear_tires(const VehicleConfig& vehicle);

Workbench make_workbench(const VehicleConfig& vehicle, const LutGrid& grid = LutGrid::defaults(), unsigned workers = 1);

/// "pp", "map_pacejka" or "map_linear".
ControllerVariant make_variant(const std::string& name, const Workbench& bench);
const std::vector<std::string>& variant_names();

struct TuneGrid {
    std::vector<double> offsets{0.5, 0.75, 1.0, 1.25, 1.5};        // m
    std::vector<double> slopes{0.1, 0.15, 0.2, 0.25, 0.3};         // q
    double scale = 0.6;
    int warmup_laps = 1;
    int scored_laps = 3;

    void validate() const;
};

struct TuneCell {
    double offset = 0.0;
    double slope = 0.0;
    double score = 0.0;  // mean lap RMS of the scored laps; +inf on crash
};

struct TuneResult {
    std::string variant;
    LookaheadSchedule best;
    double best_score = 0.0;
    std::vector<TuneCell> cells;  // offsets outer, slopes inner
};

/// Exhaustive grid search for the lookahead schedule. Ties go to the larger
/// offset. Throws AllCrashed when no cell completes.
TuneResult tune_lookahead(const std::string& variant, const Raceline& raceline, const TuneGrid& grid,
                          const ControllerConfig& base, const SimConfig& sim, const Workbench& bench,
                          unsigned workers = 1);

nlohmann::json to_json(const TuneResult& r);
std::string tune_csv(const std::vector<TuneResult>& results);

/// Minimum, quartiles, median and maximum (linear interpolation between
/// order statistics). All NaN for an empty sample.
struct BoxStats {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    std::size_t count = 0;
};

BoxStats box_stats(std::vector<double> values);

struct ExperimentSpec {
    std::string raceline = "builtin:reference";
    std::vector<std::string> variants{"pp", "map_pacejka", "map_linear"};
    std::vector<double> scales;  // ascending
    int laps = 10;
    std::vector<double> ablation_scales{0.7, 0.8};
    int ablation_laps = 5;
    std::optional<std::string> vehicle;              // vehicle JSON path
    std::map<std::string, ControllerConfig> controllers;  // fixed configs; others are tuned
    ControllerConfig controller;                     // base for tuned variants
    TuneGrid tune;
    SimConfig sim;
    unsigned workers = 1;
    std::string sweep_csv = "sweep.csv";
    std::string sweep_json = "sweep.json";
    std::string ablation_csv = "ablation.csv";
    std::string ablation_json = "ablation.json";

    /// 0.600, 0.625, ..., 1.000.
    static std::vector<double> default_scales();
    void validate() const;
};

/// Relative paths in the experiment file resolve against base_dir.
ExperimentSpec experiment_spec_from_json(const nlohmann::json& j, const std::string& base_dir = "");
nlohmann::json to_json(const ExperimentSpec& spec);

struct SweepCell {
    std::string variant;
    double scale = 0.0;
    int laps_completed = 0;
    bool crashed = false;
    int crash_lap = -1;
    BoxStats lap_time;
    BoxStats rms;
};

struct SweepResult {
    std::vector<SweepCell> cells;  // variants outer, scales inner
    std::map<std::string, std::optional<double>> first_crash;  // per variant
    std::map<std::string, LookaheadSchedule> schedules;
};

/// Controller configs for every variant of the experiment: fixed ones as given,
/// the rest tuned on the experiment raceline.
std::map<std::string, ControllerConfig> resolve_controllers(const ExperimentSpec& spec, const Raceline& raceline,
                                                            const Workbench& bench,
                                                            std::vector<TuneResult>* tuned = nullptr);

SweepResult velocity_sweep(const ExperimentSpec& spec, const Raceline& raceline, const Workbench& bench,
                           const std::map<std::string, ControllerConfig>& controllers);

std::string sweep_csv(const SweepResult& r);
nlohmann::json to_json(const SweepResult& r);

struct AblationRow {
    std::string variant;
    double scale = 0.0;
    bool completed = false;   // false prints as N.C.
    int laps_completed = 0;
    double lap_time = 0.0;    // mean over completed laps, NaN if none
    double mean_abs_d = 0.0;  // over every recorded sample, including a crashed lap
    double max_abs_d = 0.0;
};

struct AblationReport {
    std::vector<double> scales;
    int laps = 0;
    std::vector<AblationRow> rows;  // scales outer, variants inner

    const AblationRow* find(const std::string& variant, double scale) const;
};

AblationReport ablation_report(const ExperimentSpec& spec, const Raceline& raceline, const Workbench& bench,
                               const std::map<std::string, ControllerConfig>& controllers);

nlohmann::json to_json(const AblationReport& r);
AblationReport ablation_from_json(const nlohmann::json& j);
std::string ablation_csv(const AblationReport& r);

}  // namespace mapctl

#endif  // MAPCTL_EXPERIMENT_HPP
