#include "mapctl/lut.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "mapctl/error.hpp"
#include "mapctl/io.hpp"

namespace mapctl {

namespace {

constexpr int kLutFormatVersion = 1;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> arange(double lo, double hi, double step) {
    std::vector<double> out;
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
    return out;
}

}  // namespace

LutGrid LutGrid::uniform(double v_lo, double v_hi, double v_step, double d_hi, double d_step) {
    LutGrid g{arange(v_lo, v_hi, v_step), arange(0.0, d_hi, d_step)};
    g.validate();
    return g;
}

LutGrid LutGrid::defaults() { return uniform(0.5, 12.0, 0.25, 0.45, 0.01); }

void LutGrid::validate() const {
    if (velocities.empty() || steering.size() < 2) throw InvalidArgument("LUT grid needs >= 1 velocity and >= 2 steering values");
    if (steering.front() != 0.0) throw InvalidArgument("LUT steering grid must start at 0");
    for (std::size_t i = 1; i < velocities.size(); ++i)
        if (!(velocities[i] > velocities[i - 1])) throw InvalidArgument("LUT velocity grid must be strictly ascending");
    for (std::size_t i = 1; i < steering.size(); ++i)
        if (!(steering[i] > steering[i - 1])) throw InvalidArgument("LUT steering grid must be strictly ascending");
    if (velocities.front() < kMinDynamicSpeed) throw InvalidArgument("LUT velocities must be >= 0.5 m/s");
}

std::optional<SteadyState> propagate_to_steady_state(double vx, double steer, const VehicleParams& params,
                                                     const TireModel& tires, const SteadyStateOptions& opt,
                                                     double vy0, double yaw_rate0) {
    if (!(vx >= kMinDynamicSpeed)) throw InvalidArgument("steady state requires vx >= 0.5 m/s");
    if (std::holds_alternative<NoSlipTires>(tires)) {
        const double r = vx * std::tan(steer) / params.wheelbase();
        return SteadyState{vx * r, 0.0, r};
    }
    VehicleState s{0.0, 0.0, 0.0, vx, vy0, yaw_rate0};
    const auto hold_steps = static_cast<long>(std::llround(opt.hold_time / opt.dt));
    const auto max_steps = static_cast<long>(std::llround(opt.max_time / opt.dt));
    long settled = 0;
    for (long k = 0; k < max_steps; ++k) {
        s = rk4_step(s, steer, 0.0, opt.dt, params, tires);
        s.x = s.y = s.yaw = 0.0;  // pose does not feed back into the lateral dynamics
        const auto d = dynamics_derivative(s, steer, 0.0, params, tires);
        const auto slip = slip_angles(s, steer, params);
        if (!std::isfinite(s.vy) || !std::isfinite(s.yaw_rate) || std::abs(slip.rear) > opt.max_rear_slip)
            return std::nullopt;
        if (std::abs(d.vy) < opt.tolerance && std::abs(d.yaw_rate) < opt.tolerance) {
            if (++settled >= hold_steps) return SteadyState{vx * s.yaw_rate, s.vy, s.yaw_rate};
        } else {
            settled = 0;
        }
    }
    return std::nullopt;
}

std::optional<double> steady_state_accel(double vx, double steer, const VehicleParams& params,
                                         const TireModel& tires, const SteadyStateOptions& opt) {
    auto ss = propagate_to_steady_state(vx, steer, params, tires, opt);
    if (!ss) return std::nullopt;
    return ss->a_ss;
}

SteeringLut::SteeringLut(LutGrid grid, std::vector<double> a_ss, std::string params_hash, std::string tire_hash,
                         std::string tire_kind, SteadyStateOptions options)
    : grid_(std::move(grid)),
      a_ss_(std::move(a_ss)),
      params_hash_(std::move(params_hash)),
      tire_hash_(std::move(tire_hash)),
      tire_kind_(std::move(tire_kind)),
      options_(options) {
    grid_.validate();
    const std::size_t nd = grid_.steering.size();
    if (a_ss_.size() != grid_.velocities.size() * nd) throw InvalidArgument("LUT value count does not match grid");
    stable_count_.resize(grid_.velocities.size());
    for (std::size_t vi = 0; vi < grid_.velocities.size(); ++vi) {
        if (at(vi, 0) != 0.0) throw InvalidArgument("LUT a_ss(v, 0) must be 0");
        std::size_t n = 1;
        while (n < nd && !std::isnan(at(vi, n))) {
            if (!(at(vi, n) > at(vi, n - 1))) throw InvalidArgument("LUT rows must increase strictly in steer");
            ++n;
        }
        for (std::size_t di = n; di < nd; ++di)
            if (!std::isnan(at(vi, di))) throw InvalidArgument("LUT no-solution cells must form a suffix in every row");
        stable_count_[vi] = n;
    }
}

bool SteeringLut::stable(std::size_t vi, std::size_t di) const { return di < stable_count_[vi]; }

double SteeringLut::boundary_steer(std::size_t vi) const { return grid_.steering[stable_count_[vi] - 1]; }

double SteeringLut::max_accel(std::size_t vi) const { return at(vi, stable_count_[vi] - 1); }

namespace {

std::string tire_kind_name(const TireModel& tires) {
    if (std::holds_alternative<PacejkaTires>(tires)) return "pacejka";
    if (std::holds_alternative<LinearTires>(tires)) return "linear";
    return "noslip";
}

void fill_row(std::size_t vi, const LutGrid& grid, const VehicleParams& params, const TireModel& tires,
              const SteadyStateOptions& opt, std::vector<double>& out) {
    const std::size_t nd = grid.steering.size();
    const double v = grid.velocities[vi];
    double* row = out.data() + vi * nd;
    std::vector<std::optional<SteadyState>> states(nd);
    row[0] = 0.0;
    states[0] = SteadyState{};
    std::size_t n = 1;
    for (; n < nd; ++n) {
        states[n] = propagate_to_steady_state(v, grid.steering[n], params, tires, opt);
        if (!states[n] || !(states[n]->a_ss > row[n - 1])) break;
        row[n] = states[n]->a_ss;
    }
    // Re-verify the two cells closest to the boundary from the neighbouring steady state.
    for (std::size_t k = 0; k < 2 && n > 1; ++k) {
        const std::size_t di = n - 1;
        const auto& prev = *states[di - 1];
        auto warm = propagate_to_steady_state(v, grid.steering[di], params, tires, opt, prev.vy, prev.yaw_rate);
        const double ref = row[di];
        if (warm && std::abs(warm->a_ss - ref) <= opt.warm_start_tolerance * std::abs(ref)) break;
        n = di;
    }
    for (std::size_t di = n; di < nd; ++di) row[di] = kNaN;
}

}  // namespace

SteeringLut build_lut(const LutGrid& grid, const VehicleParams& params, const TireModel& tires,
                      const SteadyStateOptions& opt, unsigned workers) {
    grid.validate();
    params.validate();
    validate(tires);
    const std::size_t nv = grid.velocities.size();
    std::vector<double> values(nv * grid.steering.size(), kNaN);
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(nv)));
    if (workers == 1) {
        for (std::size_t vi = 0; vi < nv; ++vi) fill_row(vi, grid, params, tires, opt, values);
    } else {
        // Rows are independent and write disjoint ranges.
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t vi = w; vi < nv; vi += workers) fill_row(vi, grid, params, tires, opt, values);
            });
        }
        for (auto& t : pool) t.join();
    }
    return SteeringLut(grid, std::move(values), params_hash(params), tire_hash(tires), tire_kind_name(tires), opt);
}

namespace {

struct RowInverse {
    double steer = 0.0;
    bool saturated = false;
};

RowInverse invert_row(const SteeringLut& lut, std::size_t vi, double a) {
    const auto& steer = lut.grid().steering;
    const std::size_t n = lut.stable_count(vi);
    if (a >= lut.max_accel(vi)) return {steer[n - 1], a > lut.max_accel(vi) || n == 1};
    // first stable index with a_ss >= a
    std::size_t lo = 0;
    std::size_t hi = n - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (lut.at(vi, mid) >= a) hi = mid;
        else lo = mid;
    }
    const double a0 = lut.at(vi, lo);
    const double a1 = lut.at(vi, hi);
    const double t = (a - a0) / (a1 - a0);
    return {steer[lo] + t * (steer[hi] - steer[lo]), false};
}

}  // namespace

SteeringLookup lookup_steering(const SteeringLut& lut, double vx, double a_des) {
    const auto& vs = lut.grid().velocities;
    SteeringLookup out;
    if (a_des == 0.0 || !std::isfinite(a_des)) return out;
    double v = vx;
    if (v < vs.front() || v > vs.back()) {
        out.speed_clamped = true;
        v = std::clamp(v, vs.front(), vs.back());
    }
    const double mag = std::abs(a_des);
    const double curvature = mag / (vx > 0.0 ? vx * vx : v * v);

    std::size_t hi = static_cast<std::size_t>(std::distance(vs.begin(), std::lower_bound(vs.begin(), vs.end(), v)));
    hi = std::min(hi, vs.size() - 1);
    if (vs[hi] == v || hi == 0) {
        const auto r = invert_row(lut, hi, out.speed_clamped ? curvature * vs[hi] * vs[hi] : mag);
        out.steer = r.steer;
        out.saturated = r.saturated;
    } else {
        const std::size_t lo = hi - 1;
        const double w = (v - vs[lo]) / (vs[hi] - vs[lo]);
        const auto r0 = invert_row(lut, lo, curvature * vs[lo] * vs[lo]);
        const auto r1 = invert_row(lut, hi, curvature * vs[hi] * vs[hi]);
        out.steer = (1.0 - w) * r0.steer + w * r1.steer;
        out.saturated = r0.saturated || r1.saturated;
    }
    if (a_des < 0.0) out.steer = -out.steer;
    return out;
}

std::string lut_csv(const SteeringLut& lut) {
    io::CsvTable t;
    t.header = {"v", "delta", "a_ss"};
    const auto& g = lut.grid();
    for (std::size_t vi = 0; vi < g.velocities.size(); ++vi)
        for (std::size_t di = 0; di < g.steering.size(); ++di)
            t.rows.push_back({g.velocities[vi], g.steering[di], lut.at(vi, di)});
    return io::to_csv_text(t);
}

nlohmann::json lut_meta(const SteeringLut& lut) {
    const auto& o = lut.options();
    nlohmann::json boundary = nlohmann::json::array();
    for (std::size_t vi = 0; vi < lut.grid().velocities.size(); ++vi) boundary.push_back(lut.boundary_steer(vi));
    return {{"format_version", kLutFormatVersion},
            {"grid", {{"velocities", lut.grid().velocities}, {"steering", lut.grid().steering}}},
            {"tolerances",
             {{"dt", o.dt},
              {"tolerance", o.tolerance},
              {"hold_time", o.hold_time},
              {"max_time", o.max_time},
              {"max_rear_slip", o.max_rear_slip},
              {"warm_start_tolerance", o.warm_start_tolerance}}},
            {"params_hash", lut.params_hash()},
            {"tire_hash", lut.tire_hash()},
            {"tire_model", lut.tire_kind()},
            {"stability_boundary", boundary}};
}

void save_lut(const SteeringLut& lut, const std::string& csv_path, const std::string& meta_path) {
    io::write_text(csv_path, lut_csv(lut));
    io::write_text(meta_path, lut_meta(lut).dump(2) + "\n");
}

SteeringLut load_lut(const std::string& csv_path, const std::string& meta_path) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(io::read_text(meta_path));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(meta_path + ": " + e.what());
    }
    if (meta.value("format_version", 0) != kLutFormatVersion) throw InvalidArgument(meta_path + ": unsupported LUT format version");
    LutGrid grid;
    grid.velocities = meta.at("grid").at("velocities").get<std::vector<double>>();
    grid.steering = meta.at("grid").at("steering").get<std::vector<double>>();
    SteadyStateOptions o;
    const auto& tol = meta.at("tolerances");
    o.dt = tol.at("dt").get<double>();
    o.tolerance = tol.at("tolerance").get<double>();
    o.hold_time = tol.at("hold_time").get<double>();
    o.max_time = tol.at("max_time").get<double>();
    o.max_rear_slip = tol.at("max_rear_slip").get<double>();
    o.warm_start_tolerance = tol.at("warm_start_tolerance").get<double>();

    const auto table = io::read_csv(csv_path);
    const int cv = table.column("v"), cd = table.column("delta"), ca = table.column("a_ss");
    if (cv < 0 || cd < 0 || ca < 0) throw InvalidArgument(csv_path + ": LUT CSV needs columns v,delta,a_ss");
    const std::size_t nd = grid.steering.size();
    if (table.rows.size() != grid.velocities.size() * nd) throw InvalidArgument(csv_path + ": LUT size does not match metadata grid");
    std::vector<double> values(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        if (r[cv] != grid.velocities[i / nd] || r[cd] != grid.steering[i % nd])
            throw InvalidArgument(csv_path + ": LUT row " + std::to_string(i + 1) + " is off-grid");
        values[i] = r[ca];
    }
    return SteeringLut(std::move(grid), std::move(values), meta.at("params_hash").get<std::string>(),
                       meta.at("tire_hash").get<std::string>(), meta.at("tire_model").get<std::string>(), o);
}

}  // namespace mapctl
