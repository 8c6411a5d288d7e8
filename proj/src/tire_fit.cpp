#include "mapctl/tire_fit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "mapctl/error.hpp"
#include "mapctl/io.hpp"

namespace mapctl {

std::pair<double, double> forces_from_imu(const CorneringSample& sample, const VehicleParams& params) {
    const double c = std::cos(sample.delta);
    if (!(std::abs(sample.delta) < 0.5 * 3.141592653589793) || c <= 0.1)
        throw InvalidArgument("steering angle too close to 90 deg for force reconstruction");
    const double l = params.l_r + params.l_f;
    return {params.mass * params.l_r / (l * c) * sample.ay, params.mass * params.l_f / l * sample.ay};
}

namespace {

/// Slip x >= 0 with pacejka_force(x) = f on the rising branch; saturates at the peak.
double invert_pacejka(double f, double fz, const AxleTireParams& p) {
    const double target = std::abs(f);
    double peak_x = 0.0;
    double peak_f = 0.0;
    for (int i = 1; i <= 2000; ++i) {
        const double x = 1.5 * i / 2000.0;
        const double v = pacejka_force(x, fz, 1.0, p);
        if (v <= peak_f) break;
        peak_f = v;
        peak_x = x;
    }
    double lo = 0.0;
    double hi = peak_x;
    if (target >= peak_f) return std::copysign(peak_x, f);
    for (int i = 0; i < 100; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (pacejka_force(mid, fz, 1.0, p) < target) lo = mid;
        else hi = mid;
    }
    return std::copysign(0.5 * (lo + hi), f);
}

}  // namespace

SlipAngles slip_angles_steady(const CorneringSample& sample, const VehicleParams& params,
                              const std::optional<AxleTireParams>& rear_prior) {
    if (!(sample.v > kMinDynamicSpeed)) throw InvalidArgument("steady-state slip needs v > 0.5 m/s");
    const double r = std::isfinite(sample.yaw_rate) ? sample.yaw_rate : sample.ay / sample.v;
    double vy = sample.vy;
    if (!std::isfinite(vy)) {
        if (!rear_prior) throw InvalidArgument("sample has no lateral velocity and no rear tire prior was given");
        const double fz_r = axle_loads(0.0, params).rear;
        const double fy_r = forces_from_imu(sample, params).second;
        // physical force opposes slip: fy_r = -pacejka(alpha_r)
        const double alpha_r = -invert_pacejka(fy_r, fz_r, *rear_prior);
        vy = sample.v * std::tan(alpha_r) + r * params.l_r;
    }
    VehicleState s;
    s.vx = sample.v;
    s.vy = vy;
    s.yaw_rate = r;
    return slip_angles(s, sample.delta, params);
}

namespace {

constexpr double kBMin = 1e-3;
constexpr double kCMax = 1.5;
constexpr double kEMax = 1.1;
constexpr double kEMin = -10.0;
constexpr double kDMin = 1e-3;

using Vec4 = Eigen::Vector4d;

Vec4 clamp_params(Vec4 p) {
    p[0] = std::clamp(p[0], kBMin, 1e3);
    p[1] = std::clamp(p[1], 1e-3, kCMax);
    p[2] = std::clamp(p[2], kDMin, 1e2);
    p[3] = std::clamp(p[3], kEMin, kEMax);
    return p;
}

/// Model value and gradient with respect to (B, C, D, E) at slip x.
double model_and_grad(double x, double fz, const Vec4& p, Vec4* grad) {
    const double B = p[0], C = p[1], D = p[2], E = p[3];
    const double bx = B * x;
    const double at_bx = std::atan(bx);
    const double u = bx - E * (bx - at_bx);
    const double phi = std::atan(u);
    const double s = std::sin(C * phi);
    if (grad) {
        const double c = std::cos(C * phi);
        const double dphi_du = 1.0 / (1.0 + u * u);
        const double du_dB = x - E * (x - x / (1.0 + bx * bx));
        const double du_dE = -(bx - at_bx);
        const double k = fz * D * c * C * dphi_du;
        (*grad)[0] = k * du_dB;
        (*grad)[1] = fz * D * c * phi;
        (*grad)[2] = fz * s;
        (*grad)[3] = k * du_dE;
    }
    return fz * D * s;
}

double cost(const std::vector<double>& x, const std::vector<double>& y, double fz, const Vec4& p) {
    double c = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = model_and_grad(x[i], fz, p, nullptr) - y[i];
        c += r * r;
    }
    return c;
}

/// Projected Levenberg-Marquardt from one start.
Vec4 local_fit(const std::vector<double>& x, const std::vector<double>& y, double fz, Vec4 p, int max_iter,
               double* final_cost) {
    p = clamp_params(p);
    double c = cost(x, y, fz, p);
    double lambda = 1e-3;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
        Vec4 jtr = Vec4::Zero();
        Vec4 g;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = model_and_grad(x[i], fz, p, &g) - y[i];
            jtj.noalias() += g * g.transpose();
            jtr.noalias() += g * r;
        }
        bool improved = false;
        for (int tries = 0; tries < 20; ++tries) {
            Eigen::Matrix4d a = jtj;
            for (int k = 0; k < 4; ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-12);
            const Vec4 step = a.ldlt().solve(-jtr);
            if (!step.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            const Vec4 cand = clamp_params(p + step);
            const double cc = cost(x, y, fz, cand);
            if (cc < c) {
                const double rel = (c - cc) / std::max(c, 1e-300);
                const double moved = (cand - p).norm();
                p = cand;
                c = cc;
                lambda = std::max(lambda / 3.0, 1e-12);
                improved = true;
                if (rel < 1e-15 || moved < 1e-13 * (1.0 + p.norm())) it = max_iter;
                break;
            }
            lambda *= 4.0;
        }
        if (!improved || c == 0.0) break;
    }
    if (final_cost) *final_cost = c;
    return p;
}

AxleTireParams to_tire(const Vec4& p) { return {p[0], p[1], p[2], p[3]}; }

Vec4 to_vec(const AxleTireParams& t) { return {t.B, t.C, t.D, t.E}; }

}  // namespace

AxleTireParams fit_pacejka_axle(const std::vector<double>& slip, const std::vector<double>& force, double fz,
                                const FitOptions& options, const std::optional<AxleTireParams>& start) {
    if (slip.size() != force.size()) throw InvalidArgument("slip and force sizes differ");
    if (slip.size() < 4) throw FitDiverged("too few points for a Magic Formula fit");
    if (!(fz > 0.0)) throw InvalidArgument("axle load must be > 0");
    std::vector<double> x(slip.size());
    for (std::size_t i = 0; i < slip.size(); ++i) x[i] = -slip[i];  // model argument with F = pacejka(x)

    double best_cost = std::numeric_limits<double>::infinity();
    Vec4 best = Vec4::Zero();
    auto consider = [&](const Vec4& p0) {
        double c = 0.0;
        const Vec4 p = local_fit(x, force, fz, p0, options.max_iterations, &c);
        if (c < best_cost) {
            best_cost = c;
            best = p;
        }
    };
    if (start) {
        consider(to_vec(*start));
        for (double c0 : options.c_starts) consider({start->B, c0, start->D, start->E});
    } else {
        double fmax = 0.0;
        for (double f : force) fmax = std::max(fmax, std::abs(f));
        const double d0 = std::max(fmax / fz, 0.1);
        const int n = std::max(1, options.b_starts);
        for (int i = 0; i < n; ++i) {
            const double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
            const double b0 = options.b_min * std::pow(options.b_max / options.b_min, t);
            for (double c0 : options.c_starts) consider({b0, c0, d0, 0.0});
        }
    }
    if (!std::isfinite(best_cost)) throw FitDiverged("Magic Formula fit failed to converge");
    return to_tire(best);
}

namespace {

struct AxleData {
    std::vector<std::size_t> index;  // into the input samples
    std::vector<double> slip;
    std::vector<double> force;
    double fz = 0.0;
};

struct Prepared {
    AxleData front;
    AxleData rear;
    std::vector<bool> used;
};

Prepared prepare(const std::vector<CorneringSample>& samples, const VehicleParams& params, const FitOptions& options) {
    params.validate();
    Prepared out;
    out.used.assign(samples.size(), false);
    const auto loads = axle_loads(0.0, params);
    out.front.fz = loads.front;
    out.rear.fz = loads.rear;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (!std::isfinite(s.v) || !std::isfinite(s.delta) || !std::isfinite(s.ay) || !(s.v > kMinDynamicSpeed)) continue;
        // steady-state filter on the logged yaw rate
        if (std::isfinite(s.yaw_rate)) {
            double worst = 0.0;
            for (std::size_t j : {i - 1, i + 1}) {
                if (j >= samples.size() || !std::isfinite(samples[j].yaw_rate)) continue;
                const double dt = samples[j].t - s.t;
                if (dt == 0.0) continue;
                worst = std::max(worst, std::abs((samples[j].yaw_rate - s.yaw_rate) / dt));
            }
            if (worst > options.max_yaw_accel) continue;
        }
        const auto [ff, fr] = forces_from_imu(s, params);
        const auto slip = slip_angles_steady(s, params, options.rear_prior);
        out.used[i] = true;
        out.front.index.push_back(i);
        out.front.slip.push_back(slip.front);
        out.front.force.push_back(ff);
        out.rear.index.push_back(i);
        out.rear.slip.push_back(slip.rear);
        out.rear.force.push_back(fr);
    }
    return out;
}

/// Model hooks for the shared rejection loop.
struct AxleModel {
    virtual ~AxleModel() = default;
    virtual void fit(const std::vector<double>& slip, const std::vector<double>& force, double fz, bool warm) = 0;
    virtual double predict(double slip, double fz) const = 0;
    virtual std::array<double, 4> params() const = 0;
};

struct PacejkaAxleModel final : AxleModel {
    explicit PacejkaAxleModel(const FitOptions& o) : options(o) {}
    void fit(const std::vector<double>& slip, const std::vector<double>& force, double fz, bool warm) override {
        tire = fit_pacejka_axle(slip, force, fz, options, warm ? std::optional<AxleTireParams>(tire) : std::nullopt);
    }
    double predict(double slip, double fz) const override { return -pacejka_force(slip, fz, 1.0, tire); }
    std::array<double, 4> params() const override { return {tire.B, tire.C, tire.D, tire.E}; }
    const FitOptions& options;
    AxleTireParams tire;
};

struct LinearAxleModel final : AxleModel {
    void fit(const std::vector<double>& slip, const std::vector<double>& force, double, bool) override {
        double sxx = 0.0;
        double sxy = 0.0;
        for (std::size_t i = 0; i < slip.size(); ++i) {
            sxx += slip[i] * slip[i];
            sxy += -slip[i] * force[i];
        }
        if (!(sxx > 0.0)) throw FitDiverged("linear fit needs non-zero slip angles");
        stiffness = sxy / sxx;
    }
    double predict(double slip, double) const override { return linear_force(slip, stiffness); }
    std::array<double, 4> params() const override { return {stiffness, 0.0, 0.0, 0.0}; }
    double stiffness = 0.0;
};

AxleFit run_axle(const char* name, const AxleData& data, std::size_t n_samples, AxleModel& model,
                 const FitOptions& options, std::vector<FitIteration>& trace) {
    if (data.slip.size() < options.min_inliers)
        throw FitDiverged(std::string(name) + " axle: only " + std::to_string(data.slip.size()) + " usable samples");
    std::vector<std::size_t> keep(data.slip.size());
    std::iota(keep.begin(), keep.end(), 0);

    auto subset = [&](const std::vector<double>& v) {
        std::vector<double> out;
        out.reserve(keep.size());
        for (auto k : keep) out.push_back(v[k]);
        return out;
    };
    auto mean_abs = [&] {
        double sum = 0.0;
        for (auto k : keep) sum += std::abs(model.predict(data.slip[k], data.fz) - data.force[k]);
        return keep.empty() ? 0.0 : sum / static_cast<double>(keep.size());
    };

    model.fit(data.slip, data.force, data.fz, false);
    trace.push_back({name, 0, std::numeric_limits<double>::infinity(), keep.size(), mean_abs(), model.params()});
    for (std::size_t k = 0; k < kEmThresholds.size(); ++k) {
        const double threshold = kEmThresholds[k];
        std::vector<std::size_t> next;
        for (auto i : keep)
            if (std::abs(model.predict(data.slip[i], data.fz) - data.force[i]) < threshold) next.push_back(i);
        keep = std::move(next);
        if (keep.size() < options.min_inliers)
            throw FitDiverged(std::string(name) + " axle: " + std::to_string(keep.size()) +
                              " inliers left after rejection step " + std::to_string(k + 1));
        model.fit(subset(data.slip), subset(data.force), data.fz, true);
        trace.push_back({name, static_cast<int>(k + 1), threshold, keep.size(), mean_abs(), model.params()});
    }

    AxleFit out;
    out.inliers.assign(n_samples, false);
    for (auto k : keep) out.inliers[data.index[k]] = true;
    out.mean_abs_residual = mean_abs();
    out.rejected_fraction = 1.0 - static_cast<double>(keep.size()) / static_cast<double>(data.slip.size());
    return out;
}

void finish_report(FitReport& r, const Prepared& prep) {
    r.used = prep.used;
    std::size_t used = 0;
    std::size_t rejected = 0;
    for (std::size_t i = 0; i < prep.used.size(); ++i) {
        if (!prep.used[i]) continue;
        ++used;
        if (!r.front.inliers[i] || !r.rear.inliers[i]) ++rejected;
    }
    r.rejected_fraction = used ? static_cast<double>(rejected) / static_cast<double>(used) : 0.0;
}

void check_slip_span(const Prepared& prep, const FitOptions& options, FitReport& r) {
    double span = 0.0;
    for (double a : prep.front.slip) span = std::max(span, std::abs(a));
    for (double a : prep.rear.slip) span = std::max(span, std::abs(a));
    if (span < options.min_slip_span)
        r.warnings.push_back("InsufficientSlipSpan: max |alpha| = " + io::format_double(span) + " rad");
}

}  // namespace

FitReport fit_pacejka(const std::vector<CorneringSample>& samples, const VehicleParams& params,
                      const FitOptions& options) {
    const auto prep = prepare(samples, params, options);
    if (prep.front.slip.size() < options.min_samples)
        throw InvalidArgument("Magic Formula fit needs at least " + std::to_string(options.min_samples) +
                              " steady-state samples, got " + std::to_string(prep.front.slip.size()));
    FitReport r;
    check_slip_span(prep, options, r);
    PacejkaAxleModel front(options);
    PacejkaAxleModel rear(options);
    r.front = run_axle("front", prep.front, samples.size(), front, options, r.trace);
    r.front.tire = front.tire;
    r.rear = run_axle("rear", prep.rear, samples.size(), rear, options, r.trace);
    r.rear.tire = rear.tire;
    for (const auto* fit : {&r.front, &r.rear}) {
        const char* axle = fit == &r.front ? "front" : "rear";
        const auto& t = fit->tire;
        if (t.C >= kCMax - 1e-9) r.warnings.push_back(std::string("FitBoundsActive: ") + axle + " C at 1.5");
        if (t.E >= kEMax - 1e-9) r.warnings.push_back(std::string("FitBoundsActive: ") + axle + " E at 1.1");
        if (t.B <= kBMin + 1e-12 || t.D <= kDMin + 1e-12)
            r.warnings.push_back(std::string("FitBoundsActive: ") + axle + " B or D at lower bound");
    }
    finish_report(r, prep);
    return r;
}

FitReport fit_linear(const std::vector<CorneringSample>& samples, const VehicleParams& params,
                     const FitOptions& options) {
    const auto prep = prepare(samples, params, options);
    FitReport r;
    LinearAxleModel front;
    LinearAxleModel rear;
    r.front = run_axle("front", prep.front, samples.size(), front, options, r.trace);
    r.front.stiffness = front.stiffness;
    r.rear = run_axle("rear", prep.rear, samples.size(), rear, options, r.trace);
    r.rear.stiffness = rear.stiffness;
    finish_report(r, prep);
    return r;
}

nlohmann::json to_json(const FitReport& report, bool linear) {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& it : report.trace) {
        nlohmann::json e{{"axle", it.axle},
                         {"step", it.step},
                         {"inliers", it.inliers},
                         {"mean_abs_residual", it.mean_abs_residual}};
        e["threshold"] = std::isfinite(it.threshold) ? nlohmann::json(it.threshold) : nlohmann::json(nullptr);
        if (linear) e["stiffness"] = it.params[0];
        else e["params"] = {{"B", it.params[0]}, {"C", it.params[1]}, {"D", it.params[2]}, {"E", it.params[3]}};
        trace.push_back(e);
    }
    auto axle = [&](const AxleFit& f) {
        nlohmann::json j{{"mean_abs_residual", f.mean_abs_residual}, {"rejected_fraction", f.rejected_fraction}};
        if (linear) j["stiffness"] = f.stiffness;
        else j["tire"] = to_json(f.tire);
        std::vector<int> mask;
        for (bool b : f.inliers) mask.push_back(b ? 1 : 0);
        j["inliers"] = mask;
        return j;
    };
    return {{"model", linear ? "linear" : "pacejka"},
            {"front", axle(report.front)},
            {"rear", axle(report.rear)},
            {"rejected_fraction", report.rejected_fraction},
            {"thresholds", kEmThresholds},
            {"trace", trace},
            {"warnings", report.warnings}};
}

void SweepProfile::validate() const {
    if (speeds.empty()) throw InvalidArgument("sweep profile needs at least one speed");
    for (double v : speeds)
        if (!(v > kMinDynamicSpeed)) throw InvalidArgument("sweep speeds must exceed 0.5 m/s");
    if (!(ramp_rate >= 0.0)) throw InvalidArgument("ramp_rate must be >= 0");
    if (!(max_steer > 0.0) || !(duration > 0.0) || !(record_period > 0.0))
        throw InvalidArgument("max_steer, duration and record_period must be > 0");
    if (!(noise >= 0.0)) throw InvalidArgument("noise must be >= 0");
    if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) throw InvalidArgument("outlier_fraction must be in [0, 1]");
}

SweepProfile sweep_profile_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("sweep profile must be a JSON object");
    SweepProfile p;
    if (j.contains("speeds")) p.speeds = j.at("speeds").get<std::vector<double>>();
    p.ramp_rate = j.value("ramp_rate", p.ramp_rate);
    p.max_steer = j.value("max_steer", p.max_steer);
    p.duration = j.value("duration", p.duration);
    p.record_period = j.value("record_period", p.record_period);
    p.samples = j.value("samples", p.samples);
    p.noise = j.value("noise", p.noise);
    p.outlier_fraction = j.value("outlier_fraction", p.outlier_fraction);
    p.outlier_force = j.value("outlier_force", p.outlier_force);
    p.seed = j.value("seed", p.seed);
    p.max_rear_slip = j.value("max_rear_slip", p.max_rear_slip);
    p.max_vy_rate = j.value("max_vy_rate", p.max_vy_rate);
    p.validate();
    return p;
}

SweepLog generate_sweep_log(const SweepProfile& profile, const VehicleParams& params, const TireModel& tires) {
    profile.validate();
    params.validate();
    validate(tires);
    constexpr double dt = 1e-3;
    const auto record_every = std::max<long>(1, std::lround(profile.record_period / dt));
    const auto max_steps = std::lround(profile.duration / dt);

    SweepLog log;
    double t_offset = 0.0;
    for (double v : profile.speeds) {
        VehicleState s;
        s.vx = v;
        long k = 0;
        for (; k <= max_steps; ++k) {
            const double t = k * dt;
            const double steer = profile.ramp_rate * t;
            if (steer > profile.max_steer) break;
            if (k % record_every == 0) {
                const auto d = dynamics_derivative(s, steer, 0.0, params, tires);
                const auto slip = slip_angles(s, steer, params);
                if (std::abs(slip.rear) > profile.max_rear_slip || std::abs(d.vy) > profile.max_vy_rate ||
                    !std::isfinite(d.vy)) {
                    log.truncated = true;
                    break;
                }
                log.samples.push_back({t_offset + t, v, steer, d.vy + v * s.yaw_rate, s.yaw_rate, s.vy});
            }
            s = rk4_step(s, steer, 0.0, dt, params, tires);
        }
        t_offset += k * dt + 1.0;
    }

    if (profile.samples > 0 && log.samples.size() > profile.samples) {
        std::vector<CorneringSample> thin;
        const std::size_t m = log.samples.size();
        const std::size_t n = profile.samples;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = n == 1 ? 0 : (i * (m - 1) + (n - 1) / 2) / (n - 1);
            thin.push_back(log.samples[idx]);
        }
        log.samples = std::move(thin);
    }

    std::mt19937_64 rng(profile.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    log.outlier.assign(log.samples.size(), false);
    if (profile.noise > 0.0)
        for (auto& s : log.samples) s.ay += profile.noise * std::abs(s.ay) * unit(rng);
    if (profile.outlier_fraction > 0.0 && !log.samples.empty()) {
        const auto count = static_cast<std::size_t>(std::llround(profile.outlier_fraction * log.samples.size()));
        std::vector<std::size_t> order(log.samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const double l = params.l_f + params.l_r;
        const double offset_ay = profile.outlier_force / (params.mass * std::min(params.l_f, params.l_r) / l);
        std::bernoulli_distribution sign(0.5);
        for (std::size_t i = 0; i < count; ++i) {
            auto& s = log.samples[order[i]];
            s.ay += sign(rng) ? offset_ay : -offset_ay;
            log.outlier[order[i]] = true;
        }
    }
    return log;
}

std::vector<CorneringSample> load_cornering_log(const std::string& path) {
    const auto table = io::read_csv(path);
    const int ct = table.column("t"), cv = table.column("v"), cd = table.column("delta"), ca = table.column("ay"),
              cr = table.column("yaw_rate"), cvy = table.column("vy");
    if (ct < 0 || cv < 0 || cd < 0 || ca < 0 || cr < 0)
        throw InvalidArgument(path + ": cornering log needs header t,v,delta,ay,yaw_rate");
    std::vector<CorneringSample> out;
    out.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        CorneringSample s{r[ct], r[cv], r[cd], r[ca], r[cr], cvy >= 0 ? r[cvy] : std::nan("")};
        out.push_back(s);
    }
    return out;
}

std::string cornering_log_csv(const SweepLog& log) {
    io::CsvTable t;
    t.header = {"t", "v", "delta", "ay", "yaw_rate", "vy", "outlier"};
    for (std::size_t i = 0; i < log.samples.size(); ++i) {
        const auto& s = log.samples[i];
        t.rows.push_back({s.t, s.v, s.delta, s.ay, s.yaw_rate, s.vy, log.outlier.empty() ? 0.0 : (log.outlier[i] ? 1.0 : 0.0)});
    }
    return io::to_csv_text(t);
}

}  // namespace mapctl
