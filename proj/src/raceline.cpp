#include "mapctl/raceline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mapctl/error.hpp"
#include "mapctl/io.hpp"
#include "mapctl/vehicle.hpp"

namespace mapctl {

namespace {

constexpr double kClosureTolerance = 0.01;
constexpr double kChordTolerance = 0.01;

double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

Raceline::Raceline(std::vector<Waypoint> waypoints, double speed_scale)
    : waypoints_(std::move(waypoints)), speed_scale_(speed_scale) {
    if (waypoints_.size() < 4) throw InvalidArgument("raceline needs at least 4 waypoints");
    for (std::size_t i = 0; i < waypoints_.size(); ++i) {
        const auto& w = waypoints_[i];
        for (double v : {w.s, w.x, w.y, w.psi, w.kappa, w.v_ref, w.w_left, w.w_right})
            if (!std::isfinite(v)) throw InvalidArgument("raceline waypoint " + std::to_string(i) + " has non-finite values");
        if (!(w.w_left > 0.0) || !(w.w_right > 0.0))
            throw InvalidArgument("raceline waypoint " + std::to_string(i) + ": half-widths must be > 0");
        if (w.v_ref < 0.0) throw InvalidArgument("raceline waypoint " + std::to_string(i) + ": negative v_ref");
        if (i == 0) continue;
        const auto& p = waypoints_[i - 1];
        const double ds = w.s - p.s;
        if (!(ds > 0.0)) throw InvalidArgument("raceline s must be strictly increasing (waypoint " + std::to_string(i) + ")");
        const double chord = dist({p.x, p.y}, {w.x, w.y});
        if (std::abs(chord - ds) > kChordTolerance * ds)
            throw InvalidArgument("raceline chord length disagrees with ds at waypoint " + std::to_string(i));
    }
    const auto& first = waypoints_.front();
    const auto& last = waypoints_.back();
    if (dist({first.x, first.y}, {last.x, last.y}) > kClosureTolerance)
        throw InvalidArgument("raceline is not closed: last waypoint must repeat the first within 1 cm");
    length_ = last.s - first.s;
    if (!(speed_scale_ > 0.0)) throw InvalidArgument("speed scale must be > 0");
}

double Raceline::wrap_s(double s) const {
    const double s0 = waypoints_.front().s;
    double r = std::fmod(s - s0, length_);
    if (r < 0.0) r += length_;
    if (r >= length_) r = 0.0;
    return s0 + r;
}

std::size_t Raceline::segment_at(double s) const {
    s = wrap_s(s);
    auto it = std::upper_bound(waypoints_.begin(), waypoints_.end(), s,
                               [](double v, const Waypoint& w) { return v < w.s; });
    std::size_t idx = static_cast<std::size_t>(std::distance(waypoints_.begin(), it));
    idx = idx == 0 ? 0 : idx - 1;
    return std::min(idx, segment_count() - 1);
}

double Raceline::interpolate(double s, double Waypoint::*field) const {
    s = wrap_s(s);
    const auto i = segment_at(s);
    const auto& a = waypoints_[i];
    const auto& b = waypoints_[i + 1];
    const double t = (s - a.s) / (b.s - a.s);
    return a.*field + t * (b.*field - a.*field);
}

Vec2 Raceline::position_at(double s) const {
    return {interpolate(s, &Waypoint::x), interpolate(s, &Waypoint::y)};
}
double Raceline::v_ref_at(double s) const { return interpolate(s, &Waypoint::v_ref); }
double Raceline::w_left_at(double s) const { return interpolate(s, &Waypoint::w_left); }
double Raceline::w_right_at(double s) const { return interpolate(s, &Waypoint::w_right); }

namespace {

Projection project_segment(Vec2 p, const Raceline& rl, std::size_t i) {
    const auto& a = rl.waypoints()[i];
    const auto& b = rl.waypoints()[i + 1];
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
    t = std::clamp(t, 0.0, 1.0);
    Projection out;
    out.foot = {a.x + t * dx, a.y + t * dy};
    out.segment = i;
    out.s = a.s + t * (b.s - a.s);
    const double cross = dx * (p.y - out.foot.y) - dy * (p.x - out.foot.x);
    const double dd = dist(p, out.foot);
    out.d = cross >= 0.0 ? dd : -dd;
    return out;
}

}  // namespace

Projection project(Vec2 point, const Raceline& raceline) {
    if (raceline.segment_count() == 0) throw InvalidArgument("empty raceline");
    Projection best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < raceline.segment_count(); ++i) {
        auto p = project_segment(point, raceline, i);
        const double ad = std::abs(p.d);
        if (ad < best_dist) {
            best_dist = ad;
            best = p;
        }
    }
    best.s = raceline.wrap_s(best.s);
    return best;
}

Projection project_near(Vec2 point, const Raceline& raceline, double hint_s, double window) {
    if (window * 2.0 >= raceline.length()) return project(point, raceline);
    const std::size_t n = raceline.segment_count();
    std::size_t i = raceline.segment_at(hint_s - window);
    double covered = 0.0;
    Projection best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n && covered <= 2.0 * window; ++k) {
        auto p = project_segment(point, raceline, i);
        const double ad = std::abs(p.d);
        if (ad < best_dist) {
            best_dist = ad;
            best = p;
        }
        const auto& w = raceline.waypoints();
        covered += w[i + 1].s - w[i].s;
        i = (i + 1) % n;
    }
    best.s = raceline.wrap_s(best.s);
    return best;
}

LookaheadResult lookahead_point(Vec2 position, double direction, double lookahead,
                                const Raceline& raceline, const Projection& proj) {
    if (!(lookahead > 0.0)) throw InvalidArgument("lookahead distance must be > 0");
    const auto& w = raceline.waypoints();
    const std::size_t n = raceline.segment_count();
    const double r2 = lookahead * lookahead;

    auto finish = [&](Vec2 target, double s, bool fallback) {
        LookaheadResult out;
        out.point = target;
        out.s = raceline.wrap_s(s);
        out.fallback = fallback;
        out.eta = normalize_angle(std::atan2(target.y - position.y, target.x - position.x) - direction);
        return out;
    };

    Vec2 a = proj.foot;
    double sa = proj.s;
    std::size_t seg = proj.segment;
    if (dist(a, position) < lookahead) {
        double travelled = 0.0;
        for (std::size_t k = 0; k <= n; ++k) {
            const Vec2 b{w[seg + 1].x, w[seg + 1].y};
            const double seg_len = dist(a, b);
            const double fx = a.x - position.x;
            const double fy = a.y - position.y;
            const double ex = b.x - position.x;
            const double ey = b.y - position.y;
            if (ex * ex + ey * ey >= r2 && seg_len > 0.0) {
                const double dx = b.x - a.x;
                const double dy = b.y - a.y;
                const double A = dx * dx + dy * dy;
                const double B = fx * dx + fy * dy;
                const double C = fx * fx + fy * fy - r2;
                const double t = std::clamp((-B + std::sqrt(std::max(B * B - A * C, 0.0))) / A, 0.0, 1.0);
                const Vec2 target{a.x + t * dx, a.y + t * dy};
                return finish(target, sa + t * seg_len, false);
            }
            travelled += seg_len;
            if (travelled > raceline.length()) break;
            sa += seg_len;
            a = b;
            seg = (seg + 1) % n;
        }
    }
    const double s_target = proj.s + lookahead;
    return finish(raceline.position_at(s_target), s_target, true);
}

LookaheadResult lookahead_point(Vec2 position, double direction, double lookahead,
                                const Raceline& raceline) {
    return lookahead_point(position, direction, lookahead, raceline, project(position, raceline));
}

Raceline scale_profile(const Raceline& raceline, double scale) {
    if (!(scale > 0.0 && scale <= 1.2)) throw InvalidArgument("speed scale must be in (0, 1.2]");
    auto wps = raceline.waypoints();
    for (auto& w : wps) w.v_ref *= scale;
    return Raceline(std::move(wps), raceline.speed_scale() * scale);
}

Raceline forward_backward_profile(const Raceline& raceline, double a_long_max, double a_lat_max,
                                  double v_max) {
    if (!(a_long_max > 0.0) || !(a_lat_max > 0.0) || !(v_max > 0.0))
        throw InvalidArgument("profile limits must be > 0");
    auto wps = raceline.waypoints();
    const std::size_t n = wps.size() - 1;  // unique points, last repeats first
    std::vector<double> limit(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double k = std::abs(wps[i].kappa);
        limit[i] = k > 0.0 ? std::min(v_max, std::sqrt(a_lat_max / k)) : v_max;
    }
    const std::size_t start = static_cast<std::size_t>(
        std::distance(limit.begin(), std::min_element(limit.begin(), limit.end())));
    auto ds = [&](std::size_t i) { return wps[i + 1].s - wps[i].s; };  // i -> i+1

    std::vector<double> fwd = limit;
    for (std::size_t k = 1; k <= n; ++k) {
        const std::size_t prev = (start + k - 1) % n;
        const std::size_t cur = (start + k) % n;
        fwd[cur] = std::min(fwd[cur], std::sqrt(fwd[prev] * fwd[prev] + 2.0 * a_long_max * ds(prev)));
    }
    std::vector<double> bwd = limit;
    for (std::size_t k = 1; k <= n; ++k) {
        const std::size_t next = (start + n - k + 1) % n;
        const std::size_t cur = (start + n - k) % n;
        bwd[cur] = std::min(bwd[cur], std::sqrt(bwd[next] * bwd[next] + 2.0 * a_long_max * ds(cur)));
    }
    for (std::size_t i = 0; i < n; ++i) wps[i].v_ref = std::min(fwd[i], bwd[i]);
    wps[n].v_ref = wps[0].v_ref;
    return Raceline(std::move(wps), 1.0);
}

namespace {

const std::vector<std::string> kRacelineColumns{"s", "x", "y", "psi", "kappa", "v_ref", "w_left", "w_right"};

}  // namespace

Raceline raceline_from_csv_text(const std::string& text, const std::string& origin) {
    const auto table = io::parse_csv(text, origin);
    std::vector<int> idx;
    for (const auto& c : kRacelineColumns) {
        const int i = table.column(c);
        if (i < 0) throw InvalidArgument(origin + ": raceline CSV missing column '" + c + "'");
        idx.push_back(i);
    }
    std::vector<Waypoint> wps;
    wps.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        wps.push_back({r[idx[0]], r[idx[1]], r[idx[2]], r[idx[3]], r[idx[4]], r[idx[5]], r[idx[6]], r[idx[7]]});
    }
    return Raceline(std::move(wps));
}

Raceline load_raceline(const std::string& path) {
    const std::string prefix = "builtin:";
    if (path.rfind(prefix, 0) == 0) return builtin_track(path.substr(prefix.size()));
    return raceline_from_csv_text(io::read_text(path), path);
}

std::string raceline_csv(const Raceline& raceline) {
    io::CsvTable t;
    t.header = kRacelineColumns;
    for (const auto& w : raceline.waypoints())
        t.rows.push_back({w.s, w.x, w.y, w.psi, w.kappa, w.v_ref, w.w_left, w.w_right});
    return io::to_csv_text(t);
}

void save_raceline(const std::string& path, const Raceline& raceline) {
    io::write_text(path, raceline_csv(raceline));
}

bool outside_track(const TraceSample& sample, const Raceline& raceline) {
    const double limit = sample.d >= 0.0 ? raceline.w_left_at(sample.s) : raceline.w_right_at(sample.s);
    return std::abs(sample.d) > limit;
}

LapMetrics lap_metrics(std::span<const TraceSample> trace, const Raceline& raceline) {
    if (trace.empty()) throw IncompleteLap("empty trace");
    const double L = raceline.length();
    const double first = trace.front().progress;
    const double start_mark = std::ceil(first / L - 1e-9) * L;
    const double end_mark = start_mark + L;

    auto crossing_time = [&](std::size_t i, double mark) {
        const auto& a = trace[i - 1];
        const auto& b = trace[i];
        const double span = b.progress - a.progress;
        const double t = span > 0.0 ? (mark - a.progress) / span : 1.0;
        return a.t + t * (b.t - a.t);
    };

    LapMetrics m;
    m.lap_time = std::numeric_limits<double>::quiet_NaN();
    double t_start = std::numeric_limits<double>::quiet_NaN();
    double sum_sq = 0.0;
    double sum_abs = 0.0;
    bool started = false;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto& smp = trace[i];
        if (!started) {
            if (smp.progress + 1e-12 < start_mark) continue;
            started = true;
            t_start = (i == 0 || smp.progress == start_mark) ? smp.t : crossing_time(i, start_mark);
        }
        if (smp.progress >= end_mark) {
            m.lap_time = crossing_time(i, end_mark) - t_start;
            break;
        }
        const double ad = std::abs(smp.d);
        sum_sq += smp.d * smp.d;
        sum_abs += ad;
        m.max_abs_d = std::max(m.max_abs_d, ad);
        ++m.samples;
        if (outside_track(smp, raceline)) {
            m.crashed = true;
            m.lap_time = std::numeric_limits<double>::quiet_NaN();
            break;
        }
    }
    if (!started || (!m.crashed && std::isnan(m.lap_time)))
        throw IncompleteLap("trace does not cover a full lap");
    if (m.samples > 0) {
        m.rms_d = std::sqrt(sum_sq / static_cast<double>(m.samples));
        m.mean_abs_d = sum_abs / static_cast<double>(m.samples);
    }
    return m;
}

namespace {

/// Builds a closed polyline from straight and arc pieces.
class TrackBuilder {
public:
    explicit TrackBuilder(double spacing) : spacing_(spacing) { add_point(0.0); }

    void straight(double length) {
        const int steps = std::max(1, static_cast<int>(std::ceil(length / spacing_)));
        const double ds = length / steps;
        for (int i = 0; i < steps; ++i) {
            x_ += ds * std::cos(psi_);
            y_ += ds * std::sin(psi_);
            add_point(0.0);
        }
    }

    /// Positive angle turns left.
    void arc(double radius, double angle) {
        const double len = radius * std::abs(angle);
        const int steps = std::max(1, static_cast<int>(std::ceil(len / spacing_)));
        const double dpsi = angle / steps;
        const double chord = 2.0 * radius * std::sin(std::abs(dpsi) / 2.0);
        const double kappa = (angle > 0 ? 1.0 : -1.0) / radius;
        kappas_.back() = kappas_.size() == 1 ? kappa : 0.5 * (kappas_.back() + kappa);
        for (int i = 0; i < steps; ++i) {
            const double mid = psi_ + 0.5 * dpsi;
            x_ += chord * std::cos(mid);
            y_ += chord * std::sin(mid);
            psi_ += dpsi;
            add_point(kappa);
        }
        kappas_.back() = 0.5 * kappa;  // transition into the next piece
    }

    double x() const { return x_; }
    double y() const { return y_; }
    double heading() const { return psi_; }

    Raceline finish(double half_width) {
        if (std::hypot(x_ - xs_.front(), y_ - ys_.front()) > 1e-6)
            throw Error("track pieces do not close");
        xs_.back() = xs_.front();
        ys_.back() = ys_.front();
        kappas_.front() = 0.5 * (kappas_.front() + kappas_.back());
        kappas_.back() = kappas_.front();
        std::vector<Waypoint> wps;
        double s = 0.0;
        for (std::size_t i = 0; i < xs_.size(); ++i) {
            if (i > 0) s += std::hypot(xs_[i] - xs_[i - 1], ys_[i] - ys_[i - 1]);
            const std::size_t j = i + 1 < xs_.size() ? i + 1 : 1;
            const std::size_t k = i + 1 < xs_.size() ? i : 0;
            const double psi = std::atan2(ys_[j] - ys_[k], xs_[j] - xs_[k]);
            wps.push_back({s, xs_[i], ys_[i], psi, kappas_[i], 1.0, half_width, half_width});
        }
        return Raceline(std::move(wps));
    }

private:
    void add_point(double kappa) {
        xs_.push_back(x_);
        ys_.push_back(y_);
        kappas_.push_back(kappa);
    }

    double spacing_;
    double x_ = 0.0;
    double y_ = 0.0;
    double psi_ = 0.0;
    std::vector<double> xs_, ys_, kappas_;
};

constexpr double kTrackVmax = 8.5;
constexpr double kTrackALat = 11.0;
constexpr double kTrackALong = 1.5;
constexpr double kTrackHalfWidth = 0.6;

Raceline make_oval() {
    constexpr double pi = std::numbers::pi;
    TrackBuilder b(0.1);
    b.straight(8.0);
    b.arc(2.5, pi);
    b.straight(8.0);
    b.arc(2.5, pi);
    return forward_backward_profile(b.finish(kTrackHalfWidth), kTrackALong, kTrackALat, kTrackVmax);
}

Raceline make_reference() {
    constexpr double pi = std::numbers::pi;
    TrackBuilder b(0.1);
    b.straight(10.0);
    b.arc(3.0, pi / 2);
    b.straight(3.0);
    b.arc(2.5, pi / 2);
    b.straight(6.0);
    // chicane: right, left, right with no net heading change
    b.arc(3.0, -pi / 6);
    b.arc(3.0, pi / 3);
    b.arc(3.0, -pi / 6);
    b.straight(1.0);
    b.arc(2.0, pi / 2);
    b.straight(4.5);
    b.arc(2.0, pi / 2);
    // close along +x
    const double gap = -b.x();
    if (gap <= 0.0 || std::abs(b.y()) > 1e-9) throw Error("reference track does not close");
    b.straight(gap);
    return forward_backward_profile(b.finish(kTrackHalfWidth), kTrackALong, kTrackALat, kTrackVmax);
}

}  // namespace

std::vector<std::string> builtin_track_names() { return {"oval", "reference"}; }

Raceline builtin_track(const std::string& name) {
    if (name == "oval") return make_oval();
    if (name == "reference") return make_reference();
    throw InvalidArgument("unknown builtin track '" + name + "' (known: oval, reference)");
}

Raceline straight_track(double length, double v_ref, double half_width) {
    constexpr double pi = std::numbers::pi;
    TrackBuilder b(0.25);
    b.straight(length);
    b.arc(50.0, pi);
    b.straight(length);
    b.arc(50.0, pi);
    auto rl = b.finish(half_width);
    auto wps = rl.waypoints();
    for (auto& w : wps) w.v_ref = v_ref;
    return Raceline(std::move(wps));
}

}  // namespace mapctl
