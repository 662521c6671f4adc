#include "apex/track.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace apex {
namespace {

// 10-point Gauss-Legendre nodes/weights on [-1, 1].
constexpr int kGlOrder = 10;
constexpr double kGlNode[kGlOrder] = {
    -0.9739065285171717, -0.8650633666889845, -0.6794095682990244,
    -0.4333953941292472, -0.1488743389816312, 0.1488743389816312,
    0.4333953941292472,  0.6794095682990244,  0.8650633666889845,
    0.9739065285171717};
constexpr double kGlWeight[kGlOrder] = {
    0.0666713443086881, 0.1494513491505806, 0.2190863625159820,
    0.2692667193099963, 0.2955242247147529, 0.2955242247147529,
    0.2692667193099963, 0.2190863625159820, 0.1494513491505806,
    0.0666713443086881};

}  // namespace

// Exact piecewise geometry of an analytic segment list. Straights and arcs
// use closed forms; clothoids are integrated on short cached panels, so any
// pose query costs at most one 10-point quadrature over <= 1 m.
struct TrackModel::AnalyticGeometry {
    struct Piece {
        double s0 = 0.0, len = 0.0;
        double x0 = 0.0, y0 = 0.0, psi0 = 0.0;
        double k0 = 0.0, k_slope = 0.0;
        // clothoid sub-knot poses every `panel` meters
        std::vector<std::array<double, 3>> sub;
        double panel = 0.0;
    };
    std::vector<Piece> pieces;
    double length = 0.0;
    double end_x = 0.0, end_y = 0.0, end_psi = 0.0;

    static AnalyticGeometry build(const std::vector<TrackSegment>& segments, double psi_start) {
        AnalyticGeometry g;
        double x = 0.0, y = 0.0, psi = psi_start, s = 0.0;
        for (const auto& seg : segments) {
            Piece p;
            p.s0 = s;
            p.x0 = x;
            p.y0 = y;
            p.psi0 = psi;
            switch (seg.type) {
                case TrackSegment::Type::Straight: {
                    if (!(seg.length > 0.0)) throw TrackError("straight needs length > 0");
                    p.len = seg.length;
                    x += p.len * std::cos(psi);
                    y += p.len * std::sin(psi);
                    break;
                }
                case TrackSegment::Type::Arc: {
                    if (!(seg.radius > 0.0)) throw TrackError("arc needs radius > 0");
                    if (seg.angle == 0.0) throw TrackError("arc needs nonzero angle");
                    p.len = seg.radius * std::abs(seg.angle);
                    p.k0 = (seg.angle >= 0.0 ? 1.0 : -1.0) / seg.radius;
                    const double psi1 = psi + p.k0 * p.len;
                    x += (std::sin(psi1) - std::sin(psi)) / p.k0;
                    y += (std::cos(psi) - std::cos(psi1)) / p.k0;
                    psi = psi1;
                    break;
                }
                case TrackSegment::Type::Clothoid: {
                    if (!(seg.length > 0.0)) throw TrackError("clothoid needs length > 0");
                    p.len = seg.length;
                    p.k0 = seg.kappa_begin;
                    p.k_slope = (seg.kappa_end - seg.kappa_begin) / seg.length;
                    const int panels = std::max(1, static_cast<int>(std::ceil(p.len)));
                    p.panel = p.len / panels;
                    p.sub.reserve(panels + 1);
                    double px = x, py = y;
                    p.sub.push_back({px, py, psi});
                    for (int i = 0; i < panels; ++i) {
                        const double u0 = i * p.panel;
                        for (int gq = 0; gq < kGlOrder; ++gq) {
                            const double u = u0 + 0.5 * p.panel * (kGlNode[gq] + 1.0);
                            const double ps = p.psi0 + p.k0 * u + 0.5 * p.k_slope * u * u;
                            px += 0.5 * p.panel * kGlWeight[gq] * std::cos(ps);
                            py += 0.5 * p.panel * kGlWeight[gq] * std::sin(ps);
                        }
                        const double u1 = (i + 1) * p.panel;
                        p.sub.push_back({px, py, p.psi0 + p.k0 * u1 + 0.5 * p.k_slope * u1 * u1});
                    }
                    x = px;
                    y = py;
                    psi = p.psi0 + p.k0 * p.len + 0.5 * p.k_slope * p.len * p.len;
                    break;
                }
            }
            s += p.len;
            g.pieces.push_back(std::move(p));
        }
        g.length = s;
        g.end_x = x;
        g.end_y = y;
        g.end_psi = psi;
        return g;
    }

    const Piece& piece_at(double s) const {
        std::size_t lo = 0, hi = pieces.size();
        while (hi - lo > 1) {
            const std::size_t mid = (lo + hi) / 2;
            if (pieces[mid].s0 <= s)
                lo = mid;
            else
                hi = mid;
        }
        return pieces[lo];
    }

    void pose(double s, double& x, double& y, double& psi) const {
        const Piece& p = piece_at(s);
        const double u = std::clamp(s - p.s0, 0.0, p.len);
        if (!p.sub.empty()) {
            const int i = std::min<int>(static_cast<int>(u / p.panel),
                                        static_cast<int>(p.sub.size()) - 2);
            const double u0 = i * p.panel;
            double px = p.sub[i][0], py = p.sub[i][1];
            const double half = 0.5 * (u - u0);
            for (int gq = 0; gq < kGlOrder; ++gq) {
                const double uu = u0 + half * (kGlNode[gq] + 1.0);
                const double ps = p.psi0 + p.k0 * uu + 0.5 * p.k_slope * uu * uu;
                px += half * kGlWeight[gq] * std::cos(ps);
                py += half * kGlWeight[gq] * std::sin(ps);
            }
            x = px;
            y = py;
            psi = p.psi0 + p.k0 * u + 0.5 * p.k_slope * u * u;
            return;
        }
        if (p.k0 == 0.0) {
            x = p.x0 + u * std::cos(p.psi0);
            y = p.y0 + u * std::sin(p.psi0);
            psi = p.psi0;
            return;
        }
        const double psi1 = p.psi0 + p.k0 * u;
        x = p.x0 + (std::sin(psi1) - std::sin(p.psi0)) / p.k0;
        y = p.y0 + (std::cos(p.psi0) - std::cos(psi1)) / p.k0;
        psi = psi1;
    }

    double kappa_at(double s) const {
        const Piece& p = piece_at(s);
        return p.k0 + p.k_slope * std::clamp(s - p.s0, 0.0, p.len);
    }
};

namespace {

struct ProfileSamples {
    std::vector<double> kappa, bank, wl, wr;
    double length = 0.0;
};

ProfileSamples sample_segments(const std::vector<TrackSegment>& segments,
                               const TrackModel::AnalyticGeometry& geom) {
    ProfileSamples out;
    out.length = geom.length;
    const std::size_t n = static_cast<std::size_t>(std::max(8.0, std::round(geom.length)));
    const double h = geom.length / static_cast<double>(n);
    out.kappa.resize(n);
    out.bank.resize(n);
    out.wl.resize(n);
    out.wr.resize(n);
    // per-segment attribute lookup by arc length
    std::vector<double> seg_end;
    double acc = 0.0;
    for (const auto& p : geom.pieces) {
        acc = p.s0 + p.len;
        seg_end.push_back(acc);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double s = static_cast<double>(i) * h;
        out.kappa[i] = geom.kappa_at(s);
        const auto it = std::upper_bound(seg_end.begin(), seg_end.end(), s);
        const std::size_t j = std::min<std::size_t>(
            static_cast<std::size_t>(it - seg_end.begin()), segments.size() - 1);
        const auto& seg = segments[j];
        if (seg.w_left <= 0.0 || seg.w_right <= 0.0)
            throw TrackError("segment with non-positive track width");
        out.bank[i] = seg.bank;
        out.wl[i] = seg.w_left;
        out.wr[i] = seg.w_right;
    }
    return out;
}

ProfileSamples sample_centerline(const TrackSpec& spec) {
    const auto& pts = spec.centerline;
    const std::size_t np = pts.size();
    ProfileSamples out;
    std::vector<double> chord(np), head(np);
    for (std::size_t i = 0; i < np; ++i) {
        const auto& a = pts[i];
        const auto& b = pts[(i + 1) % np];
        chord[i] = std::hypot(b[0] - a[0], b[1] - a[1]);
        if (chord[i] < 1e-9) throw TrackError("duplicate centerline points");
        head[i] = std::atan2(b[1] - a[1], b[0] - a[0]);
        out.length += chord[i];
    }
    std::vector<double> s_at(np), kap(np);
    double acc = 0.0;
    for (std::size_t i = 0; i < np; ++i) {
        s_at[i] = acc;
        const double prev = head[(i + np - 1) % np];
        const double dpsi = wrap_angle(head[i] - prev);
        const double ds = 0.5 * (chord[(i + np - 1) % np] + chord[i]);
        kap[i] = dpsi / ds;
        acc += chord[i];
    }
    for (std::size_t i = 0; i < np; ++i) {
        if (std::abs(kap[(i + 1) % np] - kap[i]) > 0.1)
            throw TrackError("curvature discontinuity in sampled centerline at s=" +
                             std::to_string(s_at[i]));
    }
    if (spec.sample_w_left <= 0.0 || spec.sample_w_right <= 0.0)
        throw TrackError("sampled track needs positive widths");
    const std::size_t n = static_cast<std::size_t>(std::max(8.0, std::round(out.length)));
    const double h = out.length / static_cast<double>(n);
    out.kappa.resize(n);
    out.bank.assign(n, spec.sample_bank);
    out.wl.assign(n, spec.sample_w_left);
    out.wr.assign(n, spec.sample_w_right);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = static_cast<double>(i) * h;
        const auto it = std::upper_bound(s_at.begin(), s_at.end(), s);
        const std::size_t j = (it == s_at.begin()) ? 0 : static_cast<std::size_t>(it - s_at.begin() - 1);
        const std::size_t j1 = (j + 1) % np;
        const double span = (j1 == 0) ? (out.length - s_at[j]) : (s_at[j1] - s_at[j]);
        const double t = std::clamp((s - s_at[j]) / span, 0.0, 1.0);
        out.kappa[i] = (1.0 - t) * kap[j] + t * kap[j1];
    }
    return out;
}

}  // namespace

TrackModel::TrackModel() = default;
TrackModel::~TrackModel() = default;
TrackModel::TrackModel(TrackModel&&) noexcept = default;
TrackModel& TrackModel::operator=(TrackModel&&) noexcept = default;
TrackModel::TrackModel(const TrackModel& other)
    : name_(other.name_),
      length_(other.length_),
      knot_step_(other.knot_step_),
      kappa_spline_(other.kappa_spline_),
      bank_(other.bank_),
      wl_(other.wl_),
      wr_(other.wr_),
      corr_sin_(other.corr_sin_),
      corr_cos_(other.corr_cos_),
      psi0_(other.psi0_),
      psi_knots_(other.psi_knots_),
      x_knots_(other.x_knots_),
      y_knots_(other.y_knots_) {
    if (other.geom_) geom_ = std::make_unique<AnalyticGeometry>(*other.geom_);
}

TrackModel TrackModel::build(const TrackSpec& spec) {
    TrackModel track;
    track.name_ = spec.name;
    track.psi0_ = spec.start_heading;

    ProfileSamples samples;
    if (!spec.segments.empty()) {
        auto geom = std::make_unique<AnalyticGeometry>(
            AnalyticGeometry::build(spec.segments, spec.start_heading));
        const double turn = geom->end_psi - spec.start_heading;
        if (std::abs(std::abs(turn) - 2.0 * M_PI) > 1e-6)
            throw TrackError("track does not close: net heading change " + std::to_string(turn));
        const double gap = std::hypot(geom->end_x, geom->end_y);
        if (gap > 1e-3)
            throw TrackError("track does not close: endpoint gap " + std::to_string(gap) + " m");
        samples = sample_segments(spec.segments, *geom);
        if (gap <= 1e-9 * std::max(1.0, geom->length)) {
            track.geom_ = std::move(geom);  // exact closed geometry
        }
        // else: fall through to the integrated geometry below, which absorbs
        // the residual gap into a smooth curvature correction.
    } else if (spec.centerline.size() >= 8) {
        samples = sample_centerline(spec);
        const auto& a = spec.centerline[0];
        const auto& b = spec.centerline[1];
        track.psi0_ = std::atan2(b[1] - a[1], b[0] - a[0]);
    } else {
        throw TrackError("track spec needs segments or >= 8 centerline points");
    }

    track.length_ = samples.length;
    track.knot_step_ = samples.length / static_cast<double>(samples.kappa.size());
    track.kappa_spline_ = PeriodicSpline(samples.kappa, samples.length);
    track.bank_ = PeriodicSpline(samples.bank, samples.length);
    track.wl_ = PeriodicSpline(samples.wl, samples.length);
    track.wr_ = PeriodicSpline(samples.wr, samples.length);

    for (double s = 0.0; s < samples.length; s += 0.25 * track.knot_step_) {
        if (track.wl_(s) <= 0.0 || track.wr_(s) <= 0.0)
            throw TrackError("interpolated track width not positive at s=" + std::to_string(s));
    }

    // The stored curvature profile must turn exactly +-2*pi per lap.
    const double total = track.kappa_spline_.full_period_integral();
    const double target = (total >= 0.0 ? 1.0 : -1.0) * 2.0 * M_PI;
    if (std::abs(total) < 1.0)
        throw TrackError("curvature profile does not describe a closed loop");
    if (std::abs(total - target) > 1e-12) track.kappa_spline_.scale(target / total);

    track.build_geometry();
    return track;
}

double TrackModel::kappa(double s) const {
    const double w = 2.0 * M_PI / length_;
    return kappa_spline_(s) + corr_sin_ * std::sin(w * s) + corr_cos_ * std::cos(w * s);
}

double TrackModel::kappa_prime(double s) const {
    const double w = 2.0 * M_PI / length_;
    return kappa_spline_.derivative(s) +
           w * (corr_sin_ * std::cos(w * s) - corr_cos_ * std::sin(w * s));
}

double TrackModel::bank(double s) const { return bank_(s); }
double TrackModel::bank_prime(double s) const { return bank_.derivative(s); }

TrackSample TrackModel::sample(double s) const {
    TrackSample out;
    out.kappa = kappa(s);
    out.dkappa_ds = kappa_prime(s);
    out.bank = bank_(s);
    out.dbank_ds = bank_.derivative(s);
    out.w_left = wl_(s);
    out.w_right = wr_(s);
    out.dw_left_ds = wl_.derivative(s);
    out.dw_right_ds = wr_.derivative(s);
    return out;
}

double TrackModel::heading(double s) const {
    const double sw = wrap_to_period(s, length_);
    if (geom_) {
        double x, y, psi;
        geom_->pose(sw, x, y, psi);
        return psi;
    }
    const double w = 2.0 * M_PI / length_;
    return psi0_ + kappa_spline_.integral(sw) + corr_sin_ * (1.0 - std::cos(w * sw)) / w +
           corr_cos_ * std::sin(w * sw) / w;
}

// curvature of the geometric centerline (projection math); in analytic mode
// this is the exact segment curvature, otherwise the stored profile
double TrackModel::geometric_kappa(double s) const {
    if (geom_) return geom_->kappa_at(wrap_to_period(s, length_));
    return kappa(s);
}

std::array<double, 2> TrackModel::integrate_tangent(double s0, double s1) const {
    const double mid = 0.5 * (s0 + s1);
    const double half = 0.5 * (s1 - s0);
    double x = 0.0, y = 0.0;
    for (int g = 0; g < kGlOrder; ++g) {
        const double s = mid + half * kGlNode[g];
        const double psi = heading(s);
        x += half * kGlWeight[g] * std::cos(psi);
        y += half * kGlWeight[g] * std::sin(psi);
    }
    return {x, y};
}

void TrackModel::build_geometry() {
    const std::size_t n = kappa_spline_.size();

    if (!geom_) {
        // Newton on the two closure-correction coefficients so the integrated
        // centerline returns exactly to the start point.
        auto gap = [&]() -> std::array<double, 2> {
            double x = 0.0, y = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto d = integrate_tangent(static_cast<double>(i) * knot_step_,
                                                 static_cast<double>(i + 1) * knot_step_);
                x += d[0];
                y += d[1];
            }
            return {x, y};
        };
        for (int iter = 0; iter < 8; ++iter) {
            const auto g0 = gap();
            if (std::hypot(g0[0], g0[1]) < 1e-11 * std::max(1.0, length_)) break;
            const double eps = 1e-9;
            corr_sin_ += eps;
            const auto gs = gap();
            corr_sin_ -= eps;
            corr_cos_ += eps;
            const auto gc = gap();
            corr_cos_ -= eps;
            const double j00 = (gs[0] - g0[0]) / eps, j01 = (gc[0] - g0[0]) / eps;
            const double j10 = (gs[1] - g0[1]) / eps, j11 = (gc[1] - g0[1]) / eps;
            const double det = j00 * j11 - j01 * j10;
            if (std::abs(det) < 1e-14) throw TrackError("closure correction is singular");
            corr_sin_ -= (j11 * g0[0] - j01 * g0[1]) / det;
            corr_cos_ -= (-j10 * g0[0] + j00 * g0[1]) / det;
        }
        const auto gfinal = gap();
        if (std::hypot(gfinal[0], gfinal[1]) > 1e-9 * std::max(1.0, length_))
            throw TrackError("could not close centerline geometry");
    }

    psi_knots_.resize(n);
    x_knots_.resize(n);
    y_knots_.resize(n);
    if (geom_) {
        for (std::size_t i = 0; i < n; ++i) {
            geom_->pose(static_cast<double>(i) * knot_step_, x_knots_[i], y_knots_[i],
                        psi_knots_[i]);
        }
        return;
    }
    x_knots_[0] = 0.0;
    y_knots_[0] = 0.0;
    psi_knots_[0] = psi0_;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto d = integrate_tangent(static_cast<double>(i) * knot_step_,
                                         static_cast<double>(i + 1) * knot_step_);
        x_knots_[i + 1] = x_knots_[i] + d[0];
        y_knots_[i + 1] = y_knots_[i] + d[1];
        psi_knots_[i + 1] = heading(static_cast<double>(i + 1) * knot_step_);
    }
}

std::array<double, 2> TrackModel::position(double s) const {
    const double sw = wrap_to_period(s, length_);
    if (geom_) {
        double x, y, psi;
        geom_->pose(sw, x, y, psi);
        return {x, y};
    }
    std::size_t j = static_cast<std::size_t>(sw / knot_step_);
    if (j >= kappa_spline_.size()) j = kappa_spline_.size() - 1;
    const double sj = static_cast<double>(j) * knot_step_;
    const auto d = integrate_tangent(sj, sw);
    return {x_knots_[j] + d[0], y_knots_[j] + d[1]};
}

CartesianPose TrackModel::from_frenet(const FrenetPose& f) const {
    const double k = kappa(f.s);
    if (std::abs(f.n * k) >= 1.0)
        throw TrackError("from_frenet: |n*kappa| >= 1 (transform singular)");
    const auto p = position(f.s);
    const double psi = heading(f.s);
    CartesianPose out;
    out.x = p[0] - f.n * std::sin(psi);
    out.y = p[1] + f.n * std::cos(psi);
    out.heading = wrap_angle(psi + f.mu);
    return out;
}

double TrackModel::refine_projection(double x, double y, double s0) const {
    double s = s0;
    for (int it = 0; it < 60; ++it) {
        const auto p = position(s);
        const double psi = heading(s);
        const double dx = x - p[0], dy = y - p[1];
        const double g = dx * std::cos(psi) + dy * std::sin(psi);  // tangential
        const double nrm = -dx * std::sin(psi) + dy * std::cos(psi);
        const double gp = -1.0 + geometric_kappa(s) * nrm;
        if (std::abs(gp) < 1e-12) break;
        double step = -g / gp;
        step = std::clamp(step, -3.0, 3.0);
        s += step;
        if (std::abs(step) < 1e-12) break;
    }
    return wrap_to_period(s, length_);
}

double TrackModel::closest_s(double x, double y, std::optional<double> hint) const {
    if (hint) return refine_projection(x, y, wrap_to_period(*hint, length_));

    const std::size_t n = kappa_spline_.size();
    const std::size_t stride =
        std::max<std::size_t>(1, static_cast<std::size_t>(5.0 / knot_step_));
    double best_d2 = std::numeric_limits<double>::max();
    std::size_t best_i = 0;
    std::vector<std::pair<double, std::size_t>> bins;
    bins.reserve(n / stride + 1);
    for (std::size_t i = 0; i < n; i += stride) {
        const double dx = x - x_knots_[i], dy = y - y_knots_[i];
        const double d2 = dx * dx + dy * dy;
        bins.emplace_back(d2, i);
        if (d2 < best_d2) {
            best_d2 = d2;
            best_i = i;
        }
    }
    const double grid = static_cast<double>(stride) * knot_step_;
    const double s_best = refine_projection(x, y, static_cast<double>(best_i) * knot_step_);
    const auto pb = position(s_best);
    const double db = std::hypot(x - pb[0], y - pb[1]);

    // A competing minimum far along the track at essentially the same
    // distance makes the projection ambiguous.
    for (const auto& [d2, i] : bins) {
        if (std::abs(wrap_signed(static_cast<double>(i) * knot_step_ - s_best, length_)) <
            3.0 * grid)
            continue;
        if (d2 > (db + grid) * (db + grid) * 1.10 + 1e-9) continue;
        const double s_alt = refine_projection(x, y, static_cast<double>(i) * knot_step_);
        if (std::abs(wrap_signed(s_alt - s_best, length_)) < 3.0 * grid) continue;
        const auto pa = position(s_alt);
        const double da = std::hypot(x - pa[0], y - pa[1]);
        if (std::abs(da - db) <= 1e-6 * std::max(1.0, db))
            throw TrackError("to_frenet: ambiguous projection (equidistant centerline points)");
    }
    return s_best;
}

FrenetPose TrackModel::to_frenet(const CartesianPose& p, std::optional<double> hint_s) const {
    const double s = closest_s(p.x, p.y, hint_s);
    const auto c = position(s);
    const double psi = heading(s);
    FrenetPose f;
    f.s = s;
    f.n = -(p.x - c[0]) * std::sin(psi) + (p.y - c[1]) * std::cos(psi);
    f.mu = wrap_angle(p.heading - psi);
    if (std::abs(f.n * kappa(s)) >= 0.9)
        throw TrackError("to_frenet: pose outside the valid band (|n*kappa| >= 0.9)");
    return f;
}

void TrackModel::export_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw TrackError("cannot open " + path + " for writing");
    out << "s,x,y,heading,kappa,bank,w_left,w_right\n";
    char line[256];
    const std::size_t n = kappa_spline_.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double s = static_cast<double>(i) * knot_step_;
        std::snprintf(line, sizeof(line), "%.6f,%.9f,%.9f,%.9f,%.9e,%.9e,%.4f,%.4f\n", s,
                      x_knots_[i], y_knots_[i], psi_knots_[i], kappa(s), bank_(s), wl_(s),
                      wr_(s));
        out << line;
    }
}

}  // namespace apex
