#include "splatdeform/splat_graph.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace splatdeform {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kBisectSteps = 40;
constexpr int kGoldenSteps = 40;

// The target region expressed in the reference region's local coordinates:
// for w in the closed unit disk, (X, Y) = xy0 + A w and Z = z0 + g . w.
struct LocalMap {
    Vec2 xy0;
    Eigen::Matrix2d A;
    double z0;
    Vec2 g;

    Vec2 xy(const Vec2& w) const { return xy0 + A * w; }
    double z(const Vec2& w) const { return z0 + g.dot(w); }
};

LocalMap make_map(const OccupancyEllipse& from, const OccupancyEllipse& to) {
    const double a = from.semi_a;
    const double b = std::max(from.semi_b, 1e-12 * from.semi_a);
    const Vec3 d = to.center - from.center;
    const Vec3 ja = to.semi_a * to.axis1;
    const Vec3 jb = to.semi_b * to.axis2;
    LocalMap m;
    m.xy0 = Vec2(d.dot(from.axis1) / a, d.dot(from.axis2) / b);
    m.A << ja.dot(from.axis1) / a, jb.dot(from.axis1) / a, ja.dot(from.axis2) / b, jb.dot(from.axis2) / b;
    m.z0 = d.dot(from.normal);
    m.g = Vec2(ja.dot(from.normal), jb.dot(from.normal));
    return m;
}

struct Sample {
    bool valid = false;
    double z = 0.0;
};

// Running minimum with optional early termination. The valid set is convex
// and Z is affine on it, so candidates of both signs imply a zero crossing.
struct Tracker {
    double best = kInfinity;
    double stop_at;
    double lo = kInfinity;
    double hi = -kInfinity;

    bool offer(double z) {
        best = std::min(best, std::abs(z));
        lo = std::min(lo, z);
        hi = std::max(hi, z);
        if (lo <= 0.0 && hi >= 0.0) best = 0.0;
        return best <= stop_at;
    }
};

// Angles t where the target boundary xy0 + A (cos t, sin t) meets the unit
// circle: roots of a degree-2 trigonometric polynomial, found as unit-modulus
// roots of the associated quartic and polished by Newton steps.
std::vector<double> boundary_crossings(const LocalMap& m) {
    const Vec2 a = m.A.col(0), b = m.A.col(1), p = m.xy0;
    const double c0 = p.squaredNorm() + 0.5 * (a.squaredNorm() + b.squaredNorm()) - 1.0;
    const double c1 = 2.0 * p.dot(a), s1 = 2.0 * p.dot(b);
    const double c2 = 0.5 * (a.squaredNorm() - b.squaredNorm()), s2 = a.dot(b);
    auto f = [&](double t) {
        return c0 + c1 * std::cos(t) + s1 * std::sin(t) + c2 * std::cos(2 * t) + s2 * std::sin(2 * t);
    };
    auto df = [&](double t) {
        return -c1 * std::sin(t) + s1 * std::cos(t) - 2 * c2 * std::sin(2 * t) + 2 * s2 * std::cos(2 * t);
    };
    using C = std::complex<double>;
    // z^2 f: coefficients of z^0 .. z^4.
    const C coef[5] = {C(c2, s2) / 2.0, C(c1, s1) / 2.0, C(c0, 0.0), C(c1, -s1) / 2.0, C(c2, -s2) / 2.0};
    double big = 0.0;
    for (const auto& c : coef) big = std::max(big, std::abs(c));
    std::vector<double> out;
    if (big == 0.0) return out;
    int top = 4, low = 0;
    while (top > 0 && std::abs(coef[top]) <= 1e-14 * big) --top;
    while (low < top && std::abs(coef[low]) <= 1e-14 * big) ++low;
    const int deg = top - low;
    if (deg < 1) return out;
    Eigen::MatrixXcd comp = Eigen::MatrixXcd::Zero(deg, deg);
    for (int k = 0; k < deg; ++k) comp(0, k) = -coef[top - 1 - k] / coef[top];
    for (int k = 1; k < deg; ++k) comp(k, k - 1) = 1.0;
    const Eigen::ComplexEigenSolver<Eigen::MatrixXcd> eig(comp, false);
    const double fscale = std::max(1.0, big);
    for (Eigen::Index k = 0; k < eig.eigenvalues().size(); ++k) {
        const C z = eig.eigenvalues()[k];
        if (std::abs(std::abs(z) - 1.0) > 1e-3) continue;
        double t = std::arg(z);
        for (int it = 0; it < 8; ++it) {
            const double d = df(t);
            if (d == 0.0) break;
            t -= f(t) / d;
        }
        if (std::abs(f(t)) <= 1e-9 * fscale) out.push_back(t);
    }
    return out;
}

// Exact extremes of Z over the valid set: crossings of the two boundaries and
// the Z-extremes of each boundary taken alone.
bool exact_candidates(const LocalMap& m, Tracker& tracker) {
    auto inside_unit = [](const Vec2& xy) { return xy.squaredNorm() <= 1.0 + 1e-12; };
    for (double t : boundary_crossings(m)) {
        if (tracker.offer(m.z(Vec2(std::cos(t), std::sin(t))))) return true;
    }
    const Vec2 dir = m.g.norm() > 0.0 ? Vec2(m.g.normalized()) : Vec2::UnitX();
    for (double sgn : {1.0, -1.0}) {
        const Vec2 w = sgn * dir;
        if (inside_unit(m.xy(w)) && tracker.offer(m.z(w))) return true;
    }
    const double det = m.A.determinant();
    if (std::abs(det) > 1e-12 * std::max(m.A.squaredNorm(), 1e-300)) {
        const Eigen::Matrix2d inv = m.A.inverse();
        const Vec2 grad = inv.transpose() * m.g;
        const Vec2 udir = grad.norm() > 0.0 ? Vec2(grad.normalized()) : Vec2::UnitX();
        for (double sgn : {1.0, -1.0}) {
            const Vec2 w = inv * (sgn * udir - m.xy0);
            if (w.squaredNorm() <= 1.0 + 1e-12 && tracker.offer(m.z(w))) return true;
        }
    }
    return false;
}

// Samples a closed curve t in [0, 2pi) and refines between lattice samples.
// Returns true if the tracker asked to stop.
template <typename Eval>
bool scan_curve(const Eval& eval, int n, bool refine, Tracker& tracker) {
    std::vector<Sample> s(static_cast<std::size_t>(n));
    const double h = kTwoPi / n;
    for (int k = 0; k < n; ++k) {
        s[k] = eval(h * k);
        if (s[k].valid && tracker.offer(s[k].z)) return true;
    }
    if (!refine) return false;

    for (int k = 0; k < n; ++k) {
        const int k1 = (k + 1) % n;
        const double t0 = h * k;
        const double t1 = t0 + h;
        const Sample& a = s[k];
        const Sample& b = s[k1];
        if (a.valid != b.valid) {
            // Validity boundary: bisect and keep the valid side.
            double lo = t0, hi = t1;
            Sample keep = a.valid ? a : b;
            for (int it = 0; it < kBisectSteps; ++it) {
                const double mid = 0.5 * (lo + hi);
                const Sample m = eval(mid);
                if (m.valid == a.valid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if (m.valid) keep = m;
            }
            if (tracker.offer(keep.z)) return true;
        } else if (a.valid && (a.z > 0.0) != (b.z > 0.0)) {
            double lo = t0, hi = t1;
            double zlo = a.z;
            Sample last = a;
            for (int it = 0; it < kBisectSteps; ++it) {
                const double mid = 0.5 * (lo + hi);
                const Sample m = eval(mid);
                if (!m.valid) break;
                last = m;
                if ((m.z > 0.0) == (zlo > 0.0)) {
                    lo = mid;
                    zlo = m.z;
                } else {
                    hi = mid;
                }
            }
            if (last.valid && tracker.offer(last.z)) return true;
        }
    }

    // Interior minima of |Z| along the curve.
    for (int k = 0; k < n; ++k) {
        const Sample& prev = s[(k + n - 1) % n];
        const Sample& cur = s[k];
        const Sample& next = s[(k + 1) % n];
        if (!(prev.valid && cur.valid && next.valid)) continue;
        if (std::abs(cur.z) > std::abs(prev.z) || std::abs(cur.z) > std::abs(next.z)) continue;
        const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
        double lo = h * k - h, hi = h * k + h;
        double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
        auto f = [&](double t) {
            const Sample m = eval(t);
            return m.valid ? std::abs(m.z) : kInfinity;
        };
        double f1 = f(x1), f2 = f(x2);
        for (int it = 0; it < kGoldenSteps; ++it) {
            if (f1 < f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = f(x2);
            }
        }
        const Sample best = eval(f1 < f2 ? x1 : x2);
        if (best.valid && tracker.offer(best.z)) return true;
    }
    return false;
}

}  // namespace

double normal_offset(const OccupancyEllipse& from, const OccupancyEllipse& to, const NormalOffsetOptions& options,
                     double stop_at) {
    if (from.semi_a <= 0.0 || to.semi_a <= 0.0) return kInfinity;
    const LocalMap m = make_map(from, to);

    // The projected target ellipse lies within |xy0| +- ||A||; no overlap with
    // the unit disk is possible beyond that.
    if (m.xy0.norm() - m.A.norm() > 1.0) return kInfinity;

    Tracker tracker{kInfinity, stop_at};
    const int n = std::max(options.n_samples, 16);
    if (options.refine && exact_candidates(m, tracker)) return tracker.best;

    auto inside_unit = [](const Vec2& xy) { return xy.squaredNorm() <= 1.0; };

    // Target region boundary (and interior rings).
    auto on_boundary = [&](double rho) {
        return [&, rho](double t) {
            const Vec2 w(rho * std::cos(t), rho * std::sin(t));
            return Sample{inside_unit(m.xy(w)), m.z(w)};
        };
    };
    if (scan_curve(on_boundary(1.0), n, options.refine, tracker)) return tracker.best;

    {
        const Vec2 w = Vec2::Zero();
        if (inside_unit(m.xy(w)) && tracker.offer(m.z(w))) return tracker.best;
    }
    for (int r = 1; r <= options.rings; ++r) {
        const double rho = static_cast<double>(r) / (options.rings + 1);
        const int rn = std::max(options.ring_samples, 4);
        const auto eval = on_boundary(rho);
        for (int k = 0; k < rn; ++k) {
            const Sample sm = eval(kTwoPi * k / rn);
            if (sm.valid && tracker.offer(sm.z)) return tracker.best;
        }
    }

    // Unit circle of the reference region, restricted to the projection of the
    // target. Heights follow from the affine map when the projection is
    // non-degenerate; an edge-on target is fully covered by its boundary.
    const double det = m.A.determinant();
    const double scale = std::max(m.A.squaredNorm(), 1e-300);
    if (std::abs(det) > 1e-12 * scale) {
        const Eigen::Matrix2d inv = m.A.inverse();
        auto on_circle = [&](double t) {
            const Vec2 w = inv * (Vec2(std::cos(t), std::sin(t)) - m.xy0);
            return Sample{w.squaredNorm() <= 1.0, m.z(w)};
        };
        if (scan_curve(on_circle, n, options.refine, tracker)) return tracker.best;
    }
    return tracker.best;
}

bool epsilon_intersect(const OccupancyEllipse& a, const OccupancyEllipse& b, double epsilon,
                       const NormalOffsetOptions& options) {
    return normal_offset(a, b, options, epsilon) <= epsilon || normal_offset(b, a, options, epsilon) <= epsilon;
}

}  // namespace splatdeform
