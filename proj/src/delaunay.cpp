#include "splatdeform/laplacian.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace splatdeform {
namespace {

double orient(const Vec2& a, const Vec2& b, const Vec2& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

// Positive when d lies strictly inside the circumcircle of ccw (a, b, c).
double incircle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
    const double adx = a.x() - d.x(), ady = a.y() - d.y();
    const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
    const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
    const double ad = adx * adx + ady * ady;
    const double bd = bdx * bdx + bdy * bdy;
    const double cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

}  // namespace

std::vector<std::array<int, 3>> delaunay_2d(std::span<const Vec2> points) {
    const int n = static_cast<int>(points.size());
    if (n < 3) return {};
    Vec2 lo = points[0], hi = points[0];
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double extent = std::max((hi - lo).maxCoeff(), 1e-300);
    const Vec2 mid = 0.5 * (lo + hi);

    std::vector<Vec2> pts(points.begin(), points.end());
    const double big = 64.0 * extent;
    pts.push_back(mid + Vec2(-big, -big));
    pts.push_back(mid + Vec2(big, -big));
    pts.push_back(mid + Vec2(0.0, big));

    std::vector<std::array<int, 3>> tris{{n, n + 1, n + 2}};
    const double dup_tol = 1e-14 * extent * extent;
    std::vector<int> inserted;
    inserted.reserve(static_cast<std::size_t>(n));

    for (int p = 0; p < n; ++p) {
        const Vec2& q = pts[p];
        bool duplicate = false;
        for (int other : inserted) {
            if ((pts[other] - q).squaredNorm() <= dup_tol) {
                duplicate = true;
                break;
            }
        }
        if (duplicate) continue;
        inserted.push_back(p);

        std::vector<std::array<int, 3>> keep;
        std::map<std::pair<int, int>, int> boundary;
        keep.reserve(tris.size() + 2);
        for (const auto& t : tris) {
            if (incircle(pts[t[0]], pts[t[1]], pts[t[2]], q) > 0.0) {
                for (int e = 0; e < 3; ++e) {
                    const int a = t[e], b = t[(e + 1) % 3];
                    const auto rev = boundary.find({b, a});
                    if (rev != boundary.end()) {
                        boundary.erase(rev);
                    } else {
                        boundary[{a, b}] = 1;
                    }
                }
            } else {
                keep.push_back(t);
            }
        }
        if (boundary.empty()) continue;
        for (const auto& [edge, unused] : boundary) {
            std::array<int, 3> t{edge.first, edge.second, p};
            if (orient(pts[t[0]], pts[t[1]], pts[t[2]]) <= 0.0) continue;
            keep.push_back(t);
        }
        tris.swap(keep);
    }

    std::vector<std::array<int, 3>> out;
    for (const auto& t : tris) {
        if (t[0] < n && t[1] < n && t[2] < n) out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::array<int, 3>> delaunay_fan(std::span<const Vec2> points, int center) {
    const int n = static_cast<int>(points.size());
    std::vector<std::array<int, 3>> out;
    if (n < 3) return out;
    const Vec2& c = points[center];
    double extent = 0.0;
    for (const auto& p : points) extent = std::max(extent, (p - c).norm());
    if (!(extent > 0.0)) return out;
    const double dup_tol = 1e-14 * extent * extent;

    // Distinct candidates, first occurrence wins.
    std::vector<int> cand;
    for (int k = 0; k < n; ++k) {
        if (k == center || (points[k] - c).squaredNorm() <= dup_tol) continue;
        bool duplicate = false;
        for (int other : cand) {
            if ((points[other] - points[k]).squaredNorm() <= dup_tol) {
                duplicate = true;
                break;
            }
        }
        if (!duplicate) cand.push_back(k);
    }
    if (cand.size() < 2) return out;

    int start = cand[0];
    for (int k : cand) {
        if ((points[k] - c).squaredNorm() < (points[start] - c).squaredNorm()) start = k;
    }

    // Third vertex of the Delaunay triangle on the `side` of edge c->a:
    // the empty circle through c and a is the one whose center moves least
    // along the bisector.
    auto step = [&](int a, double side) {
        const Vec2 m = 0.5 * (c + points[a]);
        const Vec2 e = points[a] - c;
        const Vec2 nrm = side * Vec2(-e.y(), e.x());
        const double base = (points[a] - m).squaredNorm();
        int best = -1;
        double best_t = 0.0;
        for (int p : cand) {
            if (p == a) continue;
            const double o = side * orient(c, points[a], points[p]);
            if (o <= 1e-14 * e.norm() * (points[p] - c).norm()) continue;
            const double t = ((points[p] - m).squaredNorm() - base) / (2.0 * (points[p] - m).dot(nrm));
            const double tol = 1e-12 * (std::abs(t) + 1.0);
            // Co-circular ties go to the vertex angularly closest to a.
            if (best < 0 || t < best_t - tol ||
                (t <= best_t + tol && side * orient(c, points[p], points[best]) > 0.0)) {
                best = p;
                best_t = t;
            }
        }
        return best;
    };

    int a = start;
    bool closed = false;
    for (std::size_t guard = 0; guard <= cand.size(); ++guard) {
        const int b = step(a, 1.0);
        if (b < 0) break;
        out.push_back({center, a, b});
        a = b;
        if (a == start) {
            closed = true;
            break;
        }
    }
    if (!closed) {
        // Open fan: prepend the clockwise side so the chain stays contiguous.
        std::vector<std::array<int, 3>> back;
        a = start;
        for (std::size_t guard = 0; guard <= cand.size(); ++guard) {
            const int b = step(a, -1.0);
            if (b < 0) break;
            back.push_back({center, b, a});
            a = b;
        }
        out.insert(out.begin(), back.rbegin(), back.rend());
    }
    return out;
}

}  // namespace splatdeform
