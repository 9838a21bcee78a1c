#include "drf/box.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace drf {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kClipEps = 1e-12;

void check_finite_box(const Box3D& b) {
    const double vals[7] = {b.x, b.y, b.z, b.w, b.h, b.l, b.theta};
    for (double v : vals) {
        if (!std::isfinite(v)) throw std::invalid_argument("Box3D: non-finite field");
    }
}

}  // namespace

double wrap_angle(double theta) {
    const double two_pi = 2.0 * kPi;
    double t = theta - two_pi * std::floor((theta + kPi) / two_pi);
    // floor form can land exactly on pi for inputs just below the seam
    if (t >= kPi) t -= two_pi;
    return t;
}

Box3D::Box3D(double x_, double y_, double z_, double w_, double h_, double l_, double theta_)
    : x(x_), y(y_), z(z_), w(w_), h(h_), l(l_), theta(wrap_angle(theta_)) {
    if (!(w > 0.0) || !(h > 0.0) || !(l > 0.0)) {
        throw std::invalid_argument("Box3D: extents must be positive");
    }
    check_finite_box(*this);
}

double Box3D::base_diagonal() const { return std::sqrt(w * w + h * h); }

double Box3D::aspect_ratio() const { return std::max(w / h, h / w); }

Residual7 encode(const Box3D& p, const Box3D& t) {
    const double d = p.base_diagonal();
    Residual7 r;
    r.dx = (t.x - p.x) / d;
    r.dy = (t.y - p.y) / d;
    r.dz = (t.z - p.z) / p.h;
    r.dw = std::log(t.w / p.w);
    r.dh = std::log(t.h / p.h);
    r.dl = std::log(t.l / p.l);
    r.dtheta = wrap_angle(t.theta - p.theta);
    return r;
}

Box3D decode(const Box3D& p, const Residual7& r) {
    const double d = p.base_diagonal();
    return Box3D(p.x + r.dx * d,
                 p.y + r.dy * d,
                 p.z + r.dz * p.h,
                 p.w * std::exp(r.dw),
                 p.h * std::exp(r.dh),
                 p.l * std::exp(r.dl),
                 p.theta + r.dtheta);
}

NormalizedResidual7 normalize(const Residual7& r, const Box3D& p) {
    const double d = p.base_diagonal();
    const double rp = p.aspect_ratio();
    NormalizedResidual7 n;
    n.dx = r.dx / d;
    n.dy = r.dy / d;
    n.dz = r.dz / p.l;
    n.dw = r.dw / d;
    n.dh = r.dh / d;
    n.dl = r.dl / p.l;
    n.dtheta = r.dtheta / rp;
    return n;
}

Residual7 denormalize(const NormalizedResidual7& n, const Box3D& p) {
    const double d = p.base_diagonal();
    const double rp = p.aspect_ratio();
    Residual7 r;
    r.dx = n.dx * d;
    r.dy = n.dy * d;
    r.dz = n.dz * p.l;
    r.dw = n.dw * d;
    r.dh = n.dh * d;
    r.dl = n.dl * p.l;
    r.dtheta = n.dtheta * rp;
    return r;
}

Corners8 corners(const Box3D& b) {
    // sign patterns (---, +--, ++-, -+-, --+, +-+, +++, -++)
    static constexpr int sx[8] = {-1, +1, +1, -1, -1, +1, +1, -1};
    static constexpr int sy[8] = {-1, -1, +1, +1, -1, -1, +1, +1};
    static constexpr int sz[8] = {-1, -1, -1, -1, +1, +1, +1, +1};
    const double c = std::cos(b.theta), s = std::sin(b.theta);
    Corners8 out;
    for (int j = 0; j < 8; ++j) {
        const double ox = sx[j] * b.w * 0.5;
        const double oy = sy[j] * b.h * 0.5;
        out.pts[j][0] = b.x + c * ox - s * oy;
        out.pts[j][1] = b.y + s * ox + c * oy;
        out.pts[j][2] = b.z + sz[j] * b.l * 0.5;
    }
    return out;
}

namespace {

struct P2 {
    double x, y;
};

// base rectangle of a box as a CCW polygon
std::vector<P2> base_rect(const Box3D& b) {
    const double c = std::cos(b.theta), s = std::sin(b.theta);
    const double hw = b.w * 0.5, hh = b.h * 0.5;
    const double ox[4] = {-hw, +hw, +hw, -hw};
    const double oy[4] = {-hh, -hh, +hh, +hh};
    std::vector<P2> poly(4);
    for (int i = 0; i < 4; ++i) {
        poly[i] = {b.x + c * ox[i] - s * oy[i], b.y + s * ox[i] + c * oy[i]};
    }
    return poly;
}

// Sutherland-Hodgman clip of `poly` against the half-plane left of (a -> b).
std::vector<P2> clip_edge(const std::vector<P2>& poly, const P2& a, const P2& b) {
    std::vector<P2> out;
    out.reserve(poly.size() + 1);
    const double ex = b.x - a.x, ey = b.y - a.y;
    auto side = [&](const P2& p) { return ex * (p.y - a.y) - ey * (p.x - a.x); };
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const P2& cur = poly[i];
        const P2& nxt = poly[(i + 1) % n];
        const double sc = side(cur), sn = side(nxt);
        if (sc >= -kClipEps) out.push_back(cur);
        if ((sc > kClipEps && sn < -kClipEps) || (sc < -kClipEps && sn > kClipEps)) {
            const double t = sc / (sc - sn);
            out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
        }
    }
    return out;
}

double polygon_area(const std::vector<P2>& poly) {
    if (poly.size() < 3) return 0.0;
    double a = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const P2& p = poly[i];
        const P2& q = poly[(i + 1) % poly.size()];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * std::fabs(a);
}

}  // namespace

double iou_3d(const Box3D& a, const Box3D& b) {
    std::vector<P2> poly = base_rect(a);
    const std::vector<P2> rb = base_rect(b);
    for (int i = 0; i < 4 && !poly.empty(); ++i) {
        poly = clip_edge(poly, rb[i], rb[(i + 1) % 4]);
    }
    const double inter_area = polygon_area(poly);
    if (inter_area <= 0.0) return 0.0;

    const double za0 = a.z - a.l * 0.5, za1 = a.z + a.l * 0.5;
    const double zb0 = b.z - b.l * 0.5, zb1 = b.z + b.l * 0.5;
    const double overlap_l = std::min(za1, zb1) - std::max(za0, zb0);
    if (overlap_l <= 0.0) return 0.0;

    const double inter = inter_area * overlap_l;
    const double uni = a.volume() + b.volume() - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

double classification_target(double iou, double theta_L, double theta_H) {
    if (!(theta_L >= 0.0) || !(theta_L < theta_H) || !(theta_H <= 1.0)) {
        throw std::invalid_argument("classification_target: need 0 <= theta_L < theta_H <= 1");
    }
    if (iou >= theta_H) return 1.0;
    if (iou < theta_L) return 0.0;
    return (iou - theta_L) / (theta_H - theta_L);
}

}  // namespace drf
