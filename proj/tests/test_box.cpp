#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "drf/box.hpp"

#include <cmath>
#include <random>

using namespace drf;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(seed); }

Box3D random_box(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> pos(-10.0, 10.0);
    std::uniform_real_distribution<double> ext(0.5, 5.0);
    std::uniform_real_distribution<double> yaw(-kPi, kPi);
    return Box3D(pos(rng), pos(rng), pos(rng), ext(rng), ext(rng), ext(rng), yaw(rng));
}

// Monte Carlo IoU over the joint AABB; independent of the polygon-clipping path.
double mc_iou(const Box3D& a, const Box3D& b, std::size_t samples, std::uint64_t seed) {
    auto inside = [](const Box3D& bx, double px, double py, double pz) {
        const double dx = px - bx.x, dy = py - bx.y, dz = pz - bx.z;
        const double c = std::cos(bx.theta), s = std::sin(bx.theta);
        const double ox = c * dx + s * dy;
        const double oy = -s * dx + c * dy;
        return std::abs(ox) <= bx.w * 0.5 && std::abs(oy) <= bx.h * 0.5 &&
               std::abs(dz) <= bx.l * 0.5;
    };
    double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
    for (const Box3D* bx : {&a, &b}) {
        const Corners8 cs = corners(*bx);
        for (const auto& p : cs.pts) {
            for (int k = 0; k < 3; ++k) {
                lo[k] = std::min(lo[k], p[k]);
                hi[k] = std::max(hi[k], p[k]);
            }
        }
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(lo[0], hi[0]), uy(lo[1], hi[1]), uz(lo[2], hi[2]);
    std::size_t na = 0, nb = 0, nab = 0;
    for (std::size_t i = 0; i < samples; ++i) {
        const double px = ux(rng), py = uy(rng), pz = uz(rng);
        const bool ia = inside(a, px, py, pz);
        const bool ib = inside(b, px, py, pz);
        na += ia;
        nb += ib;
        nab += ia && ib;
    }
    const double uni = static_cast<double>(na + nb - nab);
    return uni > 0.0 ? static_cast<double>(nab) / uni : 0.0;
}

}  // namespace

TEST_CASE("wrap_angle maps into [-pi, pi)") {
    CHECK(wrap_angle(0.0) == 0.0);
    CHECK(wrap_angle(kPi) == doctest::Approx(-kPi));
    CHECK(wrap_angle(-kPi) == doctest::Approx(-kPi));
    CHECK(wrap_angle(2.0 * kPi) == doctest::Approx(0.0));
    CHECK(wrap_angle(3.0 * kPi) == doctest::Approx(-kPi));
    std::mt19937_64 rng = rng_for(11);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (int i = 0; i < 10000; ++i) {
        const double t = wrap_angle(u(rng));
        CHECK(t >= -kPi);
        CHECK(t < kPi);
    }
}

TEST_CASE("box constructor validates and wraps") {
    CHECK_THROWS_AS(Box3D(0, 0, 0, 0.0, 1, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(Box3D(0, 0, 0, 1, -2.0, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(Box3D(0, 0, 0, 1, 1, 0.0, 0), std::invalid_argument);
    const Box3D b(0, 0, 0, 1, 1, 1, 2.5 * kPi);
    CHECK(b.theta == doctest::Approx(0.5 * kPi));
}

TEST_CASE("encode produces the documented offsets") {
    const Box3D p(0, 0, 0, 1, 1, 1, 0);
    const Box3D t(0.5, 0, 0, 1, 1, 1, 0);
    const Residual7 r = encode(p, t);
    CHECK(r.dx == doctest::Approx(0.35355339059327373).epsilon(1e-12));
    CHECK(r.dy == 0.0);
    CHECK(r.dz == 0.0);
    CHECK(r.dw == 0.0);
    CHECK(r.dtheta == 0.0);

    // log-ratio extents: scaling w by e gives dw = 1
    const Box3D t2(0, 0, 0, std::exp(1.0), 1, 1, 0);
    CHECK(encode(p, t2).dw == doctest::Approx(1.0).epsilon(1e-12));

    // dz is scaled by the proposal base-plane h, not l
    const Box3D p3(0, 0, 0, 2, 4, 8, 0);
    const Box3D t3(0, 0, 1.0, 2, 4, 8, 0);
    CHECK(encode(p3, t3).dz == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("encode of identical boxes is zero, decode of zero is identity") {
    std::mt19937_64 rng = rng_for(21);
    for (int i = 0; i < 100; ++i) {
        const Box3D b = random_box(rng);
        const Residual7 r = encode(b, b);
        for (double v : r.to_array()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
        const Box3D d = decode(b, Residual7{});
        CHECK(d.x == b.x);
        CHECK(d.w == b.w);
        CHECK(d.theta == b.theta);
    }
}

TEST_CASE("decode(encode) round-trips random box pairs") {
    std::mt19937_64 rng = rng_for(31);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const Box3D p = random_box(rng);
        const Box3D t = random_box(rng);
        const Box3D back = decode(p, encode(p, t));
        worst = std::max(worst, std::abs(back.x - t.x));
        worst = std::max(worst, std::abs(back.y - t.y));
        worst = std::max(worst, std::abs(back.z - t.z));
        worst = std::max(worst, std::abs(back.w - t.w));
        worst = std::max(worst, std::abs(back.h - t.h));
        worst = std::max(worst, std::abs(back.l - t.l));
        worst = std::max(worst, std::abs(wrap_angle(back.theta - t.theta)));
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("normalize divides by the proposal shape factors") {
    const Box3D p(0, 0, 0, 3, 4, 2, 0);
    Residual7 r;
    r.dx = r.dy = r.dz = r.dw = r.dh = r.dl = r.dtheta = 1.0;
    const NormalizedResidual7 n = normalize(r, p);
    CHECK(n.dx == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(n.dy == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(n.dz == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(n.dw == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(n.dh == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(n.dl == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(n.dtheta == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("denormalize(normalize) round-trips") {
    std::mt19937_64 rng = rng_for(41);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const Box3D p = random_box(rng);
        Residual7 r;
        r.dx = u(rng);
        r.dy = u(rng);
        r.dz = u(rng);
        r.dw = u(rng);
        r.dh = u(rng);
        r.dl = u(rng);
        r.dtheta = u(rng);
        const Residual7 back = denormalize(normalize(r, p), p);
        const auto a = r.to_array(), b = back.to_array();
        for (int k = 0; k < 7; ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("corners of an axis-aligned unit box") {
    const Box3D b(0, 0, 0, 1, 1, 1, 0);
    const Corners8 c = corners(b);
    CHECK(c.pts[0][0] == doctest::Approx(-0.5));
    CHECK(c.pts[0][1] == doctest::Approx(-0.5));
    CHECK(c.pts[0][2] == doctest::Approx(-0.5));
    CHECK(c.pts[1][0] == doctest::Approx(0.5));
    CHECK(c.pts[1][1] == doctest::Approx(-0.5));
    CHECK(c.pts[6][0] == doctest::Approx(0.5));
    CHECK(c.pts[6][1] == doctest::Approx(0.5));
    CHECK(c.pts[6][2] == doctest::Approx(0.5));
}

TEST_CASE("corner centroid equals the center and extents are recovered") {
    std::mt19937_64 rng = rng_for(51);
    for (int i = 0; i < 200; ++i) {
        const Box3D b = random_box(rng);
        const Corners8 c = corners(b);
        double cx = 0, cy = 0, cz = 0;
        for (const auto& p : c.pts) {
            cx += p[0];
            cy += p[1];
            cz += p[2];
        }
        CHECK(cx / 8 == doctest::Approx(b.x).epsilon(1e-9));
        CHECK(cy / 8 == doctest::Approx(b.y).epsilon(1e-9));
        CHECK(cz / 8 == doctest::Approx(b.z).epsilon(1e-9));
        auto dist = [&](int i1, int i2) {
            const double dx = c.pts[i1][0] - c.pts[i2][0];
            const double dy = c.pts[i1][1] - c.pts[i2][1];
            const double dz = c.pts[i1][2] - c.pts[i2][2];
            return std::sqrt(dx * dx + dy * dy + dz * dz);
        };
        CHECK(dist(0, 1) == doctest::Approx(b.w).epsilon(1e-9));
        CHECK(dist(1, 2) == doctest::Approx(b.h).epsilon(1e-9));
        CHECK(dist(0, 4) == doctest::Approx(b.l).epsilon(1e-9));
    }
}

TEST_CASE("quarter-turn swaps the roles of w and h in the base plane") {
    const Box3D b(1, 2, 0, 2, 1, 1, 0.5 * kPi);
    const Corners8 c = corners(b);
    // at theta = pi/2 the w extent lies along y
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    for (const auto& p : c.pts) {
        min_x = std::min(min_x, p[0]);
        max_x = std::max(max_x, p[0]);
        min_y = std::min(min_y, p[1]);
        max_y = std::max(max_y, p[1]);
    }
    CHECK(max_x - min_x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(max_y - min_y == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("iou of a box with itself is 1, disjoint boxes give 0") {
    std::mt19937_64 rng = rng_for(61);
    for (int i = 0; i < 100; ++i) {
        const Box3D b = random_box(rng);
        CHECK(iou_3d(b, b) == doctest::Approx(1.0).epsilon(1e-9));
    }
    const Box3D a(0, 0, 0, 1, 1, 1, 0.3);
    const Box3D far(100, 0, 0, 1, 1, 1, -0.7);
    CHECK(iou_3d(a, far) == 0.0);
    // vertical separation alone is enough
    const Box3D above(0, 0, 50, 1, 1, 1, 0.3);
    CHECK(iou_3d(a, above) == 0.0);
}

TEST_CASE("unit cubes offset by half overlap with iou 1/3") {
    const Box3D a(0, 0, 0, 1, 1, 1, 0);
    const Box3D b(0.5, 0, 0, 1, 1, 1, 0);
    CHECK(iou_3d(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("iou is symmetric and bounded") {
    std::mt19937_64 rng = rng_for(71);
    std::uniform_real_distribution<double> jit(-1.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const Box3D a = random_box(rng);
        Box3D b = random_box(rng);
        if (i % 2 == 0) {
            // jittered copy so many pairs actually overlap
            b = Box3D(a.x + jit(rng), a.y + jit(rng), a.z + 0.3 * jit(rng), a.w, a.h, a.l,
                      a.theta + 0.3 * jit(rng));
        }
        const double ab = iou_3d(a, b);
        const double ba = iou_3d(b, a);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
    }
}

TEST_CASE("iou matches a Monte Carlo estimate") {
    std::mt19937_64 rng = rng_for(81);
    std::uniform_real_distribution<double> jit(-1.5, 1.5);
    double worst = 0.0;
    for (int i = 0; i < 40; ++i) {
        const Box3D a = random_box(rng);
        Box3D b = random_box(rng);
        if (i % 4 != 0) {
            b = Box3D(a.x + jit(rng), a.y + jit(rng), a.z + 0.4 * jit(rng),
                      a.w * std::exp(0.2 * jit(rng)), a.h * std::exp(0.2 * jit(rng)),
                      a.l * std::exp(0.2 * jit(rng)), a.theta + 0.5 * jit(rng));
        }
        const double exact = iou_3d(a, b);
        const double approx = mc_iou(a, b, 200000, 1000 + i);
        worst = std::max(worst, std::abs(exact - approx));
    }
    CHECK(worst < 0.01);
}

TEST_CASE("classification target ramps between the thresholds") {
    CHECK(classification_target(0.0, 0.25, 0.75) == 0.0);
    CHECK(classification_target(0.25, 0.25, 0.75) == doctest::Approx(0.0));
    CHECK(classification_target(0.5, 0.25, 0.75) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(classification_target(0.75, 0.25, 0.75) == doctest::Approx(1.0));
    CHECK(classification_target(1.0, 0.25, 0.75) == 1.0);
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
        const double v = classification_target(i / 100.0, 0.25, 0.75);
        CHECK(v >= prev);
        prev = v;
    }
    CHECK_THROWS_AS(classification_target(0.5, 0.75, 0.25), std::invalid_argument);
    CHECK_THROWS_AS(classification_target(0.5, -0.1, 0.75), std::invalid_argument);
    CHECK_THROWS_AS(classification_target(0.5, 0.25, 1.1), std::invalid_argument);
}
