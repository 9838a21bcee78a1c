#pragma once

#include <array>
#include <cstddef>

namespace drf {

// Oriented 3D box: (x, y, z) center, (w, h) base-plane extents, l vertical
// extent, theta yaw about the vertical axis, wrapped to [-pi, pi).
struct Box3D {
    double x = 0.0, y = 0.0, z = 0.0;
    double w = 1.0, h = 1.0, l = 1.0;
    double theta = 0.0;

    Box3D() = default;
    Box3D(double x, double y, double z, double w, double h, double l, double theta);

    double base_diagonal() const;  // sqrt(w^2 + h^2)
    double aspect_ratio() const;   // max(w/h, h/w)
    double volume() const { return w * h * l; }
};

// Encoded offset between two boxes in the proposal's frame.
// (dx, dy) scaled by the proposal base diagonal, dz by the proposal h,
// extents in log-ratio space, dtheta wrapped to [-pi, pi).
struct Residual7 {
    double dx = 0.0, dy = 0.0, dz = 0.0;
    double dw = 0.0, dh = 0.0, dl = 0.0;
    double dtheta = 0.0;

    std::array<double, 7> to_array() const { return {dx, dy, dz, dw, dh, dl, dtheta}; }
    static Residual7 from_array(const std::array<double, 7>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
    }
};

// Residual additionally divided by proposal shape factors
// (d, d, l, d, d, l, r). This is the diffusion state x_t.
struct NormalizedResidual7 {
    double dx = 0.0, dy = 0.0, dz = 0.0;
    double dw = 0.0, dh = 0.0, dl = 0.0;
    double dtheta = 0.0;

    std::array<double, 7> to_array() const { return {dx, dy, dz, dw, dh, dl, dtheta}; }
    static NormalizedResidual7 from_array(const std::array<double, 7>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
    }
};

// 8 corner points, canonical order: sign patterns of (+-w/2, +-h/2, +-l/2)
// enumerated as (---, +--, ++-, -+-, --+, +-+, +++, -++), yaw applied in the
// base plane about the center.
struct Corners8 {
    std::array<std::array<double, 3>, 8> pts{};
};

// Wraps an angle to [-pi, pi).
double wrap_angle(double theta);

Residual7 encode(const Box3D& proposal, const Box3D& target);
Box3D decode(const Box3D& proposal, const Residual7& residual);

NormalizedResidual7 normalize(const Residual7& residual, const Box3D& proposal);
Residual7 denormalize(const NormalizedResidual7& nr, const Box3D& proposal);

Corners8 corners(const Box3D& box);

// Rotated 3D IoU: convex clipping of the base rectangles times vertical
// interval overlap. Symmetric, in [0, 1], degenerate intersections give 0.
double iou_3d(const Box3D& a, const Box3D& b);

// IoU-ramped soft classification target: 0 below theta_L, 1 above theta_H,
// linear in between.
double classification_target(double iou, double theta_L, double theta_H);

}  // namespace drf
