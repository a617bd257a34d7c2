#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "v2p/rng.hpp"

namespace v2p::geom {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const;
};

// Wrap an angle into (-pi, pi].
double wrap_angle(double a);

// Upright 3D box: center, extents along the box axes, and a rotation about
// the world Z axis. length runs along the box x axis, width along y, height
// along z.
struct Box3D {
  Vec3 center;
  double length = 1.0;
  double width = 1.0;
  double height = 1.0;
  double yaw = 0.0;  // radians, (-pi, pi]

  double volume() const { return length * width * height; }
  bool valid() const;
};

// The 8 corners in a fixed order: bottom face (z = -h/2) counter-clockwise
// as seen from +Z starting at (+l/2, +w/2), then the top face in the same
// x/y order.
using CornerSet = std::array<Vec3, 8>;
CornerSet corners(const Box3D& box);

// Point containment with closed faces: a point exactly on a face counts as
// inside.
bool contains(const Box3D& box, const Vec3& p);

// World -> box-canonical frame: R(-yaw) * (p - center). The inverse applies
// R(yaw) and adds the center back.
Vec3 to_canonical(const Box3D& box, const Vec3& p);
Vec3 from_canonical(const Box3D& box, const Vec3& p);
std::vector<Vec3> canonicalize(const Box3D& box, std::span<const Vec3> pts);

struct IouDiag {
  bool degenerate = false;  // set when either box has near-zero area/volume
};

// Exact rotated-rectangle overlap of the two boxes' BEV footprints via
// convex polygon clipping. Degenerate boxes report 0 overlap.
double iou_bev(const Box3D& a, const Box3D& b, IouDiag* diag = nullptr);

// Exact rotated 3D IoU: BEV intersection area times Z-extent overlap over
// the volume union.
double iou_3d(const Box3D& a, const Box3D& b, IouDiag* diag = nullptr);

// Intersection area of the two BEV footprints (exposed for the NMS and
// target-assignment paths that need raw areas).
double intersection_area_bev(const Box3D& a, const Box3D& b);

struct McEstimate {
  double iou = 0.0;
  double stderr_est = 0.0;  // delta-method standard error of the estimate
};

// Monte Carlo volume-sampling estimate of iou_3d; half the samples are drawn
// uniformly inside each box. Test oracle only.
McEstimate iou_3d_montecarlo(const Box3D& a, const Box3D& b,
                             std::int64_t samples, Rng& rng);

}  // namespace v2p::geom
