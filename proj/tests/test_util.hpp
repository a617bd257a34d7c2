#pragma once

// Shared generators and numeric helpers for the test suites. Everything here
// is test-only and independent of the library internals it checks.

#include <cmath>
#include <utility>

#include "v2p/geom.hpp"
#include "v2p/rng.hpp"

namespace v2p::testutil {

inline geom::Box3D random_box(Rng& rng, double center_span = 4.0) {
  geom::Box3D b;
  b.center = {rng.uniform(-center_span, center_span),
              rng.uniform(-center_span, center_span),
              rng.uniform(-center_span, center_span)};
  b.length = rng.uniform(0.5, 5.0);
  b.width = rng.uniform(0.5, 5.0);
  b.height = rng.uniform(0.5, 4.0);
  b.yaw = rng.uniform(-M_PI, M_PI);
  return b;
}

// A pair biased toward partial overlap: the second box is a perturbation of
// the first.
inline std::pair<geom::Box3D, geom::Box3D> random_box_pair(Rng& rng) {
  geom::Box3D a = random_box(rng);
  geom::Box3D b = a;
  b.center.x += rng.uniform(-2.0, 2.0);
  b.center.y += rng.uniform(-2.0, 2.0);
  b.center.z += rng.uniform(-1.5, 1.5);
  b.length *= rng.uniform(0.7, 1.4);
  b.width *= rng.uniform(0.7, 1.4);
  b.height *= rng.uniform(0.7, 1.4);
  b.yaw = geom::wrap_angle(b.yaw + rng.uniform(-0.8, 0.8));
  return {a, b};
}

// Independent 2D rotation used as the oracle for yaw transforms.
inline geom::Vec3 rotate_z(const geom::Vec3& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
}

}  // namespace v2p::testutil
