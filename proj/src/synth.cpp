#include "v2p/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace v2p::scene {
namespace {

constexpr int kMaxPlacementTries = 10000;
constexpr int kMaxBackgroundTries = 10000;
// Background points keep this much clearance from box faces so that
// membership never flips under rounding in later rigid transforms.
constexpr double kBackgroundClearance = 1e-6;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

geom::Box3D expand(const geom::Box3D& b, double per_side) {
  geom::Box3D out = b;
  out.length += 2 * per_side;
  out.width += 2 * per_side;
  out.height += 2 * per_side;
  return out;
}

bool overlaps_any(const geom::Box3D& candidate,
                  const std::vector<geom::Box3D>& placed, double separation) {
  geom::Box3D grown = expand(candidate, separation);
  for (const geom::Box3D& b : placed) {
    if (geom::iou_3d(grown, b) > 0.0) return true;
  }
  return false;
}

void validate(const SynthSpec& spec) {
  if (!spec.bounds.valid()) fail("synth spec: invalid bounds");
  if (spec.num_boxes < 0) fail("synth spec: negative box count");
  if (spec.points_per_box < 0) fail("synth spec: negative points per box");
  if (spec.background_density < 0) fail("synth spec: negative background density");
  if (spec.separation < 0) fail("synth spec: negative separation");
  if (spec.num_boxes == 0 && spec.background_density == 0.0) {
    fail("synth spec: empty scene (zero boxes and zero background density)");
  }
  if (spec.num_boxes > 0) {
    if (spec.classes.empty()) fail("synth spec: boxes requested but no classes");
    for (const ClassSizeRange& c : spec.classes) {
      bool ok = c.length_min > 0 && c.length_min <= c.length_max &&
                c.width_min > 0 && c.width_min <= c.width_max &&
                c.height_min > 0 && c.height_min <= c.height_max;
      if (!ok) fail("synth spec: invalid class size range");
    }
    if (spec.z_center_min > spec.z_center_max) {
      fail("synth spec: z_center_min > z_center_max");
    }
  }
}

geom::Box3D draw_box(const SynthSpec& spec, Rng& rng, int* class_id) {
  const ClassSizeRange& c =
      spec.classes[rng.uniform_index(spec.classes.size())];
  *class_id = int(&c - spec.classes.data());
  geom::Box3D b;
  b.length = rng.uniform(c.length_min, c.length_max);
  b.width = rng.uniform(c.width_min, c.width_max);
  b.height = rng.uniform(c.height_min, c.height_max);
  // Half circle only: a cuboid is symmetric under a pi turn, so emitting
  // both representatives would give identical point clouds contradictory
  // regression targets.
  b.yaw = rng.uniform(-geom::kPi / 2, geom::kPi / 2);
  // Keep the whole box inside bounds for any yaw: stay one BEV
  // circumradius away from the x/y walls and a half-height from z walls.
  double rad = 0.5 * std::hypot(b.length, b.width);
  double x_lo = spec.bounds.x_min + rad, x_hi = spec.bounds.x_max - rad;
  double y_lo = spec.bounds.y_min + rad, y_hi = spec.bounds.y_max - rad;
  double z_lo = std::max(spec.z_center_min, spec.bounds.z_min + b.height / 2);
  double z_hi = std::min(spec.z_center_max, spec.bounds.z_max - b.height / 2);
  if (x_lo >= x_hi || y_lo >= y_hi || z_lo > z_hi) {
    b.length = -1;  // signal: does not fit, caller retries
    return b;
  }
  b.center = {rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi),
              z_lo == z_hi ? z_lo : rng.uniform(z_lo, z_hi)};
  return b;
}

// One point on a uniformly chosen face (weighted by area), nudged inward so
// containment is robust to later floating-point transforms.
Point sample_box_point(const geom::Box3D& b, Rng& rng) {
  double hl = b.length / 2, hw = b.width / 2, hh = b.height / 2;
  double area_x = b.width * b.height;   // faces with normal along x
  double area_y = b.length * b.height;  // along y
  double area_z = b.length * b.width;   // along z
  double total = 2 * (area_x + area_y + area_z);
  double pick = rng.uniform(0.0, total);

  geom::Vec3 q;  // canonical-frame coordinates
  double u = rng.uniform01(), v = rng.uniform01();
  double depth = rng.uniform(0.002, 0.08);  // inward offset, fraction of size
  if (pick < 2 * area_x) {
    double sign = pick < area_x ? 1.0 : -1.0;
    q = {sign * (hl - depth * b.length), (2 * u - 1) * hw, (2 * v - 1) * hh};
  } else if (pick < 2 * area_x + 2 * area_y) {
    double sign = pick < 2 * area_x + area_y ? 1.0 : -1.0;
    q = {(2 * u - 1) * hl, sign * (hw - depth * b.width), (2 * v - 1) * hh};
  } else {
    double sign = pick < 2 * (area_x + area_y) + area_z ? 1.0 : -1.0;
    q = {(2 * u - 1) * hl, (2 * v - 1) * hw, sign * (hh - depth * b.height)};
  }
  geom::Vec3 p = geom::from_canonical(b, q);
  return {p.x, p.y, p.z, rng.uniform01()};
}

}  // namespace

std::pair<PointCloud, GroundTruth> synth_scene(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  GroundTruth gt;

  for (int i = 0; i < spec.num_boxes; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementTries; ++attempt) {
      int cid = 0;
      geom::Box3D b = draw_box(spec, rng, &cid);
      if (!b.valid()) continue;
      if (overlaps_any(b, gt.boxes, spec.separation)) continue;
      gt.boxes.push_back(b);
      gt.class_ids.push_back(cid);
      placed = true;
      break;
    }
    if (!placed) {
      fail("synth scene: could not place box " + std::to_string(i) +
           " after " + std::to_string(kMaxPlacementTries) + " attempts");
    }
  }

  PointCloud pc;
  for (const geom::Box3D& b : gt.boxes) {
    for (int k = 0; k < spec.points_per_box; ++k) {
      pc.points.push_back(sample_box_point(b, rng));
    }
  }

  const SceneBounds& bb = spec.bounds;
  double volume = (bb.x_max - bb.x_min) * (bb.y_max - bb.y_min) *
                  (bb.z_max - bb.z_min);
  auto n_background = std::llround(spec.background_density * volume);
  std::vector<geom::Box3D> keep_out;
  keep_out.reserve(gt.boxes.size());
  for (const geom::Box3D& b : gt.boxes) {
    keep_out.push_back(expand(b, kBackgroundClearance));
  }
  for (long long k = 0; k < n_background; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < kMaxBackgroundTries; ++attempt) {
      Point p{rng.uniform(bb.x_min, bb.x_max), rng.uniform(bb.y_min, bb.y_max),
              rng.uniform(bb.z_min, bb.z_max), rng.uniform01()};
      bool inside = false;
      for (const geom::Box3D& b : keep_out) {
        if (geom::contains(b, {p.x, p.y, p.z})) {
          inside = true;
          break;
        }
      }
      if (inside) continue;
      pc.points.push_back(p);
      ok = true;
      break;
    }
    if (!ok) {
      fail("synth scene: could not place background point outside all boxes");
    }
  }
  return {std::move(pc), std::move(gt)};
}

std::pair<PointCloud, GroundTruth> flip_y(const PointCloud& pc,
                                          const GroundTruth& gt) {
  PointCloud pc2 = pc;
  GroundTruth gt2 = gt;
  for (Point& p : pc2.points) p.y = -p.y;
  for (geom::Box3D& b : gt2.boxes) {
    b.center.y = -b.center.y;
    b.yaw = geom::wrap_angle(-b.yaw);
  }
  return {std::move(pc2), std::move(gt2)};
}

std::pair<PointCloud, GroundTruth> apply_scale(const PointCloud& pc,
                                               const GroundTruth& gt,
                                               double s) {
  if (!(s > 0) || !std::isfinite(s)) fail("scale factor must be positive");
  PointCloud pc2 = pc;
  GroundTruth gt2 = gt;
  for (Point& p : pc2.points) {
    p.x *= s;
    p.y *= s;
    p.z *= s;
  }
  for (geom::Box3D& b : gt2.boxes) {
    b.center = b.center * s;
    b.length *= s;
    b.width *= s;
    b.height *= s;
  }
  return {std::move(pc2), std::move(gt2)};
}

std::pair<PointCloud, GroundTruth> apply_rotation(const PointCloud& pc,
                                                  const GroundTruth& gt,
                                                  double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  PointCloud pc2 = pc;
  GroundTruth gt2 = gt;
  for (Point& p : pc2.points) {
    double x = c * p.x - s * p.y, y = s * p.x + c * p.y;
    p.x = x;
    p.y = y;
  }
  for (geom::Box3D& b : gt2.boxes) {
    double x = c * b.center.x - s * b.center.y;
    double y = s * b.center.x + c * b.center.y;
    b.center.x = x;
    b.center.y = y;
    b.yaw = geom::wrap_angle(b.yaw + angle);
  }
  return {std::move(pc2), std::move(gt2)};
}

std::pair<PointCloud, GroundTruth> augment(const PointCloud& pc,
                                           const GroundTruth& gt,
                                           AugmentMode mode, Rng& rng,
                                           const AugmentRanges& ranges) {
  switch (mode) {
    case AugmentMode::kFlip:
      return flip_y(pc, gt);
    case AugmentMode::kScale:
      return apply_scale(pc, gt,
                         rng.uniform(ranges.scale_min, ranges.scale_max));
    case AugmentMode::kRotate:
      return apply_rotation(pc, gt,
                            rng.uniform(ranges.rot_min, ranges.rot_max));
  }
  fail("unknown augmentation mode");
}

}  // namespace v2p::scene
