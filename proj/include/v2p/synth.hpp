#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "v2p/rng.hpp"
#include "v2p/scene.hpp"

namespace v2p::scene {

struct ClassSizeRange {
  double length_min = 1, length_max = 1;
  double width_min = 1, width_max = 1;
  double height_min = 1, height_max = 1;
};

// Recipe for one synthetic scene. Boxes are placed fully inside the bounds,
// mutually disjoint with at least `separation` metres of clearance, with
// centers restricted to [z_center_min, z_center_max] to mimic objects
// resting near a ground plane.
struct SynthSpec {
  SceneBounds bounds;
  std::vector<ClassSizeRange> classes;  // one entry per class id
  int num_boxes = 0;
  int points_per_box = 0;
  double background_density = 0.0;  // points per cubic metre of bounds
  double separation = 0.1;
  double z_center_min = 0.0;
  double z_center_max = 0.0;
  std::uint64_t seed = 0;
};

// Deterministic scene generator: box surface points (with a small inward
// offset so membership tests are unambiguous) followed by uniform background
// points rejected out of every box. Point order is fixed by the seed.
std::pair<PointCloud, GroundTruth> synth_scene(const SynthSpec& spec);

enum class AugmentMode { kFlip, kScale, kRotate };

struct AugmentRanges {
  double scale_min = 0.95;
  double scale_max = 1.05;
  double rot_min = -3.14159265358979323846 / 4;
  double rot_max = 3.14159265358979323846 / 4;
};

// Deterministic transform primitives; `augment` draws the parameter from
// `ranges` and applies the matching primitive. All are pure.
std::pair<PointCloud, GroundTruth> flip_y(const PointCloud& pc,
                                          const GroundTruth& gt);
std::pair<PointCloud, GroundTruth> apply_scale(const PointCloud& pc,
                                               const GroundTruth& gt,
                                               double s);
std::pair<PointCloud, GroundTruth> apply_rotation(const PointCloud& pc,
                                                  const GroundTruth& gt,
                                                  double angle);
std::pair<PointCloud, GroundTruth> augment(const PointCloud& pc,
                                           const GroundTruth& gt,
                                           AugmentMode mode, Rng& rng,
                                           const AugmentRanges& ranges = {});

}  // namespace v2p::scene
