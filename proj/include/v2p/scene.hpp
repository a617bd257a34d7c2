#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "v2p/geom.hpp"

namespace v2p::scene {

// Axis-aligned metric extent of a scene. Cropping and voxel quantization
// treat the max edge as open, so floor-quantized indices always land in-grid.
struct SceneBounds {
  double x_min = 0, x_max = 1;
  double y_min = 0, y_max = 1;
  double z_min = 0, z_max = 1;

  bool valid() const;
  bool contains(double x, double y, double z) const;  // half-open at max
};

struct Point {
  double x = 0, y = 0, z = 0;
  double r = 0;  // reflectance in [0, 1]
};

struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  geom::Vec3 xyz(std::size_t i) const {
    return {points[i].x, points[i].y, points[i].z};
  }
};

struct GroundTruth {
  std::vector<geom::Box3D> boxes;
  std::vector<int> class_ids;  // parallel to boxes
};

// A scored, classified box; the common currency between the refinement
// stage, the detection writer and the evaluator.
struct Detection {
  geom::Box3D box;
  int class_id = 0;
  double score = 0.0;
};

// KITTI velodyne format: packed little-endian float32 (x, y, z, r) records.
PointCloud load_kitti_bin(const std::filesystem::path& path);
void save_kitti_bin(const PointCloud& pc, const std::filesystem::path& path);

// KITTI label text, one object per line. Coordinates are consumed in the
// same frame as the point cloud (x y z = box center, rotation = yaw); the
// camera-specific fields (alpha, 2D bbox) are carried as placeholders.
// Lines whose class name is not in `class_names` are skipped.
GroundTruth load_kitti_labels(const std::filesystem::path& path,
                              std::span<const std::string> class_names);
void save_kitti_labels(const std::filesystem::path& path, const GroundTruth& gt,
                       std::span<const std::string> class_names);

// Detection results use the same line format with a trailing score.
std::vector<Detection> load_kitti_detections(
    const std::filesystem::path& path,
    std::span<const std::string> class_names);
void save_kitti_detections(const std::filesystem::path& path,
                           std::span<const Detection> dets,
                           std::span<const std::string> class_names);

// Keep exactly the points with x in [x_min, x_max), y in [y_min, y_max),
// z in [z_min, z_max); order preserved.
PointCloud crop_to_bounds(const PointCloud& pc, const SceneBounds& bounds);

}  // namespace v2p::scene
