#pragma once

#include <compare>
#include <string>
#include <vector>

#include "v2p/geom.hpp"
#include "v2p/scene.hpp"

namespace v2p::voxel {

// Quantization geometry shared by every voxel level. The base (stride-1)
// extents must divide the bounds exactly; strided extents ceil-halve so a
// lone voxel on the far edge still has a home.
struct VoxelGridSpec {
  double dx = 1, dy = 1, dz = 1;
  scene::SceneBounds bounds;
  int stride = 1;

  void validate() const;
  int nx() const;  // extents at this stride
  int ny() const;
  int nz() const;
  VoxelGridSpec at_stride(int s) const;
};

struct VoxelIndex {
  int x = 0, y = 0, z = 0;
  auto operator<=>(const VoxelIndex&) const = default;
};

struct SparseVoxelTensor {
  VoxelGridSpec spec;
  std::vector<VoxelIndex> indices;  // lexicographically sorted, unique
  int feature_width = 0;
  std::vector<double> features;  // indices.size() x feature_width, row-major

  std::size_t size() const { return indices.size(); }
};

// floor((p - min) / d) per axis; features are the per-voxel mean of
// (x, y, z, r), accumulated over points in a canonical sort order so the
// result is invariant to input permutation. Requires stride 1 and a cropped
// cloud (any point outside the bounds is an error).
SparseVoxelTensor voxelize(const scene::PointCloud& pc,
                           const VoxelGridSpec& spec);

// Voxel center in metric coordinates: (v + 0.5) * d * stride + min.
geom::Vec3 devoxelize(const VoxelIndex& idx, const VoxelGridSpec& spec);
std::vector<geom::Vec3> devoxelize_all(const SparseVoxelTensor& t);

// One line per voxel: `vx vy vz f0 f1 ...` with full double precision.
std::string debug_dump(const SparseVoxelTensor& t);

}  // namespace v2p::voxel
