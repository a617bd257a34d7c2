#include "v2p/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>

namespace v2p::voxel {
namespace {

int exact_cells(double extent, double step, const char* axis) {
  double q = extent / step;
  double r = std::round(q);
  if (r < 1.0 || std::abs(q - r) > 1e-6) {
    throw std::runtime_error(std::string("voxel grid does not tile bounds on ") +
                             axis + " axis: extent " + std::to_string(extent) +
                             " / step " + std::to_string(step));
  }
  return static_cast<int>(r);
}

int ceil_div(int n, int d) { return (n + d - 1) / d; }

}  // namespace

void VoxelGridSpec::validate() const {
  if (!bounds.valid()) throw std::runtime_error("voxel grid bounds are empty");
  if (dx <= 0 || dy <= 0 || dz <= 0)
    throw std::runtime_error("voxel steps must be positive");
  if (stride < 1) throw std::runtime_error("voxel stride must be >= 1");
  nx();
  ny();
  nz();
}

int VoxelGridSpec::nx() const {
  return ceil_div(exact_cells(bounds.x_max - bounds.x_min, dx, "x"), stride);
}

int VoxelGridSpec::ny() const {
  return ceil_div(exact_cells(bounds.y_max - bounds.y_min, dy, "y"), stride);
}

int VoxelGridSpec::nz() const {
  return ceil_div(exact_cells(bounds.z_max - bounds.z_min, dz, "z"), stride);
}

VoxelGridSpec VoxelGridSpec::at_stride(int s) const {
  VoxelGridSpec out = *this;
  out.stride = s;
  out.validate();
  return out;
}

SparseVoxelTensor voxelize(const scene::PointCloud& pc,
                           const VoxelGridSpec& spec) {
  spec.validate();
  if (spec.stride != 1)
    throw std::runtime_error("voxelize expects a stride-1 grid spec");
  const int nx = spec.nx(), ny = spec.ny(), nz = spec.nz();

  std::map<VoxelIndex, std::vector<scene::Point>> cells;
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const scene::Point& p = pc.points[i];
    if (!spec.bounds.contains(p.x, p.y, p.z)) {
      throw std::runtime_error(
          "point " + std::to_string(i) + " at (" + std::to_string(p.x) + ", " +
          std::to_string(p.y) + ", " + std::to_string(p.z) +
          ") lies outside the voxel grid bounds; crop the cloud first");
    }
    VoxelIndex v;
    v.x = static_cast<int>(std::floor((p.x - spec.bounds.x_min) / spec.dx));
    v.y = static_cast<int>(std::floor((p.y - spec.bounds.y_min) / spec.dy));
    v.z = static_cast<int>(std::floor((p.z - spec.bounds.z_min) / spec.dz));
    v.x = std::clamp(v.x, 0, nx - 1);
    v.y = std::clamp(v.y, 0, ny - 1);
    v.z = std::clamp(v.z, 0, nz - 1);
    cells[v].push_back(p);
  }

  SparseVoxelTensor out;
  out.spec = spec;
  out.feature_width = 4;
  out.indices.reserve(cells.size());
  out.features.reserve(cells.size() * 4);
  for (auto& [idx, pts] : cells) {
    // Canonical accumulation order -> permutation-invariant sums.
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
      return std::tie(a.x, a.y, a.z, a.r) < std::tie(b.x, b.y, b.z, b.r);
    });
    double s[4] = {0, 0, 0, 0};
    for (const auto& p : pts) {
      s[0] += p.x;
      s[1] += p.y;
      s[2] += p.z;
      s[3] += p.r;
    }
    out.indices.push_back(idx);
    for (double v : s) out.features.push_back(v / static_cast<double>(pts.size()));
  }
  return out;
}

geom::Vec3 devoxelize(const VoxelIndex& idx, const VoxelGridSpec& spec) {
  const double s = static_cast<double>(spec.stride);
  return {(idx.x + 0.5) * spec.dx * s + spec.bounds.x_min,
          (idx.y + 0.5) * spec.dy * s + spec.bounds.y_min,
          (idx.z + 0.5) * spec.dz * s + spec.bounds.z_min};
}

std::vector<geom::Vec3> devoxelize_all(const SparseVoxelTensor& t) {
  std::vector<geom::Vec3> out;
  out.reserve(t.indices.size());
  for (const auto& idx : t.indices) out.push_back(devoxelize(idx, t.spec));
  return out;
}

std::string debug_dump(const SparseVoxelTensor& t) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < t.indices.size(); ++i) {
    const auto& v = t.indices[i];
    out += std::to_string(v.x) + ' ' + std::to_string(v.y) + ' ' +
           std::to_string(v.z);
    for (int c = 0; c < t.feature_width; ++c) {
      std::snprintf(buf, sizeof(buf), " %.17g",
                    t.features[i * t.feature_width + c]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace v2p::voxel
