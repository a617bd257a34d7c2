#pragma once

#include <array>
#include <string>
#include <vector>

#include "v2p/ad/graph.hpp"
#include "v2p/ad/params.hpp"
#include "v2p/config.hpp"
#include "v2p/voxel.hpp"

namespace v2p::backbone {

// Sparse voxel tensor whose feature rows live on an autodiff graph.
struct SparseFeat {
  voxel::VoxelGridSpec spec;
  std::vector<voxel::VoxelIndex> indices;  // lex-sorted, unique
  ad::Tensor features;                     // indices.size() x width
};

// Dense map-view features at stride 8. Row layout: row = vx * ny + vy.
struct BevMap {
  voxel::VoxelGridSpec spec;  // stride-8 grid
  int nx = 0, ny = 0, channels = 0;
  ad::Tensor features;  // (nx * ny) x channels

  int row(int vx, int vy) const { return vx * ny + vy; }
};

// Multi-scale encoder output: strides 1, 2, 4, 8. `empty` flags a scene
// with no occupied voxels; levels then carry no feature tensors.
struct EncoderOut {
  std::array<SparseFeat, 4> levels;
  bool empty = false;
};

voxel::VoxelGridSpec grid_spec(const config::SceneConfig& sc);

// Wrap raw voxel features as graph constants.
SparseFeat lift(ad::Graph& g, const voxel::SparseVoxelTensor& t);

// One 3x3x3 sparse convolution + bias + ReLU. stride 1 is submanifold
// (output indices = input indices, only occupied neighbors contribute);
// stride 2 floor-halves the index set and reads inputs at 2u + offset.
// Parameters: `prefix`.w with shape (27 * in_width) x out_width, rows
// blocked by kernel offset in (dx, dy, dz) lexicographic order, and
// `prefix`.b with shape 1 x out_width.
SparseFeat sparse_conv_block(ad::Graph& g, ad::ParamStore& store,
                             const std::string& prefix, const SparseFeat& in,
                             int out_width, int stride);

// Level l: one stride-2 block (levels 2-4 only) then blocks[l-1]
// submanifold blocks at the level width.
EncoderOut encode(ad::Graph& g, ad::ParamStore& store,
                  const config::BackboneConfig& bc,
                  const voxel::SparseVoxelTensor& v0);

// Stack each occupied column's z-planes into one feature vector (missing
// planes are zero), apply a learned affine mix, scatter into the dense
// grid. Columns with no voxels stay exactly zero.
BevMap to_bev(ad::Graph& g, ad::ParamStore& store, const SparseFeat& v4,
              int channels);

}  // namespace v2p::backbone
