#include "v2p/backbone.hpp"

#include <algorithm>
#include <stdexcept>

namespace v2p::backbone {
namespace {

using voxel::VoxelIndex;

// Position of idx in a lex-sorted index list, or -1.
int find_index(const std::vector<VoxelIndex>& sorted, const VoxelIndex& idx) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), idx);
  if (it == sorted.end() || !(*it == idx)) return -1;
  return static_cast<int>(it - sorted.begin());
}

// Kernel offsets in (dx, dy, dz) lexicographic order; o = the row block of
// the weight matrix that multiplies the neighbor at this offset.
constexpr int kKernel = 27;
VoxelIndex offset_of(int o) {
  return {o / 9 - 1, (o / 3) % 3 - 1, o % 3 - 1};
}

std::vector<VoxelIndex> halved_indices(const std::vector<VoxelIndex>& in) {
  std::vector<VoxelIndex> out;
  out.reserve(in.size());
  for (const auto& v : in) out.push_back({v.x / 2, v.y / 2, v.z / 2});
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void ensure_conv_params(ad::ParamStore& store, const std::string& prefix,
                        int in_width, int out_width) {
  store.ensure(prefix + ".w", kKernel * in_width, out_width, false);
  store.ensure(prefix + ".b", 1, out_width, true);
}

}  // namespace

voxel::VoxelGridSpec grid_spec(const config::SceneConfig& sc) {
  voxel::VoxelGridSpec spec;
  spec.dx = sc.voxel_dx;
  spec.dy = sc.voxel_dy;
  spec.dz = sc.voxel_dz;
  spec.bounds = sc.bounds;
  spec.validate();
  return spec;
}

SparseFeat lift(ad::Graph& g, const voxel::SparseVoxelTensor& t) {
  SparseFeat out;
  out.spec = t.spec;
  out.indices = t.indices;
  out.features = g.constant(static_cast<int>(t.indices.size()),
                            t.feature_width, t.features);
  return out;
}

SparseFeat sparse_conv_block(ad::Graph& g, ad::ParamStore& store,
                             const std::string& prefix, const SparseFeat& in,
                             int out_width, int stride) {
  if (stride != 1 && stride != 2)
    throw std::runtime_error("sparse_conv_block stride must be 1 or 2");
  const int n_in = static_cast<int>(in.indices.size());
  const int in_width = in.features.cols();
  if (n_in == 0) throw std::runtime_error("sparse_conv_block on empty tensor");

  SparseFeat out;
  out.spec = stride == 1 ? in.spec : in.spec.at_stride(in.spec.stride * 2);
  out.indices = stride == 1 ? in.indices : halved_indices(in.indices);
  const int n_out = static_cast<int>(out.indices.size());

  // Missing neighbors gather the appended all-zero row.
  ad::Tensor padded = g.concat_rows(
      {in.features, g.constant(1, in_width, std::vector<double>(in_width))});

  std::vector<ad::Tensor> gathered;
  gathered.reserve(kKernel);
  for (int o = 0; o < kKernel; ++o) {
    const VoxelIndex d = offset_of(o);
    std::vector<int> rows(n_out, n_in);
    for (int i = 0; i < n_out; ++i) {
      const VoxelIndex& u = out.indices[i];
      const VoxelIndex base =
          stride == 1 ? u : VoxelIndex{2 * u.x, 2 * u.y, 2 * u.z};
      int pos =
          find_index(in.indices, {base.x + d.x, base.y + d.y, base.z + d.z});
      if (pos >= 0) rows[i] = pos;
    }
    gathered.push_back(g.gather_rows(padded, std::move(rows)));
  }

  ad::Tensor w = g.param(store, prefix + ".w", kKernel * in_width, out_width);
  ad::Tensor b = g.param(store, prefix + ".b", 1, out_width, true);
  out.features =
      g.relu(g.add_rowvec(g.matmul(g.concat_cols(gathered), w), b));
  return out;
}

EncoderOut encode(ad::Graph& g, ad::ParamStore& store,
                  const config::BackboneConfig& bc,
                  const voxel::SparseVoxelTensor& v0) {
  if (bc.widths.size() != 4 || bc.blocks.size() != 4)
    throw std::runtime_error("backbone config needs 4 widths and 4 block counts");
  if (v0.spec.stride != 1 || v0.feature_width != 4)
    throw std::runtime_error("encode expects a stride-1 width-4 voxel tensor");

  EncoderOut out;
  if (v0.indices.empty()) {
    // Still create every parameter so checkpoints do not depend on data.
    out.empty = true;
    int prev = v0.feature_width;
    for (int l = 1; l <= 4; ++l) {
      const std::string lvl = "backbone.l" + std::to_string(l);
      if (l > 1) {
        ensure_conv_params(store, lvl + ".down", prev, bc.widths[l - 1]);
        prev = bc.widths[l - 1];
      }
      for (int k = 0; k < bc.blocks[l - 1]; ++k) {
        ensure_conv_params(store, lvl + ".s" + std::to_string(k), prev,
                           bc.widths[l - 1]);
        prev = bc.widths[l - 1];
      }
      out.levels[l - 1].spec = v0.spec.at_stride(1 << (l - 1));
    }
    return out;
  }

  SparseFeat x = lift(g, v0);
  for (int l = 1; l <= 4; ++l) {
    const std::string lvl = "backbone.l" + std::to_string(l);
    if (l > 1) x = sparse_conv_block(g, store, lvl + ".down", x, bc.widths[l - 1], 2);
    for (int k = 0; k < bc.blocks[l - 1]; ++k) {
      x = sparse_conv_block(g, store, lvl + ".s" + std::to_string(k), x,
                            bc.widths[l - 1], 1);
    }
    out.levels[l - 1] = x;
  }
  return out;
}

BevMap to_bev(ad::Graph& g, ad::ParamStore& store, const SparseFeat& v4,
              int channels) {
  const voxel::VoxelGridSpec& spec = v4.spec;
  BevMap bev;
  bev.spec = spec;
  bev.nx = spec.nx();
  bev.ny = spec.ny();
  bev.channels = channels;

  const int planes = spec.nz();
  const int width = v4.features.valid() ? v4.features.cols() : 0;
  if (width == 0) {  // empty scene: all-zero map, no mixing needed
    bev.features = g.constant(
        bev.nx * bev.ny, channels,
        std::vector<double>(std::size_t(bev.nx) * bev.ny * channels));
    return bev;
  }

  // Occupied (vx, vy) columns in row-layout order; v4 indices are sorted by
  // (x, y, z) so columns come out sorted and z-planes are found by lookup.
  std::vector<std::pair<int, int>> columns;
  for (const auto& v : v4.indices) {
    if (columns.empty() || columns.back() != std::make_pair(v.x, v.y))
      columns.emplace_back(v.x, v.y);
  }
  const int n_col = static_cast<int>(columns.size());
  const int n_in = static_cast<int>(v4.indices.size());

  ad::Tensor padded = g.concat_rows(
      {v4.features, g.constant(1, width, std::vector<double>(width))});
  std::vector<ad::Tensor> stacked;
  stacked.reserve(planes);
  for (int zp = 0; zp < planes; ++zp) {
    std::vector<int> rows(n_col, n_in);
    for (int c = 0; c < n_col; ++c) {
      int pos = find_index(v4.indices, {columns[c].first, columns[c].second, zp});
      if (pos >= 0) rows[c] = pos;
    }
    stacked.push_back(g.gather_rows(padded, std::move(rows)));
  }

  ad::Tensor w = g.param(store, "bev.mix.w", planes * width, channels);
  ad::Tensor b = g.param(store, "bev.mix.b", 1, channels, true);
  ad::Tensor mixed = g.add_rowvec(g.matmul(g.concat_cols(stacked), w), b);

  std::vector<int> dst(n_col);
  for (int c = 0; c < n_col; ++c)
    dst[c] = bev.row(columns[c].first, columns[c].second);
  bev.features = g.scatter_sum_rows(mixed, std::move(dst), bev.nx * bev.ny);
  return bev;
}

}  // namespace v2p::backbone
