#pragma once

#include <span>
#include <string>
#include <vector>

#include "v2p/ad/graph.hpp"
#include "v2p/ad/params.hpp"
#include "v2p/backbone.hpp"
#include "v2p/config.hpp"
#include "v2p/geom.hpp"
#include "v2p/scene.hpp"

namespace v2p::decoder {

// Inverse-distance mixing rows for each query over its K nearest sources
// (ties on distance break toward the lower source index). A query within
// 1e-9 m of a source copies that source exactly; fewer than K sources fall
// back to using all of them.
std::vector<ad::Graph::MixRow> knn_weights(std::span<const geom::Vec3> queries,
                                           std::span<const geom::Vec3> sources,
                                           int k);

ad::Tensor knn_interpolate(ad::Graph& g, std::span<const geom::Vec3> queries,
                           std::span<const geom::Vec3> sources,
                           ad::Tensor source_features, int k);

// Metric centers of a level's occupied voxels.
std::vector<geom::Vec3> voxel_centers(const backbone::SparseFeat& level);

// Residual decode block: ReLU(affine(P_prev) + affine(interp(V_level))).
// An empty level degrades to the identity path and emits a warning.
ad::Tensor decode_block(ad::Graph& g, ad::ParamStore& store,
                        const std::string& prefix, ad::Tensor p_prev,
                        const backbone::SparseFeat& level,
                        std::span<const geom::Vec3> raw_xyz, int out_width,
                        int k);

// Full decoder pass. levels holds P4..P1 after each block; p0 is the final
// point embedding, seg the per-point foreground probability column.
struct DecodeOut {
  std::vector<ad::Tensor> levels;
  ad::Tensor p0;
  ad::Tensor seg;  // N x 1 in (0,1)
};
DecodeOut decode_all(ad::Graph& g, ad::ParamStore& store,
                     const config::DecoderConfig& dc,
                     const backbone::EncoderOut& enc,
                     const scene::PointCloud& raw);

// 1 for points inside (closed faces) any gt box.
std::vector<double> seg_labels(const scene::PointCloud& pc,
                               const scene::GroundTruth& gt);

// Focal segmentation loss (alpha 0.25, gamma 2).
ad::Tensor seg_loss(ad::Graph& g, ad::Tensor seg_probs,
                    const std::vector<double>& labels);

// Per-point `x y z prob label` lines.
std::string dump_segmentation(const scene::PointCloud& pc,
                              std::span<const double> probs,
                              std::span<const double> labels);

}  // namespace v2p::decoder
