#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "v2p/ad/graph.hpp"
#include "v2p/ad/params.hpp"
#include "v2p/backbone.hpp"
#include "v2p/config.hpp"
#include "v2p/geom.hpp"
#include "v2p/rpn.hpp"
#include "v2p/scene.hpp"

namespace v2p::refine {

// Scene-level inputs shared by every proposal's pooling pass.
struct SceneFeatures {
  std::vector<geom::Vec3> raw_xyz;
  ad::Tensor p0;   // N x decoder-embedding width
  ad::Tensor seg;  // N x 1 foreground probability
  const backbone::BevMap* bev = nullptr;
};

// Grid-point canonical offsets ((i+0.5)/n_g - 0.5) * (l, w, h), x-major.
std::vector<geom::Vec3> make_grid(const geom::Box3D& box, int n_g);
std::vector<geom::Vec3> grid_world(const geom::Box3D& box, int n_g);

// Points falling inside the box grown by d_size on every side, with their
// box-canonical coordinates and original sensor-range depths.
struct Crop {
  std::vector<int> idx;
  std::vector<geom::Vec3> canonical;
  std::vector<double> depth;
};
Crop crop_points(const geom::Box3D& box, double d_size,
                 std::span<const geom::Vec3> pts);

// Point stream: canonical points + depth + segmentation through MLP1,
// fused with the decoder embedding through MLP2, then per-grid-point
// radius grouping with MLP3 and zero-padded max pooling, radii concatenated.
struct PointStream {
  ad::Tensor h;  // n_g^3 x c_h
  bool low_evidence = false;
};
PointStream point_roi_align(ad::Graph& g, ad::ParamStore& store,
                            const config::RefineConfig& rc,
                            const geom::Box3D& box, const SceneFeatures& sf);

// Map stream: continuous BEV coordinates (g - min) / (d * stride), bilinear
// over the four integer neighbors, border-clamped.
ad::Tensor map_roi_align(ad::Graph& g, const geom::Box3D& box,
                         const backbone::BevMap& bev, int n_g);

// Corner stream: shared per-corner lift then a learned full-width mix over
// the 8 ordered corners.
ad::Tensor corner_embed(ad::Graph& g, ad::ParamStore& store,
                        const config::RefineConfig& rc,
                        const geom::Box3D& box);

enum class Pass { kFirst, kAligned };

struct Refinement {
  ad::Tensor cls;  // 1x1 probability
  ad::Tensor reg;  // 1x8 residual on the pooled box
  ad::Tensor iou;  // 1x1 estimate in (0,1)
  bool low_evidence = false;
  Pass pass = Pass::kFirst;
};

// Fused heads over the three streams.
Refinement fuse_and_predict(ad::Graph& g, ad::ParamStore& store,
                            const config::RefineConfig& rc, ad::Tensor h,
                            ad::Tensor m, ad::Tensor b);

// Full per-proposal pass: all three streams + heads, pooling on `box`.
Refinement refine_one(ad::Graph& g, ad::ParamStore& store,
                      const config::RefineConfig& rc, const geom::Box3D& box,
                      const SceneFeatures& sf, Pass pass);

// Classification labels by actual 3D IoU bands, regression/IoU supervision
// masked at theta_reg, targets encoded against the proposal box.
struct Targets {
  int cls_label = 0;  // 1, 0, or -1 for ignored
  bool reg_mask = false;
  std::array<double, 8> reg_target{};
  double iou_target = 0.0;
  int matched_gt = -1;
};
std::vector<Targets> make_targets(std::span<const rpn::Proposal> proposals,
                                  const scene::GroundTruth& gt,
                                  const config::RefineConfig& rc);

// L_refine = L_cls + L_reg + L_iou with the masked terms divided by the
// count of proposals passing theta_reg (exactly zero when none do).
struct RefineLoss {
  ad::Tensor total;
  ad::Tensor cls;
  ad::Tensor reg;
  ad::Tensor iou;
  int n_reg = 0;
};
RefineLoss refine_loss(ad::Graph& g, std::span<const Refinement> refinements,
                       std::span<const Targets> targets);

enum class Confidence { kCls, kUnalignedIou, kAlignedIou, kAlignedIouTimesCls };

// Numeric per-proposal summary consumed by the final suppression stage.
struct ScoredBox {
  geom::Box3D box;  // refined box
  int class_id = 0;
  double cls = 0.0;          // first-pass classification probability
  double unaligned_iou = 0.0;  // first-pass IoU estimate
  double aligned_iou = 0.0;    // second-pass IoU estimate
};

double confidence_of(const ScoredBox& sb, Confidence mode);

// Per-class greedy BEV NMS ranked by the selected confidence; results sorted
// by confidence descending.
std::vector<scene::Detection> final_nms(std::span<const ScoredBox> boxes,
                                        Confidence mode,
                                        const config::RefineConfig& rc);

Confidence parse_confidence(const std::string& name);
std::string confidence_name(Confidence mode);

}  // namespace v2p::refine
