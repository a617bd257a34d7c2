#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "v2p/backbone.hpp"
#include "v2p/config.hpp"
#include "v2p/geom.hpp"
#include "v2p/scene.hpp"

namespace v2p::rpn {

struct Anchor {
  geom::Box3D box;
  int class_id = 0;
  int cell_x = 0, cell_y = 0;
  int orient = 0;  // 0 -> yaw 0, 1 -> yaw pi/2
};

// One anchor per BEV cell x class x orientation, centered on cell centers.
// Flat index: ((cell_x * ny + cell_y) * K + class) * 2 + orient, matching
// the head channel layout per cell.
struct AnchorGrid {
  std::vector<Anchor> anchors;
  int nx = 0, ny = 0, num_classes = 0;

  int per_cell() const { return num_classes * 2; }
  std::size_t size() const { return anchors.size(); }
};

AnchorGrid make_anchors(const voxel::VoxelGridSpec& bev_spec,
                        std::span<const config::ClassSpec> classes);

// Residual box encoding against an anchor. delta_a = sqrt(l_a^2 + w_a^2)
// normalizes the center-plane offsets, the height normalizes z, sizes are
// log-ratios, the angle rides along as absolute (sin, cos).
std::array<double, 8> encode_box(const geom::Box3D& gt,
                                 const geom::Box3D& anchor);
geom::Box3D decode_box(std::span<const double> delta,
                       const geom::Box3D& anchor);

enum class AnchorLabel { kNegative, kPositive, kIgnore };

struct Assignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> matched_gt;  // -1 where unmatched
  std::vector<std::array<double, 8>> targets;  // valid on positives
  int num_positive = 0;
};

// BEV-IoU matching per class: an anchor is positive when its best same-class
// IoU reaches pos_iou or it is the best anchor (first on ties) of some gt
// with nonzero overlap; negative below neg_iou; ignore in between.
Assignment assign_targets(const AnchorGrid& grid, const scene::GroundTruth& gt,
                          double pos_iou, double neg_iou);

// Dense per-cell heads on the BEV map: a 3x3 same-padded trunk conv + ReLU,
// then 1x1 projections. score: (nx*ny) x 2K logits; reg: (nx*ny) x 16K with
// the 8 residual channels blocked per anchor.
struct RpnMaps {
  ad::Tensor score;
  ad::Tensor reg;
};
RpnMaps rpn_heads(ad::Graph& g, ad::ParamStore& store,
                  const backbone::BevMap& bev, const config::RpnConfig& rc,
                  int num_classes);

struct Proposal {
  geom::Box3D box;
  double score = 0.0;
  int class_id = 0;
  int anchor_index = -1;
};

// Greedy NMS over BEV IoU. Returns indices of kept boxes in (score desc,
// index asc) order; a candidate is dropped when it overlaps an already-kept
// box above iou_thr. keep_top < 0 keeps all survivors.
std::vector<int> nms_bev(std::span<const geom::Box3D> boxes,
                         std::span<const double> scores, double iou_thr,
                         int keep_top);

// Decode every anchor, apply sigmoid scores, NMS, cap at nms_top.
std::vector<Proposal> propose(std::span<const double> score_logits,
                              std::span<const double> reg,
                              const AnchorGrid& grid,
                              const config::RpnConfig& rc);

// One `score x y z l w h yaw` line per proposal.
std::string dump_proposals(std::span<const Proposal> proposals);

// Focal objectness over non-ignored anchors plus mean smooth-L1 over
// positive anchors' residuals. num_positive == 0 drops the box term.
struct RpnLoss {
  ad::Tensor total;  // cls + reg
  ad::Tensor cls;
  ad::Tensor reg;
};
RpnLoss rpn_loss(ad::Graph& g, const RpnMaps& maps, const Assignment& assign,
                 const config::RpnConfig& rc);

}  // namespace v2p::rpn
