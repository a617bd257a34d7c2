#include "v2p/rpn.hpp"

#include "v2p/ad/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace v2p::rpn {
namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

void require_positive_sizes(const geom::Box3D& b, const char* which) {
  if (!(b.length > 0) || !(b.width > 0) || !(b.height > 0))
    throw std::runtime_error(std::string("encode_box: non-positive ") + which +
                             " box size");
}

}  // namespace

AnchorGrid make_anchors(const voxel::VoxelGridSpec& bev_spec,
                        std::span<const config::ClassSpec> classes) {
  AnchorGrid grid;
  grid.nx = bev_spec.nx();
  grid.ny = bev_spec.ny();
  grid.num_classes = static_cast<int>(classes.size());
  grid.anchors.reserve(std::size_t(grid.nx) * grid.ny * classes.size() * 2);
  for (int cx = 0; cx < grid.nx; ++cx) {
    for (int cy = 0; cy < grid.ny; ++cy) {
      geom::Vec3 center = voxel::devoxelize({cx, cy, 0}, bev_spec);
      for (int k = 0; k < grid.num_classes; ++k) {
        for (int o = 0; o < 2; ++o) {
          Anchor a;
          a.box.center = {center.x, center.y, classes[k].anchor_z};
          a.box.length = classes[k].anchor_length;
          a.box.width = classes[k].anchor_width;
          a.box.height = classes[k].anchor_height;
          a.box.yaw = o == 0 ? 0.0 : geom::kPi / 2;
          a.class_id = k;
          a.cell_x = cx;
          a.cell_y = cy;
          a.orient = o;
          grid.anchors.push_back(a);
        }
      }
    }
  }
  return grid;
}

std::array<double, 8> encode_box(const geom::Box3D& gt,
                                 const geom::Box3D& anchor) {
  require_positive_sizes(gt, "gt");
  require_positive_sizes(anchor, "anchor");
  const double da =
      std::sqrt(anchor.length * anchor.length + anchor.width * anchor.width);
  return {(gt.center.x - anchor.center.x) / da,
          (gt.center.y - anchor.center.y) / da,
          (gt.center.z - anchor.center.z) / anchor.height,
          std::log(gt.length / anchor.length),
          std::log(gt.width / anchor.width),
          std::log(gt.height / anchor.height),
          std::sin(gt.yaw),
          std::cos(gt.yaw)};
}

geom::Box3D decode_box(std::span<const double> delta,
                       const geom::Box3D& anchor) {
  if (delta.size() != 8) throw std::runtime_error("decode_box needs 8 values");
  require_positive_sizes(anchor, "anchor");
  const double da =
      std::sqrt(anchor.length * anchor.length + anchor.width * anchor.width);
  geom::Box3D out;
  out.center.x = delta[0] * da + anchor.center.x;
  out.center.y = delta[1] * da + anchor.center.y;
  out.center.z = delta[2] * anchor.height + anchor.center.z;
  out.length = anchor.length * std::exp(delta[3]);
  out.width = anchor.width * std::exp(delta[4]);
  out.height = anchor.height * std::exp(delta[5]);
  out.yaw = geom::wrap_angle(std::atan2(delta[6], delta[7]));
  return out;
}

Assignment assign_targets(const AnchorGrid& grid, const scene::GroundTruth& gt,
                          double pos_iou, double neg_iou) {
  const std::size_t n = grid.size();
  Assignment out;
  out.labels.assign(n, AnchorLabel::kNegative);
  out.matched_gt.assign(n, -1);
  out.targets.assign(n, {});

  const std::size_t m = gt.boxes.size();
  // IoU table anchor x gt, restricted to matching class.
  std::vector<double> iou(n * m, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t g = 0; g < m; ++g) {
      if (grid.anchors[a].class_id != gt.class_ids[g]) continue;
      iou[a * m + g] = geom::iou_bev(grid.anchors[a].box, gt.boxes[g]);
    }
  }

  std::vector<int> best_gt(n, -1);
  std::vector<double> best_iou(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t g = 0; g < m; ++g) {
      if (iou[a * m + g] > best_iou[a]) {
        best_iou[a] = iou[a * m + g];
        best_gt[a] = static_cast<int>(g);
      }
    }
  }

  for (std::size_t a = 0; a < n; ++a) {
    if (best_gt[a] >= 0 && best_iou[a] >= pos_iou) {
      out.labels[a] = AnchorLabel::kPositive;
      out.matched_gt[a] = best_gt[a];
    } else if (best_iou[a] >= neg_iou) {
      out.labels[a] = AnchorLabel::kIgnore;
    }
  }

  // Force the best-overlapping anchor of each gt positive (first on ties,
  // only when some overlap exists so targets stay meaningful).
  for (std::size_t g = 0; g < m; ++g) {
    std::size_t best_a = n;
    double best = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (iou[a * m + g] > best) {
        best = iou[a * m + g];
        best_a = a;
      }
    }
    if (best_a < n && out.labels[best_a] != AnchorLabel::kPositive) {
      out.labels[best_a] = AnchorLabel::kPositive;
      out.matched_gt[best_a] = static_cast<int>(g);
    }
  }

  for (std::size_t a = 0; a < n; ++a) {
    if (out.labels[a] == AnchorLabel::kPositive) {
      ++out.num_positive;
      out.targets[a] =
          encode_box(gt.boxes[out.matched_gt[a]], grid.anchors[a].box);
    }
  }
  return out;
}

RpnMaps rpn_heads(ad::Graph& g, ad::ParamStore& store,
                  const backbone::BevMap& bev, const config::RpnConfig& rc,
                  int num_classes) {
  const int nx = bev.nx, ny = bev.ny, c = bev.channels;
  const int n = nx * ny;

  // 3x3 same-padded conv as gather + matmul; out-of-grid taps read the
  // appended zero row.
  ad::Tensor padded = g.concat_rows(
      {bev.features, g.constant(1, c, std::vector<double>(c))});
  std::vector<ad::Tensor> taps;
  taps.reserve(9);
  for (int dx = -1; dx <= 1; ++dx) {
    for (int dy = -1; dy <= 1; ++dy) {
      std::vector<int> rows(n, n);
      for (int x = 0; x < nx; ++x) {
        for (int y = 0; y < ny; ++y) {
          int sx = x + dx, sy = y + dy;
          if (sx >= 0 && sx < nx && sy >= 0 && sy < ny)
            rows[x * ny + y] = sx * ny + sy;
        }
      }
      taps.push_back(g.gather_rows(padded, std::move(rows)));
    }
  }
  ad::Tensor trunk = g.relu(g.add_rowvec(
      g.matmul(g.concat_cols(taps),
               g.param(store, "rpn.trunk.w", 9 * c, rc.trunk_channels)),
      g.param(store, "rpn.trunk.b", 1, rc.trunk_channels, true)));

  const int per_cell = num_classes * 2;
  RpnMaps maps;
  maps.score = g.add_rowvec(
      g.matmul(trunk,
               g.param(store, "rpn.score.w", rc.trunk_channels, per_cell)),
      g.param(store, "rpn.score.b", 1, per_cell, true));
  maps.reg = g.add_rowvec(
      g.matmul(trunk,
               g.param(store, "rpn.reg.w", rc.trunk_channels, 8 * per_cell)),
      g.param(store, "rpn.reg.b", 1, 8 * per_cell, true));
  return maps;
}

std::vector<int> nms_bev(std::span<const geom::Box3D> boxes,
                         std::span<const double> scores, double iou_thr,
                         int keep_top) {
  if (boxes.size() != scores.size())
    throw std::runtime_error("nms_bev: box/score count mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  std::vector<int> kept;
  for (int idx : order) {
    if (keep_top >= 0 && static_cast<int>(kept.size()) >= keep_top) break;
    bool suppressed = false;
    for (int k : kept) {
      if (geom::iou_bev(boxes[k], boxes[idx]) > iou_thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::vector<Proposal> propose(std::span<const double> score_logits,
                              std::span<const double> reg,
                              const AnchorGrid& grid,
                              const config::RpnConfig& rc) {
  const std::size_t n = grid.size();
  if (score_logits.size() != n || reg.size() != n * 8)
    throw std::runtime_error("propose: map size does not match anchor grid");

  std::vector<geom::Box3D> boxes(n);
  std::vector<double> scores(n);
  for (std::size_t a = 0; a < n; ++a) {
    boxes[a] = decode_box(reg.subspan(a * 8, 8), grid.anchors[a].box);
    scores[a] = stable_sigmoid(score_logits[a]);
  }

  std::vector<int> kept = nms_bev(boxes, scores, rc.nms_iou, rc.nms_top);
  std::vector<Proposal> out;
  out.reserve(kept.size());
  for (int idx : kept) {
    Proposal p;
    p.box = boxes[idx];
    p.score = scores[idx];
    p.class_id = grid.anchors[idx].class_id;
    p.anchor_index = idx;
    out.push_back(p);
  }
  return out;
}

std::string dump_proposals(std::span<const Proposal> proposals) {
  std::string out;
  char buf[256];
  for (const auto& p : proposals) {
    std::snprintf(buf, sizeof(buf),
                  "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", p.score,
                  p.box.center.x, p.box.center.y, p.box.center.z, p.box.length,
                  p.box.width, p.box.height, p.box.yaw);
    out += buf;
  }
  return out;
}

RpnLoss rpn_loss(ad::Graph& g, const RpnMaps& maps, const Assignment& assign,
                 const config::RpnConfig& rc) {
  const int n = maps.score.rows() * maps.score.cols();
  if (static_cast<std::size_t>(n) != assign.labels.size())
    throw std::runtime_error("rpn_loss: assignment does not match score map");

  std::vector<int> cls_rows;
  std::vector<double> cls_labels;
  std::vector<int> reg_rows;
  std::vector<double> reg_targets;
  for (int a = 0; a < n; ++a) {
    if (assign.labels[a] == AnchorLabel::kIgnore) continue;
    cls_rows.push_back(a);
    cls_labels.push_back(assign.labels[a] == AnchorLabel::kPositive ? 1.0
                                                                    : 0.0);
    if (assign.labels[a] == AnchorLabel::kPositive) {
      reg_rows.push_back(a);
      for (double t : assign.targets[a]) reg_targets.push_back(t);
    }
  }

  ad::Tensor score_flat = g.reshape(maps.score, n, 1);
  ad::Tensor probs = g.sigmoid(g.gather_rows(score_flat, cls_rows));
  RpnLoss loss;
  loss.cls = ad::focal_loss(g, probs, cls_labels, rc.focal_alpha,
                            rc.focal_gamma);
  if (!reg_rows.empty()) {
    ad::Tensor reg_flat = g.reshape(maps.reg, n, 8);
    ad::Tensor pred = g.gather_rows(reg_flat, reg_rows);
    loss.reg = g.mean_all(ad::smooth_l1(g, pred, reg_targets));
  } else {
    loss.reg = g.scalar(0.0);
  }
  loss.total = g.add(loss.cls, loss.reg);
  return loss;
}

}  // namespace v2p::rpn
