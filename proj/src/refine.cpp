#include "v2p/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "v2p/ad/losses.hpp"
#include "v2p/ad/mlp.hpp"

namespace v2p::refine {
namespace {

ad::MlpSpec feature_mlp(int in, const std::vector<int>& widths) {
  ad::MlpSpec spec;
  spec.widths.push_back(in);
  spec.widths.insert(spec.widths.end(), widths.begin(), widths.end());
  spec.final_activation = true;
  return spec;
}

struct Neighbor {
  double d2 = 0.0;
  int idx = -1;
};

// Materialize an MLP's parameters without running it, so the store contents
// never depend on which proposals happened to contain points.
void ensure_mlp_params(ad::ParamStore& store, const std::string& prefix,
                       const ad::MlpSpec& spec) {
  for (std::size_t layer = 0; layer + 1 < spec.widths.size(); ++layer) {
    const std::string lp = prefix + ".l" + std::to_string(layer);
    store.ensure(lp + ".w", spec.widths[layer], spec.widths[layer + 1], false);
    store.ensure(lp + ".b", 1, spec.widths[layer + 1], true);
  }
}

void ensure_point_stream_params(ad::ParamStore& store,
                                const config::RefineConfig& rc, int p0_width) {
  ensure_mlp_params(store, "refine.mlp1", feature_mlp(5, rc.mlp1));
  ensure_mlp_params(store, "refine.mlp2",
                    feature_mlp(rc.mlp1.back() + p0_width, rc.mlp2));
  for (std::size_t s = 0; s < rc.radii.size(); ++s) {
    ensure_mlp_params(store, "refine.mlp3.r" + std::to_string(s),
                      feature_mlp(3 + rc.mlp2.back(), rc.mlp3));
  }
}

}  // namespace

std::vector<geom::Vec3> make_grid(const geom::Box3D& box, int n_g) {
  if (n_g < 1) throw std::runtime_error("make_grid: n_g must be >= 1");
  std::vector<geom::Vec3> out;
  out.reserve(std::size_t(n_g) * n_g * n_g);
  for (int i = 0; i < n_g; ++i) {
    const double fx = ((i + 0.5) / n_g - 0.5) * box.length;
    for (int j = 0; j < n_g; ++j) {
      const double fy = ((j + 0.5) / n_g - 0.5) * box.width;
      for (int k = 0; k < n_g; ++k) {
        out.push_back({fx, fy, ((k + 0.5) / n_g - 0.5) * box.height});
      }
    }
  }
  return out;
}

std::vector<geom::Vec3> grid_world(const geom::Box3D& box, int n_g) {
  std::vector<geom::Vec3> out = make_grid(box, n_g);
  for (auto& p : out) p = geom::from_canonical(box, p);
  return out;
}

Crop crop_points(const geom::Box3D& box, double d_size,
                 std::span<const geom::Vec3> pts) {
  geom::Box3D grown = box;
  grown.length += 2 * d_size;
  grown.width += 2 * d_size;
  grown.height += 2 * d_size;
  Crop crop;
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    if (!geom::contains(grown, pts[i])) continue;
    crop.idx.push_back(i);
    crop.canonical.push_back(geom::to_canonical(box, pts[i]));
    crop.depth.push_back(pts[i].norm());
  }
  return crop;
}

PointStream point_roi_align(ad::Graph& g, ad::ParamStore& store,
                            const config::RefineConfig& rc,
                            const geom::Box3D& box, const SceneFeatures& sf) {
  const int n_grid = rc.grid_n * rc.grid_n * rc.grid_n;
  const int scales = static_cast<int>(rc.radii.size());
  const int scale_width = rc.c_h / scales;

  if (rc.c_h % scales != 0 || rc.mlp3.back() != scale_width)
    throw std::runtime_error(
        "refine: mlp3 output width must equal c_h / |radii|");

  Crop crop = crop_points(box, rc.d_size, sf.raw_xyz);
  PointStream out;
  if (crop.idx.empty()) {
    ensure_point_stream_params(store, rc, sf.p0.cols());
    out.h = g.constant(n_grid, rc.c_h,
                       std::vector<double>(std::size_t(n_grid) * rc.c_h));
    out.low_evidence = true;
    return out;
  }
  const int n_crop = static_cast<int>(crop.idx.size());

  // Per-point descriptor (canonical xyz, depth, seg) -> MLP1.
  std::vector<double> base;
  base.reserve(std::size_t(n_crop) * 4);
  for (int i = 0; i < n_crop; ++i) {
    base.push_back(crop.canonical[std::size_t(i)].x);
    base.push_back(crop.canonical[std::size_t(i)].y);
    base.push_back(crop.canonical[std::size_t(i)].z);
    base.push_back(crop.depth[std::size_t(i)]);
  }
  ad::Tensor geom_in = g.concat_cols(
      {g.constant(n_crop, 4, std::move(base)), g.gather_rows(sf.seg, crop.idx)});
  ad::Tensor f1 =
      ad::mlp_forward(g, store, "refine.mlp1", feature_mlp(5, rc.mlp1), geom_in);

  // Fuse with the decoder embedding rows -> MLP2.
  ad::Tensor f2 = ad::mlp_forward(
      g, store, "refine.mlp2",
      feature_mlp(rc.mlp1.back() + sf.p0.cols(), rc.mlp2),
      g.concat_cols({f1, g.gather_rows(sf.p0, crop.idx)}));

  std::vector<geom::Vec3> grid = make_grid(box, rc.grid_n);
  std::vector<ad::Tensor> pooled;
  pooled.reserve(std::size_t(scales));
  for (int s = 0; s < scales; ++s) {
    const double r2 = rc.radii[std::size_t(s)] * rc.radii[std::size_t(s)];
    std::vector<int> pair_src;
    std::vector<double> offsets;
    std::vector<std::vector<int>> groups(static_cast<std::size_t>(n_grid));
    std::vector<Neighbor> best;
    for (int n = 0; n < n_grid; ++n) {
      // K nearest cropped points inside the radius, ties to lower index.
      best.clear();
      for (int p = 0; p < n_crop; ++p) {
        geom::Vec3 d = crop.canonical[std::size_t(p)] - grid[std::size_t(n)];
        const double d2 = d.x * d.x + d.y * d.y + d.z * d.z;
        if (d2 > r2) continue;
        Neighbor cand{d2, p};
        auto pos = std::upper_bound(
            best.begin(), best.end(), cand, [](const Neighbor& a,
                                               const Neighbor& b) {
              return a.d2 != b.d2 ? a.d2 < b.d2 : a.idx < b.idx;
            });
        if (pos == best.end() &&
            static_cast<int>(best.size()) >= rc.samples_per_radius)
          continue;
        best.insert(pos, cand);
        if (static_cast<int>(best.size()) > rc.samples_per_radius)
          best.pop_back();
      }
      for (const auto& nb : best) {
        groups[std::size_t(n)].push_back(static_cast<int>(pair_src.size()));
        pair_src.push_back(nb.idx);
        geom::Vec3 off =
            crop.canonical[std::size_t(nb.idx)] - grid[std::size_t(n)];
        offsets.push_back(off.x);
        offsets.push_back(off.y);
        offsets.push_back(off.z);
      }
    }

    const int n_pairs = static_cast<int>(pair_src.size());
    ad::Tensor m3;
    if (n_pairs > 0) {
      ad::Tensor in3 =
          g.concat_cols({g.constant(n_pairs, 3, std::move(offsets)),
                         g.gather_rows(f2, pair_src)});
      m3 = ad::mlp_forward(
          g, store, "refine.mlp3.r" + std::to_string(s),
          feature_mlp(3 + rc.mlp2.back(), rc.mlp3), in3);
    } else {
      // Parameters must exist regardless of occupancy.
      ensure_mlp_params(store, "refine.mlp3.r" + std::to_string(s),
                        feature_mlp(3 + rc.mlp2.back(), rc.mlp3));
      m3 = g.constant(0, rc.mlp3.back(), {});
    }

    // Zero-padding: every group takes the appended zero row into its max,
    // so sparse groups clamp at zero and empty groups emit exact zeros.
    ad::Tensor padded = g.concat_rows(
        {m3, g.constant(1, rc.mlp3.back(),
                        std::vector<double>(std::size_t(rc.mlp3.back())))});
    for (auto& group : groups) group.push_back(n_pairs);
    pooled.push_back(g.max_pool_groups(padded, groups));
  }
  out.h = g.concat_cols(pooled);
  return out;
}

ad::Tensor map_roi_align(ad::Graph& g, const geom::Box3D& box,
                         const backbone::BevMap& bev, int n_g) {
  const auto& spec = bev.spec;
  const double sx = spec.dx * spec.stride;
  const double sy = spec.dy * spec.stride;
  std::vector<geom::Vec3> grid = grid_world(box, n_g);
  std::vector<ad::Graph::MixRow> mix;
  mix.reserve(grid.size());
  for (const auto& p : grid) {
    double gx = (p.x - spec.bounds.x_min) / sx;
    double gy = (p.y - spec.bounds.y_min) / sy;
    gx = std::clamp(gx, 0.0, double(bev.nx - 1));
    gy = std::clamp(gy, 0.0, double(bev.ny - 1));
    const int x0 = static_cast<int>(std::floor(gx));
    const int y0 = static_cast<int>(std::floor(gy));
    const int x1 = std::min(x0 + 1, bev.nx - 1);
    const int y1 = std::min(y0 + 1, bev.ny - 1);
    const double fx = gx - x0, fy = gy - y0;
    ad::Graph::MixRow row;
    row.emplace_back(bev.row(x0, y0), (1 - fx) * (1 - fy));
    row.emplace_back(bev.row(x0, y1), (1 - fx) * fy);
    row.emplace_back(bev.row(x1, y0), fx * (1 - fy));
    row.emplace_back(bev.row(x1, y1), fx * fy);
    mix.push_back(std::move(row));
  }
  return g.weighted_sum_rows(bev.features, mix);
}

ad::Tensor corner_embed(ad::Graph& g, ad::ParamStore& store,
                        const config::RefineConfig& rc,
                        const geom::Box3D& box) {
  geom::CornerSet cs = geom::corners(box);
  std::vector<double> vals;
  vals.reserve(24);
  for (const auto& c : cs) {
    vals.push_back(c.x);
    vals.push_back(c.y);
    vals.push_back(c.z);
  }
  ad::Tensor lifted = g.relu(ad::affine(
      g, store, "refine.corner.lift", g.constant(8, 3, std::move(vals)),
      rc.c_b, true));
  return ad::affine(g, store, "refine.corner.agg",
                    g.reshape(lifted, 1, 8 * rc.c_b), rc.c_b, true);
}

Refinement fuse_and_predict(ad::Graph& g, ad::ParamStore& store,
                            const config::RefineConfig& rc, ad::Tensor h,
                            ad::Tensor m, ad::Tensor b) {
  const int n_grid = rc.grid_n * rc.grid_n * rc.grid_n;
  if (h.rows() != n_grid || m.rows() != n_grid)
    throw std::runtime_error("fuse_and_predict: stream row count != grid size");
  ad::Tensor hm = g.concat_cols({h, m});
  ad::Tensor vec = g.reshape(hm, 1, n_grid * hm.cols());
  ad::Tensor q1 = ad::mlp_forward(
      g, store, "refine.fuse", feature_mlp(vec.cols(), rc.fuse_fc), vec);
  ad::Tensor q = ad::mlp_forward(
      g, store, "refine.head",
      feature_mlp(rc.fuse_fc.back() + b.cols(), rc.head_fc),
      g.concat_cols({q1, b}));

  Refinement out;
  out.cls = g.sigmoid(ad::affine(g, store, "refine.cls", q, 1, true));
  out.reg = ad::affine(g, store, "refine.reg", q, 8, true);
  out.iou = g.sigmoid(ad::affine(g, store, "refine.iou", q, 1, true));
  return out;
}

Refinement refine_one(ad::Graph& g, ad::ParamStore& store,
                      const config::RefineConfig& rc, const geom::Box3D& box,
                      const SceneFeatures& sf, Pass pass) {
  if (sf.bev == nullptr)
    throw std::runtime_error("refine_one: missing BEV features");
  if (sf.bev->channels != rc.c_m)
    throw std::runtime_error("refine_one: BEV channels != c_m");
  PointStream ps = point_roi_align(g, store, rc, box, sf);
  ad::Tensor m = map_roi_align(g, box, *sf.bev, rc.grid_n);
  ad::Tensor b = corner_embed(g, store, rc, box);
  Refinement out = fuse_and_predict(g, store, rc, ps.h, m, b);
  out.low_evidence = ps.low_evidence;
  out.pass = pass;
  return out;
}

std::vector<Targets> make_targets(std::span<const rpn::Proposal> proposals,
                                  const scene::GroundTruth& gt,
                                  const config::RefineConfig& rc) {
  std::vector<Targets> out;
  out.reserve(proposals.size());
  for (const auto& prop : proposals) {
    Targets t;
    double best = 0.0;
    for (std::size_t gti = 0; gti < gt.boxes.size(); ++gti) {
      if (gt.class_ids[gti] != prop.class_id) continue;
      double iou = geom::iou_3d(prop.box, gt.boxes[gti]);
      if (iou > best) {
        best = iou;
        t.matched_gt = static_cast<int>(gti);
      }
    }
    t.iou_target = best;
    if (best >= rc.theta_h) {
      t.cls_label = 1;
    } else if (best <= rc.theta_l) {
      t.cls_label = 0;
    } else {
      t.cls_label = -1;
    }
    t.reg_mask = best >= rc.theta_reg && t.matched_gt >= 0;
    if (t.reg_mask)
      t.reg_target = rpn::encode_box(gt.boxes[std::size_t(t.matched_gt)],
                                     prop.box);
    out.push_back(t);
  }
  return out;
}

RefineLoss refine_loss(ad::Graph& g, std::span<const Refinement> refinements,
                       std::span<const Targets> targets) {
  if (refinements.size() != targets.size())
    throw std::runtime_error("refine_loss: refinement/target size mismatch");

  std::vector<ad::Tensor> cls_rows;
  std::vector<double> cls_labels;
  std::vector<ad::Tensor> reg_terms;
  std::vector<ad::Tensor> iou_terms;
  int n_reg = 0;
  for (std::size_t i = 0; i < refinements.size(); ++i) {
    const Targets& t = targets[i];
    if (t.cls_label >= 0) {
      cls_rows.push_back(refinements[i].cls);
      cls_labels.push_back(t.cls_label);
    }
    if (t.reg_mask) {
      ++n_reg;
      std::vector<double> target(t.reg_target.begin(), t.reg_target.end());
      reg_terms.push_back(
          g.mean_all(ad::smooth_l1(g, refinements[i].reg, target)));
      iou_terms.push_back(g.mean_all(
          ad::smooth_l1(g, refinements[i].iou, {t.iou_target})));
    }
  }

  RefineLoss loss;
  loss.n_reg = n_reg;
  loss.cls = cls_rows.empty()
                 ? g.scalar(0.0)
                 : ad::bce_loss(g, g.concat_rows(cls_rows), cls_labels);
  if (n_reg == 0) {
    loss.reg = g.scalar(0.0);
    loss.iou = g.scalar(0.0);
  } else {
    ad::Tensor rsum = reg_terms[0];
    ad::Tensor isum = iou_terms[0];
    for (std::size_t i = 1; i < reg_terms.size(); ++i) {
      rsum = g.add(rsum, reg_terms[i]);
      isum = g.add(isum, iou_terms[i]);
    }
    loss.reg = g.scale(rsum, 1.0 / n_reg);
    loss.iou = g.scale(isum, 1.0 / n_reg);
  }
  loss.total = g.add(g.add(loss.cls, loss.reg), loss.iou);
  return loss;
}

double confidence_of(const ScoredBox& sb, Confidence mode) {
  switch (mode) {
    case Confidence::kCls:
      return sb.cls;
    case Confidence::kUnalignedIou:
      return sb.unaligned_iou;
    case Confidence::kAlignedIou:
      return sb.aligned_iou;
    case Confidence::kAlignedIouTimesCls:
      return sb.aligned_iou * sb.cls;
  }
  return 0.0;
}

std::vector<scene::Detection> final_nms(std::span<const ScoredBox> boxes,
                                        Confidence mode,
                                        const config::RefineConfig& rc) {
  int max_class = -1;
  for (const auto& sb : boxes) max_class = std::max(max_class, sb.class_id);

  std::vector<scene::Detection> out;
  for (int cls = 0; cls <= max_class; ++cls) {
    std::vector<geom::Box3D> cb;
    std::vector<double> conf;
    std::vector<const ScoredBox*> src;
    for (const auto& sb : boxes) {
      if (sb.class_id != cls) continue;
      const double c = confidence_of(sb, mode);
      if (c < rc.min_score) continue;
      cb.push_back(sb.box);
      conf.push_back(c);
      src.push_back(&sb);
    }
    for (int keep : rpn::nms_bev(cb, conf, rc.final_nms_iou, -1)) {
      scene::Detection det;
      det.box = cb[std::size_t(keep)];
      det.class_id = cls;
      det.score = conf[std::size_t(keep)];
      out.push_back(det);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const scene::Detection& a, const scene::Detection& b) {
                     return a.score > b.score;
                   });
  return out;
}

Confidence parse_confidence(const std::string& name) {
  if (name == "cls") return Confidence::kCls;
  if (name == "unaligned-iou") return Confidence::kUnalignedIou;
  if (name == "aligned-iou") return Confidence::kAlignedIou;
  if (name == "aligned-iou-x-cls") return Confidence::kAlignedIouTimesCls;
  throw std::runtime_error("unknown confidence mode: " + name);
}

std::string confidence_name(Confidence mode) {
  switch (mode) {
    case Confidence::kCls:
      return "cls";
    case Confidence::kUnalignedIou:
      return "unaligned-iou";
    case Confidence::kAlignedIou:
      return "aligned-iou";
    case Confidence::kAlignedIouTimesCls:
      return "aligned-iou-x-cls";
  }
  return "?";
}

}  // namespace v2p::refine
