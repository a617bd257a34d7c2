#include "v2p/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "v2p/ad/optim.hpp"
#include "v2p/voxel.hpp"

namespace v2p::train {
namespace {

// Draw `want` distinct elements of `pool` without replacement.
std::vector<int> draw(std::vector<int> pool, int want, Rng& rng) {
  std::vector<int> out;
  for (int i = 0; i < want; ++i) {
    const std::size_t j = std::size_t(rng.uniform_index(pool.size()));
    out.push_back(pool[j]);
    pool[j] = pool.back();
    pool.pop_back();
  }
  return out;
}

std::vector<refine::ScoredBox> score_proposals(ad::Graph& g,
                                               ad::ParamStore& store,
                                               const config::DetectorConfig& cfg,
                                               const ForwardOut& fo) {
  std::vector<refine::ScoredBox> out;
  for (const rpn::Proposal& p : fo.proposals) {
    refine::Refinement first = refine::refine_one(
        g, store, cfg.refine, p.box, fo.sf, refine::Pass::kFirst);
    geom::Box3D refined = rpn::decode_box(first.reg.values(), p.box);
    refine::Refinement aligned = refine::refine_one(
        g, store, cfg.refine, refined, fo.sf, refine::Pass::kAligned);
    refine::ScoredBox sb;
    sb.box = refined;
    sb.class_id = p.class_id;
    sb.cls = first.cls.scalar();
    sb.unaligned_iou = first.iou.scalar();
    sb.aligned_iou = aligned.iou.scalar();
    out.push_back(sb);
  }
  return out;
}

}  // namespace

void forward_scene(ad::Graph& g, ad::ParamStore& store,
                   const config::DetectorConfig& cfg,
                   const scene::PointCloud& cloud, ForwardOut& out) {
  out.cloud = scene::crop_to_bounds(cloud, cfg.scene.bounds);
  if (out.cloud.points.empty()) {
    out.empty = true;
    return;
  }
  const voxel::VoxelGridSpec spec = backbone::grid_spec(cfg.scene);
  voxel::SparseVoxelTensor v0 = voxel::voxelize(out.cloud, spec);
  out.enc = backbone::encode(g, store, cfg.backbone, v0);
  out.bev = backbone::to_bev(g, store, out.enc.levels[3], cfg.bev.channels);
  out.maps = rpn::rpn_heads(g, store, out.bev, cfg.rpn,
                            int(cfg.classes.size()));
  out.dec = decoder::decode_all(g, store, cfg.decoder, out.enc, out.cloud);
  out.grid = rpn::make_anchors(out.bev.spec, cfg.classes);
  out.proposals = rpn::propose(out.maps.score.values(), out.maps.reg.values(),
                               out.grid, cfg.rpn);
  out.sf.raw_xyz.clear();
  for (std::size_t i = 0; i < out.cloud.size(); ++i)
    out.sf.raw_xyz.push_back(out.cloud.xyz(i));
  out.sf.p0 = out.dec.p0;
  out.sf.seg = out.dec.seg;
  out.sf.bev = &out.bev;
}

std::vector<int> sample_proposals(std::span<const refine::Targets> targets,
                                  int limit, Rng& rng) {
  if (limit < 1) throw std::runtime_error("sample_proposals: limit < 1");
  std::vector<int> pos, rest;
  for (int i = 0; i < int(targets.size()); ++i) {
    (targets[std::size_t(i)].cls_label == 1 ? pos : rest).push_back(i);
  }
  const int n = int(targets.size());
  if (n <= limit) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[std::size_t(i)] = i;
    return all;
  }
  int want_pos = std::min<int>(int(pos.size()), (limit + 3) / 4);
  int want_rest = std::min<int>(int(rest.size()), limit - want_pos);
  want_pos = std::min<int>(int(pos.size()), limit - want_rest);

  std::vector<int> out = draw(std::move(pos), want_pos, rng);
  for (int i : draw(std::move(rest), want_rest, rng)) out.push_back(i);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<rpn::Proposal> jitter_proposals(const scene::GroundTruth& gt,
                                            const config::TrainConfig& tc,
                                            Rng& rng) {
  std::vector<rpn::Proposal> out;
  for (std::size_t b = 0; b < gt.boxes.size(); ++b) {
    for (int j = 0; j < tc.gt_aug_per_box; ++j) {
      rpn::Proposal p;
      p.box = gt.boxes[b];
      p.box.center.x += rng.uniform(-tc.gt_aug_center, tc.gt_aug_center);
      p.box.center.y += rng.uniform(-tc.gt_aug_center, tc.gt_aug_center);
      p.box.center.z +=
          rng.uniform(-tc.gt_aug_center / 2, tc.gt_aug_center / 2);
      p.box.length *= rng.uniform(1 - tc.gt_aug_size, 1 + tc.gt_aug_size);
      p.box.width *= rng.uniform(1 - tc.gt_aug_size, 1 + tc.gt_aug_size);
      p.box.height *= rng.uniform(1 - tc.gt_aug_size, 1 + tc.gt_aug_size);
      p.box.yaw = geom::wrap_angle(
          p.box.yaw + rng.uniform(-tc.gt_aug_yaw, tc.gt_aug_yaw));
      p.score = 1.0;
      p.class_id = gt.class_ids[b];
      p.anchor_index = -1;
      out.push_back(p);
    }
  }
  return out;
}

ad::Tensor scene_loss(ad::Graph& g, ad::ParamStore& store,
                      const config::DetectorConfig& cfg, const SceneData& sd,
                      Rng& rng, bool with_refine, LossReport* report) {
  scene::PointCloud pc = sd.cloud;
  scene::GroundTruth gt = sd.gt;
  const config::TrainConfig& tc = cfg.train;
  if (tc.augment_flip && rng.uniform01() < 0.5)
    std::tie(pc, gt) = scene::flip_y(pc, gt);
  if (tc.augment_scale)
    std::tie(pc, gt) = scene::augment(pc, gt, scene::AugmentMode::kScale, rng,
                                      tc.augment_ranges);
  if (tc.augment_rotate)
    std::tie(pc, gt) = scene::augment(pc, gt, scene::AugmentMode::kRotate, rng,
                                      tc.augment_ranges);

  ForwardOut fo;
  forward_scene(g, store, cfg, pc, fo);
  if (fo.empty) {
    if (report != nullptr) *report = LossReport{};
    return g.scalar(0.0);
  }

  rpn::Assignment assign =
      rpn::assign_targets(fo.grid, gt, cfg.rpn.pos_iou, cfg.rpn.neg_iou);
  rpn::RpnLoss rl = rpn::rpn_loss(g, fo.maps, assign, cfg.rpn);
  ad::Tensor sl = decoder::seg_loss(g, fo.dec.seg,
                                    decoder::seg_labels(fo.cloud, gt));

  refine::RefineLoss fl;
  if (with_refine && !fo.proposals.empty()) {
    std::vector<rpn::Proposal> pool = fo.proposals;
    for (rpn::Proposal& p : jitter_proposals(gt, tc, rng))
      pool.push_back(std::move(p));
    std::vector<refine::Targets> targets =
        refine::make_targets(pool, gt, cfg.refine);
    std::vector<int> picked =
        sample_proposals(targets, cfg.refine.train_samples, rng);
    std::vector<refine::Refinement> refs;
    std::vector<refine::Targets> sel;
    for (int i : picked) {
      refs.push_back(refine::refine_one(g, store, cfg.refine,
                                        pool[std::size_t(i)].box, fo.sf,
                                        refine::Pass::kFirst));
      sel.push_back(targets[std::size_t(i)]);
    }
    fl = refine::refine_loss(g, refs, sel);
  } else {
    fl.cls = g.scalar(0.0);
    fl.reg = g.scalar(0.0);
    fl.iou = g.scalar(0.0);
    fl.total = g.scalar(0.0);
  }

  ad::Tensor total =
      g.add(g.add(g.scale(rl.total, tc.loss_alpha_rpn),
                  g.scale(sl, tc.loss_alpha_seg)),
            g.scale(fl.total, tc.loss_alpha_refine));
  if (report != nullptr) {
    report->rpn = rl.total.scalar();
    report->seg = sl.scalar();
    report->cls = fl.cls.scalar();
    report->reg = fl.reg.scalar();
    report->iou = fl.iou.scalar();
    report->refine = fl.total.scalar();
    report->total = total.scalar();
  }
  return total;
}

TrainResult fit(ad::ParamStore& store, const config::DetectorConfig& cfg,
                std::span<const SceneData> scenes, bool with_refine) {
  if (scenes.empty()) throw std::runtime_error("fit: no training scenes");
  const config::TrainConfig& tc = cfg.train;
  ad::AdamWConfig acfg;
  acfg.lr = tc.lr;
  acfg.weight_decay = tc.weight_decay;
  acfg.beta1 = tc.beta1;
  acfg.beta2 = tc.beta2;
  acfg.eps = tc.adam_eps;
  ad::AdamW opt(acfg);

  Rng root(tc.seed);
  TrainResult result;
  const int batch = std::max(1, tc.batch_scenes);
  for (int step = 0; step < tc.steps; ++step) {
    Rng step_rng = root.fork();
    std::map<std::string, std::vector<double>> grads;
    LossReport rep;
    rep.step = step;
    for (int j = 0; j < batch; ++j) {
      const std::size_t idx = std::size_t(step * batch + j) % scenes.size();
      Rng srng = step_rng.fork();
      ad::Graph g;
      LossReport part;
      try {
        ad::Tensor total =
            scene_loss(g, store, cfg, scenes[idx], srng, with_refine, &part);
        if (!std::isfinite(part.total))
          throw std::runtime_error("non-finite loss");
        g.backward(total);
      } catch (const std::exception& e) {
        throw std::runtime_error("training diverged at step " +
                                 std::to_string(step) + ": " + e.what());
      }
      for (const auto& [name, grad] : g.param_grads()) {
        auto it = grads.find(name);
        if (it == grads.end()) {
          grads.emplace(name, grad);
        } else {
          for (std::size_t i = 0; i < grad.size(); ++i) it->second[i] += grad[i];
        }
      }
      rep.rpn += part.rpn;
      rep.seg += part.seg;
      rep.cls += part.cls;
      rep.reg += part.reg;
      rep.iou += part.iou;
    }
    const double inv = 1.0 / double(batch);
    for (auto& [name, grad] : grads)
      for (double& v : grad) v *= inv;
    rep.rpn *= inv;
    rep.seg *= inv;
    rep.cls *= inv;
    rep.reg *= inv;
    rep.iou *= inv;
    // Recompose the averages so the reported identities hold exactly.
    rep.refine = rep.cls + rep.reg + rep.iou;
    rep.total = tc.loss_alpha_rpn * rep.rpn + tc.loss_alpha_seg * rep.seg +
                tc.loss_alpha_refine * rep.refine;
    if (!opt.step(store, grads))
      throw std::runtime_error("non-finite gradient at step " +
                               std::to_string(step));
    result.series.push_back(rep);
  }
  return result;
}

std::vector<scene::Detection> infer_scene(ad::ParamStore& store,
                                          const config::DetectorConfig& cfg,
                                          const scene::PointCloud& cloud,
                                          refine::Confidence mode,
                                          bool with_refine) {
  ad::Graph g;
  ForwardOut fo;
  forward_scene(g, store, cfg, cloud, fo);
  if (fo.empty) return {};
  if (!with_refine) {
    std::vector<scene::Detection> out;
    for (const rpn::Proposal& p : fo.proposals) {
      scene::Detection d;
      d.box = p.box;
      d.class_id = p.class_id;
      d.score = p.score;
      out.push_back(d);
    }
    return out;
  }
  std::vector<refine::ScoredBox> scored = score_proposals(g, store, cfg, fo);
  return refine::final_nms(scored, mode, cfg.refine);
}

std::vector<scene::Detection> infer_rpn_only(ad::ParamStore& store,
                                             const config::DetectorConfig& cfg,
                                             const scene::PointCloud& cloud) {
  return infer_scene(store, cfg, cloud, refine::Confidence::kCls, false);
}

std::vector<BoxPair> refine_pairs(ad::ParamStore& store,
                                  const config::DetectorConfig& cfg,
                                  const scene::PointCloud& cloud) {
  ad::Graph g;
  ForwardOut fo;
  forward_scene(g, store, cfg, cloud, fo);
  if (fo.empty) return {};
  std::vector<BoxPair> out;
  for (const rpn::Proposal& p : fo.proposals) {
    refine::Refinement first = refine::refine_one(
        g, store, cfg.refine, p.box, fo.sf, refine::Pass::kFirst);
    BoxPair pair;
    pair.proposal = p.box;
    pair.refined = rpn::decode_box(first.reg.values(), p.box);
    pair.class_id = p.class_id;
    out.push_back(pair);
  }
  return out;
}

}  // namespace v2p::train
