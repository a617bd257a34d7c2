#pragma once

#include <span>
#include <vector>

#include "v2p/ad/graph.hpp"
#include "v2p/ad/params.hpp"
#include "v2p/backbone.hpp"
#include "v2p/config.hpp"
#include "v2p/decoder.hpp"
#include "v2p/refine.hpp"
#include "v2p/rng.hpp"
#include "v2p/rpn.hpp"
#include "v2p/scene.hpp"

namespace v2p::train {

struct SceneData {
  scene::PointCloud cloud;
  scene::GroundTruth gt;
};

// Per-step loss parts averaged over the batch. The weighted identity holds
// exactly as written: total = a_rpn*rpn + a_seg*seg + a_refine*refine and
// refine = cls + reg + iou.
struct LossReport {
  int step = 0;
  double rpn = 0.0;
  double seg = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double iou = 0.0;
  double refine = 0.0;
  double total = 0.0;
};

// Shared forward trunk for one scene: crop, voxelize, sparse encoder, BEV
// projection, RPN heads, point decoder, and RPN proposals. `empty` is set
// when no point survives the crop; all tensors are then left invalid.
struct ForwardOut {
  bool empty = false;
  scene::PointCloud cloud;  // cropped
  backbone::EncoderOut enc;
  backbone::BevMap bev;
  rpn::AnchorGrid grid;
  rpn::RpnMaps maps;
  decoder::DecodeOut dec;
  std::vector<rpn::Proposal> proposals;
  refine::SceneFeatures sf;  // sf.bev points at `bev` above
};
void forward_scene(ad::Graph& g, ad::ParamStore& store,
                   const config::DetectorConfig& cfg,
                   const scene::PointCloud& cloud, ForwardOut& out);

// Stratified subset of proposal indices for refinement training: up to
// `limit`, keeping at least a quarter positives (cls label 1) when the pool
// allows. Ascending order, deterministic given the rng state.
std::vector<int> sample_proposals(std::span<const refine::Targets> targets,
                                  int limit, Rng& rng);

// gt_aug_per_box jittered copies of each gt box (center/size/yaw noise per
// the gt_aug_* ranges). Supplements real proposals during stage-2 training.
std::vector<rpn::Proposal> jitter_proposals(const scene::GroundTruth& gt,
                                            const config::TrainConfig& tc,
                                            Rng& rng);

// Full training loss for one scene (augmentation draws come from `rng`).
// Returns the 1x1 total; parts are written to `report` when non-null.
ad::Tensor scene_loss(ad::Graph& g, ad::ParamStore& store,
                      const config::DetectorConfig& cfg, const SceneData& sd,
                      Rng& rng, bool with_refine, LossReport* report);

struct TrainResult {
  std::vector<LossReport> series;  // one entry per optimizer step
};

// Deterministic loop: round-robin batches of cfg.train.batch_scenes scenes,
// one graph per scene, averaged gradients, AdamW updates. A non-finite loss
// or gradient aborts with the step index in the message.
TrainResult fit(ad::ParamStore& store, const config::DetectorConfig& cfg,
                std::span<const SceneData> scenes, bool with_refine);

// Two-stage inference: proposals, refinement, a second read-only pass on the
// refined boxes for aligned IoUs, then per-class NMS under `mode`.
std::vector<scene::Detection> infer_scene(ad::ParamStore& store,
                                          const config::DetectorConfig& cfg,
                                          const scene::PointCloud& cloud,
                                          refine::Confidence mode,
                                          bool with_refine);

// First-stage output only: RPN proposals as detections.
std::vector<scene::Detection> infer_rpn_only(ad::ParamStore& store,
                                             const config::DetectorConfig& cfg,
                                             const scene::PointCloud& cloud);

// Proposal and refined boxes for matched-pair diagnostics (one entry per
// surviving proposal, refinement applied with the trained parameters).
struct BoxPair {
  geom::Box3D proposal;
  geom::Box3D refined;
  int class_id = 0;
};
std::vector<BoxPair> refine_pairs(ad::ParamStore& store,
                                  const config::DetectorConfig& cfg,
                                  const scene::PointCloud& cloud);

}  // namespace v2p::train
