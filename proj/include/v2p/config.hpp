#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "v2p/scene.hpp"
#include "v2p/synth.hpp"

namespace v2p::config {

// Point-cloud range and voxel quantization step. The three stride-2 stages
// of the encoder need each axis extent to quantize to a multiple of 8 cells.
struct SceneConfig {
  scene::SceneBounds bounds;
  double voxel_dx = 0.05, voxel_dy = 0.05, voxel_dz = 0.1;

  int nx() const;  // cells along x at stride 1
  int ny() const;
  int nz() const;
};

struct ClassSpec {
  std::string name;
  double anchor_length = 1, anchor_width = 1, anchor_height = 1;
  double anchor_z = 0;  // anchor center height in metres
  double eval_iou = 0.5;  // 3D IoU needed to count a detection as correct
};

struct BackboneConfig {
  std::vector<int> widths = {16, 32, 64, 128};  // one per stride level
  std::vector<int> blocks = {1, 1, 1, 1};  // submanifold convs per level
};

struct BevConfig {
  int channels = 128;  // output width of the z-stack mixing layer
};

struct RpnConfig {
  int trunk_channels = 128;
  double pos_iou = 0.6, neg_iou = 0.45;
  double nms_iou = 0.85;
  int nms_top = 100;
  double focal_alpha = 0.25, focal_gamma = 2.0;
};

struct DecoderConfig {
  std::vector<int> widths = {256, 192, 160, 128, 128};  // P4..P0
  int knn_k = 3;
};

struct RefineConfig {
  int grid_n = 6;  // grid points per axis
  std::vector<double> radii = {0.8, 1.6};
  int samples_per_radius = 16;
  double d_size = 1.6;  // crop-box margin per side
  int c_h = 128, c_m = 128, c_b = 128;
  std::vector<int> mlp1 = {64, 64};
  std::vector<int> mlp2 = {128};
  std::vector<int> mlp3 = {64};
  std::vector<int> fuse_fc = {256, 256};
  std::vector<int> head_fc = {256};
  double theta_h = 0.75, theta_l = 0.25, theta_reg = 0.55;
  int train_samples = 128;
  double final_nms_iou = 0.1;
  double min_score = 0.0;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  int batch_scenes = 2;
  int steps = 200;
  std::uint64_t seed = 1;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  bool augment_flip = true, augment_scale = true, augment_rotate = true;
  scene::AugmentRanges augment_ranges;
  double loss_alpha_rpn = 1.0, loss_alpha_seg = 4.0, loss_alpha_refine = 1.0;
  // Stage-2 supervision boost: extra proposals jittered off each gt box so
  // the refinement heads see dense targets before the RPN localizes well.
  // 0 disables (full-scale default).
  int gt_aug_per_box = 0;
  double gt_aug_center = 0.3;  // +- metres in x/y, half that in z
  double gt_aug_size = 0.1;    // scale factor drawn from [1-r, 1+r]
  double gt_aug_yaw = 0.25;    // +- radians
};

struct DetectorConfig {
  SceneConfig scene;
  std::vector<ClassSpec> classes;
  BackboneConfig backbone;
  BevConfig bev;
  RpnConfig rpn;
  DecoderConfig decoder;
  RefineConfig refine;
  TrainConfig train;
  int eval_recall_positions = 40;

  std::vector<std::string> class_names() const;
  void validate() const;  // throws on any inconsistency

  // Strict loader: every key must be present and every present key known.
  static DetectorConfig load(const std::filesystem::path& path);
};

// Recipe for a directory of synthetic scenes; scene i is generated with
// seed base_seed + i.
struct SynthConfig {
  scene::SynthSpec scene_spec;  // seed field unused; see base_seed
  std::vector<std::string> class_names;
  int num_scenes = 1;
  std::uint64_t base_seed = 1;

  void validate() const;
  static SynthConfig load(const std::filesystem::path& path);
};

}  // namespace v2p::config
