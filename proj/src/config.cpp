#include "v2p/config.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "v2p/toml.hpp"

namespace v2p::config {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("config: " + msg);
}

int quantized_extent(double lo, double hi, double step, const char* axis) {
  double cells = (hi - lo) / step;
  double rounded = std::round(cells);
  if (!(step > 0)) fail(std::string("voxel step on ") + axis + " must be > 0");
  if (rounded < 1 || std::abs(cells - rounded) > 1e-6) {
    fail(std::string("extent on ") + axis + " (" + std::to_string(hi - lo) +
         ") is not an integer multiple of the voxel step " +
         std::to_string(step));
  }
  return int(rounded);
}

std::vector<int> to_int_vec(const std::vector<std::int64_t>& v) {
  std::vector<int> out;
  out.reserve(v.size());
  for (std::int64_t i : v) out.push_back(int(i));
  return out;
}

void check_positive(const std::vector<int>& v, const std::string& what) {
  if (v.empty()) fail(what + " must not be empty");
  for (int i : v) {
    if (i <= 0) fail(what + " entries must be positive");
  }
}

}  // namespace

int SceneConfig::nx() const {
  return quantized_extent(bounds.x_min, bounds.x_max, voxel_dx, "x");
}
int SceneConfig::ny() const {
  return quantized_extent(bounds.y_min, bounds.y_max, voxel_dy, "y");
}
int SceneConfig::nz() const {
  return quantized_extent(bounds.z_min, bounds.z_max, voxel_dz, "z");
}

std::vector<std::string> DetectorConfig::class_names() const {
  std::vector<std::string> names;
  names.reserve(classes.size());
  for (const ClassSpec& c : classes) names.push_back(c.name);
  return names;
}

void DetectorConfig::validate() const {
  if (!scene.bounds.valid()) fail("invalid scene bounds");
  int nx = scene.nx(), ny = scene.ny(), nz = scene.nz();
  if (nx % 8 || ny % 8 || nz % 8) {
    fail("voxel grid " + std::to_string(nx) + "x" + std::to_string(ny) + "x" +
         std::to_string(nz) + " must be divisible by 8 on every axis");
  }
  if (classes.empty()) fail("no classes");
  std::set<std::string> seen;
  for (const ClassSpec& c : classes) {
    if (c.name.empty()) fail("empty class name");
    if (!seen.insert(c.name).second) fail("duplicate class name " + c.name);
    if (c.anchor_length <= 0 || c.anchor_width <= 0 || c.anchor_height <= 0) {
      fail("anchor sizes for " + c.name + " must be positive");
    }
    if (!(c.eval_iou > 0 && c.eval_iou <= 1)) {
      fail("eval_iou for " + c.name + " must be in (0, 1]");
    }
  }
  if (backbone.widths.size() != 4) {
    fail("backbone.widths must list the 4 stride levels");
  }
  check_positive(backbone.widths, "backbone.widths");
  if (backbone.blocks.size() != backbone.widths.size()) {
    fail("backbone.blocks must match backbone.widths in length");
  }
  check_positive(backbone.blocks, "backbone.blocks");
  if (bev.channels <= 0) fail("bev.channels must be positive");
  if (rpn.trunk_channels <= 0) fail("rpn.trunk_channels must be positive");
  if (!(rpn.neg_iou > 0 && rpn.neg_iou <= rpn.pos_iou && rpn.pos_iou <= 1)) {
    fail("need 0 < rpn.neg_iou <= rpn.pos_iou <= 1");
  }
  if (!(rpn.nms_iou > 0 && rpn.nms_iou < 1)) fail("rpn.nms_iou out of (0,1)");
  if (rpn.nms_top <= 0) fail("rpn.nms_top must be positive");
  if (!(rpn.focal_alpha > 0 && rpn.focal_alpha < 1)) {
    fail("rpn.focal_alpha out of (0,1)");
  }
  if (rpn.focal_gamma < 0) fail("rpn.focal_gamma must be >= 0");
  if (decoder.widths.size() != 5) {
    fail("decoder.widths must list 5 stages (deepest to raw points)");
  }
  check_positive(decoder.widths, "decoder.widths");
  if (decoder.knn_k <= 0) fail("decoder.knn_k must be positive");
  if (refine.grid_n <= 0) fail("refine.grid_n must be positive");
  if (refine.radii.empty()) fail("refine.radii must not be empty");
  for (std::size_t i = 0; i < refine.radii.size(); ++i) {
    if (refine.radii[i] <= 0) fail("refine.radii must be positive");
    if (i > 0 && refine.radii[i] <= refine.radii[i - 1]) {
      fail("refine.radii must be strictly increasing");
    }
  }
  if (refine.samples_per_radius <= 0) {
    fail("refine.samples_per_radius must be positive");
  }
  if (refine.d_size <= 0) fail("refine.d_size must be positive");
  if (refine.c_h <= 0 || refine.c_m <= 0 || refine.c_b <= 0) {
    fail("refine feature widths must be positive");
  }
  if (refine.c_h % int(refine.radii.size()) != 0) {
    fail("refine.c_h must divide evenly across the group radii");
  }
  check_positive(refine.mlp1, "refine.mlp1");
  check_positive(refine.mlp2, "refine.mlp2");
  check_positive(refine.mlp3, "refine.mlp3");
  check_positive(refine.fuse_fc, "refine.fuse_fc");
  check_positive(refine.head_fc, "refine.head_fc");
  if (!(refine.theta_l >= 0 && refine.theta_l < refine.theta_h &&
        refine.theta_h <= 1)) {
    fail("need 0 <= refine.theta_l < refine.theta_h <= 1");
  }
  if (!(refine.theta_reg >= 0 && refine.theta_reg <= 1)) {
    fail("refine.theta_reg out of [0,1]");
  }
  if (refine.train_samples <= 0) fail("refine.train_samples must be positive");
  if (!(refine.final_nms_iou > 0 && refine.final_nms_iou < 1)) {
    fail("refine.final_nms_iou out of (0,1)");
  }
  if (refine.min_score < 0) fail("refine.min_score must be >= 0");
  if (!(train.lr > 0)) fail("train.lr must be positive");
  if (train.weight_decay < 0) fail("train.weight_decay must be >= 0");
  if (train.batch_scenes <= 0) fail("train.batch_scenes must be positive");
  if (train.steps <= 0) fail("train.steps must be positive");
  if (!(train.beta1 >= 0 && train.beta1 < 1 && train.beta2 >= 0 &&
        train.beta2 < 1 && train.adam_eps > 0)) {
    fail("invalid Adam moment parameters");
  }
  if (train.augment_ranges.scale_min > train.augment_ranges.scale_max ||
      train.augment_ranges.scale_min <= 0) {
    fail("invalid train scale range");
  }
  if (train.augment_ranges.rot_min > train.augment_ranges.rot_max) {
    fail("invalid train rotation range");
  }
  if (train.gt_aug_per_box < 0 || train.gt_aug_center < 0 ||
      train.gt_aug_size < 0 || train.gt_aug_size >= 1 ||
      train.gt_aug_yaw < 0) {
    fail("train.gt_aug_* out of range");
  }
  if (train.loss_alpha_rpn < 0 || train.loss_alpha_seg < 0 ||
      train.loss_alpha_refine < 0) {
    fail("loss weights must be >= 0");
  }
  if (eval_recall_positions <= 0) {
    fail("eval.recall_positions must be positive");
  }
}

DetectorConfig DetectorConfig::load(const std::filesystem::path& path) {
  toml::Table t = toml::Table::parse_file(path);
  DetectorConfig c;

  c.scene.bounds.x_min = t.get_double("scene.x_min");
  c.scene.bounds.x_max = t.get_double("scene.x_max");
  c.scene.bounds.y_min = t.get_double("scene.y_min");
  c.scene.bounds.y_max = t.get_double("scene.y_max");
  c.scene.bounds.z_min = t.get_double("scene.z_min");
  c.scene.bounds.z_max = t.get_double("scene.z_max");
  c.scene.voxel_dx = t.get_double("scene.voxel_dx");
  c.scene.voxel_dy = t.get_double("scene.voxel_dy");
  c.scene.voxel_dz = t.get_double("scene.voxel_dz");

  std::vector<std::string> names = t.get_string_array("classes.names");
  std::vector<double> al = t.get_double_array("classes.anchor_length");
  std::vector<double> aw = t.get_double_array("classes.anchor_width");
  std::vector<double> ah = t.get_double_array("classes.anchor_height");
  std::vector<double> az = t.get_double_array("classes.anchor_z");
  std::vector<double> ei = t.get_double_array("classes.eval_iou");
  if (al.size() != names.size() || aw.size() != names.size() ||
      ah.size() != names.size() || az.size() != names.size() ||
      ei.size() != names.size()) {
    fail("class arrays must all have one entry per class name");
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    c.classes.push_back({names[i], al[i], aw[i], ah[i], az[i], ei[i]});
  }

  c.backbone.widths = to_int_vec(t.get_int_array("backbone.widths"));
  c.backbone.blocks = to_int_vec(t.get_int_array("backbone.blocks"));
  c.bev.channels = int(t.get_int("bev.channels"));

  c.rpn.trunk_channels = int(t.get_int("rpn.trunk_channels"));
  c.rpn.pos_iou = t.get_double("rpn.pos_iou");
  c.rpn.neg_iou = t.get_double("rpn.neg_iou");
  c.rpn.nms_iou = t.get_double("rpn.nms_iou");
  c.rpn.nms_top = int(t.get_int("rpn.nms_top"));
  c.rpn.focal_alpha = t.get_double("rpn.focal_alpha");
  c.rpn.focal_gamma = t.get_double("rpn.focal_gamma");

  c.decoder.widths = to_int_vec(t.get_int_array("decoder.widths"));
  c.decoder.knn_k = int(t.get_int("decoder.knn_k"));

  c.refine.grid_n = int(t.get_int("refine.grid_n"));
  c.refine.radii = t.get_double_array("refine.radii");
  c.refine.samples_per_radius = int(t.get_int("refine.samples_per_radius"));
  c.refine.d_size = t.get_double("refine.d_size");
  c.refine.c_h = int(t.get_int("refine.c_h"));
  c.refine.c_m = int(t.get_int("refine.c_m"));
  c.refine.c_b = int(t.get_int("refine.c_b"));
  c.refine.mlp1 = to_int_vec(t.get_int_array("refine.mlp1"));
  c.refine.mlp2 = to_int_vec(t.get_int_array("refine.mlp2"));
  c.refine.mlp3 = to_int_vec(t.get_int_array("refine.mlp3"));
  c.refine.fuse_fc = to_int_vec(t.get_int_array("refine.fuse_fc"));
  c.refine.head_fc = to_int_vec(t.get_int_array("refine.head_fc"));
  c.refine.theta_h = t.get_double("refine.theta_h");
  c.refine.theta_l = t.get_double("refine.theta_l");
  c.refine.theta_reg = t.get_double("refine.theta_reg");
  c.refine.train_samples = int(t.get_int("refine.train_samples"));
  c.refine.final_nms_iou = t.get_double("refine.final_nms_iou");
  c.refine.min_score = t.get_double("refine.min_score");

  c.train.lr = t.get_double("train.lr");
  c.train.weight_decay = t.get_double("train.weight_decay");
  c.train.batch_scenes = int(t.get_int("train.batch_scenes"));
  c.train.steps = int(t.get_int("train.steps"));
  c.train.seed = std::uint64_t(t.get_int("train.seed"));
  c.train.beta1 = t.get_double("train.beta1");
  c.train.beta2 = t.get_double("train.beta2");
  c.train.adam_eps = t.get_double("train.adam_eps");
  c.train.augment_flip = t.get_bool("train.augment_flip");
  c.train.augment_scale = t.get_bool("train.augment_scale");
  c.train.augment_rotate = t.get_bool("train.augment_rotate");
  c.train.augment_ranges.scale_min = t.get_double("train.scale_min");
  c.train.augment_ranges.scale_max = t.get_double("train.scale_max");
  c.train.augment_ranges.rot_min = t.get_double("train.rot_min");
  c.train.augment_ranges.rot_max = t.get_double("train.rot_max");
  c.train.loss_alpha_rpn = t.get_double("train.loss_alpha_rpn");
  c.train.loss_alpha_seg = t.get_double("train.loss_alpha_seg");
  c.train.loss_alpha_refine = t.get_double("train.loss_alpha_refine");
  c.train.gt_aug_per_box = int(t.get_int("train.gt_aug_per_box"));
  c.train.gt_aug_center = t.get_double("train.gt_aug_center");
  c.train.gt_aug_size = t.get_double("train.gt_aug_size");
  c.train.gt_aug_yaw = t.get_double("train.gt_aug_yaw");

  c.eval_recall_positions = int(t.get_int("eval.recall_positions"));

  t.require_all_consumed();
  c.validate();
  return c;
}

void SynthConfig::validate() const {
  if (num_scenes <= 0) fail("synth num_scenes must be positive");
  if (class_names.size() != scene_spec.classes.size()) {
    fail("synth class_names must match the class size ranges");
  }
  // Field-level checks happen inside synth_scene; surface shape errors early.
  if (!scene_spec.bounds.valid()) fail("synth bounds invalid");
}

SynthConfig SynthConfig::load(const std::filesystem::path& path) {
  toml::Table t = toml::Table::parse_file(path);
  SynthConfig c;
  c.scene_spec.bounds.x_min = t.get_double("bounds.x_min");
  c.scene_spec.bounds.x_max = t.get_double("bounds.x_max");
  c.scene_spec.bounds.y_min = t.get_double("bounds.y_min");
  c.scene_spec.bounds.y_max = t.get_double("bounds.y_max");
  c.scene_spec.bounds.z_min = t.get_double("bounds.z_min");
  c.scene_spec.bounds.z_max = t.get_double("bounds.z_max");

  c.class_names = t.get_string_array("classes.names");
  std::vector<double> lmin = t.get_double_array("classes.length_min");
  std::vector<double> lmax = t.get_double_array("classes.length_max");
  std::vector<double> wmin = t.get_double_array("classes.width_min");
  std::vector<double> wmax = t.get_double_array("classes.width_max");
  std::vector<double> hmin = t.get_double_array("classes.height_min");
  std::vector<double> hmax = t.get_double_array("classes.height_max");
  std::size_t n = c.class_names.size();
  if (lmin.size() != n || lmax.size() != n || wmin.size() != n ||
      wmax.size() != n || hmin.size() != n || hmax.size() != n) {
    fail("synth class arrays must all have one entry per class name");
  }
  for (std::size_t i = 0; i < n; ++i) {
    c.scene_spec.classes.push_back(
        {lmin[i], lmax[i], wmin[i], wmax[i], hmin[i], hmax[i]});
  }

  c.scene_spec.num_boxes = int(t.get_int("synth.boxes_per_scene"));
  c.scene_spec.points_per_box = int(t.get_int("synth.points_per_box"));
  c.scene_spec.background_density = t.get_double("synth.background_density");
  c.scene_spec.separation = t.get_double("synth.separation");
  c.scene_spec.z_center_min = t.get_double("synth.z_center_min");
  c.scene_spec.z_center_max = t.get_double("synth.z_center_max");
  c.num_scenes = int(t.get_int("synth.num_scenes"));
  c.base_seed = std::uint64_t(t.get_int("synth.seed"));

  t.require_all_consumed();
  c.validate();
  return c;
}

}  // namespace v2p::config
