#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "v2p/ad/checkpoint.hpp"
#include "v2p/eval.hpp"
#include "v2p/geom.hpp"
#include "v2p/train.hpp"

namespace fs = std::filesystem;
using namespace v2p;

namespace {

// Datasets follow the KITTI layout (velodyne/ + label_2/) when those
// subdirectories exist; otherwise the directory itself is used flat.
fs::path subdir_or_self(const fs::path& dir, const std::string& name) {
  const fs::path sub = dir / name;
  return fs::is_directory(sub) ? sub : dir;
}

std::vector<fs::path> sorted_files(const fs::path& dir,
                                   const std::string& ext) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext)
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string scene_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", i);
  return buf;
}

int run_synth(const std::string& spec_path, const std::string& out_dir) {
  config::SynthConfig sc = config::SynthConfig::load(spec_path);
  const fs::path points_dir = fs::path(out_dir) / "velodyne";
  const fs::path labels_dir = fs::path(out_dir) / "label_2";
  fs::create_directories(points_dir);
  fs::create_directories(labels_dir);
  std::size_t total_points = 0, total_boxes = 0;
  for (int i = 0; i < sc.num_scenes; ++i) {
    scene::SynthSpec sp = sc.scene_spec;
    sp.seed = sc.base_seed + std::uint64_t(i);
    auto [pc, gt] = scene::synth_scene(sp);
    const std::string name = scene_name(i);
    scene::save_kitti_bin(pc, points_dir / (name + ".bin"));
    scene::save_kitti_labels(labels_dir / (name + ".txt"), gt,
                             sc.class_names);
    total_points += pc.size();
    total_boxes += gt.boxes.size();
  }
  std::printf("wrote %d scenes (%zu points, %zu boxes) to %s\n",
              sc.num_scenes, total_points, total_boxes, out_dir.c_str());
  return 0;
}

std::vector<train::SceneData> load_dataset(const config::DetectorConfig& cfg,
                                           const fs::path& data_dir) {
  const fs::path points_dir = subdir_or_self(data_dir, "velodyne");
  const fs::path labels_dir = subdir_or_self(data_dir, "label_2");
  const std::vector<std::string> names = cfg.class_names();
  std::vector<train::SceneData> scenes;
  for (const fs::path& bin : sorted_files(points_dir, ".bin")) {
    const fs::path label = labels_dir / (bin.stem().string() + ".txt");
    if (!fs::exists(label))
      throw std::runtime_error("missing label file " + label.string());
    train::SceneData sd;
    sd.cloud = scene::load_kitti_bin(bin);
    sd.gt = scene::load_kitti_labels(label, names);
    scenes.push_back(std::move(sd));
  }
  if (scenes.empty())
    throw std::runtime_error("no .bin scenes under " + data_dir.string());
  return scenes;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt, bool no_refine) {
  config::DetectorConfig cfg = config::DetectorConfig::load(config_path);
  std::vector<train::SceneData> scenes = load_dataset(cfg, data_dir);
  std::printf("training on %zu scenes, %d steps%s\n", scenes.size(),
              cfg.train.steps, no_refine ? " (rpn+decoder only)" : "");
  ad::ParamStore store(cfg.train.seed);
  train::TrainResult result = train::fit(store, cfg, scenes, !no_refine);
  const int stride = std::max(1, cfg.train.steps / 20);
  for (const train::LossReport& r : result.series) {
    if (r.step % stride != 0 && r.step != cfg.train.steps - 1) continue;
    std::printf(
        "step %4d  total %.6f  rpn %.6f  seg %.6f  refine %.6f\n", r.step,
        r.total, r.rpn, r.seg, r.refine);
  }
  ad::save_checkpoint(store, out_ckpt);
  std::printf("saved %zu parameters to %s\n", store.total_parameters(),
              out_ckpt.c_str());
  return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& config_path,
              const std::string& data_dir, const std::string& confidence,
              const std::string& out_dir, bool rpn_only) {
  config::DetectorConfig cfg = config::DetectorConfig::load(config_path);
  const refine::Confidence mode = refine::parse_confidence(confidence);
  ad::ParamStore store = ad::load_checkpoint(ckpt_path, cfg.train.seed);
  const std::vector<std::string> names = cfg.class_names();
  fs::create_directories(out_dir);
  const fs::path points_dir = subdir_or_self(data_dir, "velodyne");
  std::size_t total = 0, files = 0;
  for (const fs::path& bin : sorted_files(points_dir, ".bin")) {
    scene::PointCloud pc = scene::load_kitti_bin(bin);
    std::vector<scene::Detection> dets =
        rpn_only ? train::infer_rpn_only(store, cfg, pc)
                 : train::infer_scene(store, cfg, pc, mode, true);
    scene::save_kitti_detections(
        fs::path(out_dir) / (bin.stem().string() + ".txt"), dets, names);
    total += dets.size();
    ++files;
  }
  std::printf("wrote %zu detections for %zu scenes to %s (confidence: %s)\n",
              total, files, out_dir.c_str(),
              refine::confidence_name(mode).c_str());
  return 0;
}

int run_eval(const std::string& det_dir, const std::string& gt_dir,
             const std::string& report_path, const std::string& config_path) {
  config::DetectorConfig cfg = config::DetectorConfig::load(config_path);
  const std::vector<std::string> names = cfg.class_names();
  const fs::path labels_dir = subdir_or_self(gt_dir, "label_2");

  std::set<std::string> stems;
  for (const fs::path& p : sorted_files(det_dir, ".txt"))
    stems.insert(p.stem().string());
  for (const fs::path& p : sorted_files(labels_dir, ".txt"))
    stems.insert(p.stem().string());
  if (stems.empty())
    throw std::runtime_error("no detection or label files found");

  std::vector<eval::ScenePair> scenes;
  for (const std::string& stem : stems) {
    eval::ScenePair sp;
    const fs::path det = fs::path(det_dir) / (stem + ".txt");
    const fs::path gt = labels_dir / (stem + ".txt");
    if (fs::exists(det)) sp.dets = scene::load_kitti_detections(det, names);
    if (fs::exists(gt)) sp.gt = scene::load_kitti_labels(gt, names);
    scenes.push_back(std::move(sp));
  }

  eval::EvalReport report = eval::evaluate(scenes, cfg);
  const std::string json = eval::report_json(report);
  std::FILE* f = std::fopen(report_path.c_str(), "wb");
  if (f == nullptr)
    throw std::runtime_error("cannot write " + report_path);
  std::fwrite(json.data(), 1, json.size(), f);
  std::fclose(f);

  for (const eval::ClassAp& c : report.classes)
    std::printf("%-12s ap3d %.4f  apbev %.4f  (iou>=%.2f, %d gt, %d det)\n",
                c.name.c_str(), c.ap_3d, c.ap_bev, c.threshold, c.num_gt,
                c.num_det);
  std::printf("mean ap3d %.4f over %zu scenes; report: %s\n",
              report.mean_ap_3d, scenes.size(), report_path.c_str());
  return 0;
}

int run_iou_check(int trials, std::int64_t samples, double tolerance) {
  Rng rng(20240817);
  double worst = 0.0, worst_exact = 0.0, worst_mc = 0.0;
  double sum_abs = 0.0;
  for (int t = 0; t < trials; ++t) {
    geom::Box3D a{{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                   rng.uniform(-0.5, 0.5)},
                  rng.uniform(0.5, 2.5),
                  rng.uniform(0.5, 2.5),
                  rng.uniform(0.5, 2.5),
                  rng.uniform(-M_PI, M_PI)};
    geom::Box3D b = a;
    b.center.x += rng.uniform(-1.5, 1.5);
    b.center.y += rng.uniform(-1.5, 1.5);
    b.center.z += rng.uniform(-1.0, 1.0);
    b.length = rng.uniform(0.5, 2.5);
    b.width = rng.uniform(0.5, 2.5);
    b.height = rng.uniform(0.5, 2.5);
    b.yaw = rng.uniform(-M_PI, M_PI);

    const double exact = geom::iou_3d(a, b);
    const geom::McEstimate mc = geom::iou_3d_montecarlo(a, b, samples, rng);
    const double diff = std::abs(exact - mc.iou);
    sum_abs += diff;
    if (diff > worst) {
      worst = diff;
      worst_exact = exact;
      worst_mc = mc.iou;
    }
  }
  const bool ok = worst <= tolerance;
  std::printf(
      "iou-check: %d trials x %lld samples  max|exact-mc| %.6f  mean %.6f  "
      "(worst pair: exact %.6f vs mc %.6f)  tolerance %.3f: %s\n",
      trials, static_cast<long long>(samples), worst, sum_abs / trials,
      worst_exact, worst_mc, tolerance, ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IoU-guided two-stage 3D detector"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate synthetic scenes");
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "synthesis recipe (TOML)")
      ->required();
  synth->add_option("--out", synth_out, "output dataset directory")
      ->required();

  auto* tr = app.add_subcommand("train", "train on a dataset directory");
  std::string tr_config, tr_data, tr_out;
  bool tr_no_refine = false;
  tr->add_option("--config", tr_config, "detector config (TOML)")->required();
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_flag("--no-refine", tr_no_refine, "train RPN + decoder only");

  auto* inf = app.add_subcommand("infer", "run detection on a dataset");
  std::string inf_ckpt, inf_config, inf_data, inf_conf = "aligned-iou-x-cls";
  std::string inf_out;
  bool inf_rpn_only = false;
  inf->add_option("--ckpt", inf_ckpt, "checkpoint path")->required();
  inf->add_option("--config", inf_config, "detector config (TOML)")
      ->required();
  inf->add_option("--data", inf_data, "dataset directory")->required();
  inf->add_option("--confidence", inf_conf,
                  "cls|unaligned-iou|aligned-iou|aligned-iou-x-cls");
  inf->add_option("--out", inf_out, "detection output directory")->required();
  inf->add_flag("--rpn-only", inf_rpn_only, "emit first-stage proposals");

  auto* ev = app.add_subcommand("eval", "score detections against labels");
  std::string ev_det, ev_gt, ev_report, ev_config;
  ev->add_option("--det", ev_det, "detection directory")->required();
  ev->add_option("--gt", ev_gt, "ground-truth directory")->required();
  ev->add_option("--report", ev_report, "JSON report output path")->required();
  ev->add_option("--config", ev_config, "detector config (TOML)")->required();

  auto* ic = app.add_subcommand("iou-check", "exact vs Monte Carlo 3D IoU");
  int ic_trials = 1000;
  std::int64_t ic_samples = 1000000;
  double ic_tol = 0.01;
  ic->add_option("--trials", ic_trials, "number of random box pairs")
      ->required();
  ic->add_option("--samples", ic_samples, "Monte Carlo samples per pair");
  ic->add_option("--tolerance", ic_tol, "max allowed |exact - mc|");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(synth_spec, synth_out);
    if (tr->parsed()) return run_train(tr_config, tr_data, tr_out, tr_no_refine);
    if (inf->parsed())
      return run_infer(inf_ckpt, inf_config, inf_data, inf_conf, inf_out,
                       inf_rpn_only);
    if (ev->parsed()) return run_eval(ev_det, ev_gt, ev_report, ev_config);
    if (ic->parsed()) return run_iou_check(ic_trials, ic_samples, ic_tol);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
