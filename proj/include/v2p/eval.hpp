#pragma once

#include <span>
#include <string>
#include <vector>

#include "v2p/config.hpp"
#include "v2p/geom.hpp"
#include "v2p/scene.hpp"

namespace v2p::eval {

// One scene's detections and labels, matched by file stem.
struct ScenePair {
  std::vector<scene::Detection> dets;
  scene::GroundTruth gt;
};

// Average precision for one class over a set of scenes: detections ranked by
// descending score, greedily matched one-per-gt within their scene, a match
// counting when the (3D or BEV) IoU reaches `iou_thr`. The result is the
// mean of the interpolated precision at `positions` equally spaced recall
// targets 1/P ... 1. No ground truth of the class -> 0.
double average_precision(std::span<const ScenePair> scenes, int class_id,
                         double iou_thr, int positions, bool bev);

struct ClassAp {
  std::string name;
  double threshold = 0.5;
  double ap_3d = 0.0;
  double ap_bev = 0.0;
  int num_gt = 0;
  int num_det = 0;
};

// Pearson and Spearman coefficients; Spearman resolves ties by average
// rank. `defined` is false when either series is constant (or too short).
struct Correlation {
  double plcc = 0.0;
  double srcc = 0.0;
  bool defined = false;
};
Correlation correlation(std::span<const double> estimates,
                        std::span<const double> actuals);

// Best same-class 3D IoU of each box against the scene's ground truth.
std::vector<double> actual_ious(std::span<const geom::Box3D> boxes,
                                std::span<const int> class_ids,
                                const scene::GroundTruth& gt);

// Actual-IoU distributions before and after refinement for index-matched
// box pairs, as `bins` equal cells over [0, 1] (1.0 lands in the top bin).
struct IouShift {
  std::vector<int> proposal_hist;
  std::vector<int> refined_hist;
  double proposal_mean = 0.0;
  double refined_mean = 0.0;
  double mean_shift = 0.0;  // refined_mean - proposal_mean
  int pairs = 0;
};
IouShift iou_shift(std::span<const double> proposal_iou,
                   std::span<const double> refined_iou, int bins = 10);

struct EvalReport {
  std::vector<ClassAp> classes;
  double mean_ap_3d = 0.0;   // over classes with ground truth
  double mean_ap_bev = 0.0;
  Correlation score_vs_iou;  // detection score against actual 3D IoU
  int num_scenes = 0;
  int num_detections = 0;
  int num_ground_truths = 0;
};

EvalReport evaluate(std::span<const ScenePair> scenes,
                    const config::DetectorConfig& cfg);
std::string report_json(const EvalReport& report);

}  // namespace v2p::eval
