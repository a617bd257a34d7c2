#include "v2p/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

namespace v2p::eval {
namespace {

struct RankedDet {
  double score = 0.0;
  int scene = 0;
  geom::Box3D box;
};

// Content-based ordering so equal-score ties resolve the same way no matter
// how the input vectors were arranged.
bool rank_before(const RankedDet& a, const RankedDet& b) {
  auto key = [](const RankedDet& d) {
    return std::make_tuple(-d.score, d.scene, d.box.center.x, d.box.center.y,
                           d.box.center.z, d.box.length, d.box.width,
                           d.box.height, d.box.yaw);
  };
  return key(a) < key(b);
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

// Average ranks, ties sharing the mean of their positions (1-based).
std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double shared = 0.5 * double(i + j) + 1.0;  // mean of i+1 .. j+1
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y,
               bool* ok) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    *ok = false;
    return 0.0;
  }
  *ok = true;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double average_precision(std::span<const ScenePair> scenes, int class_id,
                         double iou_thr, int positions, bool bev) {
  if (positions < 1) throw std::runtime_error("average_precision: positions");

  int num_gt = 0;
  std::vector<RankedDet> dets;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (std::size_t i = 0; i < scenes[s].gt.boxes.size(); ++i)
      if (scenes[s].gt.class_ids[i] == class_id) ++num_gt;
    for (const scene::Detection& d : scenes[s].dets)
      if (d.class_id == class_id)
        dets.push_back({d.score, int(s), d.box});
  }
  if (num_gt == 0 || dets.empty()) return 0.0;
  std::sort(dets.begin(), dets.end(), rank_before);

  std::vector<std::vector<bool>> taken(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s)
    taken[s].assign(scenes[s].gt.boxes.size(), false);

  std::vector<double> precision, recall;
  int tp = 0;
  for (std::size_t k = 0; k < dets.size(); ++k) {
    const RankedDet& d = dets[k];
    const scene::GroundTruth& gt = scenes[std::size_t(d.scene)].gt;
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
      if (gt.class_ids[i] != class_id || taken[std::size_t(d.scene)][i])
        continue;
      const double iou = bev ? geom::iou_bev(d.box, gt.boxes[i])
                             : geom::iou_3d(d.box, gt.boxes[i]);
      if (iou > best_iou) {
        best_iou = iou;
        best = int(i);
      }
    }
    if (best >= 0 && best_iou >= iou_thr) {
      taken[std::size_t(d.scene)][std::size_t(best)] = true;
      ++tp;
    }
    precision.push_back(double(tp) / double(k + 1));
    recall.push_back(double(tp) / double(num_gt));
  }

  double ap = 0.0;
  for (int i = 1; i <= positions; ++i) {
    const double target = double(i) / double(positions);
    double p = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k)
      if (recall[k] >= target) p = std::max(p, precision[k]);
    ap += p;
  }
  return ap / double(positions);
}

Correlation correlation(std::span<const double> estimates,
                        std::span<const double> actuals) {
  if (estimates.size() != actuals.size())
    throw std::runtime_error("correlation: length mismatch");
  Correlation c;
  if (estimates.size() < 2) return c;
  bool ok_p = false, ok_s = false;
  const double plcc = pearson(estimates, actuals, &ok_p);
  std::vector<double> re = average_ranks(estimates);
  std::vector<double> ra = average_ranks(actuals);
  const double srcc = pearson(re, ra, &ok_s);
  if (ok_p && ok_s) {
    c.plcc = plcc;
    c.srcc = srcc;
    c.defined = true;
  }
  return c;
}

std::vector<double> actual_ious(std::span<const geom::Box3D> boxes,
                                std::span<const int> class_ids,
                                const scene::GroundTruth& gt) {
  if (boxes.size() != class_ids.size())
    throw std::runtime_error("actual_ious: length mismatch");
  std::vector<double> out;
  out.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    double best = 0.0;
    for (std::size_t j = 0; j < gt.boxes.size(); ++j)
      if (gt.class_ids[j] == class_ids[i])
        best = std::max(best, geom::iou_3d(boxes[i], gt.boxes[j]));
    out.push_back(best);
  }
  return out;
}

IouShift iou_shift(std::span<const double> proposal_iou,
                   std::span<const double> refined_iou, int bins) {
  if (proposal_iou.size() != refined_iou.size())
    throw std::runtime_error("iou_shift: pair count mismatch");
  if (bins < 1) throw std::runtime_error("iou_shift: bins");
  IouShift s;
  s.pairs = int(proposal_iou.size());
  s.proposal_hist.assign(std::size_t(bins), 0);
  s.refined_hist.assign(std::size_t(bins), 0);
  auto bin_of = [bins](double v) {
    int b = int(std::floor(v * bins));
    return std::clamp(b, 0, bins - 1);
  };
  for (double v : proposal_iou) ++s.proposal_hist[std::size_t(bin_of(v))];
  for (double v : refined_iou) ++s.refined_hist[std::size_t(bin_of(v))];
  if (s.pairs > 0) {
    s.proposal_mean = mean_of(proposal_iou);
    s.refined_mean = mean_of(refined_iou);
    s.mean_shift = s.refined_mean - s.proposal_mean;
  }
  return s;
}

EvalReport evaluate(std::span<const ScenePair> scenes,
                    const config::DetectorConfig& cfg) {
  EvalReport r;
  r.num_scenes = int(scenes.size());
  for (const ScenePair& sp : scenes) {
    r.num_detections += int(sp.dets.size());
    r.num_ground_truths += int(sp.gt.boxes.size());
  }

  int with_gt = 0;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    ClassAp ap;
    ap.name = cfg.classes[c].name;
    ap.threshold = cfg.classes[c].eval_iou;
    for (const ScenePair& sp : scenes) {
      for (int cid : sp.gt.class_ids)
        if (cid == int(c)) ++ap.num_gt;
      for (const scene::Detection& d : sp.dets)
        if (d.class_id == int(c)) ++ap.num_det;
    }
    ap.ap_3d = average_precision(scenes, int(c), ap.threshold,
                                 cfg.eval_recall_positions, false);
    ap.ap_bev = average_precision(scenes, int(c), ap.threshold,
                                  cfg.eval_recall_positions, true);
    if (ap.num_gt > 0) {
      ++with_gt;
      r.mean_ap_3d += ap.ap_3d;
      r.mean_ap_bev += ap.ap_bev;
    }
    r.classes.push_back(std::move(ap));
  }
  if (with_gt > 0) {
    r.mean_ap_3d /= double(with_gt);
    r.mean_ap_bev /= double(with_gt);
  }

  // Score-vs-actual-IoU correlation over every detection.
  std::vector<double> scores, ious;
  for (const ScenePair& sp : scenes) {
    std::vector<geom::Box3D> boxes;
    std::vector<int> ids;
    for (const scene::Detection& d : sp.dets) {
      boxes.push_back(d.box);
      ids.push_back(d.class_id);
      scores.push_back(d.score);
    }
    for (double v : actual_ious(boxes, ids, sp.gt)) ious.push_back(v);
  }
  r.score_vs_iou = correlation(scores, ious);
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["num_scenes"] = r.num_scenes;
  j["num_detections"] = r.num_detections;
  j["num_ground_truths"] = r.num_ground_truths;
  j["mean_ap_3d"] = r.mean_ap_3d;
  j["mean_ap_bev"] = r.mean_ap_bev;
  j["classes"] = nlohmann::json::array();
  for (const ClassAp& c : r.classes) {
    j["classes"].push_back({{"name", c.name},
                            {"iou_threshold", c.threshold},
                            {"ap_3d", c.ap_3d},
                            {"ap_bev", c.ap_bev},
                            {"num_gt", c.num_gt},
                            {"num_det", c.num_det}});
  }
  if (r.score_vs_iou.defined) {
    j["score_vs_iou"] = {{"plcc", r.score_vs_iou.plcc},
                         {"srcc", r.score_vs_iou.srcc}};
  } else {
    j["score_vs_iou"] = nullptr;
  }
  return j.dump(2) + "\n";
}

}  // namespace v2p::eval
