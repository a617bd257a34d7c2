#include "v2p/eval.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "v2p/rng.hpp"

using namespace v2p;
using geom::Box3D;

namespace {

Box3D unit_at(double x, double y = 0.0, double z = 0.0) {
  return {{x, y, z}, 1.0, 1.0, 1.0, 0.0};
}

scene::Detection det(const Box3D& b, double score, int cls = 0) {
  scene::Detection d;
  d.box = b;
  d.class_id = cls;
  d.score = score;
  return d;
}

// Independent AP oracle: explicit TP/FP flags in score order, interpolated
// precision evaluated position by position.
double ap_oracle(std::vector<std::pair<double, bool>> scored_hits, int num_gt,
                 int positions) {
  std::sort(scored_hits.begin(), scored_hits.end(),
            [](auto& a, auto& b) { return a.first > b.first; });
  double ap = 0.0;
  for (int i = 1; i <= positions; ++i) {
    const double target = double(i) / positions;
    double best = 0.0;
    int tp = 0;
    for (std::size_t k = 0; k < scored_hits.size(); ++k) {
      if (scored_hits[k].second) ++tp;
      const double recall = double(tp) / num_gt;
      const double precision = double(tp) / double(k + 1);
      if (recall >= target) best = std::max(best, precision);
    }
    ap += best;
  }
  return ap / positions;
}

config::DetectorConfig two_class_config() {
  config::DetectorConfig cfg;
  config::ClassSpec a;
  a.name = "crate";
  a.eval_iou = 0.5;
  config::ClassSpec b;
  b.name = "cone";
  b.eval_iou = 0.5;
  cfg.classes = {a, b};
  cfg.eval_recall_positions = 40;
  return cfg;
}

}  // namespace

TEST_CASE("perfect detections score AP one, empty sets score zero") {
  eval::ScenePair sp;
  sp.gt.boxes = {unit_at(0.0), unit_at(10.0)};
  sp.gt.class_ids = {0, 0};
  sp.dets = {det(unit_at(0.0), 0.7), det(unit_at(10.0), 0.3)};
  std::vector<eval::ScenePair> scenes = {sp};

  CHECK(eval::average_precision(scenes, 0, 0.5, 40, false) == 1.0);
  CHECK(eval::average_precision(scenes, 0, 0.5, 40, true) == 1.0);

  scenes[0].dets.clear();
  CHECK(eval::average_precision(scenes, 0, 0.5, 40, false) == 0.0);

  scenes[0].dets = {det(unit_at(0.0), 0.7)};
  scenes[0].gt.boxes.clear();
  scenes[0].gt.class_ids.clear();
  CHECK(eval::average_precision(scenes, 0, 0.5, 40, false) == 0.0);
}

TEST_CASE("three-detection two-gt cases match the brute-force oracle") {
  // Ground truth at x=0 and x=10; x=20 never overlaps anything.
  eval::ScenePair sp;
  sp.gt.boxes = {unit_at(0.0), unit_at(10.0)};
  sp.gt.class_ids = {0, 0};

  SUBCASE("hit, miss, hit") {
    sp.dets = {det(unit_at(0.0), 0.9), det(unit_at(20.0), 0.8),
               det(unit_at(10.0), 0.7)};
    std::vector<eval::ScenePair> scenes = {sp};
    double ap = eval::average_precision(scenes, 0, 0.5, 40, false);
    CHECK(ap == doctest::Approx(ap_oracle({{0.9, true}, {0.8, false}, {0.7, true}},
                                          2, 40))
                    .epsilon(1e-15));
    // Hand value: precision 1 up to recall 1/2, then 2/3.
    CHECK(ap == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  }

  SUBCASE("miss first") {
    sp.dets = {det(unit_at(20.0), 0.9), det(unit_at(0.0), 0.8),
               det(unit_at(10.0), 0.7)};
    std::vector<eval::ScenePair> scenes = {sp};
    double ap = eval::average_precision(scenes, 0, 0.5, 40, false);
    CHECK(ap == doctest::Approx(ap_oracle({{0.9, false}, {0.8, true}, {0.7, true}},
                                          2, 40))
                    .epsilon(1e-15));
    CHECK(ap == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }

  SUBCASE("double detection of one gt") {
    // The second hit on an already-claimed gt is a false positive.
    sp.dets = {det(unit_at(0.0), 0.9), det(unit_at(0.05), 0.8),
               det(unit_at(20.0), 0.7)};
    std::vector<eval::ScenePair> scenes = {sp};
    double ap = eval::average_precision(scenes, 0, 0.5, 40, false);
    CHECK(ap == doctest::Approx(ap_oracle({{0.9, true}, {0.8, false}, {0.7, false}},
                                          2, 40))
                    .epsilon(1e-15));
    CHECK(ap == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("AP is invariant to detection order and monotone under FP removal") {
  eval::ScenePair sp;
  sp.gt.boxes = {unit_at(0.0), unit_at(10.0), unit_at(-10.0)};
  sp.gt.class_ids = {0, 0, 0};
  sp.dets = {det(unit_at(0.0), 0.9),   det(unit_at(20.0), 0.85),
             det(unit_at(10.0), 0.8),  det(unit_at(30.0), 0.6),
             det(unit_at(-10.0), 0.5), det(unit_at(40.0), 0.4)};
  std::vector<eval::ScenePair> scenes = {sp};
  const double base = eval::average_precision(scenes, 0, 0.5, 40, false);

  std::mt19937 rng(7);
  for (int trial = 0; trial < 8; ++trial) {
    eval::ScenePair shuffled = sp;
    std::shuffle(shuffled.dets.begin(), shuffled.dets.end(), rng);
    std::vector<eval::ScenePair> s2 = {shuffled};
    CHECK(eval::average_precision(s2, 0, 0.5, 40, false) == base);
  }

  // Dropping any false positive never lowers the AP.
  const std::vector<int> fp_idx = {1, 3, 5};
  for (int idx : fp_idx) {
    eval::ScenePair pruned = sp;
    pruned.dets.erase(pruned.dets.begin() + idx);
    std::vector<eval::ScenePair> s2 = {pruned};
    CHECK(eval::average_precision(s2, 0, 0.5, 40, false) >= base);
  }

  // Removing every FP restores a perfect score.
  eval::ScenePair clean = sp;
  clean.dets = {sp.dets[0], sp.dets[2], sp.dets[4]};
  std::vector<eval::ScenePair> s3 = {clean};
  CHECK(eval::average_precision(s3, 0, 0.5, 40, false) == 1.0);
}

TEST_CASE("threshold comparisons and BEV versus 3D matching") {
  // Shifted box with a hand-checkable IoU: (1-s)/(1+s) at s = 0.2.
  Box3D gt = unit_at(0.0);
  Box3D shifted = unit_at(0.2);
  const double iou = geom::iou_3d(shifted, gt);
  CHECK(iou == doctest::Approx(0.8 / 1.2).epsilon(1e-12));

  eval::ScenePair sp;
  sp.gt.boxes = {gt};
  sp.gt.class_ids = {0};
  sp.dets = {det(shifted, 0.9)};
  std::vector<eval::ScenePair> scenes = {sp};

  // Exactly at the threshold counts; epsilon above does not.
  CHECK(eval::average_precision(scenes, 0, iou, 40, false) == 1.0);
  CHECK(eval::average_precision(scenes, 0, iou + 1e-9, 40, false) == 0.0);

  // Correct footprint, wrong height band: BEV hit, 3D miss.
  Box3D floating = unit_at(0.0);
  floating.center.z = 2.0;
  sp.dets = {det(floating, 0.9)};
  scenes = {sp};
  CHECK(eval::average_precision(scenes, 0, 0.5, 40, true) == 1.0);
  CHECK(eval::average_precision(scenes, 0, 0.5, 40, false) == 0.0);

  // Detections only count against their own class and scene.
  eval::ScenePair other;
  other.gt.boxes = {unit_at(0.0)};
  other.gt.class_ids = {1};
  other.dets = {det(unit_at(0.0), 0.9, 0)};
  std::vector<eval::ScenePair> cross = {other};
  CHECK(eval::average_precision(cross, 0, 0.5, 40, false) == 0.0);

  eval::ScenePair a, b;
  a.gt.boxes = {unit_at(0.0)};
  a.gt.class_ids = {0};
  b.dets = {det(unit_at(0.0), 0.9)};  // right place, wrong scene
  std::vector<eval::ScenePair> split = {a, b};
  CHECK(eval::average_precision(split, 0, 0.5, 40, false) == 0.0);
}

TEST_CASE("correlation matches hand-computed Pearson and Spearman") {
  std::vector<double> x = {0.1, 0.4, 0.4, 0.8, 0.9};
  std::vector<double> same = x;
  eval::Correlation c = eval::correlation(x, same);
  CHECK(c.defined);
  CHECK(c.plcc == 1.0);
  CHECK(c.srcc == 1.0);

  std::vector<double> strict = {0.1, 0.2, 0.5, 0.8, 0.9};
  std::vector<double> rev(strict.rbegin(), strict.rend());
  eval::Correlation cr = eval::correlation(strict, rev);
  CHECK(cr.defined);
  CHECK(cr.srcc == -1.0);

  // Five-point case with one tie; Spearman uses average ranks
  // (1, 2.5, 2.5, 4, 5) against (1, 2, 4, 5, 3).
  std::vector<double> a = {0.2, 0.3, 0.5, 0.6, 0.4};
  eval::Correlation ch = eval::correlation(x, a);
  CHECK(ch.defined);
  CHECK(ch.plcc == doctest::Approx(0.67671554233196451).epsilon(1e-12));
  CHECK(ch.srcc == doctest::Approx(0.6155870112510925).epsilon(1e-12));
  // Rank-formula oracle rebuilt inline: d(re, ra) as computed by hand.
  {
    std::vector<double> re = {1.0, 2.5, 2.5, 4.0, 5.0};
    std::vector<double> ra = {1.0, 2.0, 4.0, 5.0, 3.0};
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 5; ++i) {
      sxy += (re[i] - 3.0) * (ra[i] - 3.0);
      sxx += (re[i] - 3.0) * (re[i] - 3.0);
      syy += (ra[i] - 3.0) * (ra[i] - 3.0);
    }
    CHECK(ch.srcc == doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-14));
  }

  // Degenerate series are reported as undefined.
  std::vector<double> flat = {0.5, 0.5, 0.5, 0.5, 0.5};
  CHECK_FALSE(eval::correlation(flat, a).defined);
  CHECK_FALSE(eval::correlation(a, flat).defined);
  std::vector<double> one = {1.0};
  CHECK_FALSE(eval::correlation(one, one).defined);
  CHECK_THROWS(eval::correlation(x, one));
}

TEST_CASE("IoU shift histograms count every pair") {
  std::vector<double> before = {0.05, 0.3, 0.55, 0.55, 0.95, 1.0};
  std::vector<double> after = {0.15, 0.5, 0.6, 0.8, 0.97, 1.0};

  eval::IouShift s = eval::iou_shift(before, after, 10);
  CHECK(s.pairs == 6);
  int total_b = 0, total_a = 0;
  for (int v : s.proposal_hist) total_b += v;
  for (int v : s.refined_hist) total_a += v;
  CHECK(total_b == 6);
  CHECK(total_a == 6);
  CHECK(s.proposal_hist[0] == 1);   // 0.05
  CHECK(s.proposal_hist[5] == 2);   // both 0.55
  CHECK(s.proposal_hist[9] == 2);   // 0.95 and the exact 1.0
  CHECK(s.refined_hist[9] == 2);    // 0.97 and 1.0
  CHECK(s.mean_shift > 0.0);
  CHECK(s.mean_shift ==
        doctest::Approx(s.refined_mean - s.proposal_mean).epsilon(1e-15));

  eval::IouShift zero = eval::iou_shift(before, before, 10);
  CHECK(zero.mean_shift == 0.0);
  CHECK(zero.proposal_hist == zero.refined_hist);

  CHECK_THROWS(eval::iou_shift(before, std::vector<double>{0.1}, 10));
}

TEST_CASE("actual IoUs pick the best same-class ground-truth overlap") {
  scene::GroundTruth gt;
  gt.boxes = {unit_at(0.0), unit_at(0.4), unit_at(10.0)};
  gt.class_ids = {0, 0, 1};

  std::vector<Box3D> boxes = {unit_at(0.1), unit_at(10.0), unit_at(50.0)};
  std::vector<int> ids = {0, 0, 0};
  auto ious = eval::actual_ious(boxes, ids, gt);
  REQUIRE(ious.size() == 3);
  // Best of IoU(0.1 vs 0) and IoU(0.1 vs 0.4): the closer one wins.
  CHECK(ious[0] == doctest::Approx(0.9 / 1.1).epsilon(1e-12));
  CHECK(ious[1] == 0.0);  // only gt there is another class
  CHECK(ious[2] == 0.0);  // nothing nearby
}

TEST_CASE("evaluate produces a parseable report with per-class APs") {
  config::DetectorConfig cfg = two_class_config();

  eval::ScenePair s1;
  s1.gt.boxes = {unit_at(0.0), unit_at(10.0)};
  s1.gt.class_ids = {0, 0};
  s1.dets = {det(unit_at(0.0), 0.9, 0), det(unit_at(10.0), 0.6, 0),
             det(unit_at(30.0), 0.8, 1)};  // class-1 FP, no class-1 gt
  eval::ScenePair s2;
  s2.gt.boxes = {unit_at(-5.0)};
  s2.gt.class_ids = {0};
  s2.dets = {det(unit_at(-5.0), 0.7, 0)};

  std::vector<eval::ScenePair> scenes = {s1, s2};
  eval::EvalReport r = eval::evaluate(scenes, cfg);
  REQUIRE(r.classes.size() == 2);
  CHECK(r.classes[0].ap_3d == 1.0);
  CHECK(r.classes[0].num_gt == 3);
  CHECK(r.classes[0].num_det == 3);
  CHECK(r.classes[1].num_gt == 0);
  CHECK(r.classes[1].ap_3d == 0.0);
  // The mean skips classes without ground truth.
  CHECK(r.mean_ap_3d == 1.0);
  CHECK(r.mean_ap_bev == 1.0);
  CHECK(r.num_scenes == 2);
  CHECK(r.num_detections == 4);
  CHECK(r.num_ground_truths == 3);

  std::string text = eval::report_json(r);
  nlohmann::json j = nlohmann::json::parse(text);
  CHECK(j["mean_ap_3d"].get<double>() == 1.0);
  CHECK(j["classes"].size() == 2);
  CHECK(j["classes"][0]["name"].get<std::string>() == "crate");
  CHECK(j["classes"][0]["ap_3d"].get<double>() == 1.0);
  CHECK(j["num_detections"].get<int>() == 4);
  CHECK(j.contains("score_vs_iou"));
}
