#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "v2p/config.hpp"
#include "v2p/toml.hpp"

using namespace v2p;

namespace {
const std::string kConfigs = std::string(V2P_SOURCE_DIR) + "/configs";
}

TEST_CASE("toml: scalars, arrays, sections, comments") {
  toml::Table t = toml::Table::parse_string(
      "top = 1\n"
      "[a]\n"
      "x = 3            # trailing comment\n"
      "y = -2.5e-1\n"
      "flag = true\n"
      "name = \"hello # not a comment\"\n"
      "ints = [1, 2, 3]\n"
      "mixed = [1, 2.5]\n"
      "strs = [\"p\", \"q\"]\n"
      "[a.b]\n"
      "z = 4\n");
  CHECK(t.get_int("top") == 1);
  CHECK(t.get_int("a.x") == 3);
  CHECK(t.get_double("a.x") == 3.0);  // int promotes
  CHECK(t.get_double("a.y") == -0.25);
  CHECK(t.get_bool("a.flag") == true);
  CHECK(t.get_string("a.name") == "hello # not a comment");
  CHECK(t.get_int_array("a.ints") == std::vector<std::int64_t>{1, 2, 3});
  CHECK(t.get_double_array("a.ints") == std::vector<double>{1, 2, 3});
  CHECK(t.get_double_array("a.mixed") == std::vector<double>{1.0, 2.5});
  CHECK(t.get_string_array("a.strs") == std::vector<std::string>{"p", "q"});
  CHECK(t.get_int("a.b.z") == 4);
  CHECK(t.has("a.x"));
  CHECK(!t.has("a.missing"));
  CHECK(t.get_int_or("a.missing", 7) == 7);
}

TEST_CASE("toml: malformed input is rejected with line numbers") {
  auto parse = [](const std::string& s) {
    return toml::Table::parse_string(s, "buf");
  };
  CHECK_THROWS_WITH_AS(parse("x 3\n"), doctest::Contains("buf:1"),
                       std::runtime_error);
  CHECK_THROWS_AS(parse("x = \n"), std::runtime_error);
  CHECK_THROWS_AS(parse("x = 1\nx = 2\n"), std::runtime_error);
  CHECK_THROWS_AS(parse("[unclosed\nx = 1\n"), std::runtime_error);
  CHECK_THROWS_AS(parse("a = [1, \"s\"]\n"), std::runtime_error);
  CHECK_THROWS_AS(parse("a = [1, ]2\n"), std::runtime_error);
  CHECK_THROWS_AS(parse("a = zzz\n"), std::runtime_error);
  toml::Table t = parse("x = 1\ns = \"v\"\n");
  CHECK_THROWS_AS(t.get_string("x"), std::runtime_error);
  CHECK_THROWS_AS(t.get_int("s"), std::runtime_error);
  CHECK_THROWS_AS(t.get_int("absent"), std::runtime_error);
}

TEST_CASE("toml: unconsumed keys are flagged") {
  toml::Table t = toml::Table::parse_string("a = 1\nb = 2\n", "buf");
  CHECK(t.get_int("a") == 1);
  CHECK_THROWS_WITH_AS(t.require_all_consumed(), doctest::Contains("'b'"),
                       std::runtime_error);
  CHECK(t.get_int("b") == 2);
  CHECK_NOTHROW(t.require_all_consumed());
}

TEST_CASE("full-scale config carries the published defaults") {
  config::DetectorConfig c =
      config::DetectorConfig::load(kConfigs + "/kitti.toml");
  CHECK(c.scene.bounds.x_min == 0.0);
  CHECK(c.scene.bounds.x_max == 70.4);
  CHECK(c.scene.bounds.y_min == -40.0);
  CHECK(c.scene.bounds.y_max == 40.0);
  CHECK(c.scene.bounds.z_min == -3.0);
  CHECK(c.scene.bounds.z_max == 1.0);
  CHECK(c.scene.voxel_dx == 0.05);
  CHECK(c.scene.voxel_dy == 0.05);
  CHECK(c.scene.voxel_dz == 0.1);
  CHECK(c.scene.nx() == 1408);
  CHECK(c.scene.ny() == 1600);
  CHECK(c.scene.nz() == 40);

  CHECK(c.backbone.widths == std::vector<int>{16, 32, 64, 128});
  CHECK(c.decoder.widths == std::vector<int>{256, 192, 160, 128, 128});

  CHECK(c.refine.grid_n == 6);
  CHECK(c.refine.radii == std::vector<double>{0.8, 1.6});
  CHECK(c.refine.c_h == 128);
  CHECK(c.refine.c_m == 128);
  CHECK(c.refine.c_b == 128);
  CHECK(c.refine.theta_h == 0.75);
  CHECK(c.refine.theta_l == 0.25);
  CHECK(c.refine.theta_reg == 0.55);
  CHECK(c.refine.train_samples == 128);

  CHECK(c.rpn.nms_iou == 0.85);
  CHECK(c.rpn.nms_top == 100);

  CHECK(c.train.weight_decay == 0.01);
  CHECK(c.train.loss_alpha_rpn == 1.0);
  CHECK(c.train.loss_alpha_seg == 4.0);
  CHECK(c.train.loss_alpha_refine == 1.0);
  CHECK(c.train.gt_aug_per_box == 0);
  CHECK(c.train.augment_ranges.scale_min == 0.95);
  CHECK(c.train.augment_ranges.scale_max == 1.05);
  CHECK(c.train.augment_ranges.rot_min ==
        doctest::Approx(-std::atan2(0., -1.) / 4).epsilon(1e-15));
  CHECK(c.train.augment_ranges.rot_max ==
        doctest::Approx(std::atan2(0., -1.) / 4).epsilon(1e-15));

  CHECK(c.eval_recall_positions == 40);
  REQUIRE(c.classes.size() == 3);
  CHECK(c.classes[0].name == "Car");
  CHECK(c.classes[0].eval_iou == 0.7);
  CHECK(c.classes[1].eval_iou == 0.5);
  CHECK(c.classes[2].eval_iou == 0.5);
  CHECK(c.class_names() ==
        std::vector<std::string>{"Car", "Pedestrian", "Cyclist"});
}

TEST_CASE("desk config loads, validates, and matches its synth recipes") {
  config::DetectorConfig c =
      config::DetectorConfig::load(kConfigs + "/desk.toml");
  CHECK(c.scene.nx() == 256);
  CHECK(c.scene.ny() == 256);
  CHECK(c.scene.nz() == 16);
  CHECK(c.classes.size() == 1);
  CHECK(c.train.gt_aug_per_box == 4);

  for (const char* name : {"/synth_desk.toml", "/synth_desk_val.toml"}) {
    config::SynthConfig s = config::SynthConfig::load(kConfigs + name);
    CHECK(s.class_names == c.class_names());
    CHECK(s.scene_spec.bounds.x_max == c.scene.bounds.x_max);
    CHECK(s.scene_spec.bounds.y_min == c.scene.bounds.y_min);
    CHECK(s.scene_spec.bounds.z_max == c.scene.bounds.z_max);
    // Expected point budget stays desk-sized.
    double volume = (s.scene_spec.bounds.x_max - s.scene_spec.bounds.x_min) *
                    (s.scene_spec.bounds.y_max - s.scene_spec.bounds.y_min) *
                    (s.scene_spec.bounds.z_max - s.scene_spec.bounds.z_min);
    double expected_points =
        s.scene_spec.num_boxes * s.scene_spec.points_per_box +
        s.scene_spec.background_density * volume;
    CHECK(expected_points <= 2000);
  }
  config::SynthConfig train = config::SynthConfig::load(kConfigs + "/synth_desk.toml");
  config::SynthConfig val =
      config::SynthConfig::load(kConfigs + "/synth_desk_val.toml");
  CHECK(train.base_seed != val.base_seed);
}

TEST_CASE("detector config validation rejects inconsistent setups") {
  config::DetectorConfig good =
      config::DetectorConfig::load(kConfigs + "/desk.toml");

  config::DetectorConfig c = good;
  c.scene.bounds.x_max = c.scene.bounds.x_min + 0.9 * c.scene.voxel_dx;
  CHECK_THROWS_AS(c.validate(), std::runtime_error);

  c = good;
  c.scene.voxel_dx = 0.3;  // 12.8 / 0.3 is not an integer
  CHECK_THROWS_AS(c.validate(), std::runtime_error);

  c = good;
  c.scene.bounds.x_max = c.scene.bounds.x_min + 9 * c.scene.voxel_dx;
  CHECK_THROWS_AS(c.validate(), std::runtime_error);  // 9 not divisible by 8

  c = good;
  c.refine.theta_l = 0.8;
  CHECK_THROWS_AS(c.validate(), std::runtime_error);

  c = good;
  c.refine.radii = {1.6, 0.8};
  CHECK_THROWS_AS(c.validate(), std::runtime_error);

  c = good;
  c.refine.c_h = 33;  // not divisible across 2 radii
  CHECK_THROWS_AS(c.validate(), std::runtime_error);

  c = good;
  c.backbone.widths = {16, 32, 64};
  CHECK_THROWS_AS(c.validate(), std::runtime_error);

  c = good;
  c.decoder.widths = {256, 192, 160, 128};
  CHECK_THROWS_AS(c.validate(), std::runtime_error);

  c = good;
  c.rpn.neg_iou = 0.7;  // above pos_iou
  CHECK_THROWS_AS(c.validate(), std::runtime_error);

  c = good;
  c.classes[0].eval_iou = 1.5;
  CHECK_THROWS_AS(c.validate(), std::runtime_error);

  c = good;
  c.train.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), std::runtime_error);
}

TEST_CASE("detector config load rejects unknown and missing keys") {
  std::string minimal = kConfigs + "/desk.toml";
  // Unknown key: append one to a copy.
  std::string text;
  {
    std::ifstream in(minimal);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  auto tmp = std::filesystem::temp_directory_path() / "v2p_cfg";
  std::filesystem::create_directories(tmp);
  {
    std::ofstream out(tmp / "unknown.toml", std::ios::trunc);
    out << text << "\n[rpn]\n";
  }
  // Re-opening a section is fine, but a misspelled key is not.
  {
    std::ofstream out(tmp / "unknown.toml", std::ios::trunc);
    out << text << "\n[extra]\nnms_iuo = 0.7\n";
  }
  CHECK_THROWS_WITH_AS(config::DetectorConfig::load(tmp / "unknown.toml"),
                       doctest::Contains("nms_iuo"), std::runtime_error);
  {
    std::ofstream out(tmp / "missing.toml", std::ios::trunc);
    out << "[scene]\nx_min = 0.0\n";
  }
  CHECK_THROWS_AS(config::DetectorConfig::load(tmp / "missing.toml"),
                  std::runtime_error);
}
