#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "geomim/config.hpp"

using namespace geomim;

TEST_CASE("defaults produce the documented typed views") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  DatasetSpec d = c.dataset();
  CHECK(d.views == 6);
  CHECK(d.height == 64);
  CHECK(d.width == 112);
  CHECK(d.teacher_channels == 64);
  ModelConfig m = c.model(6, 64, 112);
  CHECK(m.dim == 64);
  CHECK(m.depth_bins == 16);
  CHECK(m.cva_blocks == std::vector<int>{2, 6});
  CHECK(m.camera_gate);
  TrainConfig t = c.trainer();
  CHECK(t.base_lr == 2e-4);
  CHECK(t.alpha == 0.01);
  CHECK(t.mask_ratio == 0.5);
  CHECK(t.depth_activation == DepthActivation::kSoftmax);
}

TEST_CASE("to_ini round-trips through merge_text") {
  RunConfig a;
  a.set("trainer.base_lr", "0.0003");
  a.set("model.cva_blocks", "1,3");
  a.set("loss.depth_activation", "sigmoid");
  RunConfig b;
  b.merge_text(a.to_ini());
  for (const auto& key : a.keys()) CHECK(a.get(key) == b.get(key));
  CHECK(b.trainer().base_lr == 3e-4);
  CHECK(b.trainer().depth_activation == DepthActivation::kSigmoid);
  CHECK(b.model(6, 64, 112).cva_blocks == std::vector<int>{1, 3});
  CHECK(b.explicitly_set("trainer.base_lr"));
}

TEST_CASE("unknown keys and keys outside sections are rejected") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("trainer.learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(c.merge_text("[trainer]\nlearning_rate = 1\n"), ConfigError);
  CHECK_THROWS_AS(c.merge_text("[nosuch]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(c.merge_text("base_lr = 1\n"), ConfigError);
  CHECK_THROWS_AS(c.merge_file("/nonexistent/geomim.ini"), ConfigError);
}

TEST_CASE("bad values name the offending key") {
  RunConfig c;
  c.set("trainer.total_steps", "12x");
  try {
    c.trainer();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("trainer.total_steps") != std::string::npos);
  }
  RunConfig d;
  d.set("model.camera_gate", "maybe");
  CHECK_THROWS_AS(d.model(6, 64, 112), ConfigError);
  RunConfig e;
  e.set("loss.depth_activation", "relu");
  CHECK_THROWS_AS(e.trainer(), ConfigError);
  RunConfig f;
  f.set("trainer.mask_ratio", "1.5");
  CHECK_THROWS(f.trainer());
}

TEST_CASE("explicitly_set tracks file and override values only") {
  RunConfig c;
  CHECK_FALSE(c.explicitly_set("trainer.seed"));
  c.merge_text("[trainer]\nseed = 4\n");
  CHECK(c.explicitly_set("trainer.seed"));
  CHECK(c.trainer().seed == 4u);
  CHECK_FALSE(c.explicitly_set("scenegen.seed"));
}

TEST_CASE("merge_file reads an INI file") {
  const auto path = std::filesystem::temp_directory_path() / "geomim_test_config.ini";
  {
    std::ofstream out(path);
    out << "[scenegen]\nviews = 4\nscenes = 8\n\n[lss]\nnx = 16\nny = 16\n";
  }
  RunConfig c;
  c.merge_file(path);
  CHECK(c.dataset().views == 4);
  CHECK(c.dataset().scenes == 8);
  CHECK(c.bev().nx == 16);
  CHECK(c.dataset().bev.nx == 16);
  std::filesystem::remove(path);
}

TEST_CASE("probe view") {
  RunConfig c;
  c.set("probe.steps", "7");
  c.set("probe.hidden", "4");
  ProbeConfig p = c.probe();
  CHECK(p.steps == 7);
  CHECK(p.hidden == 4);
  c.set("probe.hidden", "0");
  CHECK_THROWS_AS(c.probe(), ConfigError);
}
