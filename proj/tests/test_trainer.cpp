#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include "geomim/ops.hpp"
#include "geomim/trainer.hpp"

using namespace geomim;
namespace fs = std::filesystem;

namespace {

DatasetSpec tiny_spec(int scenes = 3) {
  DatasetSpec s;
  s.views = 2;
  s.height = 32;
  s.width = 32;
  s.focal = 20;
  s.bev = BevGridSpec::square(8, 8);
  s.teacher_channels = 8;
  s.scenes = scenes;
  s.seed = 1;
  return s;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.views = 2;
  mc.image_height = 32;
  mc.image_width = 32;
  mc.dim = 8;
  mc.heads = 2;
  mc.mlp_ratio = 2;
  mc.encoder_depth = 1;
  mc.depth_bins = 4;
  return mc;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.total_steps = 5;
  t.warmup_steps = 1;
  t.base_lr = 1e-3;
  t.seed = 3;
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("geomim_test_trainer_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("learning-rate schedule values") {
  TrainConfig c;  // 1000 steps, 500 warmup, 2e-4
  CHECK(lr_schedule(500, c) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(lr_schedule(250, c) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(std::abs(lr_schedule(1000, c)) < 1e-18);
  CHECK(lr_schedule(750, c) == doctest::Approx(1e-4).epsilon(1e-12));  // cosine midpoint
  CHECK(lr_schedule(1, c) == doctest::Approx(2e-4 / 500));
  for (int s = 501; s < 1000; ++s) CHECK(lr_schedule(s, c) <= lr_schedule(s - 1, c));
}

TEST_CASE("TrainConfig validation") {
  TrainConfig c;
  c.warmup_steps = c.total_steps;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.mask_ratio = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("AdamW single step matches a hand oracle") {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  Tape::current().clear();
  const std::vector<double> w = {0.3, -0.7, 2.0};
  backward(sum(mul(p, Tensor::from({3}, w))));
  AdamW opt(0.9, 0.999, 1e-8, 0.1);
  opt.step({{"p", p}}, 0.01);
  const std::vector<double> start = {1.0, -2.0, 0.5};
  for (int k = 0; k < 3; ++k) {
    // First step: mhat = g, vhat = g^2.
    const double g = w[k];
    const double expect = start[k] - 0.01 * (g / (std::abs(g) + 1e-8) + 0.1 * start[k]);
    CHECK(p[k] == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK(opt.steps() == 1);
}

TEST_CASE("AdamW at lr = 0 leaves parameters unchanged; params without grad are skipped") {
  Tensor p = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor q = Tensor::from({2}, {3.0, 4.0}, true);
  Tape::current().clear();
  backward(sum(mul(p, p)));
  AdamW opt(0.9, 0.999, 1e-8, 0.5);
  opt.step({{"p", p}, {"q", q}}, 0.0);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 2.0);
  opt.step({{"p", p}, {"q", q}}, 0.1);
  CHECK(q[0] == 3.0);
  CHECK(p[0] != 1.0);
}

TEST_CASE("metrics line keys and order") {
  StepMetrics m{3, 1e-4, 0.5, 2.0, 0.52, 1.25, 7.5};
  const std::string line = metrics_json_line(m);
  CHECK(line.find("\"step\":3") == 1);
  CHECK(line.find("\"lr\"") < line.find("\"rec\""));
  CHECK(line.find("\"grad_norm\"") < line.find("\"wall_ms\""));
  CHECK(line.find('\n') == std::string::npos);
}

TEST_CASE("two pretraining runs with identical seeds give identical metric streams") {
  Dataset ds{tiny_spec(), generate_samples(tiny_spec())};
  GeoMimModel a(tiny_model(), 9), b(tiny_model(), 9);
  Pretrainer ta(a, ds, tiny_train()), tb(b, ds, tiny_train());
  for (int s = 1; s <= 3; ++s) {
    StepMetrics ma = ta.step(), mb = tb.step();
    CHECK(ma.step == s);
    CHECK(ma.lr == mb.lr);
    CHECK(ma.rec == mb.rec);
    CHECK(ma.depth == mb.depth);
    CHECK(ma.total == mb.total);
    CHECK(ma.grad_norm == mb.grad_norm);
    CHECK(std::isfinite(ma.total));
    CHECK(ma.total == doctest::Approx(ma.rec + 0.01 * ma.depth).epsilon(1e-12));
  }
  CHECK(ta.rng_state() == tb.rng_state());
}

TEST_CASE("pretrainer rejects a dataset that does not match the model") {
  Dataset ds{tiny_spec(1), generate_samples(tiny_spec(1))};
  ModelConfig mc = tiny_model();
  mc.dim = 16;
  GeoMimModel m(mc, 0);
  CHECK_THROWS_AS(Pretrainer(m, ds, tiny_train()), std::invalid_argument);
}

TEST_CASE("non-finite loss aborts with intermediate norms") {
  Dataset ds{tiny_spec(1), generate_samples(tiny_spec(1))};
  ds.samples[0].teacher.grid.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
  GeoMimModel m(tiny_model(), 0);
  Pretrainer t(m, ds, tiny_train());
  try {
    t.step();
    FAIL("expected NumericAbort");
  } catch (const NumericAbort& e) {
    CHECK(e.diagnostics().count("teacher") == 1);
    CHECK(e.diagnostics().count("bev") == 1);
    CHECK(std::isfinite(e.diagnostics().at("bev")));
  }
}

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
  Dataset ds{tiny_spec(2), generate_samples(tiny_spec(2))};
  GeoMimModel m(tiny_model(), 4);
  Pretrainer t(m, ds, tiny_train());
  t.step();
  const fs::path a = scratch("ckpt_a"), b = scratch("ckpt_b");
  save_checkpoint(a, m, {config_hash(m.config()), 1, t.rng_state(), 4});

  GeoMimModel fresh(tiny_model(), 99);
  CheckpointMeta meta = load_checkpoint(a, fresh);
  CHECK(meta.step == 1);
  CHECK(meta.model_seed == 4u);
  CHECK(meta.rng_state == t.rng_state());
  save_checkpoint(b, fresh, meta);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    ++files;
  }
  CHECK(files == m.parameters().size() + 1);
  CHECK(checkpoint_model_config(a).dim == 8);
  for (const auto& p : load_checkpoint_tensors(a)) CHECK(p.name.rfind("encoder.", 0) == 0);

  ModelConfig other = tiny_model();
  other.depth_bins = 8;
  GeoMimModel mismatch(other, 0);
  CHECK_THROWS(load_checkpoint(a, mismatch));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("config hash depends on the model config") {
  ModelConfig a = tiny_model(), b = tiny_model();
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16u);
  b.heads = 4;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("bce_with_logits closed form and gradient") {
  Tensor z = Tensor::from({2}, {0.0, 2.0});
  Tensor y = Tensor::from({2}, {1.0, 0.0});
  const double expect = (std::log(2.0) + (2.0 + std::log1p(std::exp(-2.0)))) / 2;
  CHECK(bce_with_logits(z, y).item() == doctest::Approx(expect).epsilon(1e-14));
  CHECK(std::isfinite(bce_with_logits(Tensor::from({1}, {-800.0}), Tensor::from({1}, {1.0})).item()));
  CHECK(grad_check([&](const Tensor& x) { return bce_with_logits(x, y); },
                   Tensor::from({2}, {0.3, -1.2})) < 1e-4);
}

TEST_CASE("probe with 0 steps equals probe with lr = 0") {
  const auto train = generate_samples(tiny_spec(2));
  DatasetSpec es = tiny_spec(2);
  es.seed = 2;
  const auto eval = generate_samples(es);
  ProbeConfig zero_steps;
  zero_steps.steps = 0;
  ProbeConfig zero_lr;
  zero_lr.steps = 3;
  zero_lr.lr = 0.0;
  const BevGridSpec bev = tiny_spec().bev;
  ProbeMetrics a = probe_finetune(tiny_model(), 0, std::nullopt, train, eval, bev, zero_steps);
  ProbeMetrics b = probe_finetune(tiny_model(), 0, std::nullopt, train, eval, bev, zero_lr);
  CHECK(a.bev_occupancy_loss == b.bev_occupancy_loss);
  CHECK(a.iou == b.iou);
  CHECK(a.train_losses.empty());
  CHECK(b.train_losses.size() == 3u);
  CHECK(a.iou >= 0.0);
  CHECK(a.iou <= 1.0);
}

TEST_CASE("probe training lowers the training loss and rejects bad encoder weights") {
  const auto train = generate_samples(tiny_spec(2));
  ProbeConfig cfg;
  cfg.steps = 20;
  ProbeMetrics m = probe_finetune(tiny_model(), 0, std::nullopt, train, train, tiny_spec().bev, cfg);
  REQUIRE(m.train_losses.size() == 20u);
  CHECK(std::isfinite(m.bev_occupancy_loss));

  GeoMimModel other_model([] {
    ModelConfig c = tiny_model();
    c.dim = 16;
    return c;
  }(), 0);
  CHECK_THROWS(probe_finetune(tiny_model(), 0, other_model.encoder_parameters(), train, train,
                              tiny_spec().bev, cfg));
}
