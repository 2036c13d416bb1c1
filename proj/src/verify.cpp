#include "geomim/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "geomim/loss.hpp"
#include "geomim/lss.hpp"
#include "geomim/masking.hpp"
#include "geomim/ops.hpp"

namespace geomim {

namespace {

constexpr double kPrimitiveTolerance = 1e-4;
constexpr double kPipelineTolerance = 1e-3;

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

/// Scalar probe of a tensor-valued function: sum(f(x) * W) for a fixed random W.
std::function<Tensor(const Tensor&)> weighted(std::function<Tensor(const Tensor&)> f,
                                              Shape out_shape, std::mt19937_64& rng) {
  Tensor w = uniform(std::move(out_shape), rng);
  return [f = std::move(f), w](const Tensor& x) { return sum(mul(f(x), w)); };
}

CheckResult make_check(std::string module, std::string name, double value, double tolerance,
                       std::string detail = {}) {
  return {std::move(module), std::move(name), value, tolerance, value <= tolerance,
          std::move(detail)};
}

CheckResult make_grad_check(std::string module, std::string name, double value,
                            double tolerance) {
  CheckResult r = make_check(std::move(module), std::move(name), value, tolerance);
  r.grad_check = true;
  return r;
}

/// grad_check for a tensor held inside a model: perturbs it in place.
double param_grad_check(const std::function<Tensor()>& loss_fn, const Tensor& param,
                        double eps = 1e-5) {
  FiniteCheckGuard finite;
  Tape::current().clear();
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) {
    auto g = param.grad();
    analytic.assign(g.begin(), g.end());
  }
  Tape::current().clear();

  NoGradGuard no_grad;
  Tensor handle = param;
  auto values = handle.mutable_values();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + eps;
    const double up = loss_fn().item();
    values[i] = original - eps;
    const double down = loss_fn().item();
    values[i] = original;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

const Tensor& find_param(const ParamList& params, const std::string& name) {
  for (const auto& p : params) {
    if (p.name == name) return p.tensor;
  }
  throw std::invalid_argument("no parameter named " + name);
}

}  // namespace

std::vector<CheckResult> primitive_grad_checks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> out;
  auto check = [&](const std::string& name, std::function<Tensor(const Tensor&)> f, Shape in,
                   Shape result) {
    const double err = grad_check(weighted(std::move(f), std::move(result), rng), uniform(in, rng));
    out.push_back(make_grad_check("tensorcore", name, err, kPrimitiveTolerance));
  };

  const Tensor b = uniform({2, 3, 4}, rng);
  const Tensor row = uniform({4}, rng);
  check("add", [b](const Tensor& x) { return add(x, b); }, {2, 3, 4}, {2, 3, 4});
  check("add (broadcast operand)", [b](const Tensor& x) { return add(b, x); }, {3, 4}, {2, 3, 4});
  check("sub", [b](const Tensor& x) { return sub(b, x); }, {2, 3, 4}, {2, 3, 4});
  check("mul", [b](const Tensor& x) { return mul(x, b); }, {2, 3, 4}, {2, 3, 4});
  check("mul (broadcast operand)", [b](const Tensor& x) { return mul(b, x); }, {4}, {2, 3, 4});
  check("scale", [](const Tensor& x) { return scale(x, -1.7); }, {5}, {5});
  const Tensor w = uniform({4, 5}, rng);
  check("matmul (left)", [w](const Tensor& x) { return matmul(x, w); }, {2, 3, 4}, {2, 3, 5});
  check("matmul (right)", [b](const Tensor& x) { return matmul(b, x); }, {4, 5}, {2, 3, 5});
  const Tensor bw = uniform({2, 4, 5}, rng);
  check("matmul (batched)", [bw](const Tensor& x) { return matmul(x, bw); }, {2, 3, 4}, {2, 3, 5});
  check("transpose", [](const Tensor& x) { return transpose(x, 0, 2); }, {2, 3, 4}, {4, 3, 2});
  check("reshape", [](const Tensor& x) { return reshape(x, {6, 4}); }, {2, 3, 4}, {6, 4});
  check("slice", [](const Tensor& x) { return slice(x, 1, 1, 2); }, {2, 3, 4}, {2, 2, 4});
  check("concat", [b](const Tensor& x) { return concat({b, x}, 1); }, {2, 2, 4}, {2, 5, 4});
  check("softmax (last axis)", [](const Tensor& x) { return softmax(x, 2); }, {2, 3, 4}, {2, 3, 4});
  check("softmax (middle axis)", [](const Tensor& x) { return softmax(x, 1); }, {2, 3, 4},
        {2, 3, 4});
  const Tensor gamma = uniform({4}, rng, 0.5, 1.5);
  check("layer_norm (input)", [gamma, row](const Tensor& x) { return layer_norm(x, gamma, row); },
        {2, 3, 4}, {2, 3, 4});
  check("layer_norm (gamma)", [b, row](const Tensor& x) { return layer_norm(b, x, row); }, {4},
        {2, 3, 4});
  check("layer_norm (beta)", [b, gamma](const Tensor& x) { return layer_norm(b, gamma, x); }, {4},
        {2, 3, 4});
  check("gelu", [](const Tensor& x) { return gelu(x); }, {8}, {8});
  check("sigmoid", [](const Tensor& x) { return sigmoid(x); }, {8}, {8});
  check("sum", [](const Tensor& x) { return sum(x); }, {2, 3}, {});
  check("sum (axis)", [](const Tensor& x) { return sum(x, 1); }, {2, 3, 4}, {2, 4});
  check("mean", [](const Tensor& x) { return mean(x); }, {2, 3}, {});
  check("mean (axis)", [](const Tensor& x) { return mean(x, 0); }, {2, 3, 4}, {3, 4});
  const std::vector<std::size_t> idx{1, 1, 3, 0, 3};
  const Tensor target = uniform({4, 2}, rng);
  check("scatter_add (values)",
        [idx, target](const Tensor& x) { return scatter_add(target, idx, x); }, {5, 2}, {4, 2});
  const Tensor vals = uniform({5, 2}, rng);
  check("scatter_add (target)", [idx, vals](const Tensor& x) { return scatter_add(x, idx, vals); },
        {4, 2}, {4, 2});
  check("gather", [idx](const Tensor& x) { return gather(x, idx); }, {4, 2}, {5, 2});
  check("softmax+matmul chain",
        [w](const Tensor& x) { return softmax(matmul(x, w), 1); }, {3, 4}, {3, 5});
  return out;
}

TinyProblem make_tiny_problem(std::uint64_t seed) {
  DatasetSpec spec;
  spec.views = 2;
  spec.height = 32;
  spec.width = 32;
  spec.focal = 20.0;
  spec.bev = BevGridSpec::square(8.0, 8);
  spec.teacher_channels = 8;
  spec.seed = seed;
  spec.scenes = 1;

  ModelConfig mc;
  mc.views = 2;
  mc.image_height = 32;
  mc.image_width = 32;
  mc.patch = 16;
  mc.dim = 8;
  mc.heads = 2;
  mc.mlp_ratio = 2;
  mc.encoder_depth = 1;
  mc.decoder_depth = 8;
  mc.depth_bins = 4;

  Sample sample = make_sample(spec, 0);
  PreparedSample prepared = prepare_sample(sample, mc, spec.bev);
  MaskPattern pattern = sample_mask(seed + 1, mc.rows(), mc.cols(), mc.views, 0.5);
  TinyProblem p{mc, GeoMimModel(mc, seed), std::move(sample), std::move(prepared),
                std::move(pattern), TrainConfig{}};
  p.train_cfg.total_steps = 10;
  p.train_cfg.warmup_steps = 1;
  return p;
}

std::vector<CheckResult> pipeline_grad_checks(std::uint64_t seed) {
  TinyProblem p = make_tiny_problem(seed);
  std::vector<CheckResult> out;
  auto loss_fn = [&p] {
    return forward_losses(p.model, p.sample, p.prepared, p.pattern, p.train_cfg).losses.total;
  };
  const ParamList params = p.model.parameters();
  // One tensor per stage, so every stage's backward lies on some checked path.
  for (const std::string name :
       {"encoder.patch_embed.bias", "encoder.blocks.0.norm1.gamma", "encoder.norm.beta",
        "mask_token", "decoder.shared.1.cva.view_embed", "decoder.shared.0.attn.proj.bias",
        "decoder.sem.1.cva.view_embed", "decoder.geo.1.cva.block.fc2.bias", "decoder.sem_head.bias",
        "decoder.geo_head.weight", "decoder.camera_gate.fc1.weight"}) {
    const double err = param_grad_check(loss_fn, find_param(params, name));
    out.push_back(make_grad_check("pipeline", "d loss / d " + name, err, kPipelineTolerance));
  }

  // The camera gate alone, with respect to its own weights.
  std::mt19937_64 rng(seed + 7);
  const CameraGate& gate = p.model.decoder().camera_gate;
  const Tensor features = uniform({2, 4, 8}, rng);
  const Tensor w = uniform({2, 4, 8}, rng);
  auto gate_loss = [&] { return sum(mul(gate.forward(features, p.sample.rig), w)); };
  out.push_back(make_grad_check("model", "camera gate d/d fc1.weight",
                           param_grad_check(gate_loss, gate.fc1.weight), kPrimitiveTolerance));
  out.push_back(make_grad_check("model", "camera gate d/d fc2.weight",
                           param_grad_check(gate_loss, gate.fc2.weight), kPrimitiveTolerance));
  return out;
}

namespace {

std::vector<CheckResult> lss_checks(const VerifyOptions& options) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(11);

  // Brute-force equivalence on random small instances with random frustums.
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2, b = 3, h = 2, w = 2, c = 2;
    FrustumPoints fr;
    fr.views = n;
    fr.bins = b;
    fr.rows = h;
    fr.cols = w;
    std::uniform_real_distribution<double> pos(-5.0, 5.0);
    fr.points.resize(static_cast<std::size_t>(n) * b * h * w);
    for (auto& pt : fr.points) pt = Eigen::Vector3d(pos(rng), pos(rng), pos(rng));
    const BevGridSpec spec = BevGridSpec::square(4.0, 4);
    Tensor fs = uniform({2, 2, 2, 2}, rng);
    Tensor d = softmax(uniform({2, 3, 2, 2}, rng), 1);
    Tensor grid = lift_splat(fs, d, fr, spec).grid;
    std::vector<double> ref(static_cast<std::size_t>(c) * spec.nx * spec.ny, 0.0);
    for (int vn = 0; vn < n; ++vn)
      for (int vb = 0; vb < b; ++vb)
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) {
            const Eigen::Vector3d& pt = fr.at(vn, vb, i, j);
            const double cx = std::floor((pt.x() - spec.x_min) / spec.cell_x());
            const double cy = std::floor((pt.y() - spec.y_min) / spec.cell_y());
            if (pt.x() < spec.x_min || pt.x() >= spec.x_max || pt.y() < spec.y_min ||
                pt.y() >= spec.y_max)
              continue;
            const double dv = d[((vn * b + vb) * h + i) * w + j];
            for (int ch = 0; ch < c; ++ch) {
              ref[(ch * spec.nx + static_cast<int>(cx)) * spec.ny + static_cast<int>(cy)] +=
                  dv * fs[((vn * c + ch) * h + i) * w + j];
            }
          }
    for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(grid[k] - ref[k]));
  }
  out.push_back(make_check("lss", "brute-force equivalence (20 instances)", worst, 1e-12));

  // Mass conservation on a real rig whose frustum lies entirely in the grid.
  const CameraRig rig = ring_rig(4, 64, 112, 80.0);
  const DepthBins bins(1.0, 5.0, 8);
  const FrustumPoints frustum = make_frustum(4, 7, bins, rig, 16);
  SplatPlan plan = make_splat_plan(frustum, BevGridSpec::square(8.0, 32));
  if (options.corrupt_splat && !plan.kept_points.empty()) {
    plan.kept_points.pop_back();
    plan.cells.pop_back();
  }
  Tensor fs = uniform({4, 5, 4, 7}, rng);
  Tensor d = softmax(uniform({4, 8, 4, 7}, rng), 1);
  Tensor grid = lift_splat(fs, d, plan).grid;
  double conservation = 0.0;
  const std::size_t plane = 4 * 7, cells = plan.spec.cells();
  for (std::size_t ch = 0; ch < 5; ++ch) {
    double bev_sum = 0.0, feat_sum = 0.0;
    for (std::size_t k = 0; k < cells; ++k) bev_sum += grid[ch * cells + k];
    for (std::size_t v = 0; v < 4; ++v)
      for (std::size_t q = 0; q < plane; ++q) feat_sum += fs[(v * 5 + ch) * plane + q];
    conservation = std::max(conservation, std::abs(bev_sum - feat_sum));
  }
  out.push_back(make_check("lss", "mass conservation (all points in extent)", conservation, 1e-9,
                           options.corrupt_splat ? "splat plan corrupted by test hook" : ""));

  // Gradients of the splat w.r.t. both inputs.
  FrustumPoints small = make_frustum(2, 2, DepthBins(1.0, 5.0, 3), ring_rig(2, 32, 32, 20.0), 16);
  const BevGridSpec spec = BevGridSpec::square(6.0, 6);
  Tensor d_fixed = softmax(uniform({2, 3, 2, 2}, rng), 1);
  Tensor f_fixed = uniform({2, 2, 2, 2}, rng);
  Tensor wgrid = uniform({2, 6, 6}, rng);
  const double gf = grad_check(
      [&](const Tensor& x) { return sum(mul(lift_splat(x, d_fixed, small, spec).grid, wgrid)); },
      f_fixed);
  const double gd = grad_check(
      [&](const Tensor& x) { return sum(mul(lift_splat(f_fixed, x, small, spec).grid, wgrid)); },
      d_fixed);
  out.push_back(make_grad_check("lss", "grad check d/d F^s", gf, kPrimitiveTolerance));
  out.push_back(make_grad_check("lss", "grad check d/d D", gd, kPrimitiveTolerance));
  return out;
}

std::vector<CheckResult> cva_checks() {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(5);
  const int n = 4, h = 3, w = 7, c = 8;
  CrossViewBlock block(n, c, 2, 2, rng);
  Tensor x = uniform({4, 21, 8}, rng);

  // Forward locality: perturbing a row-0 token leaves other rows bit-identical.
  Tensor y0 = block.forward(x, h, w);
  Tensor xp = x.clone();
  xp.mutable_values()[(1 * h * w + 3) * c + 2] += 0.5;  // view 1, row 0, col 3
  Tensor y1 = block.forward(xp, h, w);
  std::size_t changed_elsewhere = 0;
  for (int v = 0; v < n; ++v)
    for (int t = w; t < h * w; ++t)
      for (int k = 0; k < c; ++k) {
        const std::size_t i = (static_cast<std::size_t>(v) * h * w + t) * c + k;
        changed_elsewhere += y0[i] != y1[i];
      }
  out.push_back(make_check("cva", "forward locality (changed outputs outside row)",
                           static_cast<double>(changed_elsewhere), 0.0));

  // Gradient locality: d(row r outputs)/d(other-row inputs) is exactly zero.
  double leaked = 0.0;
  for (int r = 0; r < h; ++r) {
    Tape::current().clear();
    Tensor xi = x.clone();
    xi.set_requires_grad(true);
    std::vector<double> m(x.numel(), 0.0);
    for (int v = 0; v < n; ++v)
      for (int j = 0; j < w; ++j)
        for (int k = 0; k < c; ++k) m[(static_cast<std::size_t>(v) * h * w + r * w + j) * c + k] = 1.0;
    Tensor loss = sum(mul(block.forward(xi, h, w), Tensor::from({4, 21, 8}, m)));
    backward(loss);
    auto g = xi.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t row = (i / c) % (h * w) / w;
      if (static_cast<int>(row) != r) leaked = std::max(leaked, std::abs(g[i]));
    }
  }
  Tape::current().clear();
  out.push_back(make_check("cva", "gradient locality (max cross-row |grad|)", leaked, 0.0));

  // Counted FLOP scaling under row doubling.
  const auto c1 = measure_attention(6, 4, 7, 16, 2, false);
  const auto c2 = measure_attention(6, 8, 7, 16, 2, false);
  const auto g1 = measure_attention(6, 4, 7, 16, 2, true);
  const auto g2 = measure_attention(6, 8, 7, 16, 2, true);
  const double cva_ratio = static_cast<double>(c2.attention_flops) / c1.attention_flops;
  const double global_ratio = static_cast<double>(g2.attention_flops) / g1.attention_flops;
  out.push_back(make_check("cva", "CVA attention FLOP ratio - 2 (rows 4->8)",
                           std::abs(cva_ratio - 2.0), 0.0));
  out.push_back(make_check("cva", "global attention FLOP ratio - 4 (rows 4->8)",
                           std::abs(global_ratio - 4.0), 0.0));
  return out;
}

std::vector<CheckResult> masking_checks() {
  std::vector<CheckResult> out;
  for (double ratio : {0.25, 0.5, 0.75}) {
    const int rows = 4, cols = 7, views = 6;
    const long expected = std::lround(ratio * rows * cols);
    std::size_t wrong = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
      const MaskPattern p = sample_mask(s, rows, cols, views, ratio);
      for (int v = 0; v < views; ++v) wrong += static_cast<long>(p.masked_count(v)) != expected;
    }
    char name[64];
    std::snprintf(name, sizeof name, "ratio %.2f: views with wrong masked count", ratio);
    out.push_back(make_check("masking", name, static_cast<double>(wrong), 0.0));
  }
  return out;
}

std::vector<CheckResult> schedule_and_loss_checks() {
  std::vector<CheckResult> out;
  TrainConfig cfg;
  cfg.total_steps = 1000;
  out.push_back(make_check("trainer", "|lr(500) - 2e-4|", std::abs(lr_schedule(500, cfg) - 2e-4), 1e-18));
  out.push_back(make_check("trainer", "|lr(250) - 1e-4|", std::abs(lr_schedule(250, cfg) - 1e-4), 1e-18));
  out.push_back(make_check("trainer", "|lr(total)|", std::abs(lr_schedule(1000, cfg)), 1e-18));
  out.push_back(make_check("loss", "|alpha default - 0.01|", std::abs(kDefaultAlpha - 0.01), 0.0));

  // Uniform probabilities against a one-hot target at B=16.
  DepthTarget t;
  t.views = t.rows = t.cols = 1;
  t.bins = 16;
  std::vector<double> hot(16, 0.0);
  hot[5] = 1.0;
  t.one_hot = Tensor::from({1, 16, 1, 1}, hot);
  t.valid = {1};
  const double value = depth_loss(Tensor::full({1, 16, 1, 1}, 1.0 / 16.0), t).value.item();
  const double closed = (-std::log(1.0 / 16.0) - 15.0 * std::log(15.0 / 16.0)) / 16.0;
  out.push_back(make_check("loss", "|uniform BCE - closed form|", std::abs(value - closed), 1e-12));
  out.push_back(make_check("loss", "|uniform BCE - 0.23379|", std::abs(value - 0.23379), 1e-5));

  // AdamW at lr = 0 leaves parameters untouched.
  Tensor p = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
  Tape::current().clear();
  backward(sum(mul(p, p)));
  AdamW opt(0.9, 0.999, 1e-8, 0.01);
  opt.step({{"p", p}}, 0.0);
  const double moved = std::abs(p[0] - 0.5) + std::abs(p[1] + 1.0) + std::abs(p[2] - 2.0);
  out.push_back(make_check("trainer", "AdamW lr=0 parameter change", moved, 0.0));
  return out;
}

}  // namespace

std::vector<CheckResult> run_verify_suite(const VerifyOptions& options) {
  std::vector<CheckResult> all = primitive_grad_checks();
  for (auto part : {pipeline_grad_checks(), lss_checks(options), cva_checks(), masking_checks(),
                    schedule_and_loss_checks()}) {
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

std::string format_report(const std::vector<CheckResult>& results) {
  std::size_t width = 5;
  for (const auto& r : results) width = std::max(width, r.module.size() + r.name.size() + 3);
  std::ostringstream out;
  char line[512];
  std::snprintf(line, sizeof line, "%-*s %12s %12s  %s\n", static_cast<int>(width), "check",
                "value", "tolerance", "status");
  out << line;
  std::map<std::string, double> worst;
  for (const auto& r : results) {
    const std::string label = r.module + " / " + r.name;
    std::snprintf(line, sizeof line, "%-*s %12.3e %12.3e  %s%s%s\n", static_cast<int>(width),
                  label.c_str(), r.value, r.tolerance, r.passed ? "PASS" : "FAIL",
                  r.detail.empty() ? "" : "  ", r.detail.c_str());
    out << line;
    if (r.grad_check) {
      worst[r.module] = std::max(worst[r.module], r.value);
    }
  }
  out << "\nmax grad-check error per module:\n";
  for (const auto& [module, err] : worst) {
    std::snprintf(line, sizeof line, "  %-12s %.3e\n", module.c_str(), err);
    out << line;
  }
  const auto failed = std::count_if(results.begin(), results.end(),
                                    [](const CheckResult& r) { return !r.passed; });
  out << "\n" << results.size() - failed << "/" << results.size() << " checks passed\n";
  return out.str();
}

AttentionCost measure_attention(int views, int rows, int cols, int dim, int heads, bool global,
                                int repeats) {
  std::mt19937_64 rng(3);
  const std::size_t tokens = static_cast<std::size_t>(rows) * cols;
  Tensor x = uniform({static_cast<std::size_t>(views), tokens, static_cast<std::size_t>(dim)}, rng);
  CrossViewBlock cva;
  TransformerBlock plain;
  if (global) {
    plain = TransformerBlock(dim, heads, 4, rng);
  } else {
    cva = CrossViewBlock(views, dim, heads, 4, rng);
  }
  NoGradGuard no_grad;
  AttentionCost cost;
  cost.wall_ms = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, repeats); ++r) {
    reset_flop_tally();
    const auto start = std::chrono::steady_clock::now();
    if (global) {
      (void)plain.forward(reshape(x, {1, views * tokens, static_cast<std::size_t>(dim)}));
    } else {
      (void)cva.forward(x, rows, cols);
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    cost.wall_ms = std::min(cost.wall_ms, ms);
    cost.attention_flops = flop_tally().attention;
    cost.total_flops = flop_tally().total;
  }
  return cost;
}

}  // namespace geomim
