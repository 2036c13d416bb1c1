#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "geomim/config.hpp"
#include "geomim/dataset.hpp"
#include "geomim/scenegen.hpp"
#include "geomim/serialize.hpp"
#include "geomim/trainer.hpp"

using namespace geomim;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "geomim_test_cli";

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + GEOMIM_CLI_PATH + "\" " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t na = 0, nb = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++na;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) na += 0, nb += e.is_regular_file();
  return na == nb;
}

/// Small geometry so every command runs in well under a second.
fs::path tiny_config() {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / "tiny.ini";
  std::ofstream out(p);
  out << "[scenegen]\nviews = 2\nheight = 32\nwidth = 32\nfocal = 20\nteacher_channels = 8\n"
         "scenes = 3\n\n[lss]\nnx = 8\nny = 8\n\n"
         "[model]\ndim = 8\nheads = 2\nmlp_ratio = 2\nencoder_depth = 1\ndepth_bins = 4\n\n"
         "[trainer]\nwarmup_steps = 0\n\n[probe]\nsteps = 2\nhidden = 4\n";
  return p;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("gen-data writes the requested scenes deterministically") {
  const fs::path cfg = tiny_config();
  const fs::path a = kRoot / "gen_a", b = kRoot / "gen_b";
  fs::remove_all(a);
  fs::remove_all(b);
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(a) + " --scenes 4 --seed 3 > /dev/null") == 0);
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(b) + " --scenes 4 --seed 3 > /dev/null") == 0);
  CHECK(same_tree(a, b));
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("samples").size() == 4u);
  int dirs = 0;
  for (const auto& e : fs::directory_iterator(a)) dirs += e.is_directory();
  CHECK(dirs == 4);
  const auto rig = nlohmann::json::parse(slurp(a / manifest["samples"][0].get<std::string>() / "rig.json"));
  CHECK(rig.size() == 2u);
}

TEST_CASE("gen-data --views overrides the config") {
  const fs::path cfg = tiny_config();
  const fs::path a = kRoot / "gen_views";
  fs::remove_all(a);
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(a) + " --scenes 1 --views 3 > /dev/null") == 0);
  CHECK(nlohmann::json::parse(slurp(a / "sample_0000" / "rig.json")).size() == 3u);
}

TEST_CASE("gen-data into an unwritable path fails with exit 3") {
  const fs::path blocker = kRoot / "blocker";
  fs::create_directories(kRoot);
  std::ofstream(blocker) << "file";
  CHECK(run("gen-data --config " + q(tiny_config()) + " --out " + q(blocker / "sub") +
            " --scenes 1 2> /dev/null") == 3);
}

TEST_CASE("GEOMIM_SEED is a fallback seed") {
  const fs::path cfg = tiny_config();
  const fs::path env = kRoot / "seed_env", flag = kRoot / "seed_flag", other = kRoot / "seed_other";
  for (const auto& p : {env, flag, other}) fs::remove_all(p);
  REQUIRE(std::system(("GEOMIM_SEED=11 \"" + std::string(GEOMIM_CLI_PATH) + "\" gen-data --config " +
                       q(cfg) + " --out " + q(env) + " --scenes 1 > /dev/null")
                          .c_str()) == 0);
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(flag) + " --scenes 1 --seed 11 > /dev/null") == 0);
  REQUIRE(std::system(("GEOMIM_SEED=11 \"" + std::string(GEOMIM_CLI_PATH) + "\" gen-data --config " +
                       q(cfg) + " --out " + q(other) + " --scenes 1 --seed 12 > /dev/null")
                          .c_str()) == 0);
  CHECK(same_tree(env, flag));
  CHECK_FALSE(same_tree(env, other));
  CHECK(read_manifest(other).seed == 12u);
}

TEST_CASE("pretrain: steps 0 checkpoint equals the initialization; metrics and config echo") {
  const fs::path cfg = tiny_config();
  const fs::path data = kRoot / "pre_data", run0 = kRoot / "pre_run0", run3 = kRoot / "pre_run3";
  for (const auto& p : {data, run0, run3}) fs::remove_all(p);
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(data) + " --scenes 2 > /dev/null") == 0);
  REQUIRE(run("pretrain --config " + q(cfg) + " --data " + q(data) + " --out " + q(run0) +
              " --steps 0 --seed 5 > /dev/null") == 0);
  {
    RunConfig rc;
    rc.merge_file(cfg);
    GeoMimModel init(rc.model(2, 32, 32), 5);
    GeoMimModel loaded(rc.model(2, 32, 32), 77);
    load_checkpoint(run0 / "checkpoint", loaded);
    const auto a = init.parameters(), b = loaded.parameters();
    for (std::size_t k = 0; k < a.size(); ++k)
      CHECK(std::equal(a[k].tensor.values().begin(), a[k].tensor.values().end(),
                       b[k].tensor.values().begin()));
    CHECK(slurp(run0 / "metrics.jsonl").empty());
  }
  REQUIRE(run("pretrain --config " + q(cfg) + " --data " + q(data) + " --out " + q(run3) +
              " --steps 3 --trainer.checkpoint_every 2 --trainer.base_lr 0.001 > /dev/null") == 0);
  std::istringstream lines(slurp(run3 / "metrics.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("step") == ++n);
    for (const char* k : {"lr", "rec", "depth", "total", "grad_norm", "wall_ms"}) CHECK(j.contains(k));
  }
  CHECK(n == 3);
  CHECK(fs::exists(run3 / "checkpoint_step_000002" / "meta.json"));
  CHECK(fs::exists(run3 / "checkpoint" / "meta.json"));
  RunConfig echoed;
  echoed.merge_file(run3 / "config.ini");
  CHECK(echoed.get("trainer.base_lr") == "0.001");
  CHECK(echoed.get("trainer.total_steps") == "3");
  CHECK(echoed.get("model.dim") == "8");
}

TEST_CASE("pretrain with a NaN teacher exits 2 with a diagnostic dump") {
  const fs::path cfg = tiny_config();
  const fs::path data = kRoot / "nan_data", out = kRoot / "nan_run";
  for (const auto& p : {data, out}) fs::remove_all(p);
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(data) + " --scenes 1 > /dev/null") == 0);
  const fs::path teacher = data / "sample_0000" / "teacher.bin";
  NamedTensor t = load_tensor(teacher);
  Tensor bad = t.tensor.clone();
  bad.mutable_values()[0] = std::nan("");
  save_tensor(teacher, t.name, bad);
  CHECK(run("pretrain --config " + q(cfg) + " --data " + q(data) + " --out " + q(out) +
            " --steps 2 > /dev/null 2>&1") == 2);
  const auto diag = nlohmann::json::parse(slurp(out / "diagnostics.json"));
  CHECK(diag.at("norms").contains("teacher"));
}

TEST_CASE("usage errors exit 3") {
  CHECK(run("--no-such-flag > /dev/null 2>&1") == 3);
  CHECK(run("gen-data --out /tmp/x --bogus 1 > /dev/null 2>&1") == 3);
  CHECK(run("pretrain --data /nonexistent --out /tmp/x > /dev/null 2>&1") == 3);
  CHECK(run("gen-data --out " + q(kRoot / "bad_key") + " --trainer.nope 1 > /dev/null 2>&1") == 3);
  CHECK(run("--help > /dev/null") == 0);
}

TEST_CASE("verify exits 0; the corrupted splat hook makes it exit 1") {
  CHECK(run("verify > " + q(kRoot / "verify.txt")) == 0);
  const std::string report = slurp(kRoot / "verify.txt");
  CHECK(report.find("checks passed") != std::string::npos);
  CHECK(report.find("max grad-check error") != std::string::npos);
  CHECK(report.find("  tensorcore ") != std::string::npos);
  CHECK(report.find("  pipeline ") != std::string::npos);
  CHECK(run("verify --corrupt-splat > " + q(kRoot / "verify_bad.txt")) == 1);
  CHECK(slurp(kRoot / "verify_bad.txt").find("conservation") != std::string::npos);
}

TEST_CASE("bench-cva emits the CSV with exact FLOP ratios") {
  fs::create_directories(kRoot);
  REQUIRE(run("bench-cva --rows 2,4 --views 2 --cols 3 --dim 8 --heads 2 --repeats 1 > " +
              q(kRoot / "bench.csv")) == 0);
  std::istringstream in(slurp(kRoot / "bench.csv"));
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "kind,views,rows,cols,dim,tokens,attention_flops,total_flops,wall_ms");
  std::vector<std::pair<std::string, double>> rows;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind, field;
    std::getline(ls, kind, ',');
    for (int k = 0; k < 6; ++k) std::getline(ls, field, ',');
    rows.emplace_back(kind, std::stod(field));
  }
  REQUIRE(rows.size() == 4u);
  CHECK(rows[0].first == "cva");
  CHECK(rows[1].second / rows[0].second == 2.0);
  CHECK(rows[2].first == "global");
  CHECK(rows[3].second / rows[2].second == 4.0);
}

TEST_CASE("dump-recon writes the tensor set and PNGs; teacher matches the oracle") {
  const fs::path cfg = tiny_config();
  const fs::path data = kRoot / "dump_data", runs = kRoot / "dump_run", out = kRoot / "dump_out";
  for (const auto& p : {data, runs, out}) fs::remove_all(p);
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(data) + " --scenes 2 > /dev/null") == 0);
  REQUIRE(run("pretrain --config " + q(cfg) + " --data " + q(data) + " --out " + q(runs) +
              " --steps 1 > /dev/null") == 0);
  REQUIRE(run("dump-recon --checkpoint " + q(runs / "checkpoint") + " --sample " +
              q(data / "sample_0001") + " --out " + q(out) + " > /dev/null") == 0);
  std::set<std::string> bins, pngs;
  for (const auto& e : fs::directory_iterator(out)) {
    const auto name = e.path().filename().string();
    (e.path().extension() == ".bin" ? bins : pngs).insert(name);
  }
  CHECK(bins == std::set<std::string>{"fsem.bin", "depth.bin", "bev.bin", "teacher.bin"});
  CHECK(pngs.count("bev_c00.png") == 1);
  CHECK(pngs.count("depth_v1.png") == 1);
  CHECK(pngs.count("image_v0_c2.png") == 1);
  for (const auto& p : pngs) CHECK(p.size() > 4);
  CHECK(load_tensor(out / "bev.bin").tensor.shape() == Shape{8, 8, 8});
  CHECK(load_tensor(out / "fsem.bin").tensor.shape() == Shape{2, 8, 2, 2});
  CHECK(load_tensor(out / "depth.bin").tensor.shape() == Shape{2, 4, 2, 2});
  const DatasetSpec spec = read_manifest(data);
  const Sample s = make_sample(spec, 1);
  const Tensor teacher = load_tensor(out / "teacher.bin").tensor;
  CHECK(std::equal(teacher.values().begin(), teacher.values().end(),
                   s.teacher.grid.values().begin(), s.teacher.grid.values().end()));
  CHECK(run("dump-recon --checkpoint " + q(kRoot / "missing") + " --sample " +
            q(data / "sample_0001") + " --out " + q(out) + " > /dev/null 2>&1") == 3);
}

TEST_CASE("probe prints pretrained and control metrics") {
  const fs::path cfg = tiny_config();
  const fs::path data = kRoot / "probe_data", runs = kRoot / "probe_run";
  for (const auto& p : {data, runs}) fs::remove_all(p);
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(data) + " --scenes 2 > /dev/null") == 0);
  REQUIRE(run("pretrain --config " + q(cfg) + " --data " + q(data) + " --out " + q(runs) +
              " --steps 1 > /dev/null") == 0);
  REQUIRE(run("probe --config " + q(cfg) + " --train " + q(data) + " --eval " + q(data) +
              " --checkpoint " + q(runs / "checkpoint") + " > " + q(kRoot / "probe.json")) == 0);
  const auto j = nlohmann::json::parse(slurp(kRoot / "probe.json"));
  CHECK(j.contains("pretrained"));
  CHECK(j.contains("random_init"));
  CHECK(j["random_init"].contains("bev_occupancy_loss"));
  CHECK(j["pretrained"].contains("iou"));
}
