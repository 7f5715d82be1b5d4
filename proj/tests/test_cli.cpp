#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "wslc/checkpoint.hpp"
#include "wslc/cli.hpp"
#include "wslc/config.hpp"
#include "wslc/curriculum.hpp"
#include "wslc/detect.hpp"
#include "wslc/pipeline.hpp"

using namespace wslc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

const char* kTiny = R"({
  "dataset": {"num_categories": 3, "easy_per_class": 12, "hard_per_class": 16, "test_per_class": 6},
  "stage1": {"batch_size": 16, "total_iters": 30, "lr_step": 20},
  "stage2": {"batch_size": 16, "total_iters": 20, "lr_step": 14},
  "localize": {"seeds_per_class": 4, "k": 5},
  "detect": {"epochs": 5}
})";

}  // namespace

TEST_CASE("eval-det on the hand-built case") {
  const auto dir = test::temp_dir("cli_evaldet");
  // Two boxes in one image; ranked TP, FP, TP.
  const std::vector<GroundTruth> gt{{0, 0, {0, 0, 10, 10, 0}}, {0, 0, {20, 20, 30, 30, 0}}};
  const std::vector<Detection> dets{{0, 0, {0, 0, 10, 10, 0.9}}, {0, 0, {40, 40, 50, 50, 0.8}},
                                    {0, 0, {20, 20, 30, 30, 0.7}}};
  write_ground_truth(dir / "gt.csv", gt);
  write_detections(dir / "det.csv", dets);
  const Run r = run({"eval-det", "--detections", (dir / "det.csv").string(), "--ground-truth",
                     (dir / "gt.csv").string(), "--out", (dir / "eval").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("mAP 0.8333") != std::string::npos);
  CHECK(r.out.find("AP 0.8333") != std::string::npos);
  CHECK(slurp(dir / "eval" / "eval.csv") == "class,AP,num_gt,num_det\n0,0.833333,2,3\nmAP,0.833333,2,3\n");
}

TEST_CASE("usage and failure exit codes") {
  const auto dir = test::temp_dir("cli_errors");
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"no-such-command"}).code == kExitUsage);
  CHECK(run({"gen-data", "--bogus"}).code == kExitUsage);
  const Run nocfg = run({"gen-data"});
  CHECK(nocfg.code == kExitUsage);
  CHECK(nocfg.err.find("--config") != std::string::npos);
  CHECK(run({"gen-data", "--config", "x.json", "--threads", "0"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);

  const auto bad = write_config(dir, R"({"dataset": {"noise": {"flip_rate": 1.2}}})");
  const Run b = run({"gen-data", "--config", bad.string()});
  CHECK(b.code == kExitConfig);
  CHECK(b.err.find("flip_rate") != std::string::npos);
  CHECK(run({"gen-data", "--config", (dir / "missing.json").string()}).code == kExitConfig);

  // Inputs of a later stage do not exist yet.
  const auto ok = write_config(dir, kTiny);
  const Run missing = run({"build-graph", "--config", ok.string(), "--out", (dir / "out").string()});
  CHECK(missing.code == kExitRuntime);
  CHECK(missing.err.find("run gen-data first") != std::string::npos);
  CHECK(run({"eval-det", "--detections", (dir / "none.csv").string(), "--ground-truth", "g.csv"}).code ==
        kExitRuntime);
}

TEST_CASE("a locked output directory is refused") {
  const auto dir = test::temp_dir("cli_lock");
  const auto cfg = write_config(dir, kTiny);
  fs::create_directories(dir / "out");
  std::ofstream(dir / "out" / ".wslc.lock") << "1\n";
  const Run r = run({"gen-data", "--config", cfg.string(), "--out", (dir / "out").string()});
  CHECK(r.code == kExitRuntime);
  CHECK(r.err.find("locked") != std::string::npos);
  fs::remove(dir / "out" / ".wslc.lock");
  CHECK(run({"gen-data", "--config", cfg.string(), "--out", (dir / "out").string()}).code == kExitOk);
  CHECK(!fs::exists(dir / "out" / ".wslc.lock"));
}

TEST_CASE("build-graph with a perfect classifier gives the identity") {
  const auto dir = test::temp_dir("cli_graph");
  const auto cfg_path = write_config(dir, R"({
    "dataset": {"num_categories": 4, "easy_per_class": 10, "hard_per_class": 4, "test_per_class": 2},
    "stage1": {"batch_size": 16, "total_iters": 120, "lr_step": 100}
  })");
  const std::string out = (dir / "out").string();
  REQUIRE(run({"gen-data", "--config", cfg_path.string(), "--out", out}).code == kExitOk);
  REQUIRE(run({"train-initial", "--config", cfg_path.string(), "--out", out}).code == kExitOk);

  // Scaling the last layer keeps every argmax and pushes the other probabilities to exactly zero.
  const PipelineConfig cfg = load_config(cfg_path);
  const fs::path ckpt = dir / "out" / "models" / "stage1.ckpt";
  Model m = load_checkpoint(ckpt, cfg.model_spec());
  const auto easy_m = read_manifest(dir / "out" / "data" / "easy.csv");
  const auto easy = labeled_view(easy_m, materialize(easy_m, cfg.dataset.image_size), false);
  REQUIRE(accuracy(m, easy) == 1.0);
  for (auto& p : m.params)
    if (p.name.rfind("fc2.", 0) == 0)
      for (auto& v : p.value.values()) v *= 1e4f;
  save_checkpoint(ckpt, m);

  const Run r = run({"build-graph", "--config", cfg_path.string(), "--out", out});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("build-graph:") != std::string::npos);
  const RelationshipGraph g = read_graph(dir / "out" / "graph" / "graph.txt");
  CHECK(g.dense() == Eigen::MatrixXd::Identity(4, 4));
  for (int j = 0; j < 4; ++j) CHECK(g.row(j).size() == 1);
}

TEST_CASE("full pipeline is deterministic across runs and thread counts") {
  const auto dir = test::temp_dir("cli_determinism");
  const auto cfg = write_config(dir, kTiny);
  std::vector<std::string> outs;
  for (const char* threads : {"1", "1", "3"}) {
    const std::string out = (dir / ("out" + std::to_string(outs.size()))).string();
    const Run r = run({"full-pipeline", "--config", cfg.string(), "--seed", "7", "--threads", threads, "--out", out});
    REQUIRE(r.code == kExitOk);
    outs.push_back(out);
  }
  for (const char* f : {"report/metrics.csv", "report/summary.json", "report/summary.txt", "detect/detections.csv",
                        "localize/positives.csv", "graph/graph.txt", "models/graph.ckpt"}) {
    CAPTURE(f);
    const std::string a = slurp(fs::path(outs[0]) / f);
    CHECK(!a.empty());
    CHECK(slurp(fs::path(outs[1]) / f) == a);
    CHECK(slurp(fs::path(outs[2]) / f) == a);
  }
  // Inputs are left alone and everything lands under the output directory.
  CHECK(slurp(cfg) == kTiny);
  CHECK(load_config(fs::path(outs[0]) / "config.json").seed == 7);
  const std::string summary = slurp(fs::path(outs[0]) / "report/summary.txt");
  for (const auto& stage : pipeline_stages())
    if (stage != "report") CHECK(summary.find(stage + "\n") != std::string::npos);
}
