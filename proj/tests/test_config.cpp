#include <fstream>
#include <string>

#include "doctest.h"
#include "test_util.hpp"
#include "wslc/config.hpp"

using namespace wslc;

namespace {

std::string error_of(const std::string& text) {
  try {
    config_from_json(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("default config round trips") {
  const PipelineConfig c;
  const std::string text = config_to_json(c);
  CHECK(config_from_json(text) == c);
  CHECK(config_to_json(config_from_json(text)) == text);

  const auto dir = test::temp_dir("config");
  save_config(dir / "c.json", c);
  CHECK(load_config(dir / "c.json") == c);
}

TEST_CASE("every field survives a round trip") {
  PipelineConfig c;
  c.seed = 123456789012345ULL;
  c.output_dir = "runs/a b";
  c.dataset.num_categories = 5;
  c.dataset.image_size = 24;
  c.dataset.easy_per_class = 7;
  c.dataset.hard_per_class = 11;
  c.dataset.test_per_class = 3;
  c.dataset.noise = {0.1234567890123, 0.5, 0.05};
  c.dataset.folder = "/data/web";
  c.dataset.split_fractions = {0.7, 0.1, 0.2};
  c.model.conv_layers = {{8, 5, 1, 2}, {12, 3, 2, 1}};
  c.model.embed_dim = 17;
  c.stage1 = {32, 0.003, 0.5, 10, 0.8, 20};
  c.stage2 = {16, 1e-4, 0.25, 7, 0.0, 9};
  c.graph_top_k = 3;
  c.baselines = false;
  c.localize.seeds_per_class = 4;
  c.localize.whitelist = "pairs.txt";
  c.localize.params.k = 6;
  c.localize.params.tau = 0.4;
  c.localize.params.min_members = 2;
  c.localize.params.density_percentile = 20;
  c.localize.params.max_proposals = 5;
  c.localize.params.lambda = 0.01;
  c.detect = {2.5, 12, 0.4, 0.6, 9};
  c.probe_C = 0.1;
  const PipelineConfig back = config_from_json(config_to_json(c));
  CHECK(back == c);
  CHECK(back.dataset.noise.flip_rate == c.dataset.noise.flip_rate);
}

TEST_CASE("missing keys keep their defaults") {
  const PipelineConfig c = config_from_json(R"({"seed": 3, "dataset": {"num_categories": 4}})");
  PipelineConfig want;
  want.seed = 3;
  want.dataset.num_categories = 4;
  CHECK(c == want);
  CHECK(config_from_json("{}") == PipelineConfig{});
  CHECK(PipelineConfig{}.graph_top_k == 5);
  CHECK(PipelineConfig{}.detect.C == 1.0);
  CHECK(PipelineConfig{}.detect.iou_thresh == 0.5);
}

TEST_CASE("unknown keys are rejected with the valid ones") {
  const std::string top = error_of(R"({"sed": 3})");
  CHECK(top.find("unknown key 'sed'") != std::string::npos);
  CHECK(top.find("seed") != std::string::npos);
  CHECK(top.find("dataset") != std::string::npos);

  const std::string nested = error_of(R"({"dataset": {"noise": {"flip": 0.1}}})");
  CHECK(nested.find("dataset.noise.flip") != std::string::npos);
  CHECK(nested.find("flip_rate") != std::string::npos);
  CHECK(nested.find("similarity_bias") != std::string::npos);
}

TEST_CASE("out-of-range values name the constraint") {
  const std::string rho = error_of(R"({"dataset": {"noise": {"flip_rate": 1.2}}})");
  CHECK(rho.find("flip_rate") != std::string::npos);
  CHECK(rho.find("[0,1)") != std::string::npos);
  CHECK(error_of(R"({"graph_top_k": 0})").find("graph_top_k") != std::string::npos);
  CHECK(error_of(R"({"stage1": {"batch_size": 0}})").find("stage1") != std::string::npos);
  CHECK(error_of(R"({"detect": {"iou_thresh": 1.5}})").find("iou_thresh") != std::string::npos);
  CHECK(error_of(R"({"dataset": {"split_fractions": [0.5, 0.5, 0.5]}})").find("sum to 1") != std::string::npos);
  CHECK(error_of(R"({"seed": "seven"})").find("wrong type") != std::string::npos);
  CHECK(error_of("{not json").find("not valid JSON") != std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/wslc.json"), ConfigError);
}
