#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "wslc/detect.hpp"
#include "wslc/localize.hpp"
#include "wslc/nn.hpp"
#include "wslc/webdata.hpp"

namespace wslc {

// Bad key, bad type or out-of-range value in a pipeline config.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  int num_categories = 8;
  int image_size = 32;
  int easy_per_class = 30;
  int hard_per_class = 100;
  int test_per_class = 60;
  NoiseModel noise{0.3, 0.8, 0.0};
  // A directory-per-class image folder instead of the generator. Its records
  // are split by split_fractions; HARD records of the training part form the hard set.
  std::string folder;
  std::array<double, 3> split_fractions{0.8, 0.0, 0.2};

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ModelConfig {
  std::vector<ConvLayerSpec> conv_layers{{16, 3, 1, 2}, {32, 3, 1, 2}, {64, 3, 1, 2}};
  int embed_dim = 64;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// TrainConfig without the seed, which always comes from the global one.
struct StageConfig {
  int batch_size = 64;
  double base_lr = 0.01;
  double lr_decay_factor = 0.1;
  int lr_step = 100;
  double momentum = 0.9;
  int total_iters = 300;

  TrainConfig train_config(std::uint64_t seed) const;
  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct LocalizeConfig {
  int seeds_per_class = 10;  // easy images used as exemplars
  LocalizeParams params;
  std::string whitelist;  // category expansion pairs; empty disables it

  friend bool operator==(const LocalizeConfig&, const LocalizeConfig&) = default;
};

struct DetectConfig {
  double C = 1.0;
  int epochs = 30;
  double nms_thresh = 0.3;
  double iou_thresh = 0.5;
  int max_proposals = 8;

  friend bool operator==(const DetectConfig&, const DetectConfig&) = default;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "wslc_out";
  DatasetConfig dataset;
  ModelConfig model;
  StageConfig stage1{64, 0.02, 0.1, 28, 0.9, 40};
  StageConfig stage2{64, 0.01, 0.1, 270, 0.9, 400};
  int graph_top_k = kDefaultGraphTopK;
  bool baselines = true;  // also train the identity-graph and direct-on-mixed models
  LocalizeConfig localize;
  DetectConfig detect;
  double probe_C = 1.0;

  ModelSpec model_spec() const;
  // Throws ConfigError naming the violated constraint.
  void validate() const;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

// JSON with one object per section. Missing keys keep their defaults; unknown
// keys are rejected with the list of valid ones.
PipelineConfig config_from_json(const std::string& text);
std::string config_to_json(const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const PipelineConfig& cfg);

}  // namespace wslc
