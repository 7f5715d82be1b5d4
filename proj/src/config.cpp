#include "wslc/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace wslc {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

TrainConfig StageConfig::train_config(std::uint64_t seed) const {
  TrainConfig c;
  c.batch_size = batch_size;
  c.base_lr = base_lr;
  c.lr_decay_factor = lr_decay_factor;
  c.lr_step = lr_step;
  c.momentum = momentum;
  c.total_iters = total_iters;
  c.seed = seed;
  return c;
}

ModelSpec PipelineConfig::model_spec() const {
  ModelSpec spec;
  spec.in_height = dataset.image_size;
  spec.in_width = dataset.image_size;
  spec.conv_layers = model.conv_layers;
  spec.embed_dim = model.embed_dim;
  spec.num_classes = dataset.num_categories;
  return spec;
}

void PipelineConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  // Component validators throw std::invalid_argument; rethrow as config errors with the section name.
  auto section = [](const std::string& name, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(name + ": " + e.what());
    }
  };
  const auto& d = dataset;
  if (d.folder.empty()) {
    check(d.num_categories >= 2 && d.num_categories <= 16, "dataset.num_categories must lie in [2, 16]");
    check(d.easy_per_class >= 1, "dataset.easy_per_class must be >= 1");
    check(d.hard_per_class >= 1, "dataset.hard_per_class must be >= 1");
    check(d.test_per_class >= 2, "dataset.test_per_class must be >= 2");
  }
  check(d.image_size >= 8 && d.image_size <= 256, "dataset.image_size must lie in [8, 256]");
  for (double f : d.split_fractions) check(f >= 0 && f <= 1, "dataset.split_fractions must lie in [0, 1]");
  check(std::abs(d.split_fractions[0] + d.split_fractions[1] + d.split_fractions[2] - 1) <= 1e-9,
        "dataset.split_fractions must sum to 1");
  section("dataset.noise", [&] { d.noise.validate(); });
  if (d.folder.empty()) section("model", [&] { model_spec().validate(); });
  section("stage1", [&] { stage1.train_config(0).validate(); });
  section("stage2", [&] { stage2.train_config(0).validate(); });
  check(graph_top_k >= 1, "graph_top_k must be >= 1");
  check(localize.seeds_per_class >= 1, "localize.seeds_per_class must be >= 1");
  section("localize", [&] { localize.params.validate(); });
  section("detect", [&] { SvmOptions{detect.C, detect.epochs, 0}.validate(); });
  section("detect", [&] { DetectParams{detect.max_proposals, detect.nms_thresh, {}}.validate(); });
  check(detect.iou_thresh > 0 && detect.iou_thresh <= 1, "detect.iou_thresh must lie in (0, 1]");
  check(probe_C > 0 && std::isfinite(probe_C), "probe_C must be > 0");
}

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    keys_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(label(key) + " has the wrong type");
    }
  }

  const json* child(const std::string& key) {
    keys_.push_back(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (std::find(keys_.begin(), keys_.end(), key) == keys_.end()) {
        std::string valid;
        for (const auto& k : keys_) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError("unknown key '" + label(key) + "'; valid keys: " + valid);
      }
  }

 private:
  std::string label(const std::string& key = "") const {
    if (key.empty()) return name_.empty() ? "config" : name_;
    return name_.empty() ? key : name_ + "." + key;
  }

  const json& j_;
  std::string name_;
  std::vector<std::string> keys_;
};

void read_stage(const json& j, const std::string& name, StageConfig& s) {
  Section sec(j, name);
  sec.get("batch_size", s.batch_size);
  sec.get("base_lr", s.base_lr);
  sec.get("lr_decay_factor", s.lr_decay_factor);
  sec.get("lr_step", s.lr_step);
  sec.get("momentum", s.momentum);
  sec.get("total_iters", s.total_iters);
  sec.finish();
}

ordered write_stage(const StageConfig& s) {
  return {{"batch_size", s.batch_size}, {"base_lr", s.base_lr},         {"lr_decay_factor", s.lr_decay_factor},
          {"lr_step", s.lr_step},       {"momentum", s.momentum},       {"total_iters", s.total_iters}};
}

}  // namespace

PipelineConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  Section top(j, "");
  top.get("seed", c.seed);
  top.get("output_dir", c.output_dir);
  if (const json* d = top.child("dataset")) {
    Section s(*d, "dataset");
    s.get("num_categories", c.dataset.num_categories);
    s.get("image_size", c.dataset.image_size);
    s.get("easy_per_class", c.dataset.easy_per_class);
    s.get("hard_per_class", c.dataset.hard_per_class);
    s.get("test_per_class", c.dataset.test_per_class);
    s.get("folder", c.dataset.folder);
    s.get("split_fractions", c.dataset.split_fractions);
    if (const json* n = s.child("noise")) {
      Section ns(*n, "dataset.noise");
      ns.get("flip_rate", c.dataset.noise.flip_rate);
      ns.get("similarity_bias", c.dataset.noise.similarity_bias);
      ns.get("junk_rate", c.dataset.noise.junk_rate);
      ns.finish();
    }
    s.finish();
  }
  if (const json* m = top.child("model")) {
    Section s(*m, "model");
    s.get("embed_dim", c.model.embed_dim);
    if (const json* layers = s.child("conv_layers")) {
      if (!layers->is_array()) throw ConfigError("model.conv_layers must be an array");
      c.model.conv_layers.clear();
      for (std::size_t i = 0; i < layers->size(); ++i) {
        ConvLayerSpec l;
        Section ls((*layers)[i], "model.conv_layers[" + std::to_string(i) + "]");
        ls.get("out_channels", l.out_channels);
        ls.get("kernel_size", l.kernel_size);
        ls.get("stride", l.stride);
        ls.get("pool", l.pool);
        ls.finish();
        c.model.conv_layers.push_back(l);
      }
    }
    s.finish();
  }
  if (const json* s1 = top.child("stage1")) read_stage(*s1, "stage1", c.stage1);
  if (const json* s2 = top.child("stage2")) read_stage(*s2, "stage2", c.stage2);
  top.get("graph_top_k", c.graph_top_k);
  top.get("baselines", c.baselines);
  if (const json* l = top.child("localize")) {
    Section s(*l, "localize");
    s.get("seeds_per_class", c.localize.seeds_per_class);
    s.get("whitelist", c.localize.whitelist);
    s.get("k", c.localize.params.k);
    s.get("tau", c.localize.params.tau);
    s.get("min_members", c.localize.params.min_members);
    s.get("density_percentile", c.localize.params.density_percentile);
    s.get("max_proposals", c.localize.params.max_proposals);
    s.get("lambda", c.localize.params.lambda);
    s.finish();
  }
  if (const json* dt = top.child("detect")) {
    Section s(*dt, "detect");
    s.get("C", c.detect.C);
    s.get("epochs", c.detect.epochs);
    s.get("nms_thresh", c.detect.nms_thresh);
    s.get("iou_thresh", c.detect.iou_thresh);
    s.get("max_proposals", c.detect.max_proposals);
    s.finish();
  }
  top.get("probe_C", c.probe_C);
  top.finish();
  c.validate();
  return c;
}

std::string config_to_json(const PipelineConfig& c) {
  ordered layers = ordered::array();
  for (const auto& l : c.model.conv_layers)
    layers.push_back({{"out_channels", l.out_channels}, {"kernel_size", l.kernel_size}, {"stride", l.stride},
                      {"pool", l.pool}});
  ordered j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["dataset"] = {{"num_categories", c.dataset.num_categories},
                  {"image_size", c.dataset.image_size},
                  {"easy_per_class", c.dataset.easy_per_class},
                  {"hard_per_class", c.dataset.hard_per_class},
                  {"test_per_class", c.dataset.test_per_class},
                  {"noise",
                   {{"flip_rate", c.dataset.noise.flip_rate},
                    {"similarity_bias", c.dataset.noise.similarity_bias},
                    {"junk_rate", c.dataset.noise.junk_rate}}},
                  {"folder", c.dataset.folder},
                  {"split_fractions", c.dataset.split_fractions}};
  j["model"] = {{"conv_layers", layers}, {"embed_dim", c.model.embed_dim}};
  j["stage1"] = write_stage(c.stage1);
  j["stage2"] = write_stage(c.stage2);
  j["graph_top_k"] = c.graph_top_k;
  j["baselines"] = c.baselines;
  const auto& lp = c.localize.params;
  j["localize"] = {{"seeds_per_class", c.localize.seeds_per_class},
                   {"k", lp.k},
                   {"tau", lp.tau},
                   {"min_members", lp.min_members},
                   {"density_percentile", lp.density_percentile},
                   {"max_proposals", lp.max_proposals},
                   {"lambda", lp.lambda},
                   {"whitelist", c.localize.whitelist}};
  j["detect"] = {{"C", c.detect.C},
                 {"epochs", c.detect.epochs},
                 {"nms_thresh", c.detect.nms_thresh},
                 {"iou_thresh", c.detect.iou_thresh},
                 {"max_proposals", c.detect.max_proposals}};
  j["probe_C"] = c.probe_C;
  return j.dump(2) + "\n";
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const std::filesystem::path& path, const PipelineConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << config_to_json(cfg);
}

}  // namespace wslc
