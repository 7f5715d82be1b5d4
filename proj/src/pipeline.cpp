#include "wslc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "wslc/checkpoint.hpp"
#include "wslc/curriculum.hpp"
#include "wslc/detect.hpp"
#include "wslc/parallel.hpp"
#include "wslc/rng.hpp"

namespace wslc {

namespace fs = std::filesystem;
using ordered = nlohmann::ordered_json;

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages{"gen-data", "train-initial",   "build-graph", "finetune",
                                               "eval-cls", "localize",        "train-detectors", "detect",
                                               "eval-det", "probe",           "report"};
  return stages;
}

PurityCount box_purity(std::span<const ImageBox> boxes, std::span<const ManifestRecord> records, int cls) {
  PurityCount p;
  for (const auto& ib : boxes) {
    ++p.total;
    const auto& gt = records[static_cast<std::size_t>(ib.image_id)].gt_boxes;
    if (std::any_of(gt.begin(), gt.end(), [&](const LabeledBox& g) { return g.cls == cls && iou(g.box, ib.box) >= 0.5; }))
      ++p.hits;
  }
  return p;
}

namespace {

bool is_junk(const ManifestRecord& r) { return r.path_or_params.find(":junk=1") != std::string::npos; }

void ensure_dir(const fs::path& p) { fs::create_directories(p); }

void require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw std::runtime_error("missing input " + p.string() + " (run " + producer + " first)");
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fmt(double v, const char* f = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

LabeledImages concat(const LabeledImages& a, const LabeledImages& b) {
  LabeledImages out = a;
  out.images.insert(out.images.end(), b.images.begin(), b.images.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

// Mean of off-diagonal confusion mass per row.
double off_diagonal_mass(const Eigen::MatrixXd& conf) {
  double s = 0;
  for (int j = 0; j < conf.rows(); ++j) s += 1.0 - conf(j, j);
  return s / static_cast<double>(conf.rows());
}

// Flattens nested objects and arrays into dotted keys.
void flatten(const ordered& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "." + std::to_string(i), out);
  } else if (j.is_string()) {
    out.emplace_back(prefix, j.get<std::string>());
  } else {
    out.emplace_back(prefix, j.dump());
  }
}

const std::vector<std::string> kModels{"stage1", "graph", "identity", "direct"};

}  // namespace

LabeledImages labeled_view(const DatasetManifest& manifest, std::span<const Image> images, bool true_labels) {
  if (images.size() != manifest.records.size()) throw std::invalid_argument("image count differs from manifest");
  LabeledImages out;
  out.num_classes = manifest.num_classes();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& r = manifest.records[i];
    if (true_labels && is_junk(r)) continue;
    out.images.push_back(images[i]);
    out.labels.push_back(true_labels ? r.true_label : r.observed_label);
  }
  return out;
}

Pipeline::Pipeline(PipelineConfig cfg, fs::path out_dir, std::ostream& log)
    : cfg_(std::move(cfg)), out_(std::move(out_dir)), log_(log) {
  cfg_.validate();
}

void Pipeline::run(const std::string& stage) {
  if (stage == "full-pipeline") {
    for (const auto& s : pipeline_stages()) run(s);
    return;
  }
  ensure_dir(out_);
  save_config(out_ / "config.json", cfg_);
  if (stage == "gen-data") gen_data();
  else if (stage == "train-initial") train_initial();
  else if (stage == "build-graph") build_graph();
  else if (stage == "finetune") finetune();
  else if (stage == "eval-cls") eval_cls();
  else if (stage == "localize") localize();
  else if (stage == "train-detectors") train_detectors();
  else if (stage == "detect") detect();
  else if (stage == "eval-det") eval_det();
  else if (stage == "probe") probe();
  else if (stage == "report") report();
  else throw std::invalid_argument("unknown stage " + stage);
}

std::uint64_t Pipeline::seed(const std::string& stage) const { return derive_seed(cfg_.seed, stage); }

DatasetManifest Pipeline::manifest(const std::string& name) const {
  const fs::path p = path("data/" + name + ".csv");
  require(p, "gen-data");
  return read_manifest(p);
}

std::vector<Image> Pipeline::images(const DatasetManifest& m) const { return materialize(m, cfg_.dataset.image_size); }

Model Pipeline::model(const std::string& name, int num_classes) const {
  const fs::path p = path("models/" + name + ".ckpt");
  require(p, name == "stage1" ? "train-initial" : "finetune");
  ModelSpec spec = cfg_.model_spec();
  spec.num_classes = num_classes;
  return load_checkpoint(p, spec);
}

void Pipeline::write_metrics(const std::string& stage, const std::string& json) const {
  write_text(path("metrics/" + stage + ".json"), json);
}

void Pipeline::gen_data() {
  const auto& d = cfg_.dataset;
  DatasetManifest easy, hard, test;
  if (d.folder.empty()) {
    const CategorySpace space(d.num_categories);
    const Eigen::MatrixXd sim = space.visual_similarity();
    std::vector<Sample> e, h, t;
    for (int c = 0; c < d.num_categories; ++c) {
      const auto uc = static_cast<std::uint64_t>(c);
      auto se = gen_easy(space, c, d.easy_per_class, derive_seed(seed("gen-data:easy"), uc), d.image_size);
      auto sh = gen_hard(space, c, d.hard_per_class, d.noise, sim, derive_seed(seed("gen-data:hard"), uc), d.image_size);
      // Test images are cluttered like the hard set but carry their true tags.
      auto st = gen_hard(space, c, d.test_per_class, NoiseModel{}, sim, derive_seed(seed("gen-data:test"), uc),
                         d.image_size);
      e.insert(e.end(), std::make_move_iterator(se.begin()), std::make_move_iterator(se.end()));
      h.insert(h.end(), std::make_move_iterator(sh.begin()), std::make_move_iterator(sh.end()));
      t.insert(t.end(), std::make_move_iterator(st.begin()), std::make_move_iterator(st.end()));
    }
    for (int c = 0; c < d.num_categories; ++c) {
      const std::string name = space.style(c).name;
      const auto& se = e[static_cast<std::size_t>(c * d.easy_per_class)];
      const auto& sh = h[static_cast<std::size_t>(c * d.hard_per_class)];
      std::vector<Box> eb, hb;
      for (const auto& g : se.gt_boxes) eb.push_back(g.box);
      for (const auto& g : sh.gt_boxes) hb.push_back(g.box);
      ensure_dir(path("data/preview"));
      write_ppm(path("data/preview/easy_" + name + ".ppm"), draw_boxes(se.image, eb));
      write_ppm(path("data/preview/hard_" + name + ".ppm"), draw_boxes(sh.image, hb));
    }
    easy = make_manifest(e, space.names());
    hard = make_manifest(h, space.names());
    test = make_manifest(t, space.names());
  } else {
    FolderLoad fl = load_folder(d.folder);
    std::string warnings;
    for (const auto& w : fl.warnings) warnings += w + "\n";
    write_text(path("data/warnings.txt"), warnings);
    Splits sp = split(fl.manifest, d.split_fractions, seed("gen-data:split"));
    easy.class_names = hard.class_names = fl.manifest.class_names;
    for (const auto& r : sp.train.records) (r.source == Source::kEasy ? easy : hard).records.push_back(r);
    test = sp.test;
    if (easy.records.empty()) throw std::runtime_error("folder has no EASY training images");
    if (hard.records.empty()) throw std::runtime_error("folder has no HARD training images (list them in sources.txt)");
  }
  ensure_dir(path("data"));
  write_manifest(path("data/easy.csv"), easy);
  write_manifest(path("data/hard.csv"), hard);
  write_manifest(path("data/test.csv"), test);
  long junk = 0, flipped = 0;
  for (const auto& r : hard.records) {
    junk += is_junk(r);
    flipped += !is_junk(r) && r.observed_label != r.true_label;
  }
  ordered m;
  m["num_classes"] = easy.num_classes();
  m["easy"] = easy.records.size();
  m["hard"] = hard.records.size();
  m["test"] = test.records.size();
  m["hard_flipped"] = flipped;
  m["hard_junk"] = junk;
  write_metrics("gen-data", m.dump(2) + "\n");
  log_ << "gen-data: " << easy.records.size() << " easy, " << hard.records.size() << " hard (" << flipped
       << " flipped, " << junk << " junk), " << test.records.size() << " test images in " << easy.num_classes()
       << " classes\n";
}

void Pipeline::train_initial() {
  const auto easy_m = manifest("easy"), hard_m = manifest("hard"), test_m = manifest("test");
  const auto easy_im = images(easy_m), hard_im = images(hard_m), test_im = images(test_m);
  const int nc = easy_m.num_classes();
  const LabeledImages easy = labeled_view(easy_m, easy_im, false);
  ModelSpec spec = cfg_.model_spec();
  spec.num_classes = nc;
  const TrainResult r = train_stage1(easy, spec, cfg_.stage1.train_config(seed("train-initial")));
  ensure_dir(path("models"));
  save_checkpoint(path("models/stage1.ckpt"), r.model);
  ensure_dir(path("logs"));
  write_loss_log(path("logs/stage1_loss.csv"), r.log);
  const double h_easy = mean_prediction_entropy(r.model, easy_im);
  const double h_hard = mean_prediction_entropy(r.model, hard_im);
  ordered m;
  m["easy_accuracy"] = accuracy(r.model, easy);
  m["test_accuracy"] = accuracy(r.model, labeled_view(test_m, test_im, true));
  m["entropy_easy"] = h_easy;
  m["entropy_hard"] = h_hard;
  m["entropy_uniform"] = std::log(static_cast<double>(nc));
  m["final_loss"] = r.log.empty() ? 0.0 : r.log.back().loss;
  m["clamped"] = r.clamped;
  write_metrics("train-initial", m.dump(2) + "\n");
  log_ << "train-initial: test accuracy " << fmt(m["test_accuracy"].get<double>()) << ", entropy easy "
       << fmt(h_easy) << " hard " << fmt(h_hard) << "\n";
}

void Pipeline::build_graph() {
  const auto easy_m = manifest("easy");
  const auto easy_im = images(easy_m);
  const Model m1 = model("stage1", easy_m.num_classes());
  const Eigen::MatrixXd conf = confusion_matrix(m1, labeled_view(easy_m, easy_im, false));
  const RelationshipGraph g = sparsify_topk(conf, cfg_.graph_top_k);
  ensure_dir(path("graph"));
  write_graph(path("graph/graph.txt"), g);
  std::string csv;
  for (int j = 0; j < conf.rows(); ++j) {
    for (int i = 0; i < conf.cols(); ++i) csv += (i ? "," : "") + fmt(conf(j, i), "%.17g");
    csv += "\n";
  }
  write_text(path("graph/confusion.csv"), csv);
  long entries = 0;
  double self = 0;
  for (int j = 0; j < g.num_classes(); ++j) {
    entries += static_cast<long>(g.row(j).size());
    self += g.dense_row(j)[static_cast<std::size_t>(j)];
  }
  ordered m;
  m["num_classes"] = g.num_classes();
  m["top_k"] = g.k();
  m["entries"] = entries;
  m["mean_self_weight"] = self / g.num_classes();
  m["confusion_off_diagonal"] = off_diagonal_mass(conf);
  write_metrics("build-graph", m.dump(2) + "\n");
  log_ << "build-graph: " << entries << " entries over " << g.num_classes() << " rows, mean self weight "
       << fmt(m["mean_self_weight"].get<double>()) << "\n";
}

void Pipeline::finetune() {
  const auto easy_m = manifest("easy"), hard_m = manifest("hard");
  const int nc = easy_m.num_classes();
  const auto easy_im = images(easy_m), hard_im = images(hard_m);
  const LabeledImages hard = labeled_view(hard_m, hard_im, false);
  const Model m1 = model("stage1", nc);
  require(path("graph/graph.txt"), "build-graph");
  const RelationshipGraph g = read_graph(path("graph/graph.txt"));
  // Graph and identity arms share the seed, so they differ only in the targets.
  const TrainConfig c2 = cfg_.stage2.train_config(seed("finetune"));
  ordered m;
  auto save = [&](const std::string& name, const TrainResult& r) {
    save_checkpoint(path("models/" + name + ".ckpt"), r.model);
    write_loss_log(path("logs/" + name + "_loss.csv"), r.log);
    m[name] = {{"final_loss", r.log.empty() ? 0.0 : r.log.back().loss}, {"clamped", r.clamped}};
  };
  ensure_dir(path("models"));
  ensure_dir(path("logs"));
  save("graph", finetune_stage2(m1, hard, g, c2));
  if (cfg_.baselines) {
    save("identity", finetune_stage2(m1, hard, RelationshipGraph::identity(nc), c2));
    // One run on easy and hard together, as long as both stages combined, stage-1 schedule stretched.
    TrainConfig cd = cfg_.stage1.train_config(seed("finetune:direct"));
    cd.total_iters = cfg_.stage1.total_iters + cfg_.stage2.total_iters;
    cd.lr_step = std::max(1, static_cast<int>(std::lround(static_cast<double>(cfg_.stage1.lr_step) * cd.total_iters /
                                                          cfg_.stage1.total_iters)));
    ModelSpec spec = cfg_.model_spec();
    spec.num_classes = nc;
    save("direct", train_stage1(concat(labeled_view(easy_m, easy_im, false), hard), spec, cd));
  }
  write_metrics("finetune", m.dump(2) + "\n");
  log_ << "finetune: trained " << (cfg_.baselines ? "graph, identity and direct" : "graph") << " models on "
       << hard.images.size() << " hard images\n";
}

void Pipeline::eval_cls() {
  const auto test_m = manifest("test");
  const auto test_im = images(test_m);
  const LabeledImages test = labeled_view(test_m, test_im, true);
  ordered m;
  std::string csv = "model,accuracy,mean_entropy\n", line = "eval-cls:";
  for (const auto& name : kModels) {
    if (!fs::exists(path("models/" + name + ".ckpt"))) continue;
    const Model mm = model(name, test_m.num_classes());
    const double acc = accuracy(mm, test);
    const double h = mean_prediction_entropy(mm, test.images);
    m[name] = {{"accuracy", acc}, {"mean_entropy", h}};
    csv += name + "," + fmt(acc, "%.6f") + "," + fmt(h, "%.6f") + "\n";
    line += " " + name + " " + fmt(acc);
  }
  if (m.empty()) throw std::runtime_error("no models under " + path("models").string());
  write_text(path("metrics/eval-cls.csv"), csv);
  write_metrics("eval-cls", m.dump(2) + "\n");
  log_ << line << "\n";
}

void Pipeline::localize() {
  const auto easy_m = manifest("easy"), hard_m = manifest("hard");
  const int nc = easy_m.num_classes();
  const auto easy_im = images(easy_m), hard_im = images(hard_m);
  const Model m1 = model("stage1", nc);
  const auto& lp = cfg_.localize.params;

  // Negative statistics over proposals of every training image, shared by all exemplars.
  std::vector<Image> all = easy_im;
  all.insert(all.end(), hard_im.begin(), hard_im.end());
  const NegStats stats = neg_stats(proposal_features(m1, all, lp.max_proposals, lp.proposals), lp.lambda);

  std::vector<std::vector<ImageBox>> localized(static_cast<std::size_t>(nc));
  ordered per_class = ordered::object();
  PurityCount kept_all, raw_all;
  ensure_dir(path("localize/subcategories"));
  for (int c = 0; c < nc; ++c) {
    std::vector<Image> seeds, pool;
    std::vector<int> pool_ids;
    for (std::size_t i = 0; i < easy_m.records.size() && static_cast<int>(seeds.size()) < cfg_.localize.seeds_per_class;
         ++i)
      if (easy_m.records[i].observed_label == c) seeds.push_back(easy_im[i]);
    for (std::size_t i = 0; i < hard_m.records.size(); ++i)
      if (hard_m.records[i].observed_label == c) {
        pool.push_back(hard_im[i]);
        pool_ids.push_back(static_cast<int>(i));
      }
    const std::string& name = easy_m.class_names[static_cast<std::size_t>(c)];
    ordered row;
    row["seeds"] = seeds.size();
    row["pool"] = pool.size();
    if (seeds.empty() || pool.empty()) {
      write_subcategories(path("localize/subcategories/" + name + ".txt"), {});
      row["skipped"] = true;
      per_class[name] = row;
      continue;
    }
    const CategoryLocalization loc = localize_category(m1, stats, seeds, pool, pool_ids, lp);
    std::vector<SubcategoryRecord> recs;
    for (std::size_t k = 0; k < loc.retained.size(); ++k)
      for (const auto& mem : loc.retained[k].members) recs.push_back({static_cast<int>(k), mem.image_id, mem.box});
    write_subcategories(path("localize/subcategories/" + name + ".txt"), recs);
    localized[static_cast<std::size_t>(c)] = localized_boxes(loc);
    std::vector<ImageBox> raw;
    for (const auto& cand : loc.candidates) raw.push_back({cand.image_id, cand.box});
    const PurityCount kept = box_purity(localized[static_cast<std::size_t>(c)], hard_m.records, c);
    const PurityCount rp = box_purity(raw, hard_m.records, c);
    kept_all.hits += kept.hits;
    kept_all.total += kept.total;
    raw_all.hits += rp.hits;
    raw_all.total += rp.total;
    row["candidates"] = raw.size();
    row["merged_clusters"] = loc.merged.size();
    row["retained_clusters"] = loc.retained.size();
    row["retained_boxes"] = kept.total;
    row["purity"] = kept.fraction();
    row["raw_purity"] = rp.fraction();
    per_class[name] = row;
  }

  Whitelist wl;
  std::optional<RelationshipGraph> graph;
  if (!cfg_.localize.whitelist.empty()) {
    wl = read_whitelist(cfg_.localize.whitelist, easy_m.class_names);
    require(path("graph/graph.txt"), "build-graph");
    graph = read_graph(path("graph/graph.txt"));
  }
  std::string csv = "class,image_id,x1,y1,x2,y2,origin\n";
  auto emit = [&](int c, const ImageBox& ib, const std::string& origin) {
    std::ostringstream os;
    os << c << "," << ib.image_id << "," << ib.box.x1 << "," << ib.box.y1 << "," << ib.box.x2 << "," << ib.box.y2
       << "," << origin << "\n";
    csv += os.str();
  };
  PurityCount aug_all;
  for (int c = 0; c < nc; ++c) {
    const auto& pos = localized[static_cast<std::size_t>(c)];
    std::map<int, std::vector<Box>> props;
    for (const auto& ib : pos)
      if (!props.count(ib.image_id))
        props[ib.image_id] = propose(hard_im[static_cast<std::size_t>(ib.image_id)], cfg_.detect.max_proposals, lp.proposals);
    const auto aug = edgebox_augment(pos, props);
    for (std::size_t i = 0; i < aug.size(); ++i) emit(c, aug[i], i < pos.size() ? "localized" : "edgebox");
    const PurityCount ap = box_purity(aug, hard_m.records, c);
    aug_all.hits += ap.hits;
    aug_all.total += ap.total;
    const std::string& name = easy_m.class_names[static_cast<std::size_t>(c)];
    per_class[name]["edgebox_added"] = aug.size() - pos.size();
    long expanded = 0;
    if (graph)
      for (int r : category_expand(*graph, c, wl))
        for (const auto& ib : localized[static_cast<std::size_t>(r)]) {
          emit(c, ib, "expansion:" + easy_m.class_names[static_cast<std::size_t>(r)]);
          ++expanded;
        }
    per_class[name]["expansion_added"] = expanded;
  }
  write_text(path("localize/positives.csv"), csv);

  ordered m;
  m["purity"] = kept_all.fraction();
  m["raw_purity"] = raw_all.fraction();
  m["retained_boxes"] = kept_all.total;
  m["raw_boxes"] = raw_all.total;
  m["augmented_purity"] = aug_all.fraction();
  m["augmented_boxes"] = aug_all.total;
  m["per_class"] = per_class;
  write_metrics("localize", m.dump(2) + "\n");
  log_ << "localize: " << kept_all.total << " retained boxes, purity " << fmt(kept_all.fraction()) << " vs raw "
       << fmt(raw_all.fraction()) << "\n";
}

namespace {

std::string svms_to_json(const std::map<int, LinearSVM>& svms, std::span<const std::string> names) {
  ordered j = ordered::array();
  for (const auto& [cls, s] : svms) {
    std::vector<double> w(s.w.data(), s.w.data() + s.w.size());
    j.push_back({{"class", cls}, {"name", names[static_cast<std::size_t>(cls)]}, {"C", s.C}, {"b", s.b}, {"w", w}});
  }
  return ordered{{"detectors", j}}.dump(1) + "\n";
}

std::map<int, LinearSVM> svms_from_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  const auto j = nlohmann::json::parse(in);
  std::map<int, LinearSVM> out;
  for (const auto& d : j.at("detectors")) {
    LinearSVM s;
    const auto w = d.at("w").get<std::vector<double>>();
    s.w = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    s.b = d.at("b").get<double>();
    s.C = d.at("C").get<double>();
    out.emplace(d.at("class").get<int>(), std::move(s));
  }
  return out;
}

}  // namespace

void Pipeline::train_detectors() {
  const auto hard_m = manifest("hard");
  const int nc = hard_m.num_classes();
  const auto hard_im = images(hard_m);
  const Model m1 = model("stage1", nc);
  const fs::path pos_path = path("localize/positives.csv");
  require(pos_path, "localize");
  std::ifstream in(pos_path);
  std::string line;
  std::getline(in, line);
  std::map<int, std::map<int, std::vector<Box>>> by_class;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f;
    std::vector<std::string> fields;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 7) throw std::runtime_error("bad line in " + pos_path.string() + ": " + line);
    const int c = std::stoi(fields[0]), id = std::stoi(fields[1]);
    if (c < 0 || c >= nc || id < 0 || id >= static_cast<int>(hard_im.size()))
      throw std::runtime_error("out-of-range entry in " + pos_path.string() + ": " + line);
    Box b;
    b.x1 = std::stoi(fields[2]);
    b.y1 = std::stoi(fields[3]);
    b.x2 = std::stoi(fields[4]);
    b.y2 = std::stoi(fields[5]);
    auto& boxes = by_class[c][id];
    if (std::none_of(boxes.begin(), boxes.end(), [&](const Box& o) { return o.same_extent(b); })) boxes.push_back(b);
  }
  std::map<int, std::vector<PositiveImage>> positives;
  std::size_t most = 0;
  for (const auto& [c, ims] : by_class) {
    std::size_t n = 0;
    for (const auto& [id, boxes] : ims) {
      positives[c].push_back({hard_im[static_cast<std::size_t>(id)], boxes});
      n += boxes.size();
    }
    most = std::max(most, n);
  }
  if (positives.empty()) throw std::runtime_error("no localized positives to train on");
  const auto background = random_negative_crops(static_cast<int>(kNegativesPerPositive * most), cfg_.dataset.image_size,
                                                seed("train-detectors:negatives"));
  const auto svms =
      wslc::train_detectors(m1, positives, background, SvmOptions{cfg_.detect.C, cfg_.detect.epochs, seed("train-detectors")});
  write_text(path("detect/detectors.json"), svms_to_json(svms, hard_m.class_names));
  ordered m;
  m["detectors"] = svms.size();
  m["background_crops"] = background.size();
  ordered pc = ordered::object();
  for (const auto& [c, ims] : positives) {
    long n = 0;
    for (const auto& p : ims) n += static_cast<long>(p.boxes.size());
    pc[hard_m.class_names[static_cast<std::size_t>(c)]] = {{"images", ims.size()}, {"positives", n}};
  }
  m["per_class"] = pc;
  write_metrics("train-detectors", m.dump(2) + "\n");
  log_ << "train-detectors: " << svms.size() << " detectors, " << background.size() << " background crops\n";
}

void Pipeline::detect() {
  const auto test_m = manifest("test");
  const auto test_im = images(test_m);
  const Model m1 = model("stage1", test_m.num_classes());
  require(path("detect/detectors.json"), "train-detectors");
  const auto svms = svms_from_json(path("detect/detectors.json"));
  const DetectParams params{cfg_.detect.max_proposals, cfg_.detect.nms_thresh, cfg_.localize.params.proposals};
  std::vector<std::vector<Detection>> per_image(test_im.size());
  parallel_for(test_im.size(),
               [&](std::size_t i) { per_image[i] = wslc::detect(m1, svms, test_im[i], static_cast<int>(i), params); });
  std::vector<Detection> dets;
  for (auto& d : per_image) dets.insert(dets.end(), d.begin(), d.end());
  std::vector<GroundTruth> gt;
  for (std::size_t i = 0; i < test_m.records.size(); ++i)
    for (const auto& g : test_m.records[i].gt_boxes) gt.push_back({static_cast<int>(i), g.cls, g.box});
  write_detections(path("detect/detections.csv"), dets);
  write_ground_truth(path("detect/ground_truth.csv"), gt);
  ordered m;
  m["images"] = test_im.size();
  m["detections"] = dets.size();
  m["ground_truth"] = gt.size();
  write_metrics("detect", m.dump(2) + "\n");
  log_ << "detect: " << dets.size() << " detections on " << test_im.size() << " images\n";
}

double eval_det_files(const fs::path& detections, const fs::path& ground_truth, const fs::path& eval_csv,
                      double iou_thresh, std::span<const std::string> class_names, std::ostream& log) {
  require(detections, "detect");
  require(ground_truth, "detect");
  const auto dets = read_detections(detections);
  const auto gt = read_ground_truth(ground_truth);
  const auto rows = evaluate_detections(dets, gt, iou_thresh);
  if (!eval_csv.empty()) {
    ensure_dir(eval_csv.parent_path());
    write_eval(eval_csv, rows, class_names);
  }
  std::vector<double> aps;
  for (const auto& r : rows) {
    aps.push_back(r.ap);
    const std::string name = static_cast<std::size_t>(r.cls) < class_names.size()
                                 ? class_names[static_cast<std::size_t>(r.cls)]
                                 : std::to_string(r.cls);
    log << "  " << name << ": AP " << fmt(r.ap) << " (" << r.num_gt << " gt, " << r.num_det << " detections)\n";
  }
  const double map = mean_ap(aps);
  log << "eval-det: mAP " << fmt(map) << " over " << rows.size() << " classes\n";
  return map;
}

void Pipeline::eval_det() {
  const auto test_m = manifest("test");
  const auto rows = evaluate_detections(read_detections(path("detect/detections.csv")),
                                        read_ground_truth(path("detect/ground_truth.csv")), cfg_.detect.iou_thresh);
  const double map = eval_det_files(path("detect/detections.csv"), path("detect/ground_truth.csv"),
                                    path("metrics/eval-det.csv"), cfg_.detect.iou_thresh, test_m.class_names, log_);
  ordered m;
  m["mAP"] = map;
  ordered pc = ordered::object();
  for (const auto& r : rows) pc[test_m.class_names[static_cast<std::size_t>(r.cls)]] = r.ap;
  m["AP"] = pc;
  write_metrics("eval-det", m.dump(2) + "\n");
}

void Pipeline::probe() {
  const auto test_m = manifest("test");
  const auto test_im = images(test_m);
  const LabeledImages test = labeled_view(test_m, test_im, true);
  // Alternate the images of each class between the two halves.
  std::vector<int> seen(static_cast<std::size_t>(test.num_classes), 0);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < test.labels.size(); ++i)
    (seen[static_cast<std::size_t>(test.labels[i])]++ % 2 == 0 ? train_idx : test_idx).push_back(i);
  std::vector<int> ytr, yte;
  for (auto i : train_idx) ytr.push_back(test.labels[i]);
  for (auto i : test_idx) yte.push_back(test.labels[i]);
  ordered m;
  std::string csv = "model,accuracy\n", line = "probe:";
  for (const auto& name : kModels) {
    if (!fs::exists(path("models/" + name + ".ckpt"))) continue;
    const auto feats = image_features(model(name, test.num_classes), test.images);
    std::vector<Eigen::VectorXd> xtr, xte;
    for (auto i : train_idx) xtr.push_back(feats[i]);
    for (auto i : test_idx) xte.push_back(feats[i]);
    const double acc = linear_probe(xtr, ytr, xte, yte, SvmOptions{cfg_.probe_C, cfg_.detect.epochs, seed("probe")});
    m[name] = {{"accuracy", acc}};
    csv += name + "," + fmt(acc, "%.6f") + "\n";
    line += " " + name + " " + fmt(acc);
  }
  if (m.empty()) throw std::runtime_error("no models under " + path("models").string());
  write_text(path("metrics/probe.csv"), csv);
  write_metrics("probe", m.dump(2) + "\n");
  log_ << line << "\n";
}

void Pipeline::report() {
  ordered all = ordered::object();
  std::string csv = "stage,metric,value\n", txt;
  for (const auto& stage : pipeline_stages()) {
    const fs::path p = path("metrics/" + stage + ".json");
    if (!fs::exists(p)) continue;
    std::ifstream in(p);
    const ordered j = ordered::parse(in);
    all[stage] = j;
    std::vector<std::pair<std::string, std::string>> rows;
    flatten(j, "", rows);
    txt += stage + "\n";
    for (const auto& [k, v] : rows) {
      csv += stage + "," + k + "," + v + "\n";
      txt += "  " + k + ": " + v + "\n";
    }
  }
  if (all.empty()) throw std::runtime_error("no stage metrics under " + path("metrics").string());
  write_text(path("report/metrics.csv"), csv);
  write_text(path("report/summary.json"), all.dump(2) + "\n");
  write_text(path("report/summary.txt"), txt);
  log_ << "report: " << all.size() << " stages summarized in " << path("report").string() << "\n";
}

}  // namespace wslc
