#include "wslc/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "wslc/parallel.hpp"
#include "wslc/rng.hpp"
#include "wslc/webdata.hpp"

namespace wslc {

// ---------------------------------------------------------------------------
// SVM

void SvmOptions::validate() const {
  if (!(C > 0) || !std::isfinite(C)) throw std::invalid_argument("svm C must be > 0");
  if (epochs < 1) throw std::invalid_argument("svm epochs must be >= 1");
}

namespace {

double hinge_sum(const LinearSVM& svm, std::span<const Eigen::VectorXd> xs, double y) {
  double acc = 0;
  for (const auto& x : xs) acc += std::max(0.0, 1.0 - y * (svm.w.dot(x) + svm.b));
  return acc;
}

void check_dims(std::span<const Eigen::VectorXd> xs, Eigen::Index dim) {
  for (const auto& x : xs) {
    if (x.size() != dim) throw std::invalid_argument("svm inputs differ in dimension");
    if (!x.allFinite()) throw std::invalid_argument("svm input is not finite");
  }
}

}  // namespace

double svm_objective(const LinearSVM& svm, std::span<const Eigen::VectorXd> pos,
                     std::span<const Eigen::VectorXd> neg) {
  return 0.5 * svm.w.squaredNorm() + svm.C * (hinge_sum(svm, pos, 1.0) + hinge_sum(svm, neg, -1.0));
}

LinearSVM svm_train(std::span<const Eigen::VectorXd> pos, std::span<const Eigen::VectorXd> neg,
                    const SvmOptions& opts, std::vector<double>* objective_log) {
  opts.validate();
  if (pos.empty() || neg.empty()) throw std::invalid_argument("svm training needs positives and negatives");
  const Eigen::Index dim = pos[0].size();
  check_dims(pos, dim);
  check_dims(neg, dim);

  const std::size_t n = pos.size() + neg.size();
  auto sample = [&](std::size_t i) -> const Eigen::VectorXd& { return i < pos.size() ? pos[i] : neg[i - pos.size()]; };
  const double lambda = 1.0 / (opts.C * static_cast<double>(n));

  // Augmented weights: last coordinate multiplies a constant 1.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(dim + 1);
  LinearSVM best{Eigen::VectorXd::Zero(dim), 0.0, opts.C};
  double best_obj = svm_objective(best, pos, neg);
  if (objective_log) objective_log->assign(1, best_obj);

  std::vector<std::size_t> order(n);
  long t = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i : order) {
      ++t;
      const Eigen::VectorXd& x = sample(i);
      const double y = i < pos.size() ? 1.0 : -1.0;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const double margin = y * (w.head(dim).dot(x) + w[dim]);
      w *= 1.0 - 1.0 / static_cast<double>(t);
      if (margin < 1.0) {
        w.head(dim) += eta * y * x;
        w[dim] += eta * y;
      }
      // Pegasos ball: the optimum has |w| <= 1/sqrt(lambda).
      const double radius = 1.0 / std::sqrt(lambda), norm = w.norm();
      if (norm > radius) w *= radius / norm;
    }
    const LinearSVM cand{w.head(dim), w[dim], opts.C};
    const double obj = svm_objective(cand, pos, neg);
    if (std::isfinite(obj) && obj < best_obj) {
      best = cand;
      best_obj = obj;
    }
    if (objective_log) objective_log->push_back(best_obj);
  }
  return best;
}

double svm_score(const LinearSVM& svm, const Eigen::VectorXd& x) {
  if (x.size() != svm.w.size())
    throw std::invalid_argument("dimension mismatch: " + std::to_string(x.size()) + " vs " +
                                std::to_string(svm.w.size()));
  return svm.w.dot(x) + svm.b;
}

// ---------------------------------------------------------------------------
// Detection

std::vector<Detection> nms(std::vector<Detection> detections, double iou_thresh) {
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) { return a.box.score > b.box.score; });
  std::vector<Detection> kept;
  for (const auto& d : detections)
    if (std::none_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.box, d.box) > iou_thresh; }))
      kept.push_back(d);
  return kept;
}

Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v, bool* was_zero) {
  const double norm = v.norm();
  if (was_zero) *was_zero = !(norm > 0);
  return norm > 0 ? Eigen::VectorXd(v / norm) : v;
}

std::vector<Eigen::VectorXd> image_features(const Model& model, std::span<const Image> crops) {
  const Eigen::MatrixXd emb = embed_images(model, crops);
  std::vector<Eigen::VectorXd> out;
  out.reserve(crops.size());
  for (Eigen::Index i = 0; i < emb.rows(); ++i) out.push_back(l2_normalize(emb.row(i).transpose()));
  return out;
}

std::vector<Eigen::VectorXd> box_features(const Model& model, const Image& image, std::span<const Box> boxes) {
  std::vector<Image> crops;
  crops.reserve(boxes.size());
  for (const auto& b : boxes) crops.push_back(crop_resize(image, b, model.spec.in_height, model.spec.in_width));
  return image_features(model, crops);
}

void DetectParams::validate() const {
  if (max_proposals < 1) throw std::invalid_argument("detect.max_proposals must be >= 1");
  if (!(nms_thresh >= 0 && nms_thresh <= 1)) throw std::invalid_argument("detect.nms_thresh must lie in [0, 1]");
}

std::vector<Detection> detect(const Model& model, const std::map<int, LinearSVM>& svms, const Image& image,
                              int image_id, const DetectParams& params) {
  params.validate();
  if (svms.empty()) return {};
  for (const auto& [cls, svm] : svms)
    if (svm.w.size() != model.spec.embed_dim) throw std::invalid_argument("detector and model embed_dim differ");
  const auto boxes = propose(image, params.max_proposals, params.proposals);
  const auto feats = box_features(model, image, boxes);
  std::vector<Detection> out;
  for (const auto& [cls, svm] : svms) {
    std::vector<Detection> dets;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      Box b = boxes[i];
      b.score = svm_score(svm, feats[i]);
      dets.push_back({image_id, cls, b});
    }
    for (auto& d : nms(std::move(dets), params.nms_thresh)) out.push_back(d);
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.box.score != b.box.score) return a.box.score > b.box.score;
    return a.cls < b.cls;
  });
  return out;
}

std::vector<Image> random_negative_crops(int count, int image_size, std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("negative crop count must be >= 0");
  if (image_size < 4) throw std::invalid_argument("image size too small for negative crops");
  // A few crops per background keeps generation cheap.
  constexpr int kCropsPerImage = 8;
  std::vector<Image> out(static_cast<std::size_t>(count));
  const int groups = (count + kCropsPerImage - 1) / kCropsPerImage;
  parallel_for(static_cast<std::size_t>(groups), [&](std::size_t g) {
    const Image bg = gen_background(derive_seed(seed, "background:" + std::to_string(g)), image_size);
    for (int j = 0; j < kCropsPerImage; ++j) {
      const std::size_t i = g * kCropsPerImage + static_cast<std::size_t>(j);
      if (i >= out.size()) break;
      Rng rng(derive_seed(seed, i));
      const int lo = std::max(1, image_size / 4), hi = std::max(lo, 3 * image_size / 4);
      const int w = rng.uniform_int(lo, hi), h = rng.uniform_int(lo, hi);
      const int x = rng.uniform_int(0, image_size - w), y = rng.uniform_int(0, image_size - h);
      out[i] = crop_resize(bg, Box{x, y, x + w, y + h, 0.0}, h, w);
    }
  });
  return out;
}

std::vector<Box> part_negative_boxes(const PositiveImage& im, int count, std::uint64_t seed) {
  const int h = image_height(im.image), w = image_width(im.image);
  const int lo = std::max(2, std::min(h, w) / 8);
  std::vector<Box> out;
  Rng rng(seed);
  for (int attempt = 0; attempt < 50 * count && static_cast<int>(out.size()) < count; ++attempt) {
    const int bw = rng.uniform_int(std::min(lo, w), w), bh = rng.uniform_int(std::min(lo, h), h);
    const int x = rng.uniform_int(0, w - bw), y = rng.uniform_int(0, h - bh);
    const Box b{x, y, x + bw, y + bh, 0.0};
    if (std::all_of(im.boxes.begin(), im.boxes.end(), [&](const Box& p) { return iou(p, b) < kPartNegativeIou; }))
      out.push_back(b);
  }
  return out;
}

std::map<int, LinearSVM> train_detectors(const Model& model, const std::map<int, std::vector<PositiveImage>>& positives,
                                         std::span<const Image> background, const SvmOptions& opts) {
  opts.validate();
  if (background.empty()) throw std::invalid_argument("detector training needs background negatives");
  const auto bg = image_features(model, background);
  const int mh = model.spec.in_height, mw = model.spec.in_width;
  std::vector<int> classes;
  for (const auto& [cls, ims] : positives) classes.push_back(cls);
  std::vector<LinearSVM> svms(classes.size());
  parallel_for(classes.size(), [&](std::size_t k) {
    const int cls = classes[k];
    const auto& ims = positives.at(cls);
    const std::uint64_t seed = derive_seed(opts.seed, static_cast<std::uint64_t>(cls));
    std::vector<Image> pos_crops, part_crops;
    for (std::size_t i = 0; i < ims.size(); ++i) {
      for (const auto& b : ims[i].boxes) pos_crops.push_back(crop_resize(ims[i].image, b, mh, mw));
      for (const auto& b : part_negative_boxes(ims[i], kPartNegativesPerImage, derive_seed(seed, i)))
        part_crops.push_back(crop_resize(ims[i].image, b, mh, mw));
    }
    if (pos_crops.empty()) throw std::invalid_argument("class " + std::to_string(cls) + " has no positives");
    const auto pos = image_features(model, pos_crops);
    auto neg = image_features(model, part_crops);
    const std::size_t n_bg = std::min(bg.size(), kNegativesPerPositive * pos.size());
    neg.insert(neg.end(), bg.begin(), bg.begin() + static_cast<std::ptrdiff_t>(n_bg));
    SvmOptions o = opts;
    o.seed = seed;
    svms[k] = svm_train(pos, neg, o);
  });
  std::map<int, LinearSVM> out;
  for (std::size_t i = 0; i < classes.size(); ++i) out.emplace(classes[i], std::move(svms[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

PRCurve average_precision(std::span<const Detection> ranked, const std::map<int, std::vector<Box>>& gt,
                          double iou_thresh) {
  long total = 0;
  for (const auto& [id, boxes] : gt) total += static_cast<long>(boxes.size());
  if (total == 0) throw std::invalid_argument("average precision needs at least one ground-truth box");
  for (std::size_t i = 1; i < ranked.size(); ++i)
    if (ranked[i].box.score > ranked[i - 1].box.score)
      throw std::invalid_argument("detections must be sorted by descending score");

  std::map<int, std::vector<bool>> used;
  for (const auto& [id, boxes] : gt) used[id].assign(boxes.size(), false);
  PRCurve curve;
  long tp = 0;
  for (std::size_t n = 0; n < ranked.size(); ++n) {
    const auto& d = ranked[n];
    const auto it = gt.find(d.image_id);
    if (it != gt.end()) {
      auto& taken = used[d.image_id];
      double best = -1;
      std::size_t pick = 0;
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (taken[g]) continue;
        const double v = iou(d.box, it->second[g]);
        if (v > best) {
          best = v;
          pick = g;
        }
      }
      if (best >= iou_thresh) {
        taken[pick] = true;
        ++tp;
      }
    }
    curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(n + 1));
    curve.recall.push_back(static_cast<double>(tp) / static_cast<double>(total));
  }
  double running = 0;
  std::vector<double> envelope(curve.precision.size());
  for (std::size_t i = curve.precision.size(); i-- > 0;) {
    running = std::max(running, curve.precision[i]);
    envelope[i] = running;
  }
  double prev = 0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    curve.ap += (curve.recall[i] - prev) * envelope[i];
    prev = curve.recall[i];
  }
  return curve;
}

double mean_ap(std::span<const double> aps) {
  if (aps.empty()) throw std::invalid_argument("mean AP over no classes");
  double acc = 0;
  for (double a : aps) acc += a;
  return acc / static_cast<double>(aps.size());
}

std::vector<ClassEval> evaluate_detections(std::span<const Detection> detections, std::span<const GroundTruth> gt,
                                           double iou_thresh) {
  std::map<int, std::map<int, std::vector<Box>>> gt_by_class;
  for (const auto& g : gt) gt_by_class[g.cls][g.image_id].push_back(g.box);
  std::vector<ClassEval> rows;
  for (const auto& [cls, boxes] : gt_by_class) {
    std::vector<Detection> mine;
    for (const auto& d : detections)
      if (d.cls == cls) mine.push_back(d);
    std::stable_sort(mine.begin(), mine.end(), [](const Detection& a, const Detection& b) {
      if (a.box.score != b.box.score) return a.box.score > b.box.score;
      if (a.image_id != b.image_id) return a.image_id < b.image_id;
      return std::tie(a.box.y1, a.box.x1, a.box.y2, a.box.x2) < std::tie(b.box.y1, b.box.x1, b.box.y2, b.box.x2);
    });
    ClassEval row;
    row.cls = cls;
    row.ap = average_precision(mine, boxes, iou_thresh).ap;
    for (const auto& [id, b] : boxes) row.num_gt += static_cast<long>(b.size());
    row.num_det = static_cast<long>(mine.size());
    rows.push_back(row);
  }
  return rows;
}

std::vector<LinearSVM> train_one_vs_rest(std::span<const Eigen::VectorXd> x, std::span<const int> labels,
                                         int num_classes, const SvmOptions& opts) {
  if (x.size() != labels.size()) throw std::invalid_argument("embedding and label counts differ");
  if (num_classes < 2) throw std::invalid_argument("one-vs-rest needs at least 2 classes");
  std::vector<Eigen::VectorXd> xn;
  xn.reserve(x.size());
  for (const auto& v : x) xn.push_back(l2_normalize(v));
  std::vector<LinearSVM> svms(static_cast<std::size_t>(num_classes));
  parallel_for(svms.size(), [&](std::size_t c) {
    std::vector<Eigen::VectorXd> pos, neg;
    for (std::size_t i = 0; i < xn.size(); ++i) (labels[i] == static_cast<int>(c) ? pos : neg).push_back(xn[i]);
    if (pos.empty()) throw std::invalid_argument("class " + std::to_string(c) + " is absent from the training split");
    SvmOptions o = opts;
    o.seed = derive_seed(opts.seed, c);
    svms[c] = svm_train(pos, neg, o);
  });
  return svms;
}

int predict_one_vs_rest(std::span<const LinearSVM> svms, const Eigen::VectorXd& x) {
  const Eigen::VectorXd xn = l2_normalize(x);
  int best = 0;
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < svms.size(); ++c) {
    const double s = svm_score(svms[c], xn);
    if (s > top) {
      top = s;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double linear_probe(std::span<const Eigen::VectorXd> train_x, std::span<const int> train_y,
                    std::span<const Eigen::VectorXd> test_x, std::span<const int> test_y, const SvmOptions& opts) {
  if (test_x.size() != test_y.size()) throw std::invalid_argument("embedding and label counts differ");
  if (test_x.empty()) throw std::invalid_argument("probe test split is empty");
  int num_classes = 0;
  for (int y : train_y) num_classes = std::max(num_classes, y + 1);
  for (int y : test_y) {
    if (y < 0) throw std::invalid_argument("negative label");
    if (y >= num_classes) throw std::invalid_argument("class " + std::to_string(y) + " is absent from the training split");
  }
  const auto svms = train_one_vs_rest(train_x, train_y, num_classes, opts);
  long correct = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) correct += predict_one_vs_rest(svms, test_x[i]) == test_y[i];
  return static_cast<double>(correct) / static_cast<double>(test_x.size());
}

// ---------------------------------------------------------------------------
// Files

namespace {

constexpr const char* kDetHeader = "image_id,class,x1,y1,x2,y2,score";
constexpr const char* kGtHeader = "image_id,class,x1,y1,x2,y2";

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int to_int(const std::string& s, const std::filesystem::path& path, int line) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size())
    throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

double to_double(const std::string& s, const std::filesystem::path& path, int line) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size())
    throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

template <typename Row>
std::vector<Row> read_rows(const std::filesystem::path& path, const char* header, std::size_t fields,
                           Row (*parse)(const std::vector<std::string>&, const std::filesystem::path&, int)) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw std::runtime_error(path.string() + ": expected header '" + header + "'");
  std::vector<Row> out;
  for (int no = 2; std::getline(in, line); ++no) {
    if (line.empty()) continue;
    const auto f = split_commas(line);
    if (f.size() != fields) throw std::runtime_error(path.string() + ":" + std::to_string(no) + ": wrong field count");
    Row r = parse(f, path, no);
    if (!(r.box.x1 < r.box.x2 && r.box.y1 < r.box.y2 && r.box.x1 >= 0 && r.box.y1 >= 0))
      throw std::runtime_error(path.string() + ":" + std::to_string(no) + ": invalid box");
    out.push_back(r);
  }
  return out;
}

Detection parse_detection(const std::vector<std::string>& f, const std::filesystem::path& p, int no) {
  return {to_int(f[0], p, no), to_int(f[1], p, no),
          Box{to_int(f[2], p, no), to_int(f[3], p, no), to_int(f[4], p, no), to_int(f[5], p, no), to_double(f[6], p, no)}};
}

GroundTruth parse_gt(const std::vector<std::string>& f, const std::filesystem::path& p, int no) {
  return {to_int(f[0], p, no), to_int(f[1], p, no),
          Box{to_int(f[2], p, no), to_int(f[3], p, no), to_int(f[4], p, no), to_int(f[5], p, no), 0.0}};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_detections(const std::filesystem::path& path, std::span<const Detection> detections) {
  auto out = open_out(path);
  out << kDetHeader << '\n';
  for (const auto& d : detections)
    out << d.image_id << ',' << d.cls << ',' << d.box.x1 << ',' << d.box.y1 << ',' << d.box.x2 << ',' << d.box.y2 << ','
        << fmt("%.17g", d.box.score) << '\n';
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  return read_rows<Detection>(path, kDetHeader, 7, parse_detection);
}

void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruth> gt) {
  auto out = open_out(path);
  out << kGtHeader << '\n';
  for (const auto& g : gt)
    out << g.image_id << ',' << g.cls << ',' << g.box.x1 << ',' << g.box.y1 << ',' << g.box.x2 << ',' << g.box.y2
        << '\n';
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
  return read_rows<GroundTruth>(path, kGtHeader, 6, parse_gt);
}

void write_eval(const std::filesystem::path& path, std::span<const ClassEval> rows,
                std::span<const std::string> class_names) {
  auto out = open_out(path);
  out << "class,AP,num_gt,num_det\n";
  std::vector<double> aps;
  long gt = 0, det = 0;
  for (const auto& r : rows) {
    const bool named = r.cls >= 0 && static_cast<std::size_t>(r.cls) < class_names.size();
    out << (named ? class_names[static_cast<std::size_t>(r.cls)] : std::to_string(r.cls)) << ','
        << fmt("%.6f", r.ap) << ',' << r.num_gt << ',' << r.num_det << '\n';
    aps.push_back(r.ap);
    gt += r.num_gt;
    det += r.num_det;
  }
  out << "mAP," << (aps.empty() ? std::string("nan") : fmt("%.6f", mean_ap(aps))) << ',' << gt << ',' << det << '\n';
}

}  // namespace wslc
