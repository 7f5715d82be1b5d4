#include "wslc/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace wslc {

ClassIndexSets ClassIndexSets::from_labels(std::span<const int> labels, int num_classes) {
  ClassIndexSets sets;
  sets.members.resize(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range");
    sets.members[labels[i]].push_back(i);
  }
  return sets;
}

RelationshipGraph::RelationshipGraph(int num_classes, int k, std::vector<std::vector<Entry>> rows)
    : num_classes_(num_classes), k_(k), rows_(std::move(rows)) {
  if (num_classes_ < 1) throw std::invalid_argument("graph needs at least one class");
  if (k_ < 1) throw std::invalid_argument("graph sparsity K must be >= 1");
  if (static_cast<int>(rows_.size()) != num_classes_) throw std::invalid_argument("graph needs one row per class");
  for (int j = 0; j < num_classes_; ++j) {
    const auto& row = rows_[j];
    const std::string where = "graph row " + std::to_string(j);
    if (row.empty() || static_cast<int>(row.size()) > k_)
      throw std::invalid_argument(where + " must have between 1 and K entries");
    double sum = 0;
    std::vector<bool> seen(num_classes_, false);
    for (const auto& e : row) {
      if (e.cls < 0 || e.cls >= num_classes_) throw std::invalid_argument(where + ": class index out of range");
      if (seen[e.cls]) throw std::invalid_argument(where + ": duplicate class " + std::to_string(e.cls));
      seen[e.cls] = true;
      if (!(e.weight > 0) || !std::isfinite(e.weight)) throw std::invalid_argument(where + ": weights must be positive");
      sum += e.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument(where + " does not sum to 1");
  }
}

RelationshipGraph RelationshipGraph::identity(int num_classes) {
  std::vector<std::vector<Entry>> rows(num_classes);
  for (int j = 0; j < num_classes; ++j) rows[j] = {{j, 1.0}};
  return RelationshipGraph(num_classes, 1, std::move(rows));
}

std::vector<double> RelationshipGraph::dense_row(int cls) const {
  std::vector<double> out(num_classes_, 0.0);
  for (const auto& e : row(cls)) out[e.cls] = e.weight;
  return out;
}

Eigen::MatrixXd RelationshipGraph::dense() const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(num_classes_, num_classes_);
  for (int j = 0; j < num_classes_; ++j)
    for (const auto& e : rows_[j]) m(j, e.cls) = e.weight;
  return m;
}

Eigen::MatrixXd confusion_from_probs(const Eigen::MatrixXd& probs, std::span<const int> labels, int num_classes) {
  if (probs.rows() != static_cast<Eigen::Index>(labels.size()) || probs.cols() != num_classes)
    throw std::invalid_argument("probability matrix must be N x C with one label per row");
  const auto sets = ClassIndexSets::from_labels(labels, num_classes);
  Eigen::MatrixXd conf = Eigen::MatrixXd::Zero(num_classes, num_classes);
  for (int j = 0; j < num_classes; ++j) {
    if (sets.cardinality(j) == 0)
      throw std::invalid_argument("class " + std::to_string(j) + " has no samples; cannot build its confusion row");
    for (std::size_t k : sets.members[j]) conf.row(j) += probs.row(static_cast<Eigen::Index>(k));
    conf.row(j) /= static_cast<double>(sets.cardinality(j));
  }
  return conf;
}

Eigen::MatrixXd confusion_matrix(const Model& model, const LabeledImages& data) {
  return confusion_from_probs(predict_probs(model, data.images), data.labels, model.spec.num_classes);
}

RelationshipGraph sparsify_topk(const Eigen::MatrixXd& confusion, int k) {
  if (k < 1) throw std::invalid_argument("top-K sparsification needs K >= 1");
  const int n = static_cast<int>(confusion.rows());
  if (confusion.cols() != n) throw std::invalid_argument("confusion matrix must be square");
  std::vector<std::vector<RelationshipGraph::Entry>> rows(n);
  for (int j = 0; j < n; ++j) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return confusion(j, a) > confusion(j, b); });
    double kept = 0;
    for (int r = 0; r < std::min(k, n); ++r) {
      const double v = confusion(j, order[r]);
      if (v < 0 || !std::isfinite(v)) throw std::invalid_argument("confusion entries must be finite and nonnegative");
      if (v == 0) break;
      rows[j].push_back({order[r], v});
      kept += v;
    }
    if (kept <= 0) throw std::invalid_argument("confusion row " + std::to_string(j) + " has no mass");
    std::sort(rows[j].begin(), rows[j].end(), [](auto& a, auto& b) { return a.cls < b.cls; });
    for (auto& e : rows[j]) e.weight /= kept;
  }
  return RelationshipGraph(n, std::min(k, n), std::move(rows));
}

namespace {

double clamped_log(double p, LossFlags* flags) {
  if (p < kLogClamp) {
    if (flags) ++flags->clamped;
    p = kLogClamp;
  }
  return std::log(p);
}

}  // namespace

double graph_loss(std::span<const double> probs, int label, const RelationshipGraph& graph, LossFlags* flags) {
  if (label < 0 || label >= graph.num_classes()) throw std::invalid_argument("label out of range");
  if (static_cast<int>(probs.size()) != graph.num_classes())
    throw std::invalid_argument("probability vector length does not match graph");
  double loss = 0;
  for (const auto& e : graph.row(label)) loss -= e.weight * clamped_log(probs[e.cls], flags);
  return loss;
}

std::vector<double> graph_loss_grad(std::span<const double> logits, int label, const RelationshipGraph& graph) {
  if (static_cast<int>(logits.size()) != graph.num_classes())
    throw std::invalid_argument("logit vector length does not match graph");
  auto grad = softmax(logits);
  for (const auto& e : graph.row(label)) grad[e.cls] -= e.weight;
  return grad;
}

double cross_entropy(std::span<const double> probs, int label, LossFlags* flags) {
  if (label < 0 || label >= static_cast<int>(probs.size())) throw std::invalid_argument("label out of range");
  return -clamped_log(probs[label], flags);
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Writes dLoss/dlogits for one sample into grad and returns its loss.
using SampleObjective = std::function<double(std::span<const float> probs, int label, std::span<float> grad,
                                             LossFlags& flags)>;

TrainResult run_training(Model model, const LabeledImages& data, const TrainConfig& cfg,
                         const SampleObjective& objective) {
  // Zero iterations is a no-op continuation.
  TrainConfig checked = cfg;
  if (checked.total_iters == 0) checked.total_iters = 1;
  checked.validate();
  check_params(model);
  if (data.images.empty()) throw std::invalid_argument("training data is empty");
  if (data.images.size() != data.labels.size()) throw std::invalid_argument("one label per image required");
  for (int l : data.labels)
    if (l < 0 || l >= model.spec.num_classes) throw std::invalid_argument("training label out of range");

  TrainResult result{std::move(model), {}, 0};
  Model& m = result.model;
  const int h = m.spec.in_height, w = m.spec.in_width;
  const auto nc = static_cast<std::size_t>(m.spec.num_classes);
  const std::size_t n = data.images.size();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);

  Rng rng(derive_seed(cfg.seed, "batches"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  std::size_t cursor = 0;

  SgdState<float> state;
  LossFlags flags;
  std::vector<Image> batch_images(bs);
  std::vector<int> batch_labels(bs);
  for (long it = 0; it < cfg.total_iters; ++it) {
    for (std::size_t b = 0; b < bs; ++b) {
      if (cursor == n) {
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      batch_images[b] = data.images[order[cursor]];
      batch_labels[b] = data.labels[order[cursor]];
      ++cursor;
    }
    const Tensor batch = to_model_batch(batch_images, h, w);
    ForwardTrace<float> trace;
    const auto out = forward(m, batch, &trace);
    Tensor dlogits({bs, nc});
    double loss = 0;
    for (std::size_t b = 0; b < bs; ++b) {
      loss += objective(out.probs.row(b), batch_labels[b], dlogits.row(b), flags);
      for (auto& g : dlogits.row(b)) g /= static_cast<float>(bs);
    }
    loss /= static_cast<double>(bs);
    if (!std::isfinite(loss)) throw NumericError("non-finite loss at iteration " + std::to_string(it), it);
    const double lr = lr_schedule(cfg, it);
    sgd_step(m.params, backward(m, trace, dlogits), lr, cfg.momentum, state, it);
    result.log.push_back({it, lr, loss});
  }
  result.clamped = flags.clamped;
  return result;
}

SampleObjective cross_entropy_objective() {
  return [](std::span<const float> probs, int label, std::span<float> grad, LossFlags& flags) {
    const std::vector<double> p(probs.begin(), probs.end());
    for (std::size_t i = 0; i < probs.size(); ++i) grad[i] = probs[i] - (static_cast<int>(i) == label ? 1.0f : 0.0f);
    return cross_entropy(p, label, &flags);
  };
}

SampleObjective graph_objective(const RelationshipGraph& graph) {
  return [&graph](std::span<const float> probs, int label, std::span<float> grad, LossFlags& flags) {
    const std::vector<double> p(probs.begin(), probs.end());
    const auto target = graph.dense_row(label);
    for (std::size_t i = 0; i < probs.size(); ++i) grad[i] = probs[i] - static_cast<float>(target[i]);
    return graph_loss(p, label, graph, &flags);
  };
}

}  // namespace

TrainResult train_stage1(const LabeledImages& data, const ModelSpec& spec, const TrainConfig& cfg) {
  const auto sets = ClassIndexSets::from_labels(data.labels, spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c)
    if (sets.cardinality(c) == 0) throw std::invalid_argument("stage-1 data has no samples of class " + std::to_string(c));
  return run_training(init_model<float>(spec, derive_seed(cfg.seed, "init")), data, cfg, cross_entropy_objective());
}

TrainResult finetune_stage2(const Model& model, const LabeledImages& data, const RelationshipGraph& graph,
                            const TrainConfig& cfg) {
  if (graph.num_classes() != model.spec.num_classes)
    throw std::invalid_argument("graph has " + std::to_string(graph.num_classes()) + " classes, model has " +
                                std::to_string(model.spec.num_classes));
  return run_training(model, data, cfg, graph_objective(graph));
}

TrainResult finetune_plain(const Model& model, const LabeledImages& data, const TrainConfig& cfg) {
  return run_training(model, data, cfg, cross_entropy_objective());
}

Eigen::MatrixXd predict_probs(const Model& model, std::span<const Image> images) {
  constexpr std::size_t kChunk = 256;
  const int nc = model.spec.num_classes;
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(images.size()), nc);
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto part = images.subspan(start, std::min(kChunk, images.size() - start));
    const auto out = forward(model, to_model_batch(part, model.spec.in_height, model.spec.in_width));
    for (std::size_t i = 0; i < part.size(); ++i)
      for (int j = 0; j < nc; ++j) probs(static_cast<Eigen::Index>(start + i), j) = out.probs(i, j);
  }
  return probs;
}

double accuracy(const Model& model, const LabeledImages& data) {
  if (data.images.empty()) throw std::invalid_argument("accuracy of an empty set is undefined");
  const auto probs = predict_probs(model, data.images);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best;
    probs.row(i).maxCoeff(&best);
    correct += best == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.images.size());
}

double mean_entropy(const Eigen::MatrixXd& probs) {
  if (probs.rows() == 0) throw std::invalid_argument("entropy of an empty set is undefined");
  double total = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double h = 0;
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      if (p > 0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(probs.rows());
}

double mean_prediction_entropy(const Model& model, std::span<const Image> images) {
  return mean_entropy(predict_probs(model, images));
}

void write_graph(const std::filesystem::path& path, const RelationshipGraph& graph) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << graph.num_classes() << ' ' << graph.k() << '\n';
  char buf[64];
  for (int j = 0; j < graph.num_classes(); ++j)
    for (const auto& e : graph.row(j)) {
      std::snprintf(buf, sizeof buf, "%.17g", e.weight);
      f << j << ' ' << e.cls << ' ' << buf << '\n';
    }
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

RelationshipGraph read_graph(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read graph " + path.string());
  int n = 0, k = 0;
  if (!(f >> n >> k) || n < 1) throw std::runtime_error(path.string() + ": bad graph header");
  std::vector<std::vector<RelationshipGraph::Entry>> rows(n);
  int j, i;
  double w;
  int prev_j = -1, prev_i = -1;
  while (f >> j >> i >> w) {
    if (j < 0 || j >= n) throw std::runtime_error(path.string() + ": row index out of range");
    if (j < prev_j || (j == prev_j && i <= prev_i))
      throw std::runtime_error(path.string() + ": entries not in ascending (j, i) order");
    rows[j].push_back({i, w});
    prev_j = j;
    prev_i = i;
  }
  if (!f.eof()) throw std::runtime_error(path.string() + ": malformed graph entry");
  try {
    return RelationshipGraph(n, k, std::move(rows));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "iter,lr,loss\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g\n", r.iter, r.lr, r.loss);
    f << buf;
  }
}

}  // namespace wslc
