#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <vector>

#include "wslc/nn.hpp"
#include "wslc/webdata.hpp"

namespace wslc {

inline constexpr int kDefaultGraphTopK = 5;
inline constexpr double kLogClamp = 1e-12;

// Per-class sample index sets C_i.
struct ClassIndexSets {
  std::vector<std::vector<std::size_t>> members;

  static ClassIndexSets from_labels(std::span<const int> labels, int num_classes);
  int num_classes() const { return static_cast<int>(members.size()); }
  std::size_t cardinality(int cls) const { return members.at(cls).size(); }
};

// Sparse row-stochastic C x C matrix. Row j lists, for samples of true class
// j, the classes the model spreads its belief over.
class RelationshipGraph {
 public:
  struct Entry {
    int cls;
    double weight;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  // Throws std::invalid_argument unless every row has 1..K positive entries
  // with valid, distinct class indices summing to 1 within 1e-9.
  RelationshipGraph(int num_classes, int k, std::vector<std::vector<Entry>> rows);

  static RelationshipGraph identity(int num_classes);

  int num_classes() const { return num_classes_; }
  int k() const { return k_; }
  const std::vector<Entry>& row(int cls) const { return rows_.at(cls); }
  std::vector<double> dense_row(int cls) const;
  Eigen::MatrixXd dense() const;

  friend bool operator==(const RelationshipGraph&, const RelationshipGraph&) = default;

 private:
  int num_classes_;
  int k_;
  std::vector<std::vector<Entry>> rows_;
};

// Row j = mean over samples labeled j of the predicted distribution.
// probs is N x C. Throws naming the first empty class.
Eigen::MatrixXd confusion_from_probs(const Eigen::MatrixXd& probs, std::span<const int> labels, int num_classes);
Eigen::MatrixXd confusion_matrix(const Model& model, const LabeledImages& data);

// Keeps the K largest entries per row (ties to the lower class index; zeros
// dropped) and renormalizes.
RelationshipGraph sparsify_topk(const Eigen::MatrixXd& confusion, int k = kDefaultGraphTopK);

struct LossFlags {
  long clamped = 0;  // log arguments lifted to kLogClamp
};

// -sum_i R(label, i) log probs[i].
double graph_loss(std::span<const double> probs, int label, const RelationshipGraph& graph,
                  LossFlags* flags = nullptr);
// d graph_loss(softmax(logits)) / d logits = softmax(logits) - R(label, .).
std::vector<double> graph_loss_grad(std::span<const double> logits, int label, const RelationshipGraph& graph);

double cross_entropy(std::span<const double> probs, int label, LossFlags* flags = nullptr);

struct LossRecord {
  long iter;
  double lr;
  double loss;
};

struct TrainResult {
  Model model;
  std::vector<LossRecord> log;
  long clamped = 0;
};

// Cross-entropy training from a fresh model seeded by cfg.seed.
TrainResult train_stage1(const LabeledImages& data, const ModelSpec& spec, const TrainConfig& cfg);

// Continues from model with the graph-regularized loss; the graph stays fixed.
TrainResult finetune_stage2(const Model& model, const LabeledImages& data, const RelationshipGraph& graph,
                            const TrainConfig& cfg);

// Plain cross-entropy continuation (the no-graph baseline computed without the graph path).
TrainResult finetune_plain(const Model& model, const LabeledImages& data, const TrainConfig& cfg);

Eigen::MatrixXd predict_probs(const Model& model, std::span<const Image> images);
double accuracy(const Model& model, const LabeledImages& data);

// Mean Shannon entropy (nats) of the predicted distributions.
double mean_entropy(const Eigen::MatrixXd& probs);
double mean_prediction_entropy(const Model& model, std::span<const Image> images);

// "C K" header, then "j i weight" per nonzero in ascending (j, i), weights at 17 significant digits.
void write_graph(const std::filesystem::path& path, const RelationshipGraph& graph);
RelationshipGraph read_graph(const std::filesystem::path& path);

// CSV with header iter,lr,loss.
void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log);

}  // namespace wslc
