#include <cmath>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "wslc/checkpoint.hpp"
#include "wslc/curriculum.hpp"

using namespace wslc;

namespace {

// Direct averaging, written independently of confusion_from_probs.
std::vector<std::vector<double>> average_by_class(const std::vector<std::vector<double>>& probs,
                                                  const std::vector<int>& labels, int c) {
  std::vector<std::vector<double>> out(c, std::vector<double>(c, 0.0));
  std::vector<int> count(c, 0);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    for (int i = 0; i < c; ++i) out[labels[k]][i] += probs[k][i];
    ++count[labels[k]];
  }
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < c; ++i) out[j][i] /= count[j];
  return out;
}

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

RelationshipGraph random_graph(int c, int k, Rng& rng) {
  Eigen::MatrixXd conf(c, c);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) conf(i, j) = rng.uniform(0.01, 1.0);
  return sparsify_topk(conf, k);
}

ModelSpec small_spec(int classes) {
  ModelSpec spec;
  spec.in_height = spec.in_width = 16;
  spec.conv_layers = {{8, 3, 1, 2}, {16, 3, 1, 2}};
  spec.embed_dim = 32;
  spec.num_classes = classes;
  return spec;
}

LabeledImages easy_set(const CategorySpace& space, int per_class, std::uint64_t seed, int size) {
  std::vector<Sample> all;
  for (int c = 0; c < space.size(); ++c) {
    auto s = gen_easy(space, c, per_class, seed, size);
    all.insert(all.end(), s.begin(), s.end());
  }
  return training_view(all, space.size());
}

}  // namespace

TEST_CASE("confusion matrix oracles") {
  // Perfect classifier.
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(6, 3);
  std::vector<int> labels{0, 1, 2, 0, 1, 2};
  for (int k = 0; k < 6; ++k) onehot(k, labels[k]) = 1.0;
  CHECK(confusion_from_probs(onehot, labels, 3) == Eigen::MatrixXd::Identity(3, 3));

  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(8, 4, 0.25);
  std::vector<int> l4{0, 1, 2, 3, 3, 2, 1, 0};
  CHECK(confusion_from_probs(uniform, l4, 4) == Eigen::MatrixXd::Constant(4, 4, 0.25));

  // Hand-specified probability vectors, 2 per class.
  std::vector<std::vector<double>> p{{0.7, 0.2, 0.1}, {0.5, 0.3, 0.2}, {0.1, 0.8, 0.1},
                                     {0.2, 0.6, 0.2}, {0.3, 0.3, 0.4}, {0.0, 0.1, 0.9}};
  std::vector<int> pl{0, 0, 1, 1, 2, 2};
  const auto conf = confusion_from_probs(to_matrix(p), pl, 3);
  const auto oracle = average_by_class(p, pl, 3);
  for (int j = 0; j < 3; ++j) {
    double sum = 0;
    for (int i = 0; i < 3; ++i) {
      CHECK(conf(j, i) == oracle[j][i]);
      sum += conf(j, i);
    }
    CHECK(std::abs(sum - 1) < 1e-6);
  }
  CHECK(conf(0, 0) == doctest::Approx(0.6));

  std::vector<int> missing{0, 0, 1, 1, 0, 1};
  try {
    confusion_from_probs(to_matrix(p), missing, 3);
    FAIL("expected error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
  }
}

TEST_CASE("confusion of a hard-label classifier equals its normalized count matrix") {
  Rng rng(4);
  const int c = 5, n = 200;
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(n, c);
  std::vector<int> labels(n);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(c, c);
  for (int k = 0; k < n; ++k) {
    labels[k] = k % c;
    const int pred = static_cast<int>(rng.below(c));
    probs(k, pred) = 1.0;
    counts(labels[k], pred) += 1;
  }
  for (int j = 0; j < c; ++j) counts.row(j) /= counts.row(j).sum();
  CHECK(confusion_from_probs(probs, labels, c) == counts);
}

TEST_CASE("sparsify_topk") {
  CHECK(kDefaultGraphTopK == 5);
  Eigen::MatrixXd conf(5, 5);
  conf << 0.5, 0.3, 0.1, 0.06, 0.04,  //
      0.1, 0.6, 0.1, 0.1, 0.1,        //
      0.2, 0.2, 0.2, 0.2, 0.2,        //
      0.0, 0.0, 0.0, 0.0, 1.0,        //
      0.04, 0.06, 0.1, 0.3, 0.5;
  auto g = sparsify_topk(conf, 2);
  auto r0 = g.dense_row(0);
  CHECK(r0[0] == doctest::Approx(0.625).epsilon(1e-15));
  CHECK(r0[1] == doctest::Approx(0.375).epsilon(1e-15));
  CHECK(r0[2] == 0.0);
  // Ties go to the lower class index.
  auto r2 = g.row(2);
  REQUIRE(r2.size() == 2);
  CHECK(r2[0].cls == 0);
  CHECK(r2[1].cls == 1);
  // Zero entries are never kept.
  CHECK(g.row(3).size() == 1);

  auto full = sparsify_topk(conf, 5);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 5; ++i) CHECK(full.dense()(j, i) == doctest::Approx(conf(j, i)).epsilon(1e-12));
  CHECK(sparsify_topk(conf, 9) == full);
  CHECK_THROWS_AS(sparsify_topk(conf, 0), std::invalid_argument);

  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 3 + static_cast<int>(rng.below(8));
    const int k = 1 + static_cast<int>(rng.below(6));
    auto graph = random_graph(c, k, rng);
    for (int j = 0; j < c; ++j) {
      CHECK(static_cast<int>(graph.row(j).size()) <= k);
      double sum = 0;
      for (auto& e : graph.row(j)) {
        CHECK(e.weight > 0);
        sum += e.weight;
      }
      CHECK(std::abs(sum - 1) < 1e-9);
    }
    // Idempotent.
    CHECK(sparsify_topk(graph.dense(), k).dense().isApprox(graph.dense(), 1e-15));
  }
}

TEST_CASE("graph validation") {
  using E = RelationshipGraph::Entry;
  CHECK_THROWS(RelationshipGraph(2, 1, {{{0, 0.5}, {1, 0.5}}, {{1, 1.0}}}));
  CHECK_THROWS(RelationshipGraph(2, 2, {{{0, 0.5}, {1, 0.4}}, {{1, 1.0}}}));
  CHECK_THROWS(RelationshipGraph(2, 2, {{}, {{1, 1.0}}}));
  CHECK_THROWS(RelationshipGraph(2, 2, {{{2, 1.0}}, {{1, 1.0}}}));
  CHECK_THROWS(RelationshipGraph(2, 2, {{{0, 1.5}, {1, -0.5}}, {{1, 1.0}}}));
  CHECK_NOTHROW(RelationshipGraph(2, 2, {{E{0, 0.25}, E{1, 0.75}}, {E{1, 1.0}}}));
}

TEST_CASE("graph loss") {
  auto id = RelationshipGraph::identity(3);
  std::vector<double> p{0.7, 0.2, 0.1};
  CHECK(graph_loss(p, 1, id) == -std::log(0.2));

  RelationshipGraph g(3, 2, {{{0, 0.8}, {1, 0.2}}, {{1, 1.0}}, {{2, 1.0}}});
  const double oracle = -(0.8 * std::log(0.7) + 0.2 * std::log(0.2));
  CHECK(graph_loss(p, 0, g) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(graph_loss(p, 0, g) == doctest::Approx(0.6072).epsilon(1e-4));

  // At probs == row the loss is the row's entropy and nothing does better.
  std::vector<double> row{0.8, 0.2, 0.0};
  const double entropy = -(0.8 * std::log(0.8) + 0.2 * std::log(0.2));
  CHECK(graph_loss(row, 0, g) == doctest::Approx(entropy).epsilon(1e-14));
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> q{rng.uniform(), rng.uniform(), rng.uniform()};
    const double s = q[0] + q[1] + q[2];
    for (auto& v : q) v /= s;
    CHECK(graph_loss(q, 0, g) >= entropy - 1e-12);
  }

  LossFlags flags;
  std::vector<double> zero{1.0, 0.0, 0.0};
  const double clamped = graph_loss(zero, 0, g, &flags);
  CHECK(std::isfinite(clamped));
  CHECK(flags.clamped == 1);
  CHECK(clamped == doctest::Approx(-0.2 * std::log(kLogClamp)));
}

TEST_CASE("graph loss with identity graph equals cross entropy") {
  Rng rng(12);
  for (int t = 0; t < 1000; ++t) {
    const int c = 2 + static_cast<int>(rng.below(9));
    std::vector<double> logits(c);
    for (auto& z : logits) z = rng.uniform(-8, 8);
    const int label = static_cast<int>(rng.below(c));
    const auto p = softmax(logits);
    auto id = RelationshipGraph::identity(c);
    CHECK(std::abs(graph_loss(p, label, id) - cross_entropy(p, label)) <= 1e-12);
    const auto grad = graph_loss_grad(logits, label, id);
    for (int i = 0; i < c; ++i) CHECK(std::abs(grad[i] - (p[i] - (i == label))) <= 1e-12);
  }
}

TEST_CASE("graph loss gradient") {
  RelationshipGraph g(3, 2, {{{0, 0.8}, {1, 0.2}}, {{1, 1.0}}, {{0, 0.5}, {2, 0.5}}});
  // Logits whose softmax equals a full-support row give a zero gradient.
  RelationshipGraph full(3, 3, {{{0, 0.5}, {1, 0.3}, {2, 0.2}}, {{1, 1.0}}, {{2, 1.0}}});
  std::vector<double> logits{std::log(0.5), std::log(0.3), std::log(0.2)};
  for (double v : graph_loss_grad(logits, 0, full)) CHECK(std::abs(v) < 1e-15);

  // Central differences of graph_loss(softmax(z)).
  Rng rng(77);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const int c = 2 + static_cast<int>(rng.below(7));
    auto graph = random_graph(c, 1 + static_cast<int>(rng.below(5)), rng);
    std::vector<double> z(c);
    for (auto& v : z) v = rng.uniform(-3, 3);
    const int label = static_cast<int>(rng.below(c));
    const auto analytic = graph_loss_grad(z, label, graph);
    for (int i = 0; i < c; ++i) {
      const double h = 1e-6;
      auto up = z, down = z;
      up[i] += h;
      down[i] -= h;
      const double numeric = (graph_loss(softmax(up), label, graph) - graph_loss(softmax(down), label, graph)) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12}));
    }
  }
  CHECK(worst < 1e-6);
  CHECK_THROWS(graph_loss_grad(std::vector<double>{0, 0}, 0, g));
}

TEST_CASE("the graph row minimizes the loss over the simplex") {
  Rng rng(31);
  for (int t = 0; t < 10; ++t) {
    const int c = 4;
    auto graph = random_graph(c, 3, rng);
    const int label = static_cast<int>(rng.below(c));
    // Projected gradient descent on the simplex from the uniform point.
    std::vector<double> q(c, 1.0 / c);
    const auto target = graph.dense_row(label);
    for (int step = 0; step < 20000; ++step) {
      std::vector<double> grad(c, 0.0);
      for (int i = 0; i < c; ++i)
        if (target[i] > 0) grad[i] = -target[i] / std::max(q[i], 1e-12);
      for (int i = 0; i < c; ++i) q[i] -= 1e-3 * grad[i];
      // Euclidean projection onto the simplex.
      auto sorted = q;
      std::sort(sorted.rbegin(), sorted.rend());
      double cum = 0, theta = 0;
      for (int i = 0; i < c; ++i) {
        cum += sorted[i];
        const double th = (cum - 1) / (i + 1);
        if (sorted[i] - th > 0) theta = th;
      }
      for (auto& v : q) v = std::max(v - theta, 0.0);
    }
    for (int i = 0; i < c; ++i) CHECK(std::abs(q[i] - target[i]) < 1e-4);
  }
}

TEST_CASE("entropy diagnostics") {
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(3, 1500, 1.0 / 1500);
  CHECK(std::abs(mean_entropy(uniform) - std::log(1500.0)) < 1e-9);
  CHECK(mean_entropy(uniform) == doctest::Approx(7.313).epsilon(1e-3));
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Identity(4, 4);
  CHECK(mean_entropy(onehot) == 0.0);
}

TEST_CASE("graph file round trip") {
  Rng rng(5);
  auto g = random_graph(6, 3, rng);
  const auto dir = test::temp_dir("graph");
  write_graph(dir / "g.txt", g);
  CHECK(read_graph(dir / "g.txt") == g);
  std::ifstream f(dir / "g.txt");
  std::string header;
  std::getline(f, header);
  CHECK(header == "6 3");

  std::ofstream(dir / "bad.txt") << "2 1\n1 1 1.0\n0 0 1.0\n";
  CHECK_THROWS(read_graph(dir / "bad.txt"));
  std::ofstream(dir / "bad2.txt") << "2 1\n0 0 0.5\n1 1 1.0\n";
  CHECK_THROWS(read_graph(dir / "bad2.txt"));
}

TEST_CASE("stage-1 training on separable easy data") {
  CategorySpace space(4);
  const auto data = easy_set(space, 40, 3, 16);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.base_lr = 0.05;
  cfg.total_iters = 150;
  cfg.lr_step = 100;
  cfg.seed = 9;
  auto result = train_stage1(data, small_spec(4), cfg);
  CHECK(accuracy(result.model, data) >= 0.95);
  // 160 samples / 32 per batch = 5 iterations per epoch.
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += result.log[i].loss;
    last += result.log[result.log.size() - 1 - i].loss;
  }
  CHECK(last < first);

  auto again = train_stage1(data, small_spec(4), cfg);
  CHECK(encode_checkpoint(again.model.params) == encode_checkpoint(result.model.params));

  auto missing = data;
  for (auto& l : missing.labels) l = l == 3 ? 0 : l;
  CHECK_THROWS(train_stage1(missing, small_spec(4), cfg));
}

TEST_CASE("stage-2 fine-tuning contracts") {
  CategorySpace space(4);
  const auto data = easy_set(space, 10, 5, 16);
  const auto model = init_model<float>(small_spec(4), 1);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.total_iters = 12;
  cfg.lr_step = 5;
  cfg.seed = 2;
  auto with_identity = finetune_stage2(model, data, RelationshipGraph::identity(4), cfg);
  auto plain = finetune_plain(model, data, cfg);
  CHECK(with_identity.model.params == plain.model.params);
  CHECK_FALSE(with_identity.model.params == model.params);

  CHECK_THROWS(finetune_stage2(model, data, RelationshipGraph::identity(3), cfg));

  cfg.total_iters = 0;
  auto untouched = finetune_stage2(model, data, RelationshipGraph::identity(4), cfg);
  CHECK(untouched.model.params == model.params);
  CHECK(untouched.log.empty());
}

TEST_CASE("training aborts on a non-finite loss") {
  CategorySpace space(2);
  const auto data = easy_set(space, 4, 5, 16);
  auto model = init_model<float>(small_spec(2), 1);
  model.params.back().value[0] = std::numeric_limits<float>::infinity();
  TrainConfig cfg;
  cfg.total_iters = 3;
  try {
    finetune_plain(model, data, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.iteration() == 0);
  }
}
