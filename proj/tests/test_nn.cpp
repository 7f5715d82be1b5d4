#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "test_util.hpp"
#include "wslc/checkpoint.hpp"
#include "wslc/nn.hpp"

using namespace wslc;

namespace {

ModelSpec tiny_spec(int classes = 3) {
  ModelSpec spec;
  spec.in_channels = 3;
  spec.in_height = 8;
  spec.in_width = 8;
  spec.conv_layers = {{4, 3, 1, 2}};
  spec.embed_dim = 8;
  spec.num_classes = classes;
  return spec;
}

}  // namespace

TEST_CASE("xavier bound and sampling") {
  CHECK(xavier_bound(3, 3) == 1.0);
  CHECK(xavier_bound(8, 4) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK_THROWS_AS(xavier_bound(0, 4), std::invalid_argument);

  Rng rng(11);
  auto t = xavier_init<double>(8, 4, {1000}, rng);
  const double b = std::sqrt(0.5);
  for (double v : t.values()) CHECK((v >= -b && v <= b));

  // Uniform on [-b, b] has variance b^2 / 3.
  Rng rng2(5);
  auto big = xavier_init<double>(50, 50, {100000}, rng2);
  double mean = 0, var = 0;
  for (double v : big.values()) mean += v;
  mean /= big.size();
  for (double v : big.values()) var += (v - mean) * (v - mean);
  var /= big.size() - 1;
  const double expected = xavier_bound(50, 50) * xavier_bound(50, 50) / 3.0;
  CHECK(std::abs(var - expected) < 0.05 * expected);

  Rng a(3), c(3);
  CHECK(xavier_init<float>(4, 4, {16}, a) == xavier_init<float>(4, 4, {16}, c));
}

TEST_CASE("model spec validation") {
  auto spec = ModelSpec::desk_default(4);
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.flat_dim() == 64 * 4 * 4);
  spec.embed_dim = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = ModelSpec::desk_default(1);
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = ModelSpec::desk_default(4);
  spec.in_height = spec.in_width = 4;  // three 2x pools collapse 4x4
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("softmax") {
  auto p = softmax(std::vector<double>{0, 0});
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));
  p = softmax(std::vector<double>{std::log(2.0), 0});
  CHECK(p[0] == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> z(6), shifted(6);
    const double c = rng.uniform(-50, 50);
    for (int i = 0; i < 6; ++i) {
      z[i] = rng.uniform(-10, 10);
      shifted[i] = z[i] + c;
    }
    auto a = softmax(z), b = softmax(shifted);
    double sum = 0;
    for (int i = 0; i < 6; ++i) {
      CHECK(a[i] > 0);
      CHECK(std::abs(a[i] - b[i]) < 1e-9);
      sum += a[i];
    }
    CHECK(std::abs(sum - 1) < 1e-12);
  }
  // Extreme logits underflow to an exact zero, never NaN.
  auto e = softmax(std::vector<double>{1000, -1000});
  CHECK(e[0] == 1.0);
  CHECK(e[1] == 0.0);
}

TEST_CASE("forward contract") {
  auto model = init_model<float>(ModelSpec::desk_default(4), 42);
  auto batch = test::random_batch<float>(6, 3, 32, 32, 1);
  // Rows 0 and 1 identical.
  std::copy(batch.row(0).begin(), batch.row(0).end(), batch.row(1).begin());
  auto out = forward(model, batch);
  CHECK(out.probs.dims() == Shape{6, 4});
  CHECK(out.embeddings.dims() == Shape{6, 64});
  for (std::size_t i = 0; i < 6; ++i) {
    double sum = 0;
    for (float v : out.probs.row(i)) {
      CHECK(v > 0);
      sum += v;
    }
    CHECK(std::abs(sum - 1) < 1e-6);
  }
  for (std::size_t j = 0; j < 4; ++j) CHECK(out.probs(0, j) == out.probs(1, j));
  CHECK(forward(model, batch).probs == out.probs);

  CHECK_THROWS_AS(forward(model, test::random_batch<float>(2, 3, 16, 16, 1)), std::invalid_argument);
  CHECK_THROWS_AS(forward(model, Tensor({2, 3, 32})), std::invalid_argument);
}

TEST_CASE("fresh models predict near-uniformly on average") {
  // Symmetry holds in expectation over the init distribution, so average over inits.
  constexpr int kInits = 20;
  double mean[4] = {0, 0, 0, 0};
  for (int s = 0; s < kInits; ++s) {
    auto model = init_model<float>(ModelSpec::desk_default(4), s);
    auto batch = test::random_batch<float>(256, 3, 32, 32, 100 + s);
    for (auto& v : batch.values()) v -= 0.5f;
    auto probs = forward(model, batch).probs;
    for (std::size_t i = 0; i < 256; ++i)
      for (std::size_t j = 0; j < 4; ++j) mean[j] += probs(i, j) / (256.0 * kInits);
  }
  for (double m : mean) CHECK(std::abs(m - 0.25) < 0.05);
}

TEST_CASE("embed equals forward embeddings") {
  auto model = init_model<float>(ModelSpec::desk_default(3), 1);
  auto batch = test::random_batch<float>(3, 3, 32, 32, 4);
  std::copy(batch.row(2).begin(), batch.row(2).end(), batch.row(0).begin());
  auto e = embed(model, batch);
  CHECK(e.dim(1) == 64);
  CHECK(e == forward(model, batch).embeddings);
  for (std::size_t j = 0; j < 64; ++j) CHECK(e(0, j) == e(2, j));
}

TEST_CASE("backward linearity") {
  auto model = init_model<double>(tiny_spec(), 3);
  auto batch = test::random_batch<double>(4, 3, 8, 8, 5);
  ForwardTrace<double> trace;
  forward(model, batch, &trace);

  auto zero = backward(model, trace, TensorD({4, 3}));
  for (const auto& g : zero)
    for (double v : g.values()) CHECK(v == 0.0);

  TensorD up({4, 3});
  Rng rng(8);
  for (auto& v : up.values()) v = rng.uniform(-1, 1);
  TensorD up2 = up;
  for (auto& v : up2.values()) v *= 2;
  auto g1 = backward(model, trace, up);
  auto g2 = backward(model, trace, up2);
  for (std::size_t p = 0; p < g1.size(); ++p)
    for (std::size_t j = 0; j < g1[p].size(); ++j) CHECK(g2[p][j] == doctest::Approx(2 * g1[p][j]).epsilon(1e-12));

  CHECK_THROWS_AS(backward(model, trace, TensorD({3, 3})), std::invalid_argument);
  ForwardTrace<double> empty;
  CHECK_THROWS_AS(backward(model, empty, up), std::invalid_argument);
}

TEST_CASE("backward from probabilities matches chain rule through softmax") {
  auto model = init_model<double>(tiny_spec(), 13);
  auto batch = test::random_batch<double>(3, 3, 8, 8, 2);
  ForwardTrace<double> trace;
  auto out = forward(model, batch, &trace);
  // dL/dp for L = -sum log p_label equals -1/p_label at the label.
  std::vector<int> labels{0, 2, 1};
  TensorD dprobs({3, 3});
  for (std::size_t i = 0; i < 3; ++i) dprobs(i, labels[i]) = -1.0 / out.probs(i, labels[i]);
  TensorD dlogits;
  cross_entropy_loss(labels)(out.logits, &dlogits);
  auto a = backward_from_probs(model, trace, dprobs);
  auto b = backward(model, trace, dlogits);
  for (std::size_t p = 0; p < a.size(); ++p)
    for (std::size_t j = 0; j < a[p].size(); ++j) CHECK(a[p][j] == doctest::Approx(b[p][j]).epsilon(1e-10));
}

TEST_CASE("grad_check on tiny models") {
  auto model = init_model<double>(tiny_spec(), 21);
  auto batch = test::random_batch<double>(3, 3, 8, 8, 22);
  const auto loss = cross_entropy_loss({0, 1, 2});
  const double err = grad_check(model, batch, loss, {1e-5, 50, 1});
  CHECK(err < 1e-4);
  CHECK(grad_check(model, batch, loss, {1e-5, 50, 1}) == err);

  // No conv layers and identity activation: a linear map, squared-error head.
  ModelSpec lin;
  lin.in_channels = 2;
  lin.in_height = lin.in_width = 3;
  lin.embed_dim = 4;
  lin.num_classes = 3;
  lin.activation = Activation::kIdentity;
  auto lin_model = init_model<double>(lin, 4);
  auto lin_batch = test::random_batch<double>(5, 2, 3, 3, 6);
  TensorD targets({5, 3});
  Rng rng(1);
  for (auto& v : targets.values()) v = rng.uniform(-1, 1);
  CHECK(grad_check(lin_model, lin_batch, squared_error_loss(targets), {1e-5, 50, 2}) < 1e-8);
}

TEST_CASE("grad_check across deeper randomized models") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelSpec spec;
    spec.in_height = spec.in_width = 12;
    spec.conv_layers = {{4, 3, 1, 2}, {5, 3, 1, 1}, {3, 3, 2, 1}};
    spec.embed_dim = 6;
    spec.num_classes = 4;
    auto model = init_model<double>(spec, 100 + seed);
    auto batch = test::random_batch<double>(2, 3, 12, 12, 200 + seed);
    CHECK(grad_check(model, batch, cross_entropy_loss({1, 3}), {1e-5, 50, seed}) < 1e-4);
  }
}

TEST_CASE("sgd step") {
  std::vector<NamedTensor<double>> params{{"w", TensorD({1}, 1.0)}};
  SgdState<double> state;
  sgd_step(params, {TensorD({1}, 0.5)}, 0.1, 0.0, state);
  CHECK(params[0].value[0] == doctest::Approx(0.95).epsilon(1e-15));

  std::vector<NamedTensor<double>> frozen{{"w", TensorD({3}, 2.0)}};
  SgdState<double> s0;
  sgd_step(frozen, {TensorD({3}, 7.0)}, 0.0, 0.9, s0);
  for (double v : frozen[0].value.values()) CHECK(v == 2.0);

  // v1 = 1, w1 = -0.1; v2 = 0.9 + 1 = 1.9, w2 = -0.1 - 0.19.
  std::vector<NamedTensor<double>> m{{"w", TensorD({1}, 0.0)}};
  SgdState<double> sm;
  sgd_step(m, {TensorD({1}, 1.0)}, 0.1, 0.9, sm);
  sgd_step(m, {TensorD({1}, 1.0)}, 0.1, 0.9, sm);
  CHECK(m[0].value[0] == doctest::Approx(-0.29).epsilon(1e-14));

  std::vector<NamedTensor<double>> bad{{"w", TensorD({2}, 0.0)}};
  SgdState<double> sb;
  TensorD g({2});
  g[1] = std::nan("");
  try {
    sgd_step(bad, {g}, 0.1, 0.9, sb, 17);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.iteration() == 17);
  }
}

TEST_CASE("lr schedule") {
  TrainConfig cfg;
  cfg.base_lr = 0.01;
  cfg.lr_decay_factor = 0.1;
  cfg.lr_step = 1500;
  CHECK(lr_schedule(cfg, 0) == 0.01);
  CHECK(lr_schedule(cfg, 1500) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(lr_schedule(cfg, 2999) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(lr_schedule(cfg, 3000) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK_THROWS(lr_schedule(cfg, -1));
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto model = init_model<float>(ModelSpec::desk_default(5), 99);
  const auto bytes = encode_checkpoint(model.params);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "WSLC");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == model.params.size());
  auto decoded = decode_checkpoint(bytes);
  CHECK(decoded == model.params);
  CHECK(encode_checkpoint(decoded) == bytes);

  const auto dir = test::temp_dir("ckpt");
  save_checkpoint(dir / "m.ckpt", model);
  auto loaded = load_checkpoint(dir / "m.ckpt", model.spec);
  CHECK(loaded.params == model.params);
  CHECK_THROWS(load_checkpoint(dir / "m.ckpt", ModelSpec::desk_default(4)));

  auto corrupt = bytes;
  corrupt[0] = 'X';
  CHECK_THROWS(decode_checkpoint(corrupt));
  corrupt = bytes;
  corrupt.pop_back();
  CHECK_THROWS(decode_checkpoint(corrupt));
}

TEST_CASE("identical seeds give identical models") {
  CHECK(init_model<float>(ModelSpec::desk_default(4), 5) == init_model<float>(ModelSpec::desk_default(4), 5));
  CHECK_FALSE(init_model<float>(ModelSpec::desk_default(4), 5) == init_model<float>(ModelSpec::desk_default(4), 6));
}
