#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "wslc/rng.hpp"
#include "wslc/tensor.hpp"

namespace wslc {

// Raised when a loss or gradient turns non-finite during training.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

struct ConvLayerSpec {
  int out_channels = 16;
  int kernel_size = 3;
  int stride = 1;
  int pool = 2;  // max-pool window and stride after the activation; 1 disables pooling

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

enum class Activation { kRelu, kIdentity };

struct ModelSpec {
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  std::vector<ConvLayerSpec> conv_layers;
  int embed_dim = 64;
  int num_classes = 2;
  Activation activation = Activation::kRelu;

  // 3 conv stages (16/32/64, 3x3, pool 2) + fc(64) + fc(C) on 32x32x3.
  static ModelSpec desk_default(int num_classes);

  struct StageShape {
    int channels, height, width;
  };
  // Feature-map shape after each conv stage (post-pool); front() is the input.
  std::vector<StageShape> stage_shapes() const;
  int flat_dim() const;

  // Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

template <typename T>
struct BasicModel {
  ModelSpec spec;
  std::vector<NamedTensor<T>> params;
  std::uint64_t rng_seed = 0;

  const BasicTensor<T>& param(const std::string& name) const;
  BasicTensor<T>& param(const std::string& name);

  template <typename U>
  BasicModel<U> cast() const {
    BasicModel<U> out{spec, {}, rng_seed};
    for (const auto& p : params) out.params.push_back({p.name, p.value.template cast<U>()});
    return out;
  }

  friend bool operator==(const BasicModel&, const BasicModel&) = default;
};

using Model = BasicModel<float>;
using ModelD = BasicModel<double>;

template <typename T>
using Gradients = std::vector<BasicTensor<T>>;

// Uniform Glorot init on [-b, b], b = sqrt(6 / (fan_in + fan_out)).
double xavier_bound(int fan_in, int fan_out);
template <typename T>
BasicTensor<T> xavier_init(int fan_in, int fan_out, const Shape& dims, Rng& rng);

// Xavier weights, zero biases; parameter order is conv0..convN, fc1, fc2.
template <typename T>
BasicModel<T> init_model(const ModelSpec& spec, std::uint64_t seed);

// Shapes every parameter must have for this spec, in parameter order.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelSpec& spec);

template <typename T>
void check_params(const BasicModel<T>& model);

template <typename T>
void softmax_inplace(std::span<T> logits);
std::vector<double> softmax(std::span<const double> logits);

template <typename T>
struct ForwardOutput {
  BasicTensor<T> logits;      // N x C
  BasicTensor<T> probs;       // N x C
  BasicTensor<T> embeddings;  // N x embed_dim
};

// Activations retained by a forward pass so backward can run on the same batch.
template <typename T>
class ForwardTrace {
 public:
  ForwardTrace();
  ~ForwardTrace();
  ForwardTrace(ForwardTrace&&) noexcept;
  ForwardTrace& operator=(ForwardTrace&&) noexcept;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

// batch is N x C_in x H x W. Pure; safe to call concurrently on a shared model.
template <typename T>
ForwardOutput<T> forward(const BasicModel<T>& model, const BasicTensor<T>& batch,
                         ForwardTrace<T>* trace = nullptr);

template <typename T>
BasicTensor<T> embed(const BasicModel<T>& model, const BasicTensor<T>& images);

// Parameter gradients given dLoss/dlogits (N x C) for the traced batch.
template <typename T>
Gradients<T> backward(const BasicModel<T>& model, const ForwardTrace<T>& trace,
                      const BasicTensor<T>& dlogits);

// Same, with the upstream gradient taken at the softmax outputs.
template <typename T>
Gradients<T> backward_from_probs(const BasicModel<T>& model, const ForwardTrace<T>& trace,
                                 const BasicTensor<T>& dprobs);

template <typename T>
struct SgdState {
  std::vector<BasicTensor<T>> velocity;
};

// v <- momentum * v + g; p <- p - lr * v. Throws NumericError on non-finite grads.
template <typename T>
void sgd_step(std::vector<NamedTensor<T>>& params, const Gradients<T>& grads, double lr,
              double momentum, SgdState<T>& state, long iteration = -1);

struct TrainConfig {
  int batch_size = 64;
  double base_lr = 0.01;
  double lr_decay_factor = 0.1;
  int lr_step = 100;
  double momentum = 0.9;
  int total_iters = 300;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

double lr_schedule(const TrainConfig& cfg, long iter);

// Loss head for gradient checking: returns the loss and writes dLoss/dlogits.
using LossFn = std::function<double(const TensorD& logits, TensorD* dlogits)>;

LossFn cross_entropy_loss(std::vector<int> labels);
LossFn squared_error_loss(TensorD targets);

struct GradCheckOptions {
  double h = 1e-5;
  int coords_per_param = 50;
  std::uint64_t seed = 0;
};

// Max over sampled coordinates of |analytic - numeric| / max(|a|, |n|, 1e-12),
// numeric by central differences.
double grad_check(const ModelD& model, const TensorD& batch, const LossFn& loss,
                  const GradCheckOptions& opts = {});

}  // namespace wslc
