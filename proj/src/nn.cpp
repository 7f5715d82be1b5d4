#include "wslc/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "wslc/parallel.hpp"

namespace wslc {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// Backward sums per-sample gradients in chunks of this many samples, then
// chunks in order, so the result does not depend on the worker count.
constexpr std::size_t kReduceChunk = 8;

int conv_out(int in, int kernel, int stride) {
  const int pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

ModelSpec ModelSpec::desk_default(int num_classes) {
  ModelSpec spec;
  spec.conv_layers = {{16, 3, 1, 2}, {32, 3, 1, 2}, {64, 3, 1, 2}};
  spec.embed_dim = 64;
  spec.num_classes = num_classes;
  return spec;
}

std::vector<ModelSpec::StageShape> ModelSpec::stage_shapes() const {
  std::vector<StageShape> shapes{{in_channels, in_height, in_width}};
  for (const auto& layer : conv_layers) {
    const auto& prev = shapes.back();
    const int oh = conv_out(prev.height, layer.kernel_size, layer.stride);
    const int ow = conv_out(prev.width, layer.kernel_size, layer.stride);
    shapes.push_back({layer.out_channels, oh / std::max(1, layer.pool), ow / std::max(1, layer.pool)});
  }
  return shapes;
}

int ModelSpec::flat_dim() const {
  const auto s = stage_shapes().back();
  return s.channels * s.height * s.width;
}

void ModelSpec::validate() const {
  if (in_channels < 1 || in_height < 1 || in_width < 1)
    throw std::invalid_argument("model input dims must be >= 1");
  if (embed_dim < 1) throw std::invalid_argument("embed_dim must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  int h = in_height, w = in_width;
  for (std::size_t i = 0; i < conv_layers.size(); ++i) {
    const auto& l = conv_layers[i];
    const std::string where = "conv layer " + std::to_string(i);
    if (l.out_channels < 1 || l.kernel_size < 1 || l.stride < 1 || l.pool < 1)
      throw std::invalid_argument(where + ": channels, kernel, stride and pool must be >= 1");
    h = conv_out(h, l.kernel_size, l.stride);
    w = conv_out(w, l.kernel_size, l.stride);
    if (h < 1 || w < 1) throw std::invalid_argument(where + ": convolution output collapses to zero size");
    h /= l.pool;
    w /= l.pool;
    if (h < 1 || w < 1) throw std::invalid_argument(where + ": pooling output collapses to zero size");
  }
}

template <typename T>
const BasicTensor<T>& BasicModel<T>::param(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p.value;
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
BasicTensor<T>& BasicModel<T>::param(const std::string& name) {
  for (auto& p : params)
    if (p.name == name) return p.value;
  throw std::out_of_range("no parameter named " + name);
}

double xavier_bound(int fan_in, int fan_out) {
  if (fan_in < 1 || fan_out < 1) throw std::invalid_argument("xavier fan_in and fan_out must be >= 1");
  return std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
}

template <typename T>
BasicTensor<T> xavier_init(int fan_in, int fan_out, const Shape& dims, Rng& rng) {
  const double b = xavier_bound(fan_in, fan_out);
  BasicTensor<T> t(dims);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-b, b));
  return t;
}

std::vector<std::pair<std::string, Shape>> param_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, Shape>> layout;
  int in_c = spec.in_channels;
  for (std::size_t i = 0; i < spec.conv_layers.size(); ++i) {
    const auto& l = spec.conv_layers[i];
    const auto k = static_cast<std::size_t>(l.kernel_size);
    const std::string base = "conv" + std::to_string(i);
    layout.push_back({base + ".weight", {static_cast<std::size_t>(l.out_channels), static_cast<std::size_t>(in_c), k, k}});
    layout.push_back({base + ".bias", {static_cast<std::size_t>(l.out_channels)}});
    in_c = l.out_channels;
  }
  const auto e = static_cast<std::size_t>(spec.embed_dim);
  const auto c = static_cast<std::size_t>(spec.num_classes);
  layout.push_back({"fc1.weight", {e, static_cast<std::size_t>(spec.flat_dim())}});
  layout.push_back({"fc1.bias", {e}});
  layout.push_back({"fc2.weight", {c, e}});
  layout.push_back({"fc2.bias", {c}});
  return layout;
}

template <typename T>
BasicModel<T> init_model(const ModelSpec& spec, std::uint64_t seed) {
  BasicModel<T> model{spec, {}, seed};
  Rng rng(seed);
  for (auto& [name, dims] : param_layout(spec)) {
    if (dims.size() == 1) {
      model.params.push_back({name, BasicTensor<T>(dims)});
      continue;
    }
    int fan_in, fan_out;
    if (dims.size() == 4) {
      const int receptive = static_cast<int>(dims[2] * dims[3]);
      fan_in = static_cast<int>(dims[1]) * receptive;
      fan_out = static_cast<int>(dims[0]) * receptive;
    } else {
      fan_in = static_cast<int>(dims[1]);
      fan_out = static_cast<int>(dims[0]);
    }
    model.params.push_back({name, xavier_init<T>(fan_in, fan_out, dims, rng)});
  }
  return model;
}

template <typename T>
void check_params(const BasicModel<T>& model) {
  const auto layout = param_layout(model.spec);
  if (layout.size() != model.params.size())
    throw std::invalid_argument("model has " + std::to_string(model.params.size()) + " params, spec expects " +
                                std::to_string(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (model.params[i].name != layout[i].first)
      throw std::invalid_argument("param " + std::to_string(i) + " is named " + model.params[i].name +
                                  ", expected " + layout[i].first);
    if (model.params[i].value.dims() != layout[i].second)
      throw std::invalid_argument("param " + layout[i].first + " has shape " +
                                  shape_string(model.params[i].value.dims()) + ", expected " +
                                  shape_string(layout[i].second));
  }
}

template <typename T>
void softmax_inplace(std::span<T> z) {
  const T m = *std::max_element(z.begin(), z.end());
  T sum = 0;
  for (auto& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : z) v /= sum;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace<double>(out);
  return out;
}

// ---------------------------------------------------------------------------
// Per-sample forward/backward.

template <typename T>
struct StageTrace {
  std::vector<T> col;          // (C_in*k*k) x (oh*ow)
  std::vector<T> pre;          // out x (oh*ow)
  std::vector<int> pool_from;  // argmax position in pre for each pooled output
};

template <typename T>
struct SampleTrace {
  std::vector<StageTrace<T>> stages;
  std::vector<T> flat, hidden_pre, hidden;
};

template <typename T>
struct ForwardTrace<T>::Impl {
  std::vector<SampleTrace<T>> samples;
};

template <typename T>
ForwardTrace<T>::ForwardTrace() : impl_(std::make_unique<Impl>()) {}
template <typename T>
ForwardTrace<T>::~ForwardTrace() = default;
template <typename T>
ForwardTrace<T>::ForwardTrace(ForwardTrace&&) noexcept = default;
template <typename T>
ForwardTrace<T>& ForwardTrace<T>::operator=(ForwardTrace&&) noexcept = default;

namespace {

template <typename T>
T activate(T v, Activation a) {
  return a == Activation::kRelu ? std::max(v, T(0)) : v;
}

template <typename T>
T activate_grad(T pre, Activation a) {
  return a == Activation::kRelu ? (pre > T(0) ? T(1) : T(0)) : T(1);
}

template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int oh, int ow, T* col) {
  const int pad = k / 2;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + ((ci * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(ci * h + iy) * w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, int k, int stride, int oh, int ow, T* x) {
  const int pad = k / 2;
  std::fill(x, x + c * h * w, T(0));
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + ((ci * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) x[(ci * h + iy) * w + ix] += src[oy * ow + ox];
          }
        }
      }
}

template <typename T>
void forward_sample(const BasicModel<T>& model, const T* input, SampleTrace<T>& tr, T* logits, T* embedding) {
  const auto& spec = model.spec;
  const auto shapes = spec.stage_shapes();
  std::vector<T> x(input, input + spec.in_channels * spec.in_height * spec.in_width);
  int c = spec.in_channels, h = spec.in_height, w = spec.in_width;
  tr.stages.resize(spec.conv_layers.size());
  for (std::size_t s = 0; s < spec.conv_layers.size(); ++s) {
    const auto& l = spec.conv_layers[s];
    const int k = l.kernel_size;
    const int oh = conv_out(h, k, l.stride), ow = conv_out(w, k, l.stride);
    const int rows = c * k * k, positions = oh * ow;
    auto& st = tr.stages[s];
    st.col.resize(static_cast<std::size_t>(rows) * positions);
    im2col(x.data(), c, h, w, k, l.stride, oh, ow, st.col.data());
    const auto& W = model.params[2 * s].value;
    const auto& b = model.params[2 * s + 1].value;
    st.pre.resize(static_cast<std::size_t>(l.out_channels) * positions);
    MatMap<T> pre(st.pre.data(), l.out_channels, positions);
    pre.noalias() = ConstMatMap<T>(W.data(), l.out_channels, rows) * ConstMatMap<T>(st.col.data(), rows, positions);
    pre.colwise() += ConstVecMap<T>(b.data(), l.out_channels);

    const int p = l.pool, ph = oh / p, pw = ow / p;
    st.pool_from.resize(static_cast<std::size_t>(l.out_channels) * ph * pw);
    x.assign(st.pool_from.size(), T(0));
    for (int o = 0; o < l.out_channels; ++o)
      for (int py = 0; py < ph; ++py)
        for (int px = 0; px < pw; ++px) {
          int best = -1;
          T best_v = T(0);
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx) {
              const int pos = o * positions + (py * p + dy) * ow + (px * p + dx);
              const T v = activate(st.pre[pos], spec.activation);
              if (best < 0 || v > best_v) {
                best = pos;
                best_v = v;
              }
            }
          const int out = (o * ph + py) * pw + px;
          st.pool_from[out] = best;
          x[out] = best_v;
        }
    c = l.out_channels;
    h = ph;
    w = pw;
  }
  tr.flat = std::move(x);

  const auto& W1 = model.params[2 * spec.conv_layers.size()].value;
  const auto& b1 = model.params[2 * spec.conv_layers.size() + 1].value;
  const auto& W2 = model.params[2 * spec.conv_layers.size() + 2].value;
  const auto& b2 = model.params[2 * spec.conv_layers.size() + 3].value;
  const int flat = static_cast<int>(tr.flat.size()), e = spec.embed_dim, nc = spec.num_classes;
  tr.hidden_pre.resize(e);
  VecMap<T>(tr.hidden_pre.data(), e).noalias() =
      ConstMatMap<T>(W1.data(), e, flat) * ConstVecMap<T>(tr.flat.data(), flat) + ConstVecMap<T>(b1.data(), e);
  tr.hidden.resize(e);
  for (int i = 0; i < e; ++i) tr.hidden[i] = activate(tr.hidden_pre[i], spec.activation);
  VecMap<T>(logits, nc).noalias() =
      ConstMatMap<T>(W2.data(), nc, e) * ConstVecMap<T>(tr.hidden.data(), e) + ConstVecMap<T>(b2.data(), nc);
  std::copy(tr.hidden.begin(), tr.hidden.end(), embedding);
}

template <typename T>
void backward_sample(const BasicModel<T>& model, const SampleTrace<T>& tr, const T* dlogits, Gradients<T>& g) {
  const auto& spec = model.spec;
  const std::size_t fc = 2 * spec.conv_layers.size();
  const int flat = static_cast<int>(tr.flat.size()), e = spec.embed_dim, nc = spec.num_classes;
  ConstVecMap<T> dz(dlogits, nc);
  ConstVecMap<T> hidden(tr.hidden.data(), e);
  MatMap<T>(g[fc + 2].data(), nc, e).noalias() += dz * hidden.transpose();
  VecMap<T>(g[fc + 3].data(), nc) += dz;
  Eigen::Matrix<T, Eigen::Dynamic, 1> dh =
      ConstMatMap<T>(model.params[fc + 2].value.data(), nc, e).transpose() * dz;
  for (int i = 0; i < e; ++i) dh[i] *= activate_grad(tr.hidden_pre[i], spec.activation);
  MatMap<T>(g[fc].data(), e, flat).noalias() += dh * ConstVecMap<T>(tr.flat.data(), flat).transpose();
  VecMap<T>(g[fc + 1].data(), e) += dh;
  if (spec.conv_layers.empty()) return;

  std::vector<T> dx(flat);
  VecMap<T>(dx.data(), flat).noalias() = ConstMatMap<T>(model.params[fc].value.data(), e, flat).transpose() * dh;

  const auto shapes = spec.stage_shapes();
  std::vector<T> dpre, dcol;
  for (std::size_t s = spec.conv_layers.size(); s-- > 0;) {
    const auto& l = spec.conv_layers[s];
    const auto& st = tr.stages[s];
    const int c = shapes[s].channels, h = shapes[s].height, w = shapes[s].width;
    const int k = l.kernel_size;
    const int oh = conv_out(h, k, l.stride), ow = conv_out(w, k, l.stride);
    const int rows = c * k * k, positions = oh * ow;
    dpre.assign(static_cast<std::size_t>(l.out_channels) * positions, T(0));
    for (std::size_t i = 0; i < st.pool_from.size(); ++i) {
      const int pos = st.pool_from[i];
      dpre[pos] += dx[i] * activate_grad(st.pre[pos], spec.activation);
    }
    ConstMatMap<T> dpre_m(dpre.data(), l.out_channels, positions);
    ConstMatMap<T> col(st.col.data(), rows, positions);
    MatMap<T>(g[2 * s].data(), l.out_channels, rows).noalias() += dpre_m * col.transpose();
    VecMap<T>(g[2 * s + 1].data(), l.out_channels) += dpre_m.rowwise().sum();
    if (s == 0) break;
    dcol.resize(static_cast<std::size_t>(rows) * positions);
    MatMap<T>(dcol.data(), rows, positions).noalias() =
        ConstMatMap<T>(model.params[2 * s].value.data(), l.out_channels, rows).transpose() * dpre_m;
    dx.resize(static_cast<std::size_t>(c) * h * w);
    col2im(dcol.data(), c, h, w, k, l.stride, oh, ow, dx.data());
  }
}

template <typename T>
Gradients<T> zero_grads(const BasicModel<T>& model) {
  Gradients<T> g;
  g.reserve(model.params.size());
  for (const auto& p : model.params) g.emplace_back(p.value.dims());
  return g;
}

template <typename T>
void add_into(Gradients<T>& acc, const Gradients<T>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    auto dst = acc[i].values();
    auto src = g[i].values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

template <typename T>
void check_batch(const ModelSpec& spec, const BasicTensor<T>& batch) {
  const Shape want{static_cast<std::size_t>(spec.in_channels), static_cast<std::size_t>(spec.in_height),
                   static_cast<std::size_t>(spec.in_width)};
  if (batch.ndim() != 4 || Shape(batch.dims().begin() + 1, batch.dims().end()) != want)
    throw std::invalid_argument("batch shape " + shape_string(batch.dims()) + " does not match model input Nx" +
                                shape_string(want));
}

}  // namespace

template <typename T>
ForwardOutput<T> forward(const BasicModel<T>& model, const BasicTensor<T>& batch, ForwardTrace<T>* trace) {
  check_batch(model.spec, batch);
  const std::size_t n = batch.dim(0);
  const auto nc = static_cast<std::size_t>(model.spec.num_classes);
  const auto e = static_cast<std::size_t>(model.spec.embed_dim);
  ForwardOutput<T> out{BasicTensor<T>({n, nc}), BasicTensor<T>({n, nc}), BasicTensor<T>({n, e})};
  std::vector<SampleTrace<T>> local;
  auto& samples = trace ? trace->impl().samples : local;
  samples.assign(trace ? n : 0, {});
  parallel_for(n, [&](std::size_t i) {
    SampleTrace<T> scratch;
    forward_sample(model, batch.row(i).data(), trace ? samples[i] : scratch, out.logits.row(i).data(),
                   out.embeddings.row(i).data());
    auto p = out.probs.row(i);
    std::copy(out.logits.row(i).begin(), out.logits.row(i).end(), p.begin());
    softmax_inplace<T>(p);
  });
  return out;
}

template <typename T>
BasicTensor<T> embed(const BasicModel<T>& model, const BasicTensor<T>& images) {
  return forward(model, images).embeddings;
}

template <typename T>
Gradients<T> backward(const BasicModel<T>& model, const ForwardTrace<T>& trace, const BasicTensor<T>& dlogits) {
  const auto& samples = trace.impl().samples;
  const Shape want{samples.size(), static_cast<std::size_t>(model.spec.num_classes)};
  if (samples.empty()) throw std::invalid_argument("backward called without a traced forward pass");
  if (dlogits.dims() != want)
    throw std::invalid_argument("upstream gradient shape " + shape_string(dlogits.dims()) + " does not match " +
                                shape_string(want));
  const std::size_t chunks = (samples.size() + kReduceChunk - 1) / kReduceChunk;
  std::vector<Gradients<T>> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    partial[c] = zero_grads(model);
    const std::size_t end = std::min(samples.size(), (c + 1) * kReduceChunk);
    for (std::size_t i = c * kReduceChunk; i < end; ++i)
      backward_sample(model, samples[i], dlogits.row(i).data(), partial[c]);
  });
  Gradients<T> total = std::move(partial[0]);
  for (std::size_t c = 1; c < chunks; ++c) add_into(total, partial[c]);
  return total;
}

template <typename T>
Gradients<T> backward_from_probs(const BasicModel<T>& model, const ForwardTrace<T>& trace,
                                 const BasicTensor<T>& dprobs) {
  const auto& samples = trace.impl().samples;
  const std::size_t nc = static_cast<std::size_t>(model.spec.num_classes);
  if (dprobs.dims() != Shape{samples.size(), nc})
    throw std::invalid_argument("upstream gradient shape " + shape_string(dprobs.dims()) + " does not match batch");
  // Recompute probabilities from the cached hidden layer.
  const std::size_t fc = 2 * model.spec.conv_layers.size();
  const int e = model.spec.embed_dim;
  BasicTensor<T> dlogits(dprobs.dims());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<T> p(nc);
    VecMap<T>(p.data(), nc).noalias() =
        ConstMatMap<T>(model.params[fc + 2].value.data(), nc, e) * ConstVecMap<T>(samples[i].hidden.data(), e) +
        ConstVecMap<T>(model.params[fc + 3].value.data(), nc);
    softmax_inplace<T>(p);
    auto g = dprobs.row(i);
    T dot = 0;
    for (std::size_t j = 0; j < nc; ++j) dot += g[j] * p[j];
    for (std::size_t j = 0; j < nc; ++j) dlogits(i, j) = p[j] * (g[j] - dot);
  }
  return backward(model, trace, dlogits);
}

template <typename T>
void sgd_step(std::vector<NamedTensor<T>>& params, const Gradients<T>& grads, double lr, double momentum,
              SgdState<T>& state, long iteration) {
  if (grads.size() != params.size()) throw std::invalid_argument("gradient count does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].dims() != params[i].value.dims())
      throw std::invalid_argument("gradient shape mismatch for " + params[i].name);
    if (!grads[i].all_finite())
      throw NumericError("non-finite gradient in " + params[i].name +
                             (iteration >= 0 ? " at iteration " + std::to_string(iteration) : std::string()),
                         iteration);
  }
  if (state.velocity.empty())
    for (const auto& p : params) state.velocity.emplace_back(p.value.dims());
  const T m = static_cast<T>(momentum), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = state.velocity[i].values();
    auto g = grads[i].values();
    auto w = params[i].value.values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = m * v[j] + g[j];
      w[j] -= step * v[j];
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(base_lr > 0)) throw std::invalid_argument("base_lr must be > 0");
  if (!(lr_decay_factor > 0 && lr_decay_factor < 1)) throw std::invalid_argument("lr_decay_factor must be in (0,1)");
  if (lr_step < 1) throw std::invalid_argument("lr_step must be >= 1");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0,1)");
  if (total_iters < 1) throw std::invalid_argument("total_iters must be >= 1");
}

double lr_schedule(const TrainConfig& cfg, long iter) {
  if (iter < 0) throw std::invalid_argument("iteration must be >= 0");
  return cfg.base_lr * std::pow(cfg.lr_decay_factor, static_cast<double>(iter / cfg.lr_step));
}

LossFn cross_entropy_loss(std::vector<int> labels) {
  return [labels = std::move(labels)](const TensorD& logits, TensorD* dlogits) {
    const std::size_t n = logits.dim(0);
    double loss = 0;
    if (dlogits) *dlogits = TensorD(logits.dims());
    for (std::size_t i = 0; i < n; ++i) {
      auto p = softmax(logits.row(i));
      loss -= std::log(p[labels.at(i)]);
      if (dlogits) {
        for (std::size_t j = 0; j < p.size(); ++j) (*dlogits)(i, j) = p[j] - (static_cast<int>(j) == labels[i]);
      }
    }
    return loss;
  };
}

LossFn squared_error_loss(TensorD targets) {
  return [targets = std::move(targets)](const TensorD& logits, TensorD* dlogits) {
    if (logits.dims() != targets.dims()) throw std::invalid_argument("target shape mismatch");
    double loss = 0;
    if (dlogits) *dlogits = TensorD(logits.dims());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double d = logits[i] - targets[i];
      loss += 0.5 * d * d;
      if (dlogits) (*dlogits)[i] = d;
    }
    return loss;
  };
}

double grad_check(const ModelD& model, const TensorD& batch, const LossFn& loss, const GradCheckOptions& opts) {
  ForwardTrace<double> trace;
  const auto out = forward(model, batch, &trace);
  TensorD dlogits;
  loss(out.logits, &dlogits);
  const auto analytic = backward(model, trace, dlogits);

  ModelD probe = model;
  Rng rng(opts.seed);
  double worst = 0;
  for (std::size_t p = 0; p < probe.params.size(); ++p) {
    auto& values = probe.params[p].value;
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(std::min<std::size_t>(coords.size(), static_cast<std::size_t>(opts.coords_per_param)));
    for (std::size_t j : coords) {
      const double saved = values[j];
      values[j] = saved + opts.h;
      const double up = loss(forward(probe, batch).logits, nullptr);
      values[j] = saved - opts.h;
      const double down = loss(forward(probe, batch).logits, nullptr);
      values[j] = saved;
      const double numeric = (up - down) / (2 * opts.h);
      const double a = analytic[p][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

#define WSLC_INSTANTIATE(T)                                                                                     \
  template struct BasicModel<T>;                                                                                \
  template class ForwardTrace<T>;                                                                               \
  template BasicTensor<T> xavier_init<T>(int, int, const Shape&, Rng&);                                         \
  template BasicModel<T> init_model<T>(const ModelSpec&, std::uint64_t);                                        \
  template void check_params<T>(const BasicModel<T>&);                                                          \
  template void softmax_inplace<T>(std::span<T>);                                                               \
  template ForwardOutput<T> forward<T>(const BasicModel<T>&, const BasicTensor<T>&, ForwardTrace<T>*);          \
  template BasicTensor<T> embed<T>(const BasicModel<T>&, const BasicTensor<T>&);                                \
  template Gradients<T> backward<T>(const BasicModel<T>&, const ForwardTrace<T>&, const BasicTensor<T>&);       \
  template Gradients<T> backward_from_probs<T>(const BasicModel<T>&, const ForwardTrace<T>&,                    \
                                               const BasicTensor<T>&);                                          \
  template void sgd_step<T>(std::vector<NamedTensor<T>>&, const Gradients<T>&, double, double, SgdState<T>&, long);

WSLC_INSTANTIATE(float)
WSLC_INSTANTIATE(double)

#undef WSLC_INSTANTIATE

}  // namespace wslc
