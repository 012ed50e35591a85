#pragma once

// Dense feed-forward substrate shared by the Bayesian network: layers with a
// pluggable activation, output losses, reverse-mode gradients, SGD and a
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "qtnn/errors.hpp"
#include "qtnn/matrix.hpp"
#include "qtnn/qt_core.hpp"
#include "qtnn/random.hpp"

namespace qtnn {

// Purpose indices for SeedStream::child. Keeping init and shuffle apart means
// changing the batch size never perturbs the initial weights.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kNoise = 3;
inline constexpr std::uint64_t kEval = 4;
inline constexpr std::uint64_t kData = 5;
inline constexpr std::uint64_t kSplit = 6;
}  // namespace stream

enum class ActivationKind { QT, ReLU, Identity };

struct Activation {
  ActivationKind kind = ActivationKind::Identity;
  Barrier barrier{};
  EnergyMap map{};

  static Activation qt(Barrier b = {}, EnergyMap m = {}) {
    b.validate();
    m.validate();
    return {ActivationKind::QT, b, m};
  }
  static Activation relu() { return {ActivationKind::ReLU, {}, {}}; }
  static Activation identity() { return {ActivationKind::Identity, {}, {}}; }

  Activated apply(double x) const {
    switch (kind) {
      case ActivationKind::QT: return qt_activate(x, barrier, map);
      case ActivationKind::ReLU: return x > 0.0 ? Activated{x, 1.0} : Activated{0.0, 0.0};
      case ActivationKind::Identity: break;
    }
    return {x, 1.0};
  }

  // apply(x).value without the derivative
  double value(double x) const {
    switch (kind) {
      case ActivationKind::QT: return transmission(apply_energy_map(x, map), barrier);
      case ActivationKind::ReLU: return x > 0.0 ? x : 0.0;
      case ActivationKind::Identity: break;
    }
    return x;
  }

  friend bool operator==(const Activation&, const Activation&) = default;
};

struct DenseLayer {
  Matrix weights;  // out x in
  std::vector<double> bias;
  Activation activation;

  std::size_t in() const { return weights.cols; }
  std::size_t out() const { return weights.rows; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

enum class LossKind { SoftmaxCrossEntropy, Logistic };

// sizes = {input, hidden..., output}. Hidden layers share one activation; the
// output layer is always Identity (it produces logits).
struct NetworkSpec {
  std::vector<std::size_t> sizes;
  Activation hidden = Activation::qt();
  LossKind loss = LossKind::SoftmaxCrossEntropy;

  void validate() const {
    if (sizes.size() < 3) throw DomainError("network needs an input, at least one hidden layer and an output");
    for (auto s : sizes)
      if (s == 0) throw DomainError("layer sizes must be positive");
    if (loss == LossKind::Logistic && sizes.back() != 1)
      throw DomainError("logistic loss needs a single output unit");
    if (loss == LossKind::SoftmaxCrossEntropy && sizes.back() < 2)
      throw DomainError("softmax loss needs at least two outputs");
  }
};

struct Network {
  std::vector<DenseLayer> layers;
  LossKind loss = LossKind::SoftmaxCrossEntropy;

  std::size_t input_size() const { return layers.front().in(); }
  std::size_t output_size() const { return layers.back().out(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  friend bool operator==(const Network&, const Network&) = default;
};

// Glorot-uniform weights, zero biases, drawn layer by layer in row-major order.
inline Network init_network(const NetworkSpec& spec, SeedStream& init) {
  spec.validate();
  Network net;
  net.loss = spec.loss;
  for (std::size_t l = 0; l + 1 < spec.sizes.size(); ++l) {
    const std::size_t in = spec.sizes[l];
    const std::size_t out = spec.sizes[l + 1];
    const bool last = l + 2 == spec.sizes.size();
    DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0),
                     last ? Activation::identity() : spec.hidden};
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& w : layer.weights.data) w = init.uniform(-limit, limit);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

struct LayerOutput {
  std::vector<double> pre;
  std::vector<double> act;
  std::vector<double> deriv;
};

inline LayerOutput dense_forward(const DenseLayer& layer, std::span<const double> input) {
  LayerOutput out;
  out.pre.resize(layer.out());
  out.act.resize(layer.out());
  out.deriv.resize(layer.out());
  affine(layer.weights, layer.bias, input, out.pre);
  for (std::size_t i = 0; i < out.pre.size(); ++i) {
    const auto [v, d] = layer.activation.apply(out.pre[i]);
    out.act[i] = v;
    out.deriv[i] = d;
  }
  return out;
}

struct ForwardCache {
  std::vector<double> input;
  std::vector<LayerOutput> layers;

  std::span<const double> logits() const { return layers.back().act; }
};

inline ForwardCache forward(const Network& net, std::span<const double> input) {
  ForwardCache cache;
  cache.input.assign(input.begin(), input.end());
  std::span<const double> x = cache.input;
  cache.layers.reserve(net.layers.size());
  for (const auto& layer : net.layers) {
    cache.layers.push_back(dense_forward(layer, x));
    x = cache.layers.back().act;
  }
  return cache;
}

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

inline LossResult softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size())
    throw DomainError("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) + " classes");
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double lse = m + std::log(sum);
  LossResult r;
  r.loss = lse - logits[label];
  r.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - lse);
  r.grad[label] -= 1.0;
  return r;
}

inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Binary cross-entropy on a single logit, label in {0, 1}.
inline LossResult logistic_loss(double logit, int label) {
  if (label != 0 && label != 1) throw DomainError("logistic loss needs a 0/1 label");
  return {softplus(logit) - label * logit, {logistic(logit) - label}};
}

inline LossResult output_loss(LossKind kind, std::span<const double> logits, int label) {
  if (label < 0) throw DomainError("negative label");
  if (kind == LossKind::Logistic) return logistic_loss(logits[0], label);
  return softmax_cross_entropy(logits, static_cast<std::size_t>(label));
}

// Class probabilities from the output logits.
inline std::vector<double> output_probabilities(LossKind kind, std::span<const double> logits) {
  if (kind == LossKind::Logistic) {
    const double p = logistic(logits[0]);
    return {1.0 - p, p};
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(logits[i] - m));
  for (double& v : p) v /= sum;
  return p;
}

// Forward pass without caches; returns class probabilities.
inline std::vector<double> predict_probabilities(const Network& net, std::span<const double> input) {
  std::vector<double> cur(input.begin(), input.end()), next;
  for (const auto& layer : net.layers) {
    next.resize(layer.out());
    affine(layer.weights, layer.bias, cur, next);
    for (double& v : next) v = layer.activation.value(v);
    std::swap(cur, next);
  }
  return output_probabilities(net.loss, cur);
}

// Layer outputs for several inputs at once; row b of each matrix belongs to
// inputs[b]. Entries are bit-identical to forward() on each input alone.
struct BatchForward {
  std::vector<Matrix> pre;
  std::vector<Matrix> act;
  std::vector<Matrix> deriv;  // empty unless requested
};

inline BatchForward forward_batch(const Network& net, std::span<const double* const> inputs, bool with_derivs) {
  BatchForward f;
  const std::size_t n = inputs.size();
  std::vector<const double*> cur(inputs.begin(), inputs.end());
  for (const auto& layer : net.layers) {
    Matrix pre(n, layer.out()), act(n, layer.out()), der;
    if (with_derivs) der = Matrix(n, layer.out());
    affine_batch(layer.weights, layer.bias, cur, pre.data.data(), layer.out());
    if (with_derivs) {
      for (std::size_t i = 0; i < pre.size(); ++i) {
        const auto [v, d] = layer.activation.apply(pre.data[i]);
        act.data[i] = v;
        der.data[i] = d;
      }
    } else {
      for (std::size_t i = 0; i < pre.size(); ++i) act.data[i] = layer.activation.value(pre.data[i]);
    }
    f.pre.push_back(std::move(pre));
    f.act.push_back(std::move(act));
    f.deriv.push_back(std::move(der));
    for (std::size_t b = 0; b < n; ++b) cur[b] = f.act.back().row(b).data();
  }
  return f;
}

inline constexpr std::size_t kPredictChunk = 32;

// Row-wise probabilities for every input row. Rows are independent, so the
// result is the same for any thread count.
inline Matrix predict_probabilities(const Network& net, const Matrix& inputs, unsigned threads = 1) {
  if (inputs.rows > 0 && inputs.cols != net.input_size())
    throw DomainError("predict: input width " + std::to_string(inputs.cols) + " does not match network input " +
                      std::to_string(net.input_size()));
  const std::size_t classes = net.loss == LossKind::Logistic ? 2 : net.output_size();
  Matrix out(inputs.rows, classes);
  const std::size_t chunks = (inputs.rows + kPredictChunk - 1) / kPredictChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kPredictChunk, end = std::min(inputs.rows, begin + kPredictChunk);
    std::vector<const double*> rows;
    for (std::size_t r = begin; r < end; ++r) rows.push_back(inputs.row(r).data());
    const auto f = forward_batch(net, rows, false);
    for (std::size_t r = begin; r < end; ++r) {
      const auto p = output_probabilities(net.loss, f.act.back().row(r - begin));
      std::copy(p.begin(), p.end(), out.row(r).begin());
    }
  });
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const Network& net) {
    Gradients g;
    for (const auto& l : net.layers) {
      g.weights.emplace_back(l.weights.rows, l.weights.cols);
      g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
  }

  void scale(double s) {
    for (auto& m : weights)
      for (double& v : m.data) v *= s;
    for (auto& b : bias)
      for (double& v : b) v *= s;
  }

  void add(const Gradients& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      axpy(1.0, other.weights[l].data, weights[l].data);
      axpy(1.0, other.bias[l], bias[l]);
    }
  }
};

// Accumulates d loss / d parameters into `acc` given d loss / d logits.
inline void backward(const Network& net, const ForwardCache& cache, std::span<const double> grad_out, Gradients& acc) {
  if (cache.layers.size() != net.layers.size() || grad_out.size() != net.output_size())
    throw DomainError("backward: cache does not match network");
  std::vector<double> upstream(grad_out.begin(), grad_out.end());
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    const auto& lc = cache.layers[l];
    std::span<const double> input = l == 0 ? std::span<const double>(cache.input) : cache.layers[l - 1].act;
    std::vector<double> delta(layer.out());
    for (std::size_t o = 0; o < delta.size(); ++o) delta[o] = upstream[o] * lc.deriv[o];
    auto& gw = acc.weights[l];
    for (std::size_t o = 0; o < delta.size(); ++o) {
      acc.bias[l][o] += delta[o];
      if (delta[o] != 0.0) axpy(delta[o], input, gw.row(o));
    }
    if (l > 0) {
      upstream.assign(layer.in(), 0.0);
      affine_transpose_accumulate(layer.weights, delta, upstream);
    }
  }
}

// Row-per-example inputs with integer class labels.
struct Examples {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> input(std::size_t i) const { return inputs.row(i); }
};

struct BatchResult {
  double loss = 0.0;  // mean over the batch
  Gradients grads;    // mean over the batch
};

namespace detail {

inline std::vector<const double*> batch_rows(const Network& net, const Examples& data, std::span<const std::size_t> batch) {
  if (batch.empty()) throw DomainError("empty batch");
  if (data.inputs.cols != net.input_size())
    throw DomainError("input width " + std::to_string(data.inputs.cols) + " does not match network input " +
                      std::to_string(net.input_size()));
  std::vector<const double*> rows;
  rows.reserve(batch.size());
  for (std::size_t idx : batch) rows.push_back(data.input(idx).data());
  return rows;
}

}  // namespace detail

// Same sums in the same order as forward() + backward() per example.
inline BatchResult batch_loss_and_gradients(const Network& net, const Examples& data, std::span<const std::size_t> batch) {
  const auto xs = detail::batch_rows(net, data, batch);
  const std::size_t n = batch.size();
  const auto f = forward_batch(net, xs, true);
  BatchResult r{0.0, Gradients::zeros_like(net)};
  Matrix up(n, net.output_size());
  for (std::size_t b = 0; b < n; ++b) {
    const auto lr = output_loss(net.loss, f.act.back().row(b), data.labels[batch[b]]);
    r.loss += lr.loss;
    std::copy(lr.grad.begin(), lr.grad.end(), up.row(b).begin());
  }
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    Matrix delta(n, layer.out());
    for (std::size_t i = 0; i < delta.size(); ++i) delta.data[i] = up.data[i] * f.deriv[l].data[i];
    auto& gb = r.grads.bias[l];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < layer.out(); ++o) gb[o] += delta(b, o);
    std::vector<const double*> ins = xs;
    if (l > 0)
      for (std::size_t b = 0; b < n; ++b) ins[b] = f.act[l - 1].row(b).data();
    outer_accumulate(r.grads.weights[l], ins, delta.data.data(), layer.out());
    if (l > 0) {
      up = Matrix(n, layer.in());
      for (std::size_t b = 0; b < n; ++b) affine_transpose_accumulate(layer.weights, delta.row(b), up.row(b));
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  r.loss *= inv;
  r.grads.scale(inv);
  return r;
}

inline double batch_loss(const Network& net, const Examples& data, std::span<const std::size_t> batch) {
  const auto f = forward_batch(net, detail::batch_rows(net, data, batch), false);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) loss += output_loss(net.loss, f.act.back().row(b), data.labels[batch[b]]).loss;
  return loss * (1.0 / static_cast<double>(batch.size()));
}

inline void sgd_update(Network& net, const Gradients& g, double lr) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    axpy(-lr, g.weights[l].data, net.layers[l].weights.data);
    axpy(-lr, g.bias[l], net.layers[l].bias);
  }
}

// Epoch order: identity permutation shuffled by the run's shuffle stream.
inline std::vector<std::size_t> epoch_order(std::size_t n, SeedStream& shuffle_stream) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(order), shuffle_stream);
  return order;
}

template <typename Fn>
void for_each_batch(std::span<const std::size_t> order, std::size_t batch_size, Fn&& fn) {
  for (std::size_t start = 0; start < order.size(); start += batch_size)
    fn(order.subspan(start, std::min(batch_size, order.size() - start)));
}

inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

// Plain mini-batch SGD; returns the mean batch loss of every epoch.
inline std::vector<double> train_dense(Network& net, const Examples& data, std::size_t epochs, double lr,
                                       std::size_t batch_size, const SeedStream& run) {
  SeedStream shuffle_stream = run.child(stream::kShuffle);
  std::vector<double> losses;
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto order = epoch_order(data.size(), shuffle_stream);
    double total = 0.0;
    std::size_t count = 0;
    for_each_batch(order, batch_size, [&](std::span<const std::size_t> batch) {
      auto r = batch_loss_and_gradients(net, data, batch);
      sgd_update(net, r.grads, lr);
      total += r.loss;
      ++count;
    });
    losses.push_back(total / static_cast<double>(count));
  }
  return losses;
}

// --- gradient checking -----------------------------------------------------

struct ParamRef {
  std::size_t layer = 0;
  bool is_bias = false;
  std::size_t index = 0;

  friend bool operator==(const ParamRef&, const ParamRef&) = default;
};

inline double& param_at(Network& net, const ParamRef& p) {
  auto& l = net.layers[p.layer];
  return p.is_bias ? l.bias[p.index] : l.weights.data[p.index];
}

inline double grad_at(const Gradients& g, const ParamRef& p) {
  return p.is_bias ? g.bias[p.layer][p.index] : g.weights[p.layer].data[p.index];
}

inline std::vector<ParamRef> all_params(const Network& net) {
  std::vector<ParamRef> refs;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (std::size_t i = 0; i < net.layers[l].weights.size(); ++i) refs.push_back({l, false, i});
    for (std::size_t i = 0; i < net.layers[l].bias.size(); ++i) refs.push_back({l, true, i});
  }
  return refs;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  ParamRef location{};
  std::size_t checked = 0;
  bool passed = false;
};

inline constexpr double kFiniteDiffStep = 1e-5;
inline constexpr std::size_t kFullCheckLimit = 1000;
// Magnitudes below this floor are compared absolutely.
inline constexpr double kRelErrorFloor = 1e-4;
inline constexpr double kKinkMargin = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
}

inline std::vector<ParamRef> params_to_check(const Network& net, SeedStream& s) {
  auto refs = all_params(net);
  if (refs.size() > kFullCheckLimit) {
    shuffle(std::span<ParamRef>(refs), s);
    refs.resize(kFullCheckLimit);
  }
  return refs;
}

// Compares `analytic` against central differences of the mean batch loss.
inline GradCheckReport compare_gradients(const Network& net, const Examples& data, std::span<const std::size_t> batch,
                                         const Gradients& analytic, double tolerance, SeedStream& s) {
  Network probe = net;
  GradCheckReport rep;
  for (const auto& p : params_to_check(net, s)) {
    double& w = param_at(probe, p);
    const double saved = w;
    w = saved + kFiniteDiffStep;
    const double up = batch_loss(probe, data, batch);
    w = saved - kFiniteDiffStep;
    const double down = batch_loss(probe, data, batch);
    w = saved;
    const double numeric = (up - down) / (2.0 * kFiniteDiffStep);
    const double err = relative_error(grad_at(analytic, p), numeric);
    if (err > rep.max_rel_error || rep.checked == 0) {
      rep.max_rel_error = err;
      rep.location = p;
    }
    ++rep.checked;
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

inline bool near_relu_kink(const Network& net, const Examples& data, std::span<const std::size_t> batch) {
  for (std::size_t idx : batch) {
    const auto cache = forward(net, data.input(idx));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      if (net.layers[l].activation.kind != ActivationKind::ReLU) continue;
      for (double z : cache.layers[l].pre)
        if (std::abs(z) < kKinkMargin) return true;
    }
  }
  return false;
}

// Full gradient check. ReLU networks get their batch inputs redrawn from `s`
// until no pre-activation sits within kKinkMargin of the kink.
inline GradCheckReport gradient_check(const Network& net, Examples batch_data, double tolerance, SeedStream& s) {
  if (batch_data.size() == 0) throw DomainError("gradient check needs a non-empty batch");
  std::vector<std::size_t> batch(batch_data.size());
  std::iota(batch.begin(), batch.end(), std::size_t{0});
  for (int attempt = 0; attempt < 100 && near_relu_kink(net, batch_data, batch); ++attempt)
    for (double& x : batch_data.inputs.data) x = s.gaussian();
  const auto analytic = batch_loss_and_gradients(net, batch_data, batch).grads;
  return compare_gradients(net, batch_data, batch, analytic, tolerance, s);
}

}  // namespace qtnn
