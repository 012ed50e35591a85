#pragma once

// Variational Bayesian dense network (mean-field Gaussian posterior, standard
// normal prior) trained by Bayes-by-backprop. Every weight carries (mu, rho)
// with sigma = log(1 + e^rho); a sampled network uses w = mu + sigma * eps.
// Prediction averages softmax outputs over independent weight draws.

#include <chrono>
#include <functional>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qtnn/checkpoint.hpp"
#include "qtnn/dense.hpp"
#include "qtnn/metrics.hpp"
#include "qtnn/random.hpp"

namespace qtnn {

inline constexpr double kDefaultRhoInit = -3.0;

inline double sigma_of(double rho) {
  return std::max(softplus(rho), std::numeric_limits<double>::min());
}

inline double log_sigma_of(double rho) { return rho < -40.0 ? rho : std::log(softplus(rho)); }

// (d sigma / d rho) / sigma, finite for very negative rho.
inline double dlog_sigma_drho(double rho) { return rho < -40.0 ? 1.0 : logistic(rho) / softplus(rho); }

// KL(N(mu, sigma^2) || N(0, 1)).
inline double kl_gaussian(double mu, double rho) {
  const double s = sigma_of(rho);
  return 0.5 * (mu * mu + s * s - 1.0 - 2.0 * log_sigma_of(rho));
}

struct BayesLayer {
  Matrix mu;   // out x in
  Matrix rho;  // out x in
  std::vector<double> bias_mu;
  std::vector<double> bias_rho;
  Activation activation;

  std::size_t in() const { return mu.cols; }
  std::size_t out() const { return mu.rows; }

  friend bool operator==(const BayesLayer&, const BayesLayer&) = default;
};

struct BayesNet {
  std::vector<BayesLayer> layers;
  LossKind loss = LossKind::SoftmaxCrossEntropy;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.mu.size() + l.bias_mu.size();
    return n;
  }

  friend bool operator==(const BayesNet&, const BayesNet&) = default;
};

// mu from the deterministic initialiser (so a QT and a ReLU run under one
// seed share initial means), rho set to a constant.
inline BayesNet init_bayes(const NetworkSpec& spec, SeedStream& init, double rho_init = kDefaultRhoInit) {
  const Network base = init_network(spec, init);
  BayesNet net;
  net.loss = base.loss;
  for (const auto& l : base.layers) {
    net.layers.push_back({l.weights, Matrix(l.out(), l.in(), rho_init), l.bias,
                          std::vector<double>(l.out(), rho_init), l.activation});
  }
  return net;
}

inline double total_kl(const BayesNet& net) {
  double kl = 0.0;
  for (const auto& l : net.layers) {
    for (std::size_t i = 0; i < l.mu.size(); ++i) kl += kl_gaussian(l.mu.data[i], l.rho.data[i]);
    for (std::size_t i = 0; i < l.bias_mu.size(); ++i) kl += kl_gaussian(l.bias_mu[i], l.bias_rho[i]);
  }
  return kl;
}

// Standard-normal draws for one weight sample, shaped like the network.
struct Noise {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;
};

inline Noise zero_noise(const BayesNet& net) {
  Noise n;
  for (const auto& l : net.layers) {
    n.weights.emplace_back(l.out(), l.in());
    n.bias.emplace_back(l.out(), 0.0);
  }
  return n;
}

// Consumes the stream layer by layer: weights row-major, then biases, each
// filled by SeedStream::fill_gaussian.
inline Noise draw_noise(const BayesNet& net, SeedStream& s) {
  Noise n = zero_noise(net);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    s.fill_gaussian(n.weights[l].data);
    s.fill_gaussian(n.bias[l]);
  }
  return n;
}

inline Network sample_weights(const BayesNet& net, const Noise& noise) {
  Network out;
  out.loss = net.loss;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& bl = net.layers[l];
    DenseLayer dl{Matrix(bl.out(), bl.in()), std::vector<double>(bl.out()), bl.activation};
    for (std::size_t i = 0; i < bl.mu.size(); ++i)
      dl.weights.data[i] = bl.mu.data[i] + sigma_of(bl.rho.data[i]) * noise.weights[l].data[i];
    for (std::size_t i = 0; i < bl.bias_mu.size(); ++i)
      dl.bias[i] = bl.bias_mu[i] + sigma_of(bl.bias_rho[i]) * noise.bias[l][i];
    out.layers.push_back(std::move(dl));
  }
  return out;
}

inline Network sample_weights(const BayesNet& net, SeedStream& s) { return sample_weights(net, draw_noise(net, s)); }

inline Network mean_network(const BayesNet& net) { return sample_weights(net, zero_noise(net)); }

struct BayesGradients {
  std::vector<Matrix> mu;
  std::vector<Matrix> rho;
  std::vector<std::vector<double>> bias_mu;
  std::vector<std::vector<double>> bias_rho;
};

struct ElboResult {
  double loss = 0.0;  // nll + kl_weight * kl
  double nll = 0.0;   // mean over the batch
  double kl = 0.0;    // total over all parameters
  BayesGradients grads;
};

namespace detail {

// sigma and logistic(rho) from one exponential; bit-identical to sigma_of and
// logistic.
struct ScaleTerms {
  double sigma;
  double dsigma;  // d sigma / d rho
};

inline ScaleTerms scale_terms(double rho) {
  const double e = std::exp(-std::abs(rho));
  const double sp = (rho > 0.0 ? rho : 0.0) + std::log1p(e);
  return {std::max(sp, std::numeric_limits<double>::min()), rho >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e)};
}

}  // namespace detail

// One reparameterised sample for the whole batch:
//   loss = mean NLL(w) + beta * KL / batches_per_epoch,
//   dw/dmu = 1,  dw/drho = eps * logistic(rho).
inline ElboResult elbo_loss(const BayesNet& net, const Examples& data, std::span<const std::size_t> batch,
                            const Noise& noise, double beta, std::size_t batches_per_epoch) {
  if (batch.empty()) throw DomainError("elbo: empty batch");
  if (!(beta >= 0.0)) throw DomainError("elbo: beta must be nonnegative");
  const double kl_weight = beta / static_cast<double>(batches_per_epoch);

  // sample once, keeping sigma and its slope for the gradient pass
  Network sampled;
  sampled.loss = net.loss;
  std::vector<std::vector<detail::ScaleTerms>> wterms, bterms;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& bl = net.layers[l];
    DenseLayer dl{Matrix(bl.out(), bl.in()), std::vector<double>(bl.out()), bl.activation};
    auto& wt = wterms.emplace_back(bl.mu.size());
    auto& bt = bterms.emplace_back(bl.bias_mu.size());
    for (std::size_t i = 0; i < bl.mu.size(); ++i) {
      wt[i] = detail::scale_terms(bl.rho.data[i]);
      dl.weights.data[i] = bl.mu.data[i] + wt[i].sigma * noise.weights[l].data[i];
    }
    for (std::size_t i = 0; i < bl.bias_mu.size(); ++i) {
      bt[i] = detail::scale_terms(bl.bias_rho[i]);
      dl.bias[i] = bl.bias_mu[i] + bt[i].sigma * noise.bias[l][i];
    }
    sampled.layers.push_back(std::move(dl));
  }
  const auto fit = batch_loss_and_gradients(sampled, data, batch);

  ElboResult r;
  r.nll = fit.loss;
  auto& g = r.grads;
  double kl = 0.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& bl = net.layers[l];
    auto param_grads = [&](std::span<const double> mu, std::span<const double> rho, std::span<const double> eps,
                           std::span<const detail::ScaleTerms> terms, std::span<const double> gw, std::span<double> gmu,
                           std::span<double> grho) {
      for (std::size_t i = 0; i < mu.size(); ++i) {
        const auto [sig, dsig] = terms[i];
        gmu[i] = gw[i] + kl_weight * mu[i];
        grho[i] = gw[i] * eps[i] * dsig;
        if (kl_weight > 0.0) {
          // d KL / d rho = (sigma - 1/sigma) dsigma/drho
          const double dlog = rho[i] < -40.0 ? 1.0 : dsig / sig;
          const double log_sig = rho[i] < -40.0 ? rho[i] : std::log(sig);
          grho[i] += kl_weight * (sig * dsig - dlog);
          kl += 0.5 * (mu[i] * mu[i] + sig * sig - 1.0 - 2.0 * log_sig);
        }
      }
    };
    Matrix gm(bl.out(), bl.in()), gr(bl.out(), bl.in());
    param_grads(bl.mu.data, bl.rho.data, noise.weights[l].data, wterms[l], fit.grads.weights[l].data, gm.data, gr.data);
    std::vector<double> gbm(bl.bias_mu.size()), gbr(bl.bias_mu.size());
    param_grads(bl.bias_mu, bl.bias_rho, noise.bias[l], bterms[l], fit.grads.bias[l], gbm, gbr);
    g.mu.push_back(std::move(gm));
    g.rho.push_back(std::move(gr));
    g.bias_mu.push_back(std::move(gbm));
    g.bias_rho.push_back(std::move(gbr));
  }
  r.kl = kl;
  r.loss = r.nll + kl_weight * r.kl;
  return r;
}

inline ElboResult elbo_loss(const BayesNet& net, const Examples& data, std::span<const std::size_t> batch,
                            SeedStream& s, double beta, std::size_t batches_per_epoch) {
  return elbo_loss(net, data, batch, draw_noise(net, s), beta, batches_per_epoch);
}

inline void sgd_update(BayesNet& net, const BayesGradients& g, double lr) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& bl = net.layers[l];
    axpy(-lr, g.mu[l].data, bl.mu.data);
    axpy(-lr, g.rho[l].data, bl.rho.data);
    axpy(-lr, g.bias_mu[l], bl.bias_mu);
    axpy(-lr, g.bias_rho[l], bl.bias_rho);
  }
}

// Mean of softmax outputs over n_samples weight draws, for each input set.
// Sample k draws from s.child(k) and is shared by every set, so samples may
// run on any number of threads; sums are taken in sample-index order.
inline std::vector<Matrix> predict_mc(const BayesNet& net, std::span<const Matrix* const> input_sets,
                                      std::size_t n_samples, const SeedStream& s, unsigned threads = 1) {
  if (n_samples == 0) throw DomainError("predict_mc needs at least one sample");
  const std::size_t sets = input_sets.size();
  std::vector<std::vector<Matrix>> per_sample(n_samples, std::vector<Matrix>(sets));
  const unsigned outer = static_cast<unsigned>(std::min<std::size_t>(threads, n_samples));
  const unsigned inner = std::max(1u, threads / std::max(1u, outer));
  parallel_for(n_samples, outer, [&](std::size_t k) {
    SeedStream ks = s.child(k);
    const Network sampled = sample_weights(net, ks);
    for (std::size_t j = 0; j < sets; ++j) per_sample[k][j] = predict_probabilities(sampled, *input_sets[j], inner);
  });
  std::vector<Matrix> mean(sets);
  const double inv = 1.0 / static_cast<double>(n_samples);
  for (std::size_t j = 0; j < sets; ++j) {
    mean[j] = std::move(per_sample[0][j]);
    for (std::size_t k = 1; k < n_samples; ++k) axpy(1.0, per_sample[k][j].data, mean[j].data);
    for (double& v : mean[j].data) v *= inv;
  }
  return mean;
}

inline Matrix predict_mc(const BayesNet& net, const Matrix& inputs, std::size_t n_samples, const SeedStream& s,
                         unsigned threads = 1) {
  const Matrix* sets[] = {&inputs};
  return std::move(predict_mc(net, sets, n_samples, s, threads)[0]);
}

struct Evaluation {
  double loss = 0.0;      // mean negative log predictive probability
  double accuracy = 0.0;  // argmax agreement
};

inline Evaluation evaluate_probabilities(const Matrix& probs, std::span<const int> labels) {
  Evaluation ev;
  if (labels.empty()) return ev;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probs.row(i);
    ev.loss -= std::log(std::max(row[static_cast<std::size_t>(labels[i])], 1e-300));
    correct += argmax(row) == static_cast<std::size_t>(labels[i]);
  }
  ev.loss /= static_cast<double>(labels.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  return ev;
}

struct BnnConfig {
  std::size_t epochs = 400;
  double lr = 0.05;
  std::size_t batch = 32;
  std::size_t mc_samples = 10;
  double beta = 1.0;
  unsigned threads = 1;

  void validate() const {
    if (!(lr > 0.0 && std::isfinite(lr))) throw ConfigError("lr must be positive");
    if (batch == 0) throw ConfigError("batch must be at least 1");
    if (mc_samples == 0) throw ConfigError("mc_samples must be at least 1");
    if (!(beta >= 0.0 && std::isfinite(beta))) throw ConfigError("beta must be nonnegative");
  }
};

struct BnnRun {
  BayesNet net;
  MetricsLog metrics;
  std::vector<double> train_loss;  // mean ELBO per epoch
};

// Per-epoch callback, e.g. for streaming CSV rows.
using EpochHook = std::function<void(const MetricsRecord&)>;

// Shuffled mini-batch ELBO SGD. Streams: run.child(kShuffle) orders batches,
// run.child(kNoise) feeds one weight sample per batch, and epoch e is scored
// with predict_mc on run.child(kEval).child(e). The train row's loss is the
// epoch's mean ELBO; the test row's loss is the MC predictive NLL.
inline BnnRun train_bnn(BayesNet net, const Examples& train, const Examples& test, const BnnConfig& cfg,
                        const SeedStream& run, const std::string& model_name, const EpochHook& hook = {}) {
  cfg.validate();
  if (train.size() == 0) throw DomainError("train_bnn: empty training set");
  SeedStream shuffle_stream = run.child(stream::kShuffle);
  SeedStream noise_stream = run.child(stream::kNoise);
  const SeedStream eval_stream = run.child(stream::kEval);
  const std::size_t nb = batches_per_epoch(train.size(), cfg.batch);

  BnnRun out;
  const auto t0 = std::chrono::steady_clock::now();
  auto emit = [&](MetricsRecord rec) {
    rec.wall_ms = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count());
    if (hook) hook(rec);
    out.metrics.push_back(std::move(rec));
  };

  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const auto order = epoch_order(train.size(), shuffle_stream);
    double total = 0.0;
    for_each_batch(order, cfg.batch, [&](std::span<const std::size_t> batch) {
      const auto r = elbo_loss(net, train, batch, noise_stream, cfg.beta, nb);
      sgd_update(net, r.grads, cfg.lr);
      total += r.loss;
    });
    const double mean_elbo = total / static_cast<double>(nb);
    out.train_loss.push_back(mean_elbo);

    std::vector<const Matrix*> sets{&train.inputs};
    if (test.size() > 0) sets.push_back(&test.inputs);
    const auto probs = predict_mc(net, sets, cfg.mc_samples, eval_stream.child(e), cfg.threads);
    const auto tr = evaluate_probabilities(probs[0], train.labels);
    emit({e, "train", mean_elbo, tr.accuracy, model_name, run.seed(), 0});
    if (test.size() > 0) {
      const auto te = evaluate_probabilities(probs[1], test.labels);
      emit({e, "test", te.loss, te.accuracy, model_name, run.seed(), 0});
    }
  }
  out.net = std::move(net);
  return out;
}

// --- checkpoints -------------------------------------------------------------

inline Checkpoint to_checkpoint(const BayesNet& net) {
  Checkpoint ck;
  ck.header.kind = "bnn";
  ck.header.layers.push_back(net.layers.front().in());
  for (const auto& l : net.layers) ck.header.layers.push_back(l.out());
  ck.header.activation = net.layers.front().activation;
  for (const auto& l : net.layers) {
    append(ck.params, l.mu.data);
    append(ck.params, l.rho.data);
    append(ck.params, l.bias_mu);
    append(ck.params, l.bias_rho);
  }
  return ck;
}

inline BayesNet bayes_from_checkpoint(const Checkpoint& ck) {
  if (ck.header.kind != "bnn") throw FormatError("checkpoint kind is " + ck.header.kind + ", expected bnn");
  const auto& sizes = ck.header.layers;
  if (sizes.size() < 3) throw FormatError("bnn checkpoint needs at least three layer sizes");
  BayesNet net;
  ParamReader reader(ck.params);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const bool last = l + 2 == sizes.size();
    BayesLayer bl{Matrix(sizes[l + 1], sizes[l]), Matrix(sizes[l + 1], sizes[l]), std::vector<double>(sizes[l + 1]),
                  std::vector<double>(sizes[l + 1]), last ? Activation::identity() : ck.header.activation};
    reader.fill(bl.mu.data);
    reader.fill(bl.rho.data);
    reader.fill(bl.bias_mu);
    reader.fill(bl.bias_rho);
    net.layers.push_back(std::move(bl));
  }
  reader.finish();
  return net;
}

}  // namespace qtnn
