#pragma once

// Elman recurrent classifier:
//   h_0 = 0,  h_t = act(W_xh e(x_t) + W_hh h_{t-1} + b_h),  p = logistic(head . h_T + bias)
// trained one sequence at a time with full backpropagation through time.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qtnn/checkpoint.hpp"
#include "qtnn/dense.hpp"
#include "qtnn/metrics.hpp"
#include "qtnn/random.hpp"

namespace qtnn {

inline constexpr std::size_t kDefaultEmbedding = 16;
inline constexpr std::size_t kDefaultRnnHidden = 32;
inline constexpr double kDefaultClipNorm = 5.0;

struct TokenSequence {
  std::vector<std::size_t> ids;
  int label = 0;  // 1 positive, 0 negative
};

struct RecurrentCell {
  Matrix embedding;  // vocab x d_emb
  Matrix w_xh;       // h x d_emb
  Matrix w_hh;       // h x h
  std::vector<double> b_h;
  std::vector<double> head;
  double head_bias = 0.0;
  Activation activation;

  std::size_t vocab() const { return embedding.rows; }
  std::size_t emb_dim() const { return embedding.cols; }
  std::size_t hidden() const { return w_hh.rows; }

  void validate() const {
    const std::size_t h = hidden();
    if (h == 0 || emb_dim() == 0 || vocab() == 0) throw DomainError("rnn: sizes must be at least 1");
    if (w_xh.rows != h || w_xh.cols != emb_dim() || w_hh.cols != h || b_h.size() != h || head.size() != h)
      throw DomainError("rnn: inconsistent cell shapes");
  }

  friend bool operator==(const RecurrentCell&, const RecurrentCell&) = default;
};

struct RnnSpec {
  std::size_t vocab = 0;
  std::size_t emb = kDefaultEmbedding;
  std::size_t hidden = kDefaultRnnHidden;
  Activation activation = Activation::qt();
};

// Glorot-uniform for every matrix and the head, zero biases. Draw order:
// embedding, W_xh, W_hh, head.
inline RecurrentCell init_rnn(const RnnSpec& spec, SeedStream& init) {
  if (spec.vocab == 0 || spec.emb == 0 || spec.hidden == 0) throw ConfigError("rnn: sizes must be at least 1");
  auto glorot = [&](Matrix& m, std::size_t fan_in, std::size_t fan_out) {
    const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& w : m.data) w = init.uniform(-lim, lim);
  };
  RecurrentCell c{Matrix(spec.vocab, spec.emb), Matrix(spec.hidden, spec.emb), Matrix(spec.hidden, spec.hidden),
                  std::vector<double>(spec.hidden, 0.0), std::vector<double>(spec.hidden, 0.0), 0.0, spec.activation};
  glorot(c.embedding, spec.vocab, spec.emb);
  glorot(c.w_xh, spec.emb, spec.hidden);
  glorot(c.w_hh, spec.hidden, spec.hidden);
  Matrix head(1, spec.hidden);
  glorot(head, spec.hidden, 1);
  c.head = head.data;
  return c;
}

struct RnnTrace {
  std::vector<std::vector<double>> h;      // h[0] = 0, h[t] for t = 1..T
  std::vector<std::vector<double>> deriv;  // activation slope at step t (index t-1)
  double logit = 0.0;
  double p = 0.5;
};

inline void check_sequence(const RecurrentCell& c, std::span<const std::size_t> ids) {
  if (ids.empty()) throw DomainError("rnn: empty sequence");
  for (std::size_t id : ids)
    if (id >= c.vocab()) throw DomainError("rnn: token id " + std::to_string(id) + " outside vocabulary");
}

inline RnnTrace rnn_forward(const RecurrentCell& c, std::span<const std::size_t> ids) {
  check_sequence(c, ids);
  const std::size_t h = c.hidden();
  RnnTrace tr;
  tr.h.assign(1, std::vector<double>(h, 0.0));
  std::vector<double> pre(h);
  for (std::size_t id : ids) {
    const auto& prev = tr.h.back();
    affine(c.w_xh, c.b_h, c.embedding.row(id), pre);
    for (std::size_t i = 0; i < h; ++i) pre[i] += dot(c.w_hh.row(i), prev);
    std::vector<double> act(h), der(h);
    for (std::size_t i = 0; i < h; ++i) {
      const auto a = c.activation.apply(pre[i]);
      act[i] = a.value;
      der[i] = a.deriv;
    }
    tr.h.push_back(std::move(act));
    tr.deriv.push_back(std::move(der));
  }
  tr.logit = dot(c.head, tr.h.back()) + c.head_bias;
  tr.p = logistic(tr.logit);
  return tr;
}

inline double rnn_predict(const RecurrentCell& c, std::span<const std::size_t> ids) { return rnn_forward(c, ids).p; }

struct RnnGradients {
  Matrix embedding, w_xh, w_hh;
  std::vector<double> b_h, head;
  double head_bias = 0.0;

  static RnnGradients zeros_like(const RecurrentCell& c) {
    return {Matrix(c.vocab(), c.emb_dim()), Matrix(c.hidden(), c.emb_dim()), Matrix(c.hidden(), c.hidden()),
            std::vector<double>(c.hidden(), 0.0), std::vector<double>(c.hidden(), 0.0), 0.0};
  }

  double norm() const {
    double s = head_bias * head_bias;
    for (const auto* v : {&embedding.data, &w_xh.data, &w_hh.data, &b_h, &head}) s += dot(*v, *v);
    return std::sqrt(s);
  }

  void scale(double f) {
    for (auto* v : {&embedding.data, &w_xh.data, &w_hh.data, &b_h, &head})
      for (double& x : *v) x *= f;
    head_bias *= f;
  }
};

struct BpttOptions {
  double clip_norm = kDefaultClipNorm;  // <= 0 disables clipping
  std::optional<double> forced_p;       // test hook: replaces the model output
};

struct BpttResult {
  double loss = 0.0;
  double p = 0.5;
  RnnGradients grads;
};

// Binary cross-entropy of one sequence and its gradients, clipped to a global
// norm after accumulation over all time steps.
inline BpttResult bptt(const RecurrentCell& c, std::span<const std::size_t> ids, int label,
                       const BpttOptions& opt = {}) {
  const auto tr = rnn_forward(c, ids);
  const std::size_t h = c.hidden();
  BpttResult r;
  r.grads = RnnGradients::zeros_like(c);
  auto& g = r.grads;

  double dlogit = 0.0;
  if (opt.forced_p) {
    r.p = *opt.forced_p;
    r.loss = -(label ? std::log(r.p) : std::log1p(-r.p));
    dlogit = r.p - label;
  } else {
    const auto l = logistic_loss(tr.logit, label);
    r.p = tr.p;
    r.loss = l.loss;
    dlogit = l.grad[0];
  }

  g.head_bias = dlogit;
  axpy(dlogit, tr.h.back(), g.head);
  std::vector<double> dh(h), dpre(h);
  for (std::size_t i = 0; i < h; ++i) dh[i] = dlogit * c.head[i];

  for (std::size_t t = ids.size(); t-- > 0;) {
    const auto& der = tr.deriv[t];
    const auto& prev = tr.h[t];
    for (std::size_t i = 0; i < h; ++i) dpre[i] = dh[i] * der[i];
    axpy(1.0, dpre, g.b_h);
    const auto e = c.embedding.row(ids[t]);
    auto de = g.embedding.row(ids[t]);
    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t i = 0; i < h; ++i) {
      if (dpre[i] == 0.0) continue;
      axpy(dpre[i], e, g.w_xh.row(i));
      axpy(dpre[i], prev, g.w_hh.row(i));
      axpy(dpre[i], c.w_xh.row(i), de);
      axpy(dpre[i], c.w_hh.row(i), dh);
    }
  }

  if (opt.clip_norm > 0.0) {
    const double n = g.norm();
    if (n > opt.clip_norm) g.scale(opt.clip_norm / n);
  }
  return r;
}

inline void sgd_update(RecurrentCell& c, const RnnGradients& g, double lr) {
  axpy(-lr, g.embedding.data, c.embedding.data);
  axpy(-lr, g.w_xh.data, c.w_xh.data);
  axpy(-lr, g.w_hh.data, c.w_hh.data);
  axpy(-lr, g.b_h, c.b_h);
  axpy(-lr, g.head, c.head);
  c.head_bias -= lr * g.head_bias;
}

struct RnnEvaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean BCE and accuracy (p >= 0.5 means positive). Per-sequence results are
// computed in parallel and summed in index order.
inline RnnEvaluation evaluate_rnn(const RecurrentCell& c, std::span<const TokenSequence> seqs, unsigned threads = 1) {
  RnnEvaluation ev;
  if (seqs.empty()) return ev;
  std::vector<double> logits(seqs.size());
  parallel_for(seqs.size(), threads, [&](std::size_t i) { logits[i] = rnn_forward(c, seqs[i].ids).logit; });
  std::size_t correct = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    ev.loss += logistic_loss(logits[i], seqs[i].label).loss;
    correct += (logistic(logits[i]) >= 0.5 ? 1 : 0) == seqs[i].label;
  }
  ev.loss /= static_cast<double>(seqs.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(seqs.size());
  return ev;
}

struct RnnConfig {
  std::size_t epochs = 500;
  double lr = 0.05;
  double clip_norm = kDefaultClipNorm;
  unsigned threads = 1;

  void validate() const {
    if (!(lr > 0.0 && std::isfinite(lr))) throw ConfigError("lr must be positive");
  }
};

struct RnnRun {
  RecurrentCell cell;
  MetricsLog metrics;
};

using RnnEpochHook = std::function<void(const MetricsRecord&)>;

// Per-epoch shuffled SGD, one sequence per step; order from run.child(kShuffle).
// Both splits are scored after every epoch; the train row reports the full-set
// loss under the end-of-epoch weights.
inline RnnRun train_rnn(RecurrentCell cell, std::span<const TokenSequence> train, std::span<const TokenSequence> test,
                        const RnnConfig& cfg, const SeedStream& run, const std::string& model_name,
                        const RnnEpochHook& hook = {}) {
  cfg.validate();
  cell.validate();
  if (train.empty()) throw DomainError("train_rnn: empty training set");
  for (const auto& s : train) check_sequence(cell, s.ids);
  for (const auto& s : test) check_sequence(cell, s.ids);
  SeedStream shuffle_stream = run.child(stream::kShuffle);
  const BpttOptions opt{cfg.clip_norm, std::nullopt};

  RnnRun out;
  const auto t0 = std::chrono::steady_clock::now();
  auto emit = [&](MetricsRecord rec) {
    rec.wall_ms = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count());
    if (hook) hook(rec);
    out.metrics.push_back(std::move(rec));
  };

  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    for (std::size_t idx : epoch_order(train.size(), shuffle_stream)) {
      const auto r = bptt(cell, train[idx].ids, train[idx].label, opt);
      sgd_update(cell, r.grads, cfg.lr);
    }
    const auto tr = evaluate_rnn(cell, train, cfg.threads);
    emit({e, "train", tr.loss, tr.accuracy, model_name, run.seed(), 0});
    if (!test.empty()) {
      const auto te = evaluate_rnn(cell, test, cfg.threads);
      emit({e, "test", te.loss, te.accuracy, model_name, run.seed(), 0});
    }
  }
  out.cell = std::move(cell);
  return out;
}

// --- checkpoints -------------------------------------------------------------
// layers=vocab,emb,hidden,1; arrays: embedding, W_xh, W_hh, b_h, head, head bias.

inline Checkpoint to_checkpoint(const RecurrentCell& c) {
  Checkpoint ck;
  ck.header = {"rnn", {c.vocab(), c.emb_dim(), c.hidden(), 1}, c.activation};
  append(ck.params, c.embedding.data);
  append(ck.params, c.w_xh.data);
  append(ck.params, c.w_hh.data);
  append(ck.params, c.b_h);
  append(ck.params, c.head);
  ck.params.push_back(c.head_bias);
  return ck;
}

inline RecurrentCell rnn_from_checkpoint(const Checkpoint& ck) {
  if (ck.header.kind != "rnn") throw FormatError("checkpoint kind is " + ck.header.kind + ", expected rnn");
  const auto& s = ck.header.layers;
  if (s.size() != 4 || s[3] != 1) throw FormatError("rnn checkpoint needs layers=vocab,emb,hidden,1");
  RecurrentCell c{Matrix(s[0], s[1]), Matrix(s[2], s[1]), Matrix(s[2], s[2]), std::vector<double>(s[2]),
                  std::vector<double>(s[2]), 0.0, ck.header.activation};
  ParamReader reader(ck.params);
  reader.fill(c.embedding.data);
  reader.fill(c.w_xh.data);
  reader.fill(c.w_hh.data);
  reader.fill(c.b_h);
  reader.fill(c.head);
  reader.fill(std::span<double>(&c.head_bias, 1));
  reader.finish();
  return c;
}

}  // namespace qtnn
