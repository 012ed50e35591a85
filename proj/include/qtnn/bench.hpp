#pragma once

// Experiment harness: flat key=value configs, end-to-end runs that stream
// metrics.csv and write a checkpoint, plus the diagnostic table emitters.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qtnn/bnn.hpp"
#include "qtnn/checkpoint.hpp"
#include "qtnn/data.hpp"
#include "qtnn/errors.hpp"
#include "qtnn/qt_core.hpp"
#include "qtnn/rnn.hpp"

namespace qtnn {

enum class ModelKind { QtBnn, ReluBnn, QtRnn, ReluRnn };

inline std::string model_name(ModelKind m) {
  switch (m) {
    case ModelKind::QtBnn: return "qt-bnn";
    case ModelKind::ReluBnn: return "relu-bnn";
    case ModelKind::QtRnn: return "qt-rnn";
    case ModelKind::ReluRnn: return "relu-rnn";
  }
  return "?";
}

inline ModelKind parse_model(const std::string& s) {
  for (auto m : {ModelKind::QtBnn, ModelKind::ReluBnn, ModelKind::QtRnn, ModelKind::ReluRnn})
    if (model_name(m) == s) return m;
  throw ConfigError("model must be one of qt-bnn, relu-bnn, qt-rnn, relu-rnn (got '" + s + "')");
}

struct ExperimentConfig {
  ModelKind model = ModelKind::QtBnn;
  Barrier barrier{};
  EnergyMap energy_map{};
  std::size_t hidden = 64;
  std::size_t epochs = 400;
  double lr = 0.05;
  std::size_t batch = 32;
  std::size_t mc_samples = 10;
  double beta = 1.0;
  std::uint64_t seed = 0;
  std::string data_path;               // CIFAR binary (bnn) or phrase corpus (rnn)
  std::size_t synthetic_count = 2500;  // bnn only, when no data_path
  double split_fraction = 0.8;

  bool is_bnn() const { return model == ModelKind::QtBnn || model == ModelKind::ReluBnn; }
  bool is_qt() const { return model == ModelKind::QtBnn || model == ModelKind::QtRnn; }
  Activation activation() const { return is_qt() ? Activation::qt(barrier, energy_map) : Activation::relu(); }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

using ConfigEntries = std::map<std::string, std::string>;

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "model", "barrier.height", "barrier.width", "energy_map", "hidden", "epochs", "lr", "batch", "mc_samples",
      "beta", "seed", "data.path", "data.synthetic.count", "split.fraction"};
  return keys;
}

// key=value lines; '#' starts a comment; blank lines ignored; a key may
// appear once.
inline ConfigEntries read_config_entries(std::string_view text) {
  ConfigEntries entries;
  std::istringstream in{std::string(text)};
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const std::string t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end())
      throw ConfigError("unknown config key '" + key + "'");
    if (!entries.emplace(key, value).second) throw ConfigError("config key '" + key + "' given twice");
  }
  return entries;
}

namespace detail {

inline double config_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid value for " + key + ": '" + v + "'");
}

inline std::uint64_t config_count(const std::string& key, const std::string& v) {
  std::uint64_t n = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
  if (v.empty() || ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("invalid value for " + key + ": '" + v + "' (expected a non-negative integer)");
  return n;
}

}  // namespace detail

inline ExperimentConfig build_config(const ConfigEntries& entries) {
  for (const auto& [key, value] : entries)
    if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end())
      throw ConfigError("unknown config key '" + key + "'");
  auto has = [&](const char* k) { return entries.count(k) > 0; };
  auto get = [&](const char* k) { return entries.at(k); };

  ExperimentConfig c;
  c.model = parse_model(has("model") ? get("model") : "qt-bnn");
  c.hidden = c.is_bnn() ? 64 : kDefaultRnnHidden;
  c.epochs = c.is_bnn() ? 400 : 500;

  if (!c.is_qt())
    for (const char* k : {"barrier.height", "barrier.width", "energy_map"})
      if (has(k)) throw ConfigError(std::string(k) + " is only valid for qt models, not " + model_name(c.model));
  if (!c.is_bnn())
    for (const char* k : {"batch", "mc_samples", "beta", "data.synthetic.count"})
      if (has(k)) throw ConfigError(std::string(k) + " is only valid for bnn models, not " + model_name(c.model));
  if (has("data.path") && has("data.synthetic.count"))
    throw ConfigError("data.path and data.synthetic.count are mutually exclusive");

  double height = 1.0, width = 1.0;
  if (has("barrier.height")) height = detail::config_real("barrier.height", get("barrier.height"));
  if (has("barrier.width")) width = detail::config_real("barrier.width", get("barrier.width"));
  if (!(height > 0.0)) throw ConfigError("barrier.height must be positive");
  if (!(width > 0.0)) throw ConfigError("barrier.width must be positive");
  c.barrier = Barrier(height, width);
  if (has("energy_map")) {
    const auto m = get("energy_map");
    if (m == "smooth") c.energy_map.kind = EnergyMapKind::SmoothPositive;
    else if (m == "clamp") c.energy_map.kind = EnergyMapKind::IdentityClamp;
    else throw ConfigError("energy_map must be smooth or clamp (got '" + m + "')");
  }

  auto count_at_least_one = [&](const char* k, std::size_t& dst) {
    if (!has(k)) return;
    dst = detail::config_count(k, get(k));
    if (dst == 0) throw ConfigError(std::string(k) + " must be at least 1");
  };
  count_at_least_one("hidden", c.hidden);
  count_at_least_one("batch", c.batch);
  count_at_least_one("mc_samples", c.mc_samples);
  if (has("epochs")) c.epochs = detail::config_count("epochs", get("epochs"));
  if (has("seed")) c.seed = detail::config_count("seed", get("seed"));
  if (has("data.synthetic.count")) c.synthetic_count = detail::config_count("data.synthetic.count", get("data.synthetic.count"));
  if (has("data.path")) {
    c.data_path = get("data.path");
    if (c.data_path.empty()) throw ConfigError("data.path is empty");
  }
  if (has("lr")) c.lr = detail::config_real("lr", get("lr"));
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (has("beta")) c.beta = detail::config_real("beta", get("beta"));
  if (!(c.beta >= 0.0)) throw ConfigError("beta must be nonnegative");
  if (has("split.fraction")) c.split_fraction = detail::config_real("split.fraction", get("split.fraction"));
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0))
    throw ConfigError("split.fraction must lie strictly between 0 and 1");
  return c;
}

inline ExperimentConfig parse_config(std::string_view text) { return build_config(read_config_entries(text)); }

// --- datasets ------------------------------------------------------------------

struct ImageData {
  LabeledImageSet train, test;
};

struct PhraseData {
  PhraseSet train, test;
  Vocabulary vocab;
};

inline LabeledImageSet experiment_images(const ExperimentConfig& c, unsigned threads = 1) {
  if (!c.data_path.empty()) return load_cifar_binary(read_file(c.data_path));
  return synth_vehicle_images(c.synthetic_count, SeedStream(c.seed).child(stream::kData), threads);
}

inline PhraseSet experiment_phrases(const ExperimentConfig& c) {
  if (!c.data_path.empty()) return parse_phrase_corpus(read_file(c.data_path));
  SeedStream s = SeedStream(c.seed).child(stream::kData);
  return gen_phrases(military_lexicon(), s);
}

inline ImageData load_image_data(const ExperimentConfig& c, unsigned threads = 1) {
  SeedStream s = SeedStream(c.seed).child(stream::kSplit);
  auto [train, test] = split(experiment_images(c, threads), c.split_fraction, s);
  return {std::move(train), std::move(test)};
}

// Vocabulary from the training split only; unseen test tokens map to 0.
inline PhraseData load_phrase_data(const ExperimentConfig& c) {
  SeedStream s = SeedStream(c.seed).child(stream::kSplit);
  auto [train, test] = split(experiment_phrases(c), c.split_fraction, s);
  auto vocab = build_vocab(train);
  return {std::move(train), std::move(test), std::move(vocab)};
}

// --- runs --------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader = "epoch,split,loss,accuracy,model,seed,wall_ms";

inline std::string metrics_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + format_double(r.loss) + "," + format_double(r.accuracy) + "," +
         r.model + "," + std::to_string(r.seed) + "," + std::to_string(r.wall_ms);
}

struct ExperimentResult {
  MetricsLog metrics;
  Checkpoint checkpoint;
};

// Initial model for a config; QT and ReLU variants under one seed share
// weights because initialisation never looks at the activation.
inline BayesNet initial_bnn(const ExperimentConfig& c, std::size_t inputs) {
  SeedStream init = SeedStream(c.seed).child(stream::kInit);
  return init_bayes({{inputs, c.hidden, 2}, c.activation(), LossKind::SoftmaxCrossEntropy}, init);
}

inline RecurrentCell initial_rnn(const ExperimentConfig& c, std::size_t vocab) {
  SeedStream init = SeedStream(c.seed).child(stream::kInit);
  return init_rnn({vocab, kDefaultEmbedding, c.hidden, c.activation()}, init);
}

// Trains per the config. With a non-empty out_dir, metrics.csv is streamed
// there row by row and model.ckpt written at the end.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const std::string& out_dir, unsigned threads = 1) {
  std::ofstream csv;
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
    csv.open(std::filesystem::path(out_dir) / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write " + out_dir + "/metrics.csv");
    csv << kMetricsHeader << '\n' << std::flush;
  }
  auto hook = [&](const MetricsRecord& r) {
    if (csv.is_open()) csv << metrics_row(r) << '\n' << std::flush;
  };

  const SeedStream run(c.seed);
  ExperimentResult res;
  if (c.is_bnn()) {
    const auto data = load_image_data(c, threads);
    const auto train = to_examples(data.train), test = to_examples(data.test);
    BnnConfig bc;
    bc.epochs = c.epochs;
    bc.lr = c.lr;
    bc.batch = c.batch;
    bc.mc_samples = c.mc_samples;
    bc.beta = c.beta;
    bc.threads = threads;
    auto out = train_bnn(initial_bnn(c, kImageBytes), train, test, bc, run, model_name(c.model), hook);
    res.metrics = std::move(out.metrics);
    res.checkpoint = to_checkpoint(out.net);
  } else {
    const auto data = load_phrase_data(c);
    const auto train = encode(data.train, data.vocab), test = encode(data.test, data.vocab);
    RnnConfig rc;
    rc.epochs = c.epochs;
    rc.lr = c.lr;
    rc.threads = threads;
    auto out = train_rnn(initial_rnn(c, data.vocab.size()), train, test, rc, run, model_name(c.model), hook);
    res.metrics = std::move(out.metrics);
    res.checkpoint = to_checkpoint(out.cell);
  }
  if (csv.is_open()) {
    csv.close();
    if (!csv) throw IoError("write failed for " + out_dir + "/metrics.csv");
    write_file((std::filesystem::path(out_dir) / "model.ckpt").string(), encode_checkpoint(res.checkpoint));
  }
  return res;
}

// Checkpoint must match the config's model family and activation.
inline void check_checkpoint_matches(const Checkpoint& ck, const ExperimentConfig& c) {
  const std::string want = c.is_bnn() ? "bnn" : "rnn";
  if (ck.header.kind != want)
    throw FormatError("checkpoint holds a " + ck.header.kind + " model but the config describes " + model_name(c.model));
  if ((ck.header.activation.kind == ActivationKind::QT) != c.is_qt())
    throw FormatError("checkpoint activation " + activation_name(ck.header.activation) + " does not match " +
                      model_name(c.model));
}

// Predictions for the held-out split: class-1 probabilities.
inline std::vector<double> bnn_test_probabilities(const BayesNet& net, const Examples& test, const ExperimentConfig& c,
                                                  unsigned threads = 1) {
  const auto probs = predict_mc(net, test.inputs, c.mc_samples, SeedStream(c.seed).child(stream::kEval).child(0), threads);
  std::vector<double> p(test.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = probs(i, 1);
  return p;
}

struct EvalSummary {
  std::size_t count = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Scores a checkpoint on the config's held-out split.
inline EvalSummary evaluate_checkpoint(const Checkpoint& ck, const ExperimentConfig& c, unsigned threads = 1) {
  check_checkpoint_matches(ck, c);
  EvalSummary s;
  if (c.is_bnn()) {
    const auto net = bayes_from_checkpoint(ck);
    const auto test = to_examples(load_image_data(c, threads).test);
    if (net.layers.front().in() != kImageBytes) throw FormatError("checkpoint input width does not match images");
    const auto probs = predict_mc(net, test.inputs, c.mc_samples, SeedStream(c.seed).child(stream::kEval).child(0), threads);
    const auto ev = evaluate_probabilities(probs, test.labels);
    s = {test.size(), ev.loss, ev.accuracy};
  } else {
    const auto cell = rnn_from_checkpoint(ck);
    const auto data = load_phrase_data(c);
    if (cell.vocab() != data.vocab.size()) throw FormatError("checkpoint vocabulary size does not match the corpus");
    const auto test = encode(data.test, data.vocab);
    const auto ev = evaluate_rnn(cell, test, threads);
    s = {test.size(), ev.loss, ev.accuracy};
  }
  return s;
}

// --- misclassification export ----------------------------------------------------------

struct Confusion {
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;  // positive = military
  std::size_t off_diagonal() const { return fp + fn; }
};

inline int predicted_label(double p_military) { return p_military >= 0.5 ? 1 : 0; }

inline Confusion confusion(std::span<const std::uint8_t> labels, std::span<const double> p_military) {
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int pred = predicted_label(p_military[i]);
    if (labels[i]) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

// One PPM per misclassified image plus index.csv (header always written).
inline std::size_t dump_misclassified(const LabeledImageSet& set, std::span<const double> p_military,
                                      const std::string& out_dir) {
  if (p_military.size() != set.size()) throw DomainError("dump_misclassified: one probability per image required");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  std::string index = "file,true,pred,p_military\n";
  std::size_t written = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const int truth = set.labels[i], pred = predicted_label(p_military[i]);
    if (truth == pred) continue;
    const std::string name =
        "mis_" + std::to_string(i) + "_" + std::to_string(truth) + "_" + std::to_string(pred) + ".ppm";
    write_file((std::filesystem::path(out_dir) / name).string(), to_ppm(set.images[i]));
    index += name + "," + std::to_string(truth) + "," + std::to_string(pred) + "," + format_double(p_military[i]) + "\n";
    ++written;
  }
  write_file((std::filesystem::path(out_dir) / "index.csv").string(), index);
  return written;
}

// Test-split export for a bnn checkpoint; returns the number of files written.
inline std::size_t dump_misclassified(const Checkpoint& ck, const ExperimentConfig& c, const std::string& out_dir,
                                      unsigned threads = 1) {
  if (ck.header.kind != "bnn") throw FormatError("dump-misclassified needs an image (bnn) checkpoint, got " + ck.header.kind);
  if (!c.is_bnn()) throw ConfigError("dump-misclassified needs a bnn model config");
  check_checkpoint_matches(ck, c);
  const auto net = bayes_from_checkpoint(ck);
  if (net.layers.front().in() != kImageBytes) throw FormatError("checkpoint input width does not match images");
  const auto test = load_image_data(c, threads).test;
  const auto p = bnn_test_probabilities(net, to_examples(test), c, threads);
  return dump_misclassified(test, p, out_dir);
}

// --- diagnostics ----------------------------------------------------------------------

// Evenly spaced energies from e_min to e_max inclusive.
inline std::string activation_table(const Barrier& b, double e_min, double e_max, std::size_t steps) {
  if (steps < 2) throw ConfigError("activation table needs at least 2 steps");
  if (!(e_min > 0.0 && e_max > e_min && std::isfinite(e_max)))
    throw ConfigError("activation table needs 0 < e_min < e_max");
  std::string out = "E,T,dTdE\n";
  for (std::size_t i = 0; i < steps; ++i) {
    const double e = i + 1 == steps ? e_max : e_min + (e_max - e_min) * static_cast<double>(i) / static_cast<double>(steps - 1);
    out += format_double(e) + "," + format_double(transmission(e, b)) + "," + format_double(transmission_grad(e, b)) + "\n";
  }
  return out;
}

// "n E_n E_n+V0" per level, ground state first.
inline std::string bound_states_table(const Barrier& b) {
  std::string out;
  const auto levels = bound_state_energies(b);
  for (std::size_t n = 0; n < levels.size(); ++n) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu %.12g %.12g\n", n, levels[n], levels[n] + b.height);
    out += buf;
  }
  return out;
}

}  // namespace qtnn
