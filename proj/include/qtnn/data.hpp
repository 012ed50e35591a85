#pragma once

// Datasets: CIFAR-format binary records, a procedural vehicle image generator,
// the military sentiment lexicon and the phrase corpus built from it.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qtnn/dense.hpp"
#include "qtnn/errors.hpp"
#include "qtnn/random.hpp"
#include "qtnn/rnn.hpp"

namespace qtnn {

// --- CIFAR binary -------------------------------------------------------------

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kPlane = kImageSide * kImageSide;
inline constexpr std::size_t kImageBytes = 3 * kPlane;
inline constexpr std::size_t kRecordBytes = kImageBytes + 1;

using Image = std::array<std::uint8_t, kImageBytes>;  // planar R, G, B; row-major

inline constexpr std::uint8_t kCivilian = 0;
inline constexpr std::uint8_t kMilitary = 1;

struct LabeledImageSet {
  std::vector<Image> images;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return images.size(); }
  friend bool operator==(const LabeledImageSet&, const LabeledImageSet&) = default;
};

// Any label byte is accepted so real CIFAR-10 files load unchanged.
inline LabeledImageSet load_cifar_binary(std::string_view bytes) {
  if (bytes.size() % kRecordBytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kRecordBytes;
    throw FormatError("cifar: truncated record at byte offset " + std::to_string(offset) + " (" +
                      std::to_string(bytes.size() - offset) + " of " + std::to_string(kRecordBytes) + " bytes)");
  }
  LabeledImageSet set;
  const std::size_t n = bytes.size() / kRecordBytes;
  set.images.resize(n);
  set.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const char* rec = bytes.data() + i * kRecordBytes;
    set.labels[i] = static_cast<std::uint8_t>(rec[0]);
    std::copy_n(reinterpret_cast<const std::uint8_t*>(rec + 1), kImageBytes, set.images[i].begin());
  }
  return set;
}

inline std::string write_cifar_binary(const LabeledImageSet& set) {
  if (set.images.size() != set.labels.size()) throw DomainError("cifar: image and label counts differ");
  std::string out(set.size() * kRecordBytes, '\0');
  for (std::size_t i = 0; i < set.size(); ++i) {
    char* rec = out.data() + i * kRecordBytes;
    rec[0] = static_cast<char>(set.labels[i]);
    std::copy_n(set.images[i].begin(), kImageBytes, reinterpret_cast<std::uint8_t*>(rec + 1));
  }
  return out;
}

// Binary datasets only: pixels scaled to [0, 1].
inline Examples to_examples(const LabeledImageSet& set) {
  Examples ex{Matrix(set.size(), kImageBytes), std::vector<int>(set.size())};
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.labels[i] > 1)
      throw FormatError("image " + std::to_string(i) + " has label " + std::to_string(set.labels[i]) +
                        "; only 0 (civilian) and 1 (military) are supported");
    auto row = ex.inputs.row(i);
    for (std::size_t k = 0; k < kImageBytes; ++k) row[k] = set.images[i][k] / 255.0;
    ex.labels[i] = set.labels[i];
  }
  return ex;
}

inline LabeledImageSet subset(const LabeledImageSet& set, std::span<const std::size_t> idx) {
  LabeledImageSet out;
  for (std::size_t i : idx) {
    out.images.push_back(set.images.at(i));
    out.labels.push_back(set.labels.at(i));
  }
  return out;
}

// P6 with interleaved RGB.
inline std::string to_ppm(const Image& img) {
  std::string out = "P6\n32 32\n255\n";
  out.reserve(out.size() + kImageBytes);
  for (std::size_t p = 0; p < kPlane; ++p)
    for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(img[c * kPlane + p]));
  return out;
}

// --- vehicle image generator ---------------------------------------------------

namespace detail {

struct Rgb {
  double r, g, b;
};

class Canvas {
 public:
  explicit Canvas(Image& img) : img_(img) {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= 32 || y >= 32) return;
    const std::size_t p = static_cast<std::size_t>(y) * kImageSide + static_cast<std::size_t>(x);
    img_[p] = clamp(c.r);
    img_[kPlane + p] = clamp(c.g);
    img_[2 * kPlane + p] = clamp(c.b);
  }

  Rgb get(int x, int y) const {
    const std::size_t p = static_cast<std::size_t>(y) * kImageSide + static_cast<std::size_t>(x);
    return {double(img_[p]), double(img_[kPlane + p]), double(img_[2 * kPlane + p])};
  }

  void rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(x, y, c);
  }

  void disc(double cx, double cy, double r, Rgb c) {
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) set(x, y, c);
  }

  // soft-edged blob blended over the existing pixels
  void glow(double cx, double cy, double r, Rgb c) {
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
        const double w = std::clamp(1.2 - d / r, 0.0, 1.0);
        if (w == 0.0) continue;
        const Rgb o = get(x, y);
        set(x, y, {o.r + w * (c.r - o.r), o.g + w * (c.g - o.g), o.b + w * (c.b - o.b)});
      }
  }

 private:
  static std::uint8_t clamp(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }
  Image& img_;
};

inline Rgb jitter(Rgb c, double amount, SeedStream& s) {
  return {c.r + s.uniform(-amount, amount), c.g + s.uniform(-amount, amount), c.b + s.uniform(-amount, amount)};
}

inline int irange(SeedStream& s, int lo, int hi) { return lo + static_cast<int>(s.below(static_cast<std::uint64_t>(hi - lo + 1))); }

inline void background(Canvas& cv, double base, SeedStream& s) {
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) cv.set(x, y, {base + 12 * s.gaussian(), base + 12 * s.gaussian(), base + 12 * s.gaussian()});
}

inline void civilian(Canvas& cv, SeedStream& s) {
  background(cv, 200.0, s);
  static constexpr Rgb hues[] = {{205, 30, 30}, {30, 60, 205}, {225, 200, 30}, {245, 245, 245}};
  const Rgb body = jitter(hues[s.below(4)], 20.0, s);
  const int ground = irange(s, 22, 26);
  const int x0 = irange(s, 1, 5), cargo_w = irange(s, 15, 19), cargo_h = irange(s, 10, 14);
  const int cab_w = irange(s, 5, 7), cab_h = cargo_h - irange(s, 3, 5);
  cv.rect(x0, ground - cargo_h, x0 + cargo_w, ground, body);
  cv.rect(x0 + cargo_w + 1, ground - cab_h, x0 + cargo_w + 1 + cab_w, ground, body);
  cv.rect(x0 + cargo_w + 2, ground - cab_h + 1, x0 + cargo_w + cab_w, ground - cab_h + 4, {70, 110, 150});  // window
  const double wr = s.uniform(2.0, 3.0);
  const Rgb tyre{30, 30, 30};
  cv.disc(x0 + 4, ground, wr, tyre);
  cv.disc(x0 + cargo_w - 3, ground, wr, tyre);
  cv.disc(x0 + cargo_w + 1 + cab_w / 2.0, ground, wr, tyre);
}

inline void military(Canvas& cv, SeedStream& s) {
  background(cv, 90.0, s);
  static constexpr Rgb hulls[] = {{85, 95, 60}, {110, 110, 105}};
  const Rgb hull = jitter(hulls[s.below(2)], 10.0, s);
  const Rgb dark{hull.r * 0.6, hull.g * 0.6, hull.b * 0.6};
  const int ground = irange(s, 23, 27);
  const int x0 = irange(s, 2, 6), hull_w = irange(s, 18, 24), hull_h = irange(s, 6, 8);
  cv.rect(x0, ground - 3, x0 + hull_w, ground, {40, 40, 38});  // tracks
  cv.rect(x0 + 1, ground - 3 - hull_h, x0 + hull_w - 1, ground - 3, hull);
  const int tw = irange(s, 8, 10), th = irange(s, 4, 5);
  const int tx = x0 + hull_w / 2 - tw / 2 + irange(s, -2, 2), ty = ground - 3 - hull_h - th;
  cv.rect(tx, ty, tx + tw, ty + th, dark);
  const int barrel_len = irange(s, 8, 10), by = ty + th / 2;
  cv.rect(tx + tw, by, tx + tw + barrel_len, by + 1, dark);
  if (s.uniform() < 0.3) {
    const Rgb flash{255, s.uniform(90, 160), 20};
    cv.glow(tx + tw + barrel_len + 1, by, s.uniform(2.0, 4.0), flash);
  }
}

}  // namespace detail

// Labels alternate civilian, military, ... Image i is drawn from s.child(i),
// so images can be produced in any order.
inline Image synth_vehicle_image(std::uint8_t label, SeedStream s) {
  Image img{};
  detail::Canvas cv(img);
  if (label == kMilitary) detail::military(cv, s);
  else detail::civilian(cv, s);
  return img;
}

inline LabeledImageSet synth_vehicle_images(std::size_t count, const SeedStream& s, unsigned threads = 1) {
  LabeledImageSet set;
  set.images.resize(count);
  set.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) set.labels[i] = i % 2 ? kMilitary : kCivilian;
  parallel_for(count, threads, [&](std::size_t i) { set.images[i] = synth_vehicle_image(set.labels[i], s.child(i)); });
  return set;
}

// --- lexicon and phrases --------------------------------------------------------

struct Lexicon {
  std::vector<std::string> positive;
  std::vector<std::string> negative;

  void validate() const {
    if (positive.empty() || negative.empty()) throw FormatError("lexicon needs positive and negative words");
    std::set<std::string> seen;
    for (const auto* list : {&positive, &negative})
      for (const auto& w : *list) {
        if (w.empty() || std::any_of(w.begin(), w.end(), [](unsigned char c) { return std::isspace(c); }))
          throw FormatError("lexicon word must be a single token: '" + w + "'");
        if (!seen.insert(w).second) throw FormatError("lexicon word listed twice: " + w);
      }
  }

  friend bool operator==(const Lexicon&, const Lexicon&) = default;
};

inline Lexicon military_lexicon() {
  return {{"achieve", "advance", "authorize", "clear", "command", "confirm", "decisive", "definitive", "deploy",
           "designated", "effective", "engage", "established", "mission-ready", "objective-secured", "on-target",
           "success", "validated"},
          {"abort", "ambiguous", "breakdown", "cancel", "compromised", "conflicted", "degrade", "defeat", "denied",
           "disrupt", "doubtful", "failure", "ineffective", "misfire", "obstructed", "off-course", "unconfirmed",
           "void"}};
}

inline std::string to_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1));
}

// [positive] / [negative] sections, one word per line, '#' comments.
inline Lexicon parse_lexicon(std::string_view text) {
  Lexicon lex;
  std::vector<std::string>* section = nullptr;
  std::istringstream in{std::string(text)};
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const std::string t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    if (t == "[positive]") section = &lex.positive;
    else if (t == "[negative]") section = &lex.negative;
    else if (t.front() == '[') throw FormatError("lexicon line " + std::to_string(lineno) + ": unknown section " + t);
    else if (!section) throw FormatError("lexicon line " + std::to_string(lineno) + ": word outside a section");
    else section->push_back(to_lower(t));
  }
  lex.validate();
  return lex;
}

inline constexpr std::array<std::string_view, 10> kPhraseTemplates = {
    "mission status {w} proceed as planned",
    "target report {w} awaiting orders",
    "comms check {w} over",
    "drone two reports {w} on approach",
    "sector alpha update {w} hold position",
    "overwatch to base {w} stand by",
    "strike package {w} report follows",
    "recon flight {w} returning to base",
    "checkpoint bravo {w} requesting instructions",
    "operator log {w} end of transmission",
};

struct PhraseSource {
  int template_id = -1;  // -1 when read back from a corpus file
  std::string word;

  friend bool operator==(const PhraseSource&, const PhraseSource&) = default;
};

struct PhraseSet {
  std::vector<std::string> phrases;
  std::vector<int> labels;
  std::vector<PhraseSource> provenance;

  std::size_t size() const { return phrases.size(); }
  friend bool operator==(const PhraseSet&, const PhraseSet&) = default;
};

inline std::string fill_template(std::string_view tmpl, std::string_view word) {
  std::string out(tmpl);
  out.replace(out.find("{w}"), 3, word);
  return out;
}

// Every template with every word, then shuffled by the stream.
inline PhraseSet gen_phrases(const Lexicon& lex, SeedStream& s) {
  lex.validate();
  PhraseSet ordered;
  for (std::size_t t = 0; t < kPhraseTemplates.size(); ++t)
    for (int label : {1, 0})
      for (const auto& w : label ? lex.positive : lex.negative) {
        ordered.phrases.push_back(fill_template(kPhraseTemplates[t], w));
        ordered.labels.push_back(label);
        ordered.provenance.push_back({static_cast<int>(t), w});
      }
  std::vector<std::size_t> order(ordered.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(order), s);
  PhraseSet out;
  for (std::size_t i : order) {
    out.phrases.push_back(std::move(ordered.phrases[i]));
    out.labels.push_back(ordered.labels[i]);
    out.provenance.push_back(std::move(ordered.provenance[i]));
  }
  return out;
}

// Lower-case, split on whitespace, drop punctuation except hyphens between
// letters or digits.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::istringstream in{std::string(text)};
  for (std::string raw; in >> raw;) {
    std::string tok;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const unsigned char c = static_cast<unsigned char>(raw[i]);
      if (std::isalnum(c)) {
        tok.push_back(static_cast<char>(std::tolower(c)));
      } else if (c == '-' && !tok.empty() && std::isalnum(static_cast<unsigned char>(tok.back())) && i + 1 < raw.size() &&
                 std::isalnum(static_cast<unsigned char>(raw[i + 1]))) {
        tok.push_back('-');
      }
    }
    if (!tok.empty()) tokens.push_back(std::move(tok));
  }
  return tokens;
}

// Tokens sorted and numbered from 1; 0 is out-of-vocabulary.
struct Vocabulary {
  std::map<std::string, std::size_t> index;

  std::size_t size() const { return index.size() + 1; }
  std::size_t lookup(const std::string& token) const {
    const auto it = index.find(token);
    return it == index.end() ? 0 : it->second;
  }
};

inline Vocabulary build_vocab(const PhraseSet& set) {
  std::set<std::string> tokens;
  for (const auto& p : set.phrases)
    for (auto& t : tokenize(p)) tokens.insert(std::move(t));
  Vocabulary v;
  std::size_t next = 1;
  for (const auto& t : tokens) v.index[t] = next++;
  return v;
}

inline std::vector<TokenSequence> encode(const PhraseSet& set, const Vocabulary& vocab) {
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    TokenSequence seq{{}, set.labels[i]};
    for (const auto& t : tokenize(set.phrases[i])) seq.ids.push_back(vocab.lookup(t));
    if (seq.ids.empty()) throw FormatError("phrase " + std::to_string(i) + " has no tokens");
    out.push_back(std::move(seq));
  }
  return out;
}

// Lexicon words in a phrase, by token.
inline std::vector<std::string> lexicon_words_in(const Lexicon& lex, std::string_view phrase) {
  std::vector<std::string> found;
  for (const auto& t : tokenize(phrase)) {
    if (std::find(lex.positive.begin(), lex.positive.end(), t) != lex.positive.end() ||
        std::find(lex.negative.begin(), lex.negative.end(), t) != lex.negative.end())
      found.push_back(t);
  }
  return found;
}

// Exactly one lexicon word, and the label agrees with its polarity.
inline bool phrase_consistent(const Lexicon& lex, std::string_view phrase, int label) {
  const auto words = lexicon_words_in(lex, phrase);
  if (words.size() != 1) return false;
  const bool positive = std::find(lex.positive.begin(), lex.positive.end(), words[0]) != lex.positive.end();
  return positive == (label == 1);
}

inline std::string write_phrase_corpus(const PhraseSet& set) {
  std::string out;
  for (std::size_t i = 0; i < set.size(); ++i) out += std::to_string(set.labels[i]) + "\t" + set.phrases[i] + "\n";
  return out;
}

inline PhraseSet parse_phrase_corpus(std::string_view text) {
  PhraseSet set;
  std::istringstream in{std::string(text)};
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.size() < 3 || (line[0] != '0' && line[0] != '1') || line[1] != '\t')
      throw FormatError("phrase corpus line " + std::to_string(lineno) + ": expected '<0|1>\\t<phrase>'");
    set.labels.push_back(line[0] - '0');
    set.phrases.push_back(line.substr(2));
    set.provenance.push_back({});
  }
  return set;
}

// --- splitting --------------------------------------------------------------------

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stratified: each class contributes floor(n_c * fraction) to train, and the
// remaining round(n * fraction) - sum slots go to the classes with the largest
// fractional parts (ties to the lower label). Each part is then shuffled.
inline SplitIndices stratified_split(std::span<const int> labels, double fraction, SeedStream& s) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split.fraction must lie strictly between 0 and 1");
  const std::size_t n = labels.size();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  if (n_train == 0 || n_train == n)
    throw ConfigError("split of " + std::to_string(n) + " items at fraction " + format_double(fraction) +
                      " leaves an empty part");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  std::vector<std::pair<int, std::size_t>> take;
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (auto& [label, idx] : by_class) {
    shuffle(std::span<std::size_t>(idx), s);
    const double exact = static_cast<double>(idx.size()) * fraction;
    const auto k = static_cast<std::size_t>(std::floor(exact));
    take.push_back({label, k});
    remainders.push_back({exact - static_cast<double>(k), label});
    assigned += k;
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n_train && r < remainders.size(); ++r, ++assigned)
    for (auto& [label, k] : take)
      if (label == remainders[r].second) ++k;

  SplitIndices out;
  for (const auto& [label, k] : take) {
    const auto& idx = by_class[label];
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  }
  shuffle(std::span<std::size_t>(out.train), s);
  shuffle(std::span<std::size_t>(out.test), s);
  return out;
}

inline PhraseSet subset(const PhraseSet& set, std::span<const std::size_t> idx) {
  PhraseSet out;
  for (std::size_t i : idx) {
    out.phrases.push_back(set.phrases.at(i));
    out.labels.push_back(set.labels.at(i));
    out.provenance.push_back(set.provenance.at(i));
  }
  return out;
}

inline std::pair<PhraseSet, PhraseSet> split(const PhraseSet& set, double fraction, SeedStream& s) {
  const auto parts = stratified_split(set.labels, fraction, s);
  return {subset(set, parts.train), subset(set, parts.test)};
}

inline std::pair<LabeledImageSet, LabeledImageSet> split(const LabeledImageSet& set, double fraction, SeedStream& s) {
  const std::vector<int> labels(set.labels.begin(), set.labels.end());
  const auto parts = stratified_split(labels, fraction, s);
  return {subset(set, parts.train), subset(set, parts.test)};
}

}  // namespace qtnn
