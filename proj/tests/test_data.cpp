#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "qtnn/data.hpp"

using namespace qtnn;

namespace {

LabeledImageSet random_records(std::size_t n, SeedStream& s) {
  LabeledImageSet set;
  for (std::size_t i = 0; i < n; ++i) {
    Image img;
    for (auto& b : img) b = static_cast<std::uint8_t>(s.below(256));
    set.images.push_back(img);
    set.labels.push_back(static_cast<std::uint8_t>(s.below(256)));
  }
  return set;
}

}  // namespace

TEST(Cifar, Sizes) {
  EXPECT_EQ(load_cifar_binary(std::string(6146, 'x')).size(), 2u);
  EXPECT_EQ(load_cifar_binary("").size(), 0u);
  EXPECT_EQ(write_cifar_binary({}).size(), 0u);
  SeedStream s(1);
  EXPECT_EQ(write_cifar_binary(random_records(10, s)).size(), 30730u);
}

TEST(Cifar, TruncationNamesOffset) {
  try {
    load_cifar_binary(std::string(3073 + 100, '\0'));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 3073"), std::string::npos) << e.what();
  }
}

TEST(Cifar, LayoutIsLabelThenPlanarRgb) {
  std::string rec(3073, '\0');
  rec[0] = 1;
  rec[1 + 0] = 10;             // R of pixel (0,0)
  rec[1 + 1024 + 33] = 20;     // G of pixel (row 1, col 1)
  rec[1 + 2048 + 1023] = 30;   // B of last pixel
  const auto set = load_cifar_binary(rec);
  EXPECT_EQ(set.labels[0], 1);
  EXPECT_EQ(set.images[0][0], 10);
  const auto ppm = to_ppm(set.images[0]);
  // the header is 13 bytes, so a file is 3085 bytes
  ASSERT_EQ(ppm.size(), 13u + 3072u);
  EXPECT_EQ(ppm.substr(0, 13), "P6\n32 32\n255\n");
  EXPECT_EQ(ppm[13 + 0], 10);
  EXPECT_EQ(ppm[13 + 33 * 3 + 1], 20);
  EXPECT_EQ(ppm[13 + 1023 * 3 + 2], 30);
}

TEST(Cifar, RoundTripIsBitExact) {
  SeedStream s(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::string bytes(3073 * s.below(6), '\0');
    for (char& c : bytes) c = static_cast<char>(s.below(256));
    const auto set = load_cifar_binary(bytes);
    EXPECT_EQ(write_cifar_binary(set), bytes);
    EXPECT_EQ(load_cifar_binary(write_cifar_binary(set)), set);
  }
}

TEST(Cifar, ExamplesScalePixels) {
  SeedStream s(3);
  auto set = random_records(3, s);
  for (auto& l : set.labels) l = 1;
  const auto ex = to_examples(set);
  EXPECT_EQ(ex.inputs(1, 7), set.images[1][7] / 255.0);
  set.labels[2] = 7;
  EXPECT_THROW(to_examples(set), FormatError);
}

TEST(Synth, CountsBalanceAndDeterminism) {
  EXPECT_EQ(synth_vehicle_images(0, SeedStream(1)).size(), 0u);
  const auto a = synth_vehicle_images(1000, SeedStream(5));
  EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 0), 500);
  EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 1), 500);
  EXPECT_EQ(write_cifar_binary(a), write_cifar_binary(synth_vehicle_images(1000, SeedStream(5), 4)));
  EXPECT_NE(a, synth_vehicle_images(1000, SeedStream(6)));
}

TEST(Synth, ClassCuesPresent) {
  const auto set = synth_vehicle_images(400, SeedStream(7));
  double bright[2] = {0, 0};
  int flashes = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& img = set.images[i];
    // mean of the top rows, which stay background for both recipes
    double sum = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 3 * 32; ++p) sum += img[c * kPlane + p];
    bright[set.labels[i]] += sum / (3 * 96);
    if (set.labels[i] == kMilitary) {
      bool hot = false;
      for (std::size_t p = 0; p < kPlane; ++p)
        hot |= img[p] > 230 && img[kPlane + p] > 60 && img[kPlane + p] < 190 && img[2 * kPlane + p] < 80;
      flashes += hot;
    }
  }
  EXPECT_NEAR(bright[0] / 200, 200, 5);
  EXPECT_NEAR(bright[1] / 200, 90, 5);
  EXPECT_GT(flashes, 200 * 0.2);
  EXPECT_LT(flashes, 200 * 0.4);
}

TEST(Lexicon, MilitaryLists) {
  const auto lex = military_lexicon();
  EXPECT_EQ(lex.positive.size(), 18u);
  EXPECT_EQ(lex.negative.size(), 18u);
  EXPECT_NO_THROW(lex.validate());
  EXPECT_EQ(lex.positive[13], "mission-ready");
  EXPECT_EQ(lex.negative[15], "off-course");
}

TEST(Lexicon, ParseSections) {
  const auto lex = parse_lexicon("# words\n[positive]\nGo\n  success \n\n[negative]\nabort\n");
  EXPECT_EQ(lex.positive, (std::vector<std::string>{"go", "success"}));
  EXPECT_EQ(lex.negative, (std::vector<std::string>{"abort"}));
  EXPECT_THROW(parse_lexicon("go\n[positive]\nx\n[negative]\ny\n"), FormatError);
  EXPECT_THROW(parse_lexicon("[positive]\nx\n[neutral]\ny\n"), FormatError);
  EXPECT_THROW(parse_lexicon("[positive]\nx\n[negative]\nx\n"), FormatError);
  EXPECT_THROW(parse_lexicon("[positive]\nx\n"), FormatError);
}

TEST(Phrases, TemplatesAndLabels) {
  SeedStream s(8);
  const auto set = gen_phrases(military_lexicon(), s);
  ASSERT_EQ(set.size(), 360u);
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < set.size(); ++i) label_of[set.phrases[i]] = set.labels[i];
  EXPECT_EQ(label_of.size(), 360u);
  EXPECT_EQ(label_of.at("mission status success proceed as planned"), 1);
  EXPECT_EQ(label_of.at("mission status abort proceed as planned"), 0);
  EXPECT_EQ(label_of.at("comms check on-target over"), 1);
  EXPECT_EQ(std::count(set.labels.begin(), set.labels.end(), 1), 180);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_TRUE(phrase_consistent(military_lexicon(), set.phrases[i], set.labels[i])) << set.phrases[i];
    EXPECT_EQ(set.phrases[i], fill_template(kPhraseTemplates[set.provenance[i].template_id], set.provenance[i].word));
  }
  SeedStream t(8);
  EXPECT_EQ(gen_phrases(military_lexicon(), t), set);
}

TEST(Phrases, ConsistencyCheckCatchesBadPhrases) {
  const auto lex = military_lexicon();
  EXPECT_FALSE(phrase_consistent(lex, "comms check success over", 0));
  EXPECT_FALSE(phrase_consistent(lex, "comms check success abort", 1));
  EXPECT_FALSE(phrase_consistent(lex, "comms check over", 1));
}

TEST(Tokenize, Rules) {
  EXPECT_EQ(tokenize("Mission aborted."), (std::vector<std::string>{"mission", "aborted"}));
  EXPECT_EQ(tokenize("Objective-secured, over"), (std::vector<std::string>{"objective-secured", "over"}));
  EXPECT_EQ(tokenize("  -go- now!! -- "), (std::vector<std::string>{"go", "now"}));
  EXPECT_EQ(tokenize(""), std::vector<std::string>{});
}

TEST(Vocab, SortedFromOneWithOov) {
  PhraseSet set{{"b a", "c a-b"}, {1, 0}, {{}, {}}};
  const auto v = build_vocab(set);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.lookup("a"), 1u);
  EXPECT_EQ(v.lookup("a-b"), 2u);
  EXPECT_EQ(v.lookup("b"), 3u);
  EXPECT_EQ(v.lookup("zulu"), 0u);
  const auto seqs = encode({{"b zulu"}, {1}, {{}}}, v);
  EXPECT_EQ(seqs[0].ids, (std::vector<std::size_t>{3, 0}));
}

TEST(Split, PhraseCorpusProportions) {
  SeedStream g(9);
  const auto set = gen_phrases(military_lexicon(), g);
  SeedStream a(1), b(1);
  const auto [train, test] = split(set, 0.8, a);
  EXPECT_EQ(train.size(), 288u);
  EXPECT_EQ(test.size(), 72u);
  EXPECT_EQ(std::count(train.labels.begin(), train.labels.end(), 1), 144);
  const auto again = split(set, 0.8, b);
  EXPECT_EQ(again.first, train);
  std::vector<std::string> all = train.phrases;
  all.insert(all.end(), test.phrases.begin(), test.phrases.end());
  std::vector<std::string> orig = set.phrases;
  std::sort(all.begin(), all.end());
  std::sort(orig.begin(), orig.end());
  EXPECT_EQ(all, orig);
}

TEST(Split, UnevenClassesStayProportional) {
  SeedStream s(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + s.below(60);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(s.below(3));
    const double f = s.uniform(0.1, 0.9);
    const auto n_train = static_cast<std::size_t>(std::llround(n * f));
    if (n_train == 0 || n_train == n) {
      EXPECT_THROW(stratified_split(labels, f, s), ConfigError);
      continue;
    }
    const auto parts = stratified_split(labels, f, s);
    ASSERT_EQ(parts.train.size(), n_train);
    ASSERT_EQ(parts.train.size() + parts.test.size(), n);
    for (int c = 0; c < 3; ++c) {
      const double total = static_cast<double>(std::count(labels.begin(), labels.end(), c));
      const double in_train = static_cast<double>(
          std::count_if(parts.train.begin(), parts.train.end(), [&](std::size_t i) { return labels[i] == c; }));
      EXPECT_LE(std::abs(in_train - total * f), 1.0);
    }
  }
  EXPECT_THROW(stratified_split(std::vector<int>{0, 1}, 1.0, s), ConfigError);
}

TEST(Split, ImageSets) {
  const auto set = synth_vehicle_images(2500, SeedStream(4));
  SeedStream s(2);
  const auto [train, test] = split(set, 0.8, s);
  EXPECT_EQ(train.size(), 2000u);
  EXPECT_EQ(test.size(), 500u);
  EXPECT_EQ(std::count(test.labels.begin(), test.labels.end(), 1), 250);
}

TEST(PhraseCorpus, FileRoundTrip) {
  SeedStream g(11);
  const auto set = gen_phrases(military_lexicon(), g);
  const auto text = write_phrase_corpus(set);
  EXPECT_TRUE(text.find("\t") == 1);
  const auto back = parse_phrase_corpus(text);
  EXPECT_EQ(back.phrases, set.phrases);
  EXPECT_EQ(back.labels, set.labels);
  EXPECT_THROW(parse_phrase_corpus("2\tcomms check\n"), FormatError);
  EXPECT_THROW(parse_phrase_corpus("1 comms check\n"), FormatError);
  EXPECT_EQ(parse_phrase_corpus("1\tgo\r\n\n0\tstop\n").size(), 2u);
}
