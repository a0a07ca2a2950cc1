#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "../support/oracles.h"
#include "awe/corpus.h"
#include "awe/error.h"
#include "awe/phonology.h"
#include "awe/util.h"

using namespace awe;
using namespace awe::corpus;
using awe::phonology::PhoneSequence;
namespace fs = std::filesystem;

namespace {

const phonology::FeatureTable& table() { return phonology::bundled_feature_table(); }

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("awe_corpus_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<float> sine(double hz, std::size_t n, int rate) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = static_cast<float>(0.5 * std::sin(2.0 * M_PI * hz * static_cast<double>(i) / rate));
  return x;
}

std::vector<std::vector<float>> rows(const FrameMatrix& m) {
  std::vector<std::vector<float>> out(m.rows);
  for (std::size_t t = 0; t < m.rows; ++t) out[t].assign(m.row(t), m.row(t) + m.cols);
  return out;
}

SynthConfig small_synth(std::uint64_t seed) {
  SynthConfig c;
  c.n_word_types = 12;
  c.segments_per_type = 6;
  c.seed = seed;
  return c;
}

std::string manifest_row(const std::string& id, const std::string& split,
                         const std::string& type, const std::string& phones,
                         const std::string& path) {
  return id + "\t" + split + "\t" + type + "\t" + phones + "\tspk0\tfeats\t" + path +
         "\t0\t0.05\n";
}

FrameMatrix ones(std::size_t t) {
  return FrameMatrix{t, kFrameDim, std::vector<float>(t * kFrameDim, 1.0f)};
}

}  // namespace

TEST(Mfsc, OneSecondGives98Frames) {
  const std::vector<float> pcm(16000, 0.1f);
  EXPECT_EQ(extract_mfsc(pcm, {}).rows, 98u);
}

TEST(Mfsc, FrameCountFormulaProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    MfscConfig cfg;
    cfg.hop_ms = 5.0 + static_cast<double>(rng.index(10));
    cfg.window_ms = cfg.hop_ms + 1.0 + static_cast<double>(rng.index(30));
    cfg.n_mels = 1 + rng.index(40);
    const std::size_t win = cfg.window_samples(), hop = cfg.hop_samples();
    const std::size_t len = win + rng.index(5000);
    const std::vector<float> pcm(len, 0.0f);
    const auto m = extract_mfsc(pcm, cfg);
    EXPECT_EQ(m.rows, (len - win) / hop + 1);
    EXPECT_EQ(m.cols, cfg.n_mels);
  }
}

TEST(Mfsc, ZeroWaveformIsLogFloor) {
  MfscConfig cfg;
  const std::vector<float> pcm(4000, 0.0f);
  const auto m = extract_mfsc(pcm, cfg);
  for (float v : m.data) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(cfg.log_floor)));
}

TEST(Mfsc, SineAtBandCenterMatchesDirectDft) {
  MfscConfig cfg;
  const std::size_t band = 20;
  const double hz = mel_band_center_hz(cfg, band);
  const auto pcm = sine(hz, cfg.window_samples(), cfg.sample_rate_hz);
  const auto m = extract_mfsc(pcm, cfg);
  ASSERT_EQ(m.rows, 1u);

  const std::size_t win = cfg.window_samples();
  std::vector<double> x(cfg.fft_size(), 0.0);
  for (std::size_t i = 0; i < win; ++i)
    x[i] = (0.54 - 0.46 * std::cos(2.0 * M_PI * i / (win - 1.0))) * pcm[i];
  const auto power = oracle::dft_power(x);
  const auto bank = mel_filterbank(cfg);
  std::size_t peak = 0;
  for (std::size_t b = 0; b < cfg.n_mels; ++b) {
    double e = 0;
    for (std::size_t k = 0; k < power.size(); ++k) e += bank[b][k] * power[k];
    EXPECT_NEAR(m.data[b], std::log(e + cfg.log_floor), 1e-4) << "band " << b;
    if (m.data[b] > m.data[peak]) peak = b;
  }
  EXPECT_EQ(peak, band);
}

TEST(Mfsc, ShortWaveformIsRejected) {
  const std::vector<float> pcm(399, 0.0f);
  EXPECT_THROW(extract_mfsc(pcm, {}), DegenerateInputError);
}

TEST(Mfsc, BadConfigIsRejected) {
  MfscConfig cfg;
  cfg.hop_ms = 30.0;
  const std::vector<float> pcm(1000, 0.0f);
  EXPECT_THROW(extract_mfsc(pcm, cfg), ContractError);
}

TEST(Files, FeatureFileRoundTrip) {
  const auto dir = scratch("feats");
  FrameMatrix m{3, kFrameDim, {}};
  for (std::size_t i = 0; i < 3 * kFrameDim; ++i) m.data.push_back(0.25f * i - 7.0f);
  write_feature_file((dir / "a.f32").string(), m);
  EXPECT_EQ(read_feature_file((dir / "a.f32").string()), m);
}

TEST(Files, TruncatedFeatureFileIsRejected) {
  const auto dir = scratch("trunc");
  write_feature_file((dir / "a.f32").string(), ones(4));
  const auto bytes = read_file((dir / "a.f32").string());
  write_file((dir / "b.f32").string(), bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_feature_file((dir / "b.f32").string()), DataError);
}

TEST(Files, WavRoundTripWithin16BitPrecision) {
  const auto dir = scratch("wav");
  Waveform w{16000, sine(440.0, 1000, 16000)};
  write_wav((dir / "x.wav").string(), w);
  const auto r = read_wav((dir / "x.wav").string());
  EXPECT_EQ(r.sample_rate_hz, 16000);
  ASSERT_EQ(r.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    EXPECT_NEAR(r.samples[i], w.samples[i], 0.5 / 32768 + 1e-7);
}

TEST(Manifest, ThreeRowsThreeSplits) {
  const auto dir = scratch("three");
  write_feature_file((dir / "f.f32").string(), ones(5));
  std::ofstream(dir / "m.tsv") << manifest_row("s1", "train", "Kirche", "k I K ç @", "f.f32")
                               << manifest_row("s2", "valid", "Kirche", "k I K ç @", "f.f32")
                               << manifest_row("s3", "test", "sicher", "z I ç ɐ", "f.f32");
  const auto c = load_manifest((dir / "m.tsv").string(), table());
  EXPECT_EQ(c.train.size(), 1u);
  EXPECT_EQ(c.valid.size(), 1u);
  EXPECT_EQ(c.test.size(), 1u);
  EXPECT_EQ(c.vocabulary.size(), 2u);
  EXPECT_EQ(c.test[0].frames.rows, 5u);
  validate(c);
}

TEST(Manifest, AudioRowsAreExtracted) {
  const auto dir = scratch("audio");
  write_wav((dir / "a.wav").string(), Waveform{16000, sine(300.0, 16000, 16000)});
  std::ofstream(dir / "m.tsv") << "s1\ttrain\tKirche\tk I K ç @\tspk0\taudio\ta.wav\t0.5\t1.0\n";
  const auto c = load_manifest((dir / "m.tsv").string(), table());
  ASSERT_EQ(c.train.size(), 1u);
  EXPECT_EQ(c.train[0].frames.rows, (8000u - 400u) / 160u + 1u);
}

TEST(Manifest, MissingFileNamesThePath) {
  const auto dir = scratch("missing");
  std::ofstream(dir / "m.tsv") << manifest_row("s1", "train", "w", "a", "nowhere.f32");
  try {
    load_manifest((dir / "m.tsv").string(), table());
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nowhere.f32"), std::string::npos);
  }
}

TEST(Manifest, DuplicateIdIsAConflict) {
  const auto dir = scratch("dup");
  write_feature_file((dir / "f.f32").string(), ones(2));
  std::ofstream(dir / "m.tsv") << manifest_row("s1", "train", "w", "a", "f.f32")
                               << manifest_row("s1", "test", "w", "a", "f.f32");
  EXPECT_THROW(load_manifest((dir / "m.tsv").string(), table()), ConflictError);
}

TEST(Manifest, BadPhoneNamesTheSegment) {
  const auto dir = scratch("badphone");
  write_feature_file((dir / "f.f32").string(), ones(2));
  std::ofstream(dir / "m.tsv") << manifest_row("seg_x", "train", "w", "a QQ", "f.f32");
  try {
    load_manifest((dir / "m.tsv").string(), table());
    FAIL();
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("seg_x"), std::string::npos);
  }
}

TEST(Manifest, MalformedLineIsAParseError) {
  const auto dir = scratch("malformed");
  std::ofstream(dir / "m.tsv") << "s1\ttrain\tw\n";
  EXPECT_THROW(load_manifest((dir / "m.tsv").string(), table()), ParseError);
}

TEST(Manifest, WriteThenLoadPreservesMetadata) {
  auto c = synthesize_corpus(small_synth(4), table());
  const auto dir = scratch("roundtrip");
  write_corpus(dir.string(), c);
  const auto r = load_manifest((dir / "manifest.tsv").string(), table());
  EXPECT_EQ(r.vocabulary, c.vocabulary);
  for (const char* name : {"train", "valid", "test"}) {
    const auto& a = c.split(name);
    const auto& b = r.split(name);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].segment_id, b[i].segment_id);
      EXPECT_EQ(a[i].word_type, b[i].word_type);
      EXPECT_EQ(a[i].phones, b[i].phones);
      EXPECT_EQ(a[i].speaker_id, b[i].speaker_id);
      EXPECT_DOUBLE_EQ(a[i].duration_s, b[i].duration_s);
      EXPECT_EQ(a[i].frames, b[i].frames);
    }
  }
}

TEST(Synth, SameSeedIsBitIdentical) {
  const auto a = synthesize_corpus(small_synth(9), table());
  const auto b = synthesize_corpus(small_synth(9), table());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].segment_id, b.train[i].segment_id);
    EXPECT_EQ(a.train[i].frames, b.train[i].frames);
  }
  const auto c = synthesize_corpus(small_synth(10), table());
  EXPECT_NE(a.train[0].frames, c.train[0].frames);
}

TEST(Synth, NoVariationMakesTypesIdentical) {
  auto cfg = small_synth(2);
  cfg.noise_std = cfg.speaker_shift_std = cfg.duration_jitter = cfg.segment_shift_std = 0.0;
  const auto c = synthesize_corpus(cfg, table());
  std::map<std::string, const FrameMatrix*> first;
  for (const char* name : {"train", "valid", "test"})
    for (const auto& s : c.split(name)) {
      auto [it, fresh] = first.emplace(s.word_type, &s.frames);
      if (!fresh) EXPECT_EQ(*it->second, s.frames) << s.segment_id;
    }
}

TEST(Synth, ShapesAndLengths) {
  const auto c = synthesize_corpus(small_synth(5), table());
  validate(c);
  EXPECT_EQ(c.vocabulary.size(), 12u);
  EXPECT_EQ(c.train.size() + c.valid.size() + c.test.size(), 72u);
  for (const auto& [_, p] : c.vocabulary) {
    EXPECT_GE(p.size(), 4u);
    EXPECT_LE(p.size(), 9u);
  }
}

TEST(Synth, SharedPhonesMeanCloserPrototypes) {
  const SynthConfig cfg;
  const auto protos = phone_prototypes(cfg, table());
  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t d = 0; d < kFrameDim; ++d) s += std::pow(protos[a][d] - protos[b][d], 2);
    return std::sqrt(s);
  };
  Rng rng(17);
  const std::size_t n = table().num_phones();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> w(4), shared, disjoint(4);
    for (auto& p : w) p = rng.index(n);
    shared = w;
    do shared[3] = rng.index(n); while (shared[3] == w[3]);
    for (std::size_t i = 0; i < 4; ++i) do disjoint[i] = rng.index(n); while (disjoint[i] == w[i]);
    double d_shared = 0, d_disjoint = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      d_shared += dist(w[i], shared[i]) / 4;
      d_disjoint += dist(w[i], disjoint[i]) / 4;
    }
    // Three of four positions coincide, so only one term is nonzero.
    EXPECT_LT(d_shared, d_disjoint);
  }
}

TEST(Synth, SameTypeIsCloserUnderDtw) {
  auto cfg = small_synth(21);
  cfg.n_word_types = 30;
  cfg.segments_per_type = 8;
  const auto c = synthesize_corpus(cfg, table());
  std::vector<const WordSegment*> all;
  for (const char* name : {"train", "valid", "test"})
    for (const auto& s : c.split(name)) all.push_back(&s);
  Rng rng(5);
  const std::size_t pairs = 120;
  std::size_t wins = 0;
  for (std::size_t i = 0; i < pairs; ++i) {
    const WordSegment* a = all[rng.index(all.size())];
    const WordSegment *same = nullptr, *other = nullptr;
    while (!same) {
      const auto* s = all[rng.index(all.size())];
      if (s != a && s->word_type == a->word_type) same = s;
    }
    while (!other) {
      const auto* s = all[rng.index(all.size())];
      if (s->word_type != a->word_type) other = s;
    }
    if (oracle::dtw(rows(a->frames), rows(same->frames)) <
        oracle::dtw(rows(a->frames), rows(other->frames)))
      ++wins;
  }
  EXPECT_LT(oracle::sign_test_p(wins, pairs), 0.01) << wins << "/" << pairs;
}

TEST(Synth, InvalidConfigIsRejected) {
  auto cfg = small_synth(1);
  cfg.noise_std = -1;
  EXPECT_THROW(synthesize_corpus(cfg, table()), ContractError);
  cfg = small_synth(1);
  cfg.n_speakers = 0;
  EXPECT_THROW(synthesize_corpus(cfg, table()), ContractError);
}

TEST(NGrams, KircheBigramsAndTrigrams) {
  const auto k = PhoneSequence::parse("k I K ç @");
  std::vector<std::string> bi, tri;
  for (const auto& g : ngrams(k, 2)) bi.push_back(ngram_label(g));
  for (const auto& g : ngrams(k, 3)) tri.push_back(ngram_label(g));
  EXPECT_EQ(bi, (std::vector<std::string>{"#k", "kI", "IK", "Kç", "ç@", "@#"}));
  EXPECT_EQ(tri, (std::vector<std::string>{"#kI", "kIK", "IKç", "Kç@", "ç@#"}));
}

TEST(NGrams, SinglePhoneIsPadded) {
  std::vector<std::string> bi;
  for (const auto& g : ngrams(PhoneSequence::parse("a"), 2)) bi.push_back(ngram_label(g));
  EXPECT_EQ(bi, (std::vector<std::string>{"#a", "a#"}));
}

TEST(NGrams, InventoryIsSortedAndBounded) {
  const auto c = synthesize_corpus(small_synth(8), table());
  const auto inv = ngram_inventory(c.vocabulary, {2});
  std::size_t bound = 0;
  for (const auto& [_, p] : c.vocabulary) bound += p.size() + 1;
  EXPECT_LE(inv.size(), bound);
  EXPECT_TRUE(std::is_sorted(inv.grams().begin(), inv.grams().end()));
  std::vector<int> hit(inv.size(), 0);
  for (const auto& [_, p] : c.vocabulary) {
    const auto y = ngram_targets(p, inv, TargetMode::kStrict);
    for (std::size_t i = 0; i < y.size(); ++i) hit[i] |= y[i];
  }
  for (std::size_t i = 0; i < hit.size(); ++i) EXPECT_EQ(hit[i], 1) << ngram_label(inv.grams()[i]);
}

TEST(NGrams, TargetsArePresenceNotCounts) {
  std::vector<PhoneSequence> words{PhoneSequence::parse("a b a b")};
  const auto inv = ngram_inventory(words, {2});
  // #a ab ba ab b#: "ab" occurs twice but the target stays 1.
  EXPECT_EQ(inv.size(), 4u);
  EXPECT_EQ(ngram_targets(words[0], inv), (std::vector<std::uint8_t>{1, 1, 1, 1}));
}

TEST(NGrams, WordCoveringFirstTwoEntries) {
  std::vector<PhoneSequence> words{PhoneSequence::parse("a"), PhoneSequence::parse("a b")};
  const auto inv = ngram_inventory(words, {2});
  // Sorted: #a a# ab b#.
  ASSERT_EQ(inv.size(), 4u);
  EXPECT_EQ(ngram_targets(words[0], inv), (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(NGrams, KircheSixBigramsAmongGermanInventory) {
  std::vector<PhoneSequence> german;
  for (const char* w : {"k I K ç @", "z I ç ɐ", "b E ç ɐ", "f I S ɐ", "l I ç t ɐ",
                        "z I ts t", "h a U s", "k a t s @", "m U t ɐ"})
    german.push_back(PhoneSequence::parse(w));
  const auto inv = ngram_inventory(german, {2, 3});
  const auto y = ngram_targets(german[0], inv, TargetMode::kStrict);
  std::size_t bigram_ones = 0, trigram_ones = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!y[i]) continue;
    (inv.grams()[i].size() == 2 ? bigram_ones : trigram_ones)++;
  }
  EXPECT_EQ(bigram_ones, 6u);
  EXPECT_EQ(trigram_ones, 5u);
}

TEST(NGrams, StrictModeRejectsUnknown) {
  std::vector<PhoneSequence> words{PhoneSequence::parse("a b")};
  const auto inv = ngram_inventory(words, {2});
  const auto probe = PhoneSequence::parse("a m");
  EXPECT_THROW(ngram_targets(probe, inv, TargetMode::kStrict), LookupError);
  const auto y = ngram_targets(probe, inv, TargetMode::kLenient);
  EXPECT_EQ(y[inv.index_of({"#", "a"})], 1);
}
