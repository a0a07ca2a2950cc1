#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "awe/checkpoint.h"
#include "awe/error.h"
#include "awe/trainer.h"
#include "awe/util.h"

namespace fs = std::filesystem;
using namespace awe;
using namespace awe::train;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh scratch directory per test.
fs::path scratch(const std::string& tag) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() /
               ("awe_trainer_" + std::string(info->name()) + "_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

corpus::CorpusSplit tiny_corpus(const phonology::FeatureTable& table, std::uint64_t seed = 5) {
  corpus::SynthConfig s;
  s.n_word_types = 6;
  s.segments_per_type = 6;
  s.n_speakers = 2;
  s.min_phones = 3;
  s.max_phones = 5;
  s.min_frames_per_phone = 2;
  s.max_frames_per_phone = 4;
  s.seed = seed;
  return corpus::synthesize_corpus(s, table);
}

RunConfig tiny_config(objectives::Objective obj, encoders::EncoderKind kind) {
  RunConfig c;
  c.name = "tiny";
  c.encoder.kind = kind;
  c.encoder.cnn_filters = {8, 8};
  c.encoder.cnn_widths = {3, 5};
  c.encoder.gru_layers = 1;
  c.encoder.gru_hidden = 6;
  c.encoder.dropout = 0.1;
  c.objective = obj;
  c.decoder.hidden = 8;
  c.decoder.symbol_embed = 4;
  c.epochs = 3;
  c.batch_size = 8;
  c.lr = 3e-3;
  c.seed = 11;
  c.record_wall_time = false;
  return c;
}

struct Fixture : ::testing::Test {
  phonology::FeatureTable table = feature_table_for(RunConfig{});
  corpus::CorpusSplit corpus = tiny_corpus(table);
};

}  // namespace

// ---- plateau schedule ----------------------------------------------------------

TEST(Plateau, ConstantMetricReducesAtEpochEleven) {
  PlateauScheduler s(1e-3, 0.5, 10, 1e-6);
  for (int epoch = 1; epoch <= 10; ++epoch) EXPECT_FALSE(s.step(0.3)) << epoch;
  EXPECT_TRUE(s.step(0.3));
  EXPECT_DOUBLE_EQ(s.lr(), 5e-4);
  // The counter restarts, so the next cut comes ten epochs later.
  for (int epoch = 12; epoch <= 20; ++epoch) EXPECT_FALSE(s.step(0.3)) << epoch;
  EXPECT_TRUE(s.step(0.3));
  EXPECT_DOUBLE_EQ(s.lr(), 2.5e-4);
}

TEST(Plateau, ImprovementResetsCounter) {
  PlateauScheduler s(1.0, 0.5, 3, 0.0);
  s.step(0.1);
  s.step(0.1);
  s.step(0.1);
  EXPECT_EQ(s.bad_epochs(), 2u);
  s.step(0.2);
  EXPECT_EQ(s.bad_epochs(), 0u);
  EXPECT_DOUBLE_EQ(s.best(), 0.2);
  EXPECT_FALSE(s.step(0.2));  // equal is not better
  EXPECT_FALSE(s.step(0.15));
  EXPECT_TRUE(s.step(0.19));
  EXPECT_DOUBLE_EQ(s.lr(), 0.5);
}

TEST(Plateau, FloorStopsReductions) {
  PlateauScheduler s(1e-3, 0.5, 1, 4e-4);
  s.step(1.0);
  EXPECT_TRUE(s.step(0.0));
  EXPECT_DOUBLE_EQ(s.lr(), 5e-4);
  EXPECT_TRUE(s.step(0.0));
  EXPECT_DOUBLE_EQ(s.lr(), 4e-4);
  EXPECT_FALSE(s.step(0.0));
  EXPECT_DOUBLE_EQ(s.lr(), 4e-4);
  EXPECT_EQ(s.reductions(), 2u);
}

// Random metric traces: the rate never rises, is always lr0 * factor^k for the
// reduction count k, and k is bounded by epochs / patience.
TEST(Plateau, RateInvariantsOnRandomTraces) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t patience = 1 + rng.index(12);
    const std::size_t epochs = 1 + rng.index(200);
    PlateauScheduler s(1e-3, 0.5, patience, 0.0);
    double prev = s.lr();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < epochs; ++e) {
      const double m = rng.uniform() < 0.3 ? best : rng.uniform();
      const bool cut = s.step(m);
      if (m > best) {
        best = m;
        EXPECT_FALSE(cut);
        EXPECT_EQ(s.bad_epochs(), 0u);
      }
      EXPECT_LE(s.lr(), prev);
      EXPECT_EQ(cut, s.lr() < prev);
      prev = s.lr();
      EXPECT_DOUBLE_EQ(s.lr(), 1e-3 * std::pow(0.5, static_cast<double>(s.reductions())));
      EXPECT_LT(s.bad_epochs(), patience);
    }
    EXPECT_LE(s.reductions(), epochs / patience);
  }
}

TEST(Plateau, RestoreContinuesIdentically) {
  PlateauScheduler a(1e-2, 0.5, 2, 0.0);
  const double trace[] = {0.1, 0.3, 0.2, 0.2, 0.25, 0.4, 0.1, 0.1, 0.1};
  for (int i = 0; i < 4; ++i) a.step(trace[i]);
  PlateauScheduler b(1e-2, 0.5, 2, 0.0);
  b.restore(a.lr(), a.best(), a.bad_epochs(), a.reductions());
  for (int i = 4; i < 9; ++i) {
    EXPECT_EQ(a.step(trace[i]), b.step(trace[i]));
    EXPECT_EQ(a.lr(), b.lr());
  }
}

// ---- checkpoints -----------------------------------------------------------------

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config = tiny_config(objectives::Objective::kPhoneDetect, encoders::EncoderKind::kCnn);
  c.state.epoch = 4;
  c.state.val_map = 0.25;
  c.state.lr = 5e-4;
  c.state.best_val_map = 0.3;
  c.state.best_epoch = 3;
  c.state.plateau_bad_epochs = 1;
  c.state.adam_step = 17;
  c.state.dropout_counter = 123456789012345ULL;
  Rng r(9);
  r.normal();
  c.state.rng_state = r.state();
  c.tensors.push_back({"a", 2, 3, {1.f, -2.f, 3.5f, 0.f, -0.f, 1e-30f}});
  c.tensors.push_back({"b", 1, 1, {std::numeric_limits<float>::denorm_min()}});
  c.tensors.push_back({"empty", 0, 0, {}});
  return c;
}

}  // namespace

TEST(CheckpointFormat, SerializeParseSerializeIsIdentity) {
  const Checkpoint c = sample_checkpoint();
  const std::string bytes = serialize_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 4), "AWE1");
  const Checkpoint d = deserialize_checkpoint(bytes, "mem");
  EXPECT_EQ(serialize_checkpoint(d), bytes);
  EXPECT_EQ(d.config.fingerprint(), c.config.fingerprint());
  EXPECT_EQ(d.state.dropout_counter, c.state.dropout_counter);
  EXPECT_EQ(d.state.rng_state, c.state.rng_state);
  ASSERT_NE(d.find("a"), nullptr);
  EXPECT_EQ(d.find("a")->values, c.tensors[0].values);
  EXPECT_TRUE(std::signbit(d.find("a")->values[4]));
  EXPECT_EQ(d.find("b")->values[0], std::numeric_limits<float>::denorm_min());
  EXPECT_EQ(d.find("missing"), nullptr);
}

TEST(CheckpointFormat, FileRoundTrip) {
  const auto dir = scratch("file");
  const Checkpoint c = sample_checkpoint();
  save_checkpoint((dir / "x.ckpt").string(), c);
  EXPECT_EQ(slurp(dir / "x.ckpt"), serialize_checkpoint(c));
  EXPECT_EQ(serialize_checkpoint(load_checkpoint((dir / "x.ckpt").string())),
            serialize_checkpoint(c));
  EXPECT_THROW(load_checkpoint((dir / "nope.ckpt").string()), IoError);
}

TEST(CheckpointFormat, EveryTruncationIsRejected) {
  const std::string bytes = serialize_checkpoint(sample_checkpoint());
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, n), "cut"), ParseError) << n;
  EXPECT_THROW(deserialize_checkpoint(bytes + "x", "long"), ParseError);
}

TEST(CheckpointFormat, CorruptionIsRejected) {
  std::string bytes = serialize_checkpoint(sample_checkpoint());
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic, "m"), ParseError);
  // A flipped payload bit fails the digest.
  std::string payload = bytes;
  payload[payload.size() - 2] ^= 0x10;
  try {
    deserialize_checkpoint(payload, "flip.ckpt");
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("flip.ckpt"), std::string::npos) << e.what();
  }
}

TEST_F(Fixture, ImportRejectsMissingOrMisShapedTensors) {
  const auto cfg = tiny_config(objectives::Objective::kPhoneDetect, encoders::EncoderKind::kCnn);
  Model m(cfg, corpus, table);
  Checkpoint c;
  c.config = cfg;
  c.tensors = m.export_tensors();
  EXPECT_NO_THROW(m.import_tensors(c));
  Checkpoint bad = c;
  bad.tensors.back().cols += 1;
  bad.tensors.back().values.resize(bad.tensors.back().rows * bad.tensors.back().cols);
  EXPECT_THROW(m.import_tensors(bad), ParseError);
  Checkpoint missing = c;
  missing.tensors.erase(missing.tensors.begin());
  EXPECT_THROW(m.import_tensors(missing), ParseError);
}

TEST_F(Fixture, ExportedNamesArePrefixed) {
  for (auto obj : {objectives::Objective::kPhoneDetect, objectives::Objective::kWord2Phones,
                   objectives::Objective::kSiamese}) {
    Model m(tiny_config(obj, encoders::EncoderKind::kBgru), corpus, table);
    bool head = false;
    for (const auto& t : m.export_tensors()) {
      const bool enc = t.name.rfind("encoder.", 0) == 0;
      const bool hd = t.name.rfind("head.", 0) == 0;
      EXPECT_TRUE(enc || hd) << t.name;
      head |= hd;
      EXPECT_EQ(t.values.size(), t.rows * t.cols) << t.name;
    }
    EXPECT_EQ(head, obj != objectives::Objective::kSiamese) << objectives::to_string(obj);
  }
}

// ---- training loop ----------------------------------------------------------------

struct ObjectiveCase {
  objectives::Objective obj;
  encoders::EncoderKind kind;
  objectives::Sampling sampling;
};

class TrainLoop : public Fixture, public ::testing::WithParamInterface<ObjectiveCase> {
 protected:
  RunConfig config() const {
    auto c = tiny_config(GetParam().obj, GetParam().kind);
    c.triplet.sampling = GetParam().sampling;
    return c;
  }
};

TEST_P(TrainLoop, LossFallsOverTwoEpochs) {
  auto cfg = config();
  cfg.epochs = 2;
  TrainOptions o;
  o.out_dir = scratch("fall").string();
  const auto r = awe::train::train(cfg, corpus, table, o);
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_LT(r.log[1].loss, r.log[0].loss);
  for (const auto& e : r.log) {
    EXPECT_TRUE(std::isfinite(e.loss));
    EXPECT_GE(e.val_map, 0.0);
    EXPECT_LE(e.val_map, 1.0);
    EXPECT_EQ(e.seconds, 0.0);
  }
  ASSERT_TRUE(r.test_report.has_value());
  EXPECT_EQ(r.test_report->fingerprint, cfg.fingerprint());
  for (const char* f : {"run.json", "train_log.jsonl", "last.ckpt", "best.ckpt",
                        "test_report.json"})
    EXPECT_TRUE(fs::exists(fs::path(o.out_dir) / f)) << f;
}

TEST_P(TrainLoop, SameSeedGivesIdenticalFiles) {
  const auto cfg = config();
  TrainOptions a, b;
  a.out_dir = scratch("a").string();
  b.out_dir = scratch("b").string();
  awe::train::train(cfg, corpus, table, a);
  awe::train::train(cfg, corpus, table, b);
  for (const char* f : {"run.json", "train_log.jsonl", "last.ckpt", "best.ckpt",
                        "test_report.json"})
    EXPECT_EQ(slurp(fs::path(a.out_dir) / f), slurp(fs::path(b.out_dir) / f)) << f;
}

TEST_P(TrainLoop, ResumeMatchesUninterruptedRun) {
  const auto cfg = config();
  TrainOptions full;
  full.out_dir = scratch("full").string();
  awe::train::train(cfg, corpus, table, full);

  TrainOptions part;
  part.out_dir = scratch("part").string();
  part.stop_after_epoch = 1;
  const auto first = awe::train::train(cfg, corpus, table, part);
  EXPECT_EQ(first.log.size(), 1u);
  EXPECT_FALSE(first.test_report.has_value());
  part.stop_after_epoch = 0;
  part.resume_from = (fs::path(part.out_dir) / "last.ckpt").string();
  const auto rest = awe::train::train(cfg, corpus, table, part);
  EXPECT_EQ(rest.log.size(), cfg.epochs);
  for (const char* f : {"train_log.jsonl", "last.ckpt", "best.ckpt", "test_report.json"})
    EXPECT_EQ(slurp(fs::path(full.out_dir) / f), slurp(fs::path(part.out_dir) / f)) << f;
}

TEST_P(TrainLoop, BestCheckpointHoldsTheBestEpoch) {
  const auto cfg = config();
  TrainOptions o;
  o.out_dir = scratch("best").string();
  o.evaluate_test = false;
  const auto r = awe::train::train(cfg, corpus, table, o);
  ASSERT_EQ(r.log.size(), cfg.epochs);
  const auto& s = r.best.state;
  ASSERT_GE(s.best_epoch, 1u);
  EXPECT_EQ(s.best_val_map, r.log[s.best_epoch - 1].val_map);
  for (std::size_t k = 0; k < r.log.size(); ++k) {
    EXPECT_GE(s.best_val_map, r.log[k].val_map) << "epoch " << k + 1;
    if (k > 0) EXPECT_LE(r.log[k].lr, r.log[k - 1].lr);
  }
  EXPECT_EQ(load_checkpoint((fs::path(o.out_dir) / "best.ckpt").string()).state.best_epoch,
            s.best_epoch);

  const auto info = slurp(fs::path(o.out_dir) / "run.json");
  EXPECT_NE(info.find(cfg.fingerprint()), std::string::npos);
  EXPECT_NE(info.find("\"seed\": " + std::to_string(cfg.seed)), std::string::npos);
  EXPECT_NE(info.find("\"version\": \"" AWE_VERSION "\""), std::string::npos);
}

TEST_P(TrainLoop, CheckpointPreservesEmbeddingsBitExactly) {
  const auto cfg = config();
  TrainOptions o;
  o.out_dir = scratch("emb").string();
  o.evaluate_test = false;
  awe::train::train(cfg, corpus, table, o);
  const auto ckpt = load_checkpoint((fs::path(o.out_dir) / "last.ckpt").string());
  auto enc = encoder_from_checkpoint(ckpt);
  const auto e1 = embed_segments(*enc, corpus.test);

  const auto dir = scratch("copy");
  save_checkpoint((dir / "copy.ckpt").string(), ckpt);
  auto enc2 = encoder_from_checkpoint(load_checkpoint((dir / "copy.ckpt").string()));
  const auto e2 = embed_segments(*enc2, corpus.test, 3);
  ASSERT_EQ(e1.size(), e2.size());
  EXPECT_EQ(0, std::memcmp(e1.data(), e2.data(), e1.size() * sizeof(float)));
}

INSTANTIATE_TEST_SUITE_P(
    Objectives, TrainLoop,
    ::testing::Values(
        ObjectiveCase{objectives::Objective::kPhoneDetect, encoders::EncoderKind::kCnn,
                      objectives::Sampling::kSemiHard},
        ObjectiveCase{objectives::Objective::kWord2Phones, encoders::EncoderKind::kBgru,
                      objectives::Sampling::kSemiHard},
        ObjectiveCase{objectives::Objective::kSiamese, encoders::EncoderKind::kBgru,
                      objectives::Sampling::kSemiHard},
        ObjectiveCase{objectives::Objective::kSiamese, encoders::EncoderKind::kCnn,
                      objectives::Sampling::kRandom}),
    [](const auto& info) {
      return std::string(objectives::to_string(info.param.obj)) + "_" +
             std::string(encoders::to_string(info.param.kind)) + "_" +
             std::string(objectives::to_string(info.param.sampling));
    });

TEST_F(Fixture, ThreadCountDoesNotChangeOutputs) {
  auto cfg = tiny_config(objectives::Objective::kSiamese, encoders::EncoderKind::kCnn);
  TrainOptions a, b;
  a.out_dir = scratch("t1").string();
  b.out_dir = scratch("t3").string();
  b.threads = 3;
  awe::train::train(cfg, corpus, table, a);
  awe::train::train(cfg, corpus, table, b);
  for (const char* f : {"train_log.jsonl", "last.ckpt", "test_report.json"})
    EXPECT_EQ(slurp(fs::path(a.out_dir) / f), slurp(fs::path(b.out_dir) / f)) << f;
}

TEST_F(Fixture, DifferentSeedsDiverge) {
  auto cfg = tiny_config(objectives::Objective::kPhoneDetect, encoders::EncoderKind::kCnn);
  TrainOptions a, b;
  a.out_dir = scratch("s1").string();
  b.out_dir = scratch("s2").string();
  awe::train::train(cfg, corpus, table, a);
  cfg.seed += 1;
  awe::train::train(cfg, corpus, table, b);
  EXPECT_NE(slurp(fs::path(a.out_dir) / "train_log.jsonl"),
            slurp(fs::path(b.out_dir) / "train_log.jsonl"));
}

TEST_F(Fixture, ResumeRejectsForeignCheckpoint) {
  auto cfg = tiny_config(objectives::Objective::kPhoneDetect, encoders::EncoderKind::kCnn);
  TrainOptions o;
  o.out_dir = scratch("foreign").string();
  o.stop_after_epoch = 1;
  awe::train::train(cfg, corpus, table, o);
  cfg.lr *= 2;
  o.resume_from = (fs::path(o.out_dir) / "last.ckpt").string();
  EXPECT_THROW(awe::train::train(cfg, corpus, table, o), ConflictError);
}

TEST_F(Fixture, NonFiniteLossIsReported) {
  auto cfg = tiny_config(objectives::Objective::kPhoneDetect, encoders::EncoderKind::kCnn);
  corpus.train[0].frames.data[0] = std::numeric_limits<float>::quiet_NaN();
  TrainOptions o;
  o.out_dir = scratch("nan").string();
  try {
    awe::train::train(cfg, corpus, table, o);
    FAIL() << "no error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST_F(Fixture, EmptyValidationSplitIsRejected) {
  auto cfg = tiny_config(objectives::Objective::kPhoneDetect, encoders::EncoderKind::kCnn);
  corpus.valid.clear();
  TrainOptions o;
  o.out_dir = scratch("noval").string();
  EXPECT_THROW(awe::train::train(cfg, corpus, table, o), ContractError);
}
