#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <set>
#include <sstream>

#include "awe/cli.h"
#include "awe/corpus.h"
#include "awe/error.h"
#include "awe/run_config.h"

namespace fs = std::filesystem;
using namespace awe;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result awe_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

fs::path scratch() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path p = fs::temp_directory_path() /
                     ("awe_cli_" + std::string(info->test_suite_name()) + "_" + info->name());
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kTinySynth = R"({"n_word_types": 6, "segments_per_type": 6, "n_speakers": 2,
  "min_phones": 3, "max_phones": 5, "min_frames_per_phone": 2, "max_frames_per_phone": 4,
  "seed": 4})";

const char* kTinyRun = R"({"name": "tiny", "encoder": "cnn", "cnn_filters": [8, 8],
  "cnn_widths": [3, 5], "objective": "siamese", "epochs": 2, "batch_size": 8,
  "seed": 3, "record_wall_time": false, "manifest": "corpus/manifest.tsv"})";

}  // namespace

// ---- run configs ---------------------------------------------------------------

TEST(RunConfig, CanonicalJsonRoundTrips) {
  train::RunConfig c;
  c.encoder.kind = encoders::EncoderKind::kCnn;
  c.ngram_orders = {1, 3};
  c.lr = 0.0025;
  c.eval_max_candidates = 50;
  const auto back = train::parse_run_config(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.fingerprint(), c.fingerprint());
  // Key order and whitespace in the input do not matter.
  const auto reordered = json::parse(c.to_json()).dump(4);
  EXPECT_EQ(train::parse_run_config(reordered).fingerprint(), c.fingerprint());
}

TEST(RunConfig, EveryFieldChangesTheFingerprint) {
  const train::RunConfig base;
  const auto j = json::parse(base.to_json());
  std::set<std::string> prints{base.fingerprint()};
  for (const auto& [key, value] : j.items()) {
    json k = j;
    if (value.is_boolean()) k[key] = !value.get<bool>();
    else if (key == "encoder") k[key] = "cnn";
    else if (key == "objective") k[key] = "word2phones";
    else if (key == "sampling") k[key] = "random";
    else if (key == "readout") k[key] = "mean";
    else if (key == "hamming_norm") k[key] = "feature_count";
    else if (key == "tau_variant") k[key] = "tau_b";
    else if (key == "ngram_orders") k[key] = {2};
    else if (key == "cnn_filters") k[key] = {8, 8, 8};
    else if (key == "cnn_widths") k[key] = {3, 5, 7};
    else if (key == "input_dim") k[key] = 40;
    else if (value.is_string()) k[key] = value.get<std::string>() + "x";
    else if (value.is_number_unsigned()) k[key] = value.get<std::uint64_t>() + 1;
    else if (key == "plateau_factor" || key == "dropout") k[key] = value.get<double>() / 2;
    else k[key] = value.get<double>() * 1.5;
    const auto c = train::parse_run_config(k.dump(), key);
    EXPECT_TRUE(prints.insert(c.fingerprint()).second) << key;
  }
}

TEST(RunConfig, UnknownKeyAndWrongTypeAreParseErrors) {
  try {
    train::parse_run_config(R"({"epochs": 3, "learning_rate": 0.1})", "cfg.json");
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("cfg.json"), std::string::npos);
  }
  EXPECT_THROW(train::parse_run_config(R"({"epochs": "ten"})"), ParseError);
  EXPECT_THROW(train::parse_run_config(R"({"epochs": -1})"), ParseError);
  EXPECT_THROW(train::parse_run_config("[1, 2]"), ParseError);
  EXPECT_THROW(train::parse_run_config("{"), ParseError);
  EXPECT_THROW(train::parse_run_config(R"({"encoder": "lstm"})"), DataError);
}

TEST(RunConfig, OutOfRangeValuesAreContractErrors) {
  EXPECT_THROW(train::parse_run_config(R"({"epochs": 0})"), ContractError);
  EXPECT_THROW(train::parse_run_config(R"({"batch_size": 1})"), ContractError);
  EXPECT_THROW(train::parse_run_config(R"({"plateau_factor": 1.0})"), ContractError);
  EXPECT_THROW(train::parse_run_config(R"({"dropout": 1.0})"), ContractError);
  EXPECT_THROW(train::parse_run_config(R"({"margin": -0.1})"), ContractError);
}

TEST(RunConfig, RelativePathsFollowTheConfigFile) {
  const auto dir = scratch();
  put(dir / "sub" / "run.json", R"({"manifest": "corpus/m.tsv", "features": "/abs/f.tsv"})");
  const auto c = train::load_run_config((dir / "sub" / "run.json").string());
  EXPECT_EQ(c.manifest, (dir / "sub" / "corpus" / "m.tsv").string());
  EXPECT_EQ(c.features, "/abs/f.tsv");
}

TEST(RunConfig, MatrixHasEightDistinctRuns) {
  train::RunConfig base;
  base.epochs = 7;
  const auto m = train::experiment_matrix(base);
  ASSERT_EQ(m.size(), 8u);
  std::set<std::string> prints, names;
  for (const auto& c : m) {
    prints.insert(c.fingerprint());
    names.insert(c.name);
    EXPECT_EQ(c.epochs, 7u);
    EXPECT_EQ(train::parse_run_config(c.to_json()).fingerprint(), c.fingerprint());
  }
  EXPECT_EQ(prints.size(), 8u);
  EXPECT_EQ(names.count("bgru_siamese_semi_hard"), 1u);
  EXPECT_EQ(names.count("cnn_phone_detect"), 1u);
}

// ---- synth configs -------------------------------------------------------------

TEST(SynthConfig, JsonRoundTrips) {
  corpus::SynthConfig s;
  s.noise_std = 1.25;
  s.n_word_types = 13;
  s.seed = 1234567890123ULL;
  const auto back = corpus::parse_synth_config(corpus::synth_config_json(s));
  EXPECT_EQ(corpus::synth_config_json(back), corpus::synth_config_json(s));
  EXPECT_EQ(back.seed, s.seed);
  EXPECT_EQ(back.n_word_types, 13u);
}

TEST(SynthConfig, MissingKeysKeepDefaults) {
  const auto s = corpus::parse_synth_config(R"({"noise_std": 2})");
  EXPECT_EQ(s.noise_std, 2.0);
  EXPECT_EQ(s.n_word_types, corpus::SynthConfig{}.n_word_types);
}

TEST(SynthConfig, BadInputIsRejected) {
  EXPECT_THROW(corpus::parse_synth_config(R"({"noise": 1})"), ParseError);
  EXPECT_THROW(corpus::parse_synth_config(R"({"n_word_types": 2.5})"), ParseError);
  EXPECT_THROW(corpus::parse_synth_config(R"({"n_word_types": -3})"), ParseError);
  EXPECT_THROW(corpus::parse_synth_config(R"({"seed": "x"})"), ParseError);
  EXPECT_THROW(corpus::parse_synth_config(R"({"feature_coupling": 1.5})"), ContractError);
}

// ---- command line ----------------------------------------------------------------

TEST(Cli, VersionAndUsage) {
  const auto v = awe_run({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_EQ(v.out.rfind("awe ", 0), 0u);
  EXPECT_NE(v.out.find("feature table"), std::string::npos);
  EXPECT_EQ(awe_run({}).code, 1);
  EXPECT_EQ(awe_run({"frobnicate"}).code, 1);
  EXPECT_EQ(awe_run({"train", "--out", "x"}).code, 1);  // --config missing
  EXPECT_EQ(awe_run({"eval-phonsim", "--emb", "e", "--manifest", "m", "--variant", "tau_c"}).code, 1);
  EXPECT_EQ(awe_run({"--help"}).code, 0);
}

TEST(Cli, PwldPrintsLdAndPwld) {
  const auto r = awe_run({"pwld", "--pairs", AWE_DATA_DIR "/sicher_pairs.tsv"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "query\tcandidate\tquery_phones\tcandidate_phones\tld\tpwld");
  std::vector<double> d;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream fs_(line);
    for (std::string x; std::getline(fs_, x, '\t');) f.push_back(x);
    ASSERT_EQ(f.size(), 6u) << line;
    EXPECT_EQ(f[4], "2");
    d.push_back(std::stod(f[5]));
  }
  ASSERT_EQ(d.size(), 4u);
  EXPECT_TRUE(std::is_sorted(d.begin(), d.end()));

  const auto single = awe_run({"pwld", "--a", "a b", "--b", "a b m"});
  EXPECT_EQ(single.code, 0);
  EXPECT_NE(single.out.find("\t1\t0.5000"), std::string::npos) << single.out;
  EXPECT_EQ(awe_run({"pwld", "--a", "a"}).code, 1);
  EXPECT_EQ(awe_run({"pwld", "--a", "a", "--b", "QQ"}).code, 2);
}

TEST(Cli, DataErrorsExitWithTwo) {
  const auto dir = scratch();
  const auto r = awe_run({"train", "--config", (dir / "missing.json").string(), "--out",
                          (dir / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.json"), std::string::npos) << r.err;
  put(dir / "bad.json", R"({"epochs": 2, "bogus": 1})");
  const auto bad = awe_run({"train", "--config", (dir / "bad.json").string(), "--out",
                            (dir / "o").string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("bogus"), std::string::npos) << bad.err;
  put(dir / "nomanifest.json", R"({"epochs": 2})");
  EXPECT_EQ(awe_run({"train", "--config", (dir / "nomanifest.json").string(), "--out",
                     (dir / "o").string()})
                .code,
            1);
}

TEST(Cli, NumericalFailureExitsWithThree) {
  const auto dir = scratch();
  put(dir / "synth.json", kTinySynth);
  ASSERT_EQ(awe_run({"synth-data", "--config", (dir / "synth.json").string(), "--out",
                     (dir / "corpus").string()})
                .code,
            0);
  // Poison one training feature file with a NaN.
  const auto manifest = slurp(dir / "corpus" / "manifest.tsv");
  std::istringstream in(manifest);
  std::string line, path;
  while (std::getline(in, line))
    if (line.find("\ttrain\t") != std::string::npos) {
      std::vector<std::string> f;
      std::istringstream ls(line);
      for (std::string x; std::getline(ls, x, '\t');) f.push_back(x);
      path = f[6];
      break;
    }
  ASSERT_FALSE(path.empty());
  const fs::path feat = fs::path(path).is_absolute() ? fs::path(path) : dir / "corpus" / path;
  std::string bytes = slurp(feat);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 8, &nan, sizeof nan);
  put(feat, bytes);
  put(dir / "run.json", kTinyRun);
  const auto r = awe_run({"train", "--config", (dir / "run.json").string(), "--out",
                          (dir / "out").string()});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("non-finite"), std::string::npos) << r.err;
}

TEST(Cli, SynthConfigFileWithFlagOverride) {
  const auto dir = scratch();
  put(dir / "synth.json", kTinySynth);
  const auto r = awe_run({"synth-data", "--config", (dir / "synth.json").string(), "--out",
                          (dir / "c").string(), "--noise", "0.9"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto info = json::parse(slurp(dir / "c" / "synth.json"));
  EXPECT_EQ(info["config"]["n_word_types"], 6);
  EXPECT_EQ(info["config"]["noise_std"], 0.9);
  EXPECT_EQ(info["config"]["seed"], 4);
  const auto corpus =
      corpus::load_manifest((dir / "c" / "manifest.tsv").string(), phonology::bundled_feature_table());
  EXPECT_EQ(corpus.train.size() + corpus.valid.size() + corpus.test.size(), 36u);

  put(dir / "typo.json", R"({"n_types": 3})");
  EXPECT_EQ(awe_run({"synth-data", "--config", (dir / "typo.json").string(), "--out",
                     (dir / "d").string()})
                .code,
            2);
}

// synth-data -> train -> embed -> eval-map / eval-phonsim -> report, with the
// standalone evaluation agreeing with the trainer's own test report.
TEST(Cli, EndToEndPipeline) {
  const auto dir = scratch();
  put(dir / "synth.json", kTinySynth);
  ASSERT_EQ(awe_run({"synth-data", "--config", (dir / "synth.json").string(), "--out",
                     (dir / "corpus").string()})
                .code,
            0);
  put(dir / "run.json", kTinyRun);
  const auto t = awe_run({"train", "--config", (dir / "run.json").string(), "--out",
                          (dir / "runs" / "tiny").string()});
  ASSERT_EQ(t.code, 0) << t.err;
  const auto report = json::parse(slurp(dir / "runs" / "tiny" / "test_report.json"));

  const auto manifest = (dir / "corpus" / "manifest.tsv").string();
  const auto emb = (dir / "emb.bin").string();
  ASSERT_EQ(awe_run({"embed", "--ckpt", (dir / "runs" / "tiny" / "best.ckpt").string(),
                     "--manifest", manifest, "--out", emb})
                .code,
            0);
  EXPECT_TRUE(fs::exists(emb + ".ids"));

  const auto m = awe_run({"eval-map", "--emb", emb, "--manifest", manifest});
  ASSERT_EQ(m.code, 0) << m.err;
  EXPECT_EQ(json::parse(m.out)["map"]["map"], report["map"]["map"]);

  const auto p = awe_run({"eval-phonsim", "--emb", emb, "--manifest", manifest, "--threads", "2"});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(json::parse(p.out)["phonsim"]["mean_tau"], report["phonsim"]["mean_tau"]);

  const auto tsv = awe_run({"eval-map", "--emb", emb, "--manifest", manifest, "--tsv"});
  EXPECT_EQ(tsv.code, 0);
  EXPECT_EQ(tsv.out.find('{'), std::string::npos);

  const auto sub = awe_run({"eval-map", "--emb", emb, "--manifest", manifest,
                            "--max-candidates", "5", "--subsample-seed", "1"});
  ASSERT_EQ(sub.code, 0) << sub.err;
  EXPECT_EQ(json::parse(sub.out)["candidates"]["max_candidates"], 5);

  const auto rep = awe_run({"report", "--runs", (dir / "runs").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(rep.out.find("Siamese-semi_hard"), std::string::npos) << rep.out;
  EXPECT_EQ(rep.out.rfind("model\tcnn_map", 0), 0u) << rep.out;

  // Resuming a finished run changes nothing.
  const auto log_before = slurp(dir / "runs" / "tiny" / "train_log.jsonl");
  ASSERT_EQ(awe_run({"train", "--config", (dir / "run.json").string(), "--out",
                     (dir / "runs" / "tiny").string(), "--resume"})
                .code,
            0);
  EXPECT_EQ(slurp(dir / "runs" / "tiny" / "train_log.jsonl"), log_before);

  // An embedding file that does not match the manifest.
  put(dir / "other.ids", "nobody\n");
  fs::copy_file(emb, dir / "other");
  EXPECT_EQ(awe_run({"eval-map", "--emb", (dir / "other").string(), "--manifest", manifest}).code,
            2);
}

TEST(Cli, MatrixWritesEightConfigs) {
  const auto dir = scratch();
  put(dir / "base.json", kTinyRun);
  const auto r = awe_run({"matrix", "--config", (dir / "base.json").string(), "--out",
                          (dir / "m").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::set<std::string> prints;
  std::istringstream in(r.out);
  for (std::string line; std::getline(in, line);) {
    const auto tab = line.find('\t');
    ASSERT_NE(tab, std::string::npos);
    const auto cfg = train::load_run_config(line.substr(0, tab));
    EXPECT_EQ(cfg.fingerprint(), line.substr(tab + 1));
    prints.insert(line.substr(tab + 1));
  }
  EXPECT_EQ(prints.size(), 8u);
}

TEST(Cli, GradcheckSucceeds) {
  const auto r = awe_run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}
