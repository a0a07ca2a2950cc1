#include "awe/cli.h"

#include <CLI11.hpp>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "awe/checkpoint.h"
#include "awe/corpus.h"
#include "awe/error.h"
#include "awe/evalkit.h"
#include "awe/gradcheck.h"
#include "awe/phonology.h"
#include "awe/run_config.h"
#include "awe/trainer.h"
#include "awe/util.h"

namespace awe::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

phonology::FeatureTable table_from(const std::string& path) {
  return path.empty() ? phonology::bundled_feature_table() : phonology::load_feature_table(path);
}

std::string version_line() {
  return std::string("awe ") + AWE_VERSION + " (feature table " +
         hex64(phonology::bundled_feature_table().checksum()) + ")";
}

// Stored embeddings: one row per segment plus a sidecar of segment ids.
struct EmbeddingFile {
  corpus::FrameMatrix matrix;
  std::vector<std::string> ids;
};

EmbeddingFile read_embeddings(const std::string& path) {
  EmbeddingFile e;
  e.matrix = corpus::read_feature_file(path);
  std::istringstream in(read_file(path + ".ids"));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) e.ids.push_back(line);
  if (e.ids.size() != e.matrix.rows)
    throw ParseError("cli", path + ".ids lists " + std::to_string(e.ids.size()) +
                                " ids for " + std::to_string(e.matrix.rows) + " embeddings");
  return e;
}

// Index over the embedded segments, with metadata from the manifest.
eval::SearchIndex index_from(const EmbeddingFile& e, const corpus::CorpusSplit& corpus) {
  std::map<std::string, const corpus::WordSegment*> by_id;
  for (const auto* split : {&corpus.train, &corpus.valid, &corpus.test})
    for (const auto& s : *split) by_id[s.segment_id] = &s;
  std::vector<eval::SegmentMeta> meta;
  for (const auto& id : e.ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw LookupError("cli", "embedded segment " + id + " is not in the manifest");
    meta.push_back({id, it->second->word_type, it->second->phones});
  }
  return eval::SearchIndex(e.matrix.data, e.matrix.cols, std::move(meta));
}

std::string input_fingerprint(std::initializer_list<std::string> parts) {
  std::uint64_t h = fnv1a64("");
  for (const auto& p : parts) h = fnv1a64(p + '\x1f', h);
  return hex64(h);
}

void emit_report(const eval::EvalReport& report, const std::string& out_path, bool tsv,
                 std::ostream& out) {
  const std::string text = tsv ? report.to_tsv() : report.to_json();
  if (out_path.empty()) out << text;
  else write_file(out_path, text);
}

std::string model_label(const std::string& objective, const std::string& sampling) {
  if (objective == "phone_detect") return "PhoneDetect";
  if (objective == "word2phones") return "Word2Phones";
  if (sampling == "random") return "Siamese-random";
  if (sampling == "semi_hard") return "Siamese-semi_hard";
  return "Siamese-" + sampling;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::string matrix_report(const std::string& runs_dir) {
  if (!fs::is_directory(runs_dir)) throw IoError("cli", "no such directory: " + runs_dir);
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(runs_dir))
    if (entry.is_directory() && fs::exists(entry.path() / "test_report.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw LookupError("cli", "no run directories with test_report.json in " + runs_dir);

  struct Cell {
    double map, map_std, tau, tau_std;
  };
  std::map<std::string, std::map<std::string, Cell>> rows;
  std::string variant;
  for (const auto& d : dirs) {
    const auto run = nlohmann::json::parse(read_file((d / "run.json").string()));
    const auto rep = nlohmann::json::parse(read_file((d / "test_report.json").string()));
    const auto& c = run.at("config");
    const std::string label =
        model_label(c.at("objective").get<std::string>(), c.at("sampling").get<std::string>());
    const std::string enc = c.at("encoder").get<std::string>();
    rows[label][enc] = {rep.at("map").at("map").get<double>(),
                        rep.at("map").at("std_over_queries").get<double>(),
                        rep.at("phonsim").at("mean_tau").get<double>(),
                        rep.at("phonsim").at("std_over_queries").get<double>()};
    variant = rep.at("phonsim").at("variant").get<std::string>();
  }
  std::ostringstream os;
  os << "model";
  for (const char* enc : {"cnn", "bgru"})
    os << '\t' << enc << "_map\t" << enc << "_map_std\t" << enc << "_tau\t" << enc << "_tau_std";
  os << '\n';
  for (const char* label : {"PhoneDetect", "Word2Phones", "Siamese-random", "Siamese-semi_hard"}) {
    const auto it = rows.find(label);
    if (it == rows.end()) continue;
    os << label;
    for (const char* enc : {"cnn", "bgru"}) {
      const auto cell = it->second.find(enc);
      if (cell == it->second.end()) os << "\t-\t-\t-\t-";
      else
        os << '\t' << fmt(cell->second.map) << '\t' << fmt(cell->second.map_std) << '\t'
           << fmt(cell->second.tau) << '\t' << fmt(cell->second.tau_std);
    }
    os << '\n';
  }
  os << "# std over queries; tau variant " << variant << '\n';
  return os.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Acoustic word embedding lab", "awe"};
  app.require_subcommand(0, 1);
  // Lets --threads follow the subcommand too.
  app.fallthrough();
  bool show_version = false;
  std::size_t threads = 1;
  app.add_flag("--version", show_version, "Print version and feature-table checksum");
  app.add_option("--threads", threads, "Worker threads for embedding and evaluation")
      ->check(CLI::PositiveNumber);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic corpus");
  corpus::SynthConfig flags;
  std::string synth_config, synth_out, synth_features;
  synth->add_option("--config", synth_config, "Synth config (JSON); flags override its keys");
  synth->add_option("--out", synth_out, "Output directory")->required();
  std::vector<std::function<void(corpus::SynthConfig&)>> overrides;
  const auto synth_flag = [&](const char* name, auto member, const char* help) {
    auto* opt = synth->add_option(name, flags.*member, help);
    overrides.push_back([opt, member, &flags](corpus::SynthConfig& c) {
      if (opt->count()) c.*member = flags.*member;
    });
  };
  synth_flag("--types", &corpus::SynthConfig::n_word_types, "Word types");
  synth_flag("--speakers", &corpus::SynthConfig::n_speakers, "Speakers");
  synth_flag("--segments-per-type", &corpus::SynthConfig::segments_per_type,
             "Segments per word type");
  synth_flag("--noise", &corpus::SynthConfig::noise_std, "Frame noise std");
  synth_flag("--neighbors", &corpus::SynthConfig::neighbor_fraction,
             "Share of word types derived from another type by phone edits");
  synth_flag("--coupling", &corpus::SynthConfig::feature_coupling,
             "Weight of phonological features in phone prototypes");
  synth_flag("--seed", &corpus::SynthConfig::seed, "Seed");
  synth->add_option("--features", synth_features, "Feature table (default: bundled)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  std::string train_config, train_out, train_manifest;
  bool resume = false;
  train_cmd->add_option("--config", train_config, "Run config (JSON)")->required();
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  train_cmd->add_option("--manifest", train_manifest, "Corpus manifest (overrides the config)");
  train_cmd->add_flag("--resume", resume, "Continue from <out>/last.ckpt");

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "Embed segments with a checkpoint");
  std::string embed_ckpt, embed_manifest, embed_out, embed_split = "test", embed_features;
  embed_cmd->add_option("--ckpt", embed_ckpt, "Checkpoint")->required();
  embed_cmd->add_option("--manifest", embed_manifest, "Corpus manifest")->required();
  embed_cmd->add_option("--out", embed_out, "Embedding file (ids go to <out>.ids)")->required();
  embed_cmd->add_option("--split", embed_split, "train, valid, test or all")
      ->check(CLI::IsMember({"train", "valid", "test", "all"}));
  embed_cmd->add_option("--features", embed_features, "Feature table (default: bundled)");

  // eval-map
  auto* map_cmd = app.add_subcommand("eval-map", "Word discrimination (mAP)");
  std::string map_emb, map_manifest, map_out, map_features;
  bool map_tsv = false;
  map_cmd->add_option("--emb", map_emb, "Embedding file")->required();
  map_cmd->add_option("--manifest", map_manifest, "Corpus manifest")->required();
  map_cmd->add_option("--features", map_features, "Feature table (default: bundled)");
  map_cmd->add_option("--out", map_out, "Report path (default: stdout)");
  map_cmd->add_flag("--tsv", map_tsv, "Flat TSV instead of JSON");
  eval::CandidateSample map_sample;
  map_cmd->add_option("--max-candidates", map_sample.max_candidates,
                      "Per-query candidate subsample size (0 = all)");
  map_cmd->add_option("--subsample-seed", map_sample.seed, "Seed of the candidate subsample");

  // eval-phonsim
  auto* tau_cmd = app.add_subcommand("eval-phonsim", "Phonological similarity (Kendall tau)");
  std::string tau_emb, tau_manifest, tau_out, tau_features, tau_variant = "eq5",
                                                            tau_norm = "inventory_max";
  bool tau_tsv = false;
  tau_cmd->add_option("--emb", tau_emb, "Embedding file")->required();
  tau_cmd->add_option("--manifest", tau_manifest, "Corpus manifest")->required();
  tau_cmd->add_option("--features", tau_features, "Feature table (default: bundled)");
  tau_cmd->add_option("--variant", tau_variant, "eq5 or tau_b")
      ->check(CLI::IsMember({"eq5", "tau_b"}));
  tau_cmd->add_option("--hamming-norm", tau_norm, "inventory_max, feature_count or none");
  tau_cmd->add_option("--out", tau_out, "Report path (default: stdout)");
  tau_cmd->add_flag("--tsv", tau_tsv, "Flat TSV instead of JSON");
  eval::CandidateSample tau_sample;
  tau_cmd->add_option("--max-candidates", tau_sample.max_candidates,
                      "Per-query candidate subsample size (0 = all)");
  tau_cmd->add_option("--subsample-seed", tau_sample.seed, "Seed of the candidate subsample");

  // pwld
  auto* pwld_cmd = app.add_subcommand("pwld", "Levenshtein and PWLD for word pairs");
  std::string pwld_pairs, pwld_features, pwld_norm = "inventory_max", pwld_a, pwld_b;
  pwld_cmd->add_option("--pairs", pwld_pairs,
                       "TSV: query, query_phones, candidate, candidate_phones (header row)");
  pwld_cmd->add_option("--a", pwld_a, "Phone string, e.g. \"z I ç ɐ\"");
  pwld_cmd->add_option("--b", pwld_b, "Phone string");
  pwld_cmd->add_option("--features", pwld_features, "Feature table (default: bundled)");
  pwld_cmd->add_option("--hamming-norm", pwld_norm, "inventory_max, feature_count or none");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::uint64_t grad_seed = 7;
  grad_cmd->add_option("--seed", grad_seed, "Seed for shapes and values");

  // report
  auto* report_cmd = app.add_subcommand("report", "Summarize run directories");
  std::string report_runs, report_out;
  report_cmd->add_option("--runs", report_runs, "Directory of run directories")->required();
  report_cmd->add_option("--out", report_out, "TSV path (default: stdout)");

  // matrix
  auto* matrix_cmd = app.add_subcommand("matrix", "Write the 8 experiment configs");
  std::string matrix_config, matrix_out;
  matrix_cmd->add_option("--config", matrix_config, "Base run config")->required();
  matrix_cmd->add_option("--out", matrix_out, "Output directory")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    // Prints help for --help and the parse error otherwise.
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  const auto log = [&](const std::string& line) { err << line << '\n'; };
  try {
    if (show_version) {
      out << version_line() << '\n';
      return 0;
    }
    if (app.get_subcommands().empty()) throw UsageError("a subcommand is required (see --help)");

    if (*synth) {
      auto scfg = synth_config.empty() ? corpus::SynthConfig{}
                                       : corpus::parse_synth_config(read_file(synth_config),
                                                                    synth_config);
      for (const auto& apply : overrides) apply(scfg);
      const auto table = table_from(synth_features);
      auto corpus = corpus::synthesize_corpus(scfg, table);
      corpus::write_corpus(synth_out, corpus);
      ordered_json info;
      auto c = ordered_json::parse(corpus::synth_config_json(scfg));
      c["features_checksum"] = hex64(table.checksum());
      info["fingerprint"] = hex64(fnv1a64(c.dump()));
      info["version"] = AWE_VERSION;
      info["config"] = c;
      write_file((fs::path(synth_out) / "synth.json").string(), info.dump(2) + "\n");
      log("wrote " + std::to_string(corpus.train.size() + corpus.valid.size() + corpus.test.size()) +
          " segments to " + synth_out);
      return 0;
    }

    if (*train_cmd) {
      auto cfg = train::load_run_config(train_config);
      if (!train_manifest.empty()) cfg.manifest = train_manifest;
      if (cfg.manifest.empty()) throw UsageError("run config has no manifest");
      const auto table = train::feature_table_for(cfg);
      const auto corpus = corpus::load_manifest(cfg.manifest, table);
      train::TrainOptions opts;
      opts.out_dir = train_out;
      opts.threads = threads;
      opts.progress = log;
      if (resume) opts.resume_from = (fs::path(train_out) / "last.ckpt").string();
      const auto result = train::train(cfg, corpus, table, opts);
      log("best epoch " + std::to_string(result.best.state.best_epoch) + " val_map " +
          std::to_string(result.best.state.best_val_map));
      return 0;
    }

    if (*embed_cmd) {
      const auto ckpt = train::load_checkpoint(embed_ckpt);
      const auto table = table_from(embed_features);
      const auto corpus = corpus::load_manifest(embed_manifest, table);
      std::vector<corpus::WordSegment> segs;
      for (const char* name : {"train", "valid", "test"})
        if (embed_split == "all" || embed_split == name)
          segs.insert(segs.end(), corpus.split(name).begin(), corpus.split(name).end());
      if (segs.empty()) throw ContractError("cli", "split '" + embed_split + "' is empty");
      auto enc = train::encoder_from_checkpoint(ckpt);
      corpus::FrameMatrix m;
      m.rows = segs.size();
      m.cols = enc->embed_dim();
      m.data = train::embed_segments(*enc, segs, threads);
      corpus::write_feature_file(embed_out, m);
      std::string ids;
      for (const auto& s : segs) ids += s.segment_id + "\n";
      write_file(embed_out + ".ids", ids);
      log("embedded " + std::to_string(segs.size()) + " segments (" + ckpt.config.fingerprint() + ")");
      return 0;
    }

    if (*map_cmd) {
      const auto table = table_from(map_features);
      const auto corpus = corpus::load_manifest(map_manifest, table);
      const auto emb = read_embeddings(map_emb);
      eval::EvalReport report;
      report.fingerprint = input_fingerprint({read_file(map_emb), read_file(map_emb + ".ids"),
                                              read_file(map_manifest), "map"});
      report.sample = map_sample;
      report.map = eval::mean_average_precision(index_from(emb, corpus), threads, map_sample);
      if (report.map->excluded_queries)
        log("excluded " + std::to_string(report.map->excluded_queries) +
            " queries without a same-type candidate");
      emit_report(report, map_out, map_tsv, out);
      return 0;
    }

    if (*tau_cmd) {
      const auto table = table_from(tau_features);
      const auto corpus = corpus::load_manifest(tau_manifest, table);
      const auto emb = read_embeddings(tau_emb);
      phonology::CostModel cm;
      cm.norm = phonology::parse_hamming_norm(tau_norm);
      const auto variant = eval::parse_tau_variant(tau_variant);
      eval::EvalReport report;
      report.fingerprint =
          input_fingerprint({read_file(tau_emb), read_file(tau_emb + ".ids"),
                             read_file(tau_manifest), hex64(table.checksum()), tau_variant, tau_norm});
      report.sample = tau_sample;
      report.tau = eval::phonological_similarity_eval(index_from(emb, corpus), table, cm, variant,
                                                      threads, tau_sample);
      emit_report(report, tau_out, tau_tsv, out);
      return 0;
    }

    if (*pwld_cmd) {
      const auto table = table_from(pwld_features);
      phonology::CostModel cm;
      cm.norm = phonology::parse_hamming_norm(pwld_norm);
      struct Pair {
        std::string q, qp, c, cp;
      };
      std::vector<Pair> pairs;
      if (!pwld_pairs.empty()) {
        std::istringstream in(read_file(pwld_pairs));
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
          ++lineno;
          if (lineno == 1 || trim(line).empty()) continue;
          const auto f = split(line, '\t');
          if (f.size() != 4)
            throw ParseError("cli", pwld_pairs + ":" + std::to_string(lineno) +
                                        ": expected 4 tab-separated columns");
          pairs.push_back({f[0], f[1], f[2], f[3]});
        }
      }
      if (!pwld_a.empty() || !pwld_b.empty()) {
        if (pwld_a.empty() || pwld_b.empty()) throw UsageError("--a and --b go together");
        pairs.push_back({"a", pwld_a, "b", pwld_b});
      }
      if (pairs.empty()) throw UsageError("pwld needs --pairs or --a/--b");
      out << "query\tcandidate\tquery_phones\tcandidate_phones\tld\tpwld\n";
      for (const auto& p : pairs) {
        const auto a = phonology::PhoneSequence::parse(p.qp);
        const auto b = phonology::PhoneSequence::parse(p.cp);
        const double d = phonology::pwld(a, b, table, cm);
        out << p.q << '\t' << p.c << '\t' << a.str() << '\t' << b.str() << '\t'
            << phonology::levenshtein(a, b) << '\t' << fmt(d) << '\n';
      }
      return 0;
    }

    if (*grad_cmd) {
      const auto results = ad::run_gradcheck_suite(grad_seed);
      bool ok = true;
      out << "op\tmax_rel_error\tchecked\tstatus\n";
      for (const auto& r : results) {
        out << r.name << '\t' << std::scientific << std::setprecision(3) << r.max_rel_error
            << std::defaultfloat << '\t' << r.n_checked << '\t' << (r.passed ? "ok" : "FAIL") << '\n';
        ok = ok && r.passed;
      }
      if (!ok) throw NumericalError("gradcheck", "at least one check exceeded the tolerance");
      return 0;
    }

    if (*report_cmd) {
      const std::string text = matrix_report(report_runs);
      if (report_out.empty()) out << text;
      else write_file(report_out, text);
      return 0;
    }

    if (*matrix_cmd) {
      const auto base = train::load_run_config(matrix_config);
      std::error_code ec;
      fs::create_directories(matrix_out, ec);
      if (ec) throw IoError("cli", "cannot create " + matrix_out + ": " + ec.message());
      for (const auto& c : train::experiment_matrix(base)) {
        const auto path = fs::path(matrix_out) / (c.name + ".json");
        write_file(path.string(), nlohmann::json::parse(c.to_json()).dump(2) + "\n");
        out << path.string() << '\t' << c.fingerprint() << '\n';
      }
      return 0;
    }
  } catch (const UsageError& e) {
    err << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    err << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "awe: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace awe::cli
