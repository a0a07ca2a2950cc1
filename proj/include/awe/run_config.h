#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "awe/encoders.h"
#include "awe/objectives.h"
#include "awe/phonology.h"

namespace awe::train {

// Everything that determines a training run. Serialized as one flat JSON
// object; unknown keys are rejected.
struct RunConfig {
  std::string name = "run";
  encoders::EncoderConfig encoder;
  objectives::Objective objective = objectives::Objective::kSiamese;
  objectives::TripletConfig triplet;
  objectives::DecoderConfig decoder;
  std::set<std::size_t> ngram_orders{2, 3};

  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 10;
  double min_lr = 1e-6;
  // Global gradient-norm clip for models with a recurrent part; 0 disables.
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  std::string manifest;
  // Empty selects the bundled table.
  std::string features;
  phonology::HammingNorm hamming_norm = phonology::HammingNorm::kInventoryMax;
  std::string tau_variant = "eq5";
  // Per-query candidate cap for test evaluation; 0 uses every candidate.
  std::size_t eval_max_candidates = 0;
  std::uint64_t eval_subsample_seed = 0;
  // When false the log's "seconds" field is written as 0 so logs compare
  // byte for byte.
  bool record_wall_time = true;

  void validate() const;
  // Canonical JSON text (sorted keys, no whitespace).
  std::string to_json() const;
  // Hex digest of the canonical JSON.
  std::string fingerprint() const;
  bool has_recurrent_part() const;
};

// Parses and validates. source names the text in error messages.
RunConfig parse_run_config(const std::string& text, const std::string& source = "config");
// Reads a config file; a relative manifest or features path is resolved
// against the file's directory.
RunConfig load_run_config(const std::string& path);

// The 2 x 4 grid of encoders and objectives over a shared base config:
// {cnn, bgru} x {phone_detect, word2phones, siamese random, siamese semi_hard}.
std::vector<RunConfig> experiment_matrix(const RunConfig& base);

}  // namespace awe::train
