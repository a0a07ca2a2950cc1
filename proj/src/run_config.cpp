#include "awe/run_config.h"

#include <algorithm>
#include <filesystem>
#include <json.hpp>

#include "awe/error.h"
#include "awe/util.h"

namespace awe::train {

namespace {

constexpr const char* kModule = "config";
using nlohmann::json;

// get<>() would turn -1 into a huge unsigned value, so types are checked
// first.
template <typename V>
bool type_matches(const json& v) {
  if constexpr (std::is_same_v<V, bool>) return v.is_boolean();
  else if constexpr (std::is_unsigned_v<V>) return v.is_number_unsigned();
  else if constexpr (std::is_arithmetic_v<V>) return v.is_number();
  else if constexpr (std::is_same_v<V, std::string>) return v.is_string();
  else {
    if (!v.is_array()) return false;
    return std::all_of(v.begin(), v.end(),
                       [](const json& e) { return type_matches<typename V::value_type>(e); });
  }
}

template <typename V>
V get(const json& j, const std::string& key, const std::string& source) {
  if (!type_matches<V>(j.at(key)))
    throw ParseError(kModule, source + ": key '" + key + "' has the wrong type");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ParseError(kModule, source + ": key '" + key + "' has the wrong type");
  }
}

std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (base / path).lexically_normal().string();
}

}  // namespace

void RunConfig::validate() const {
  encoder.validate();
  triplet.validate();
  if (epochs < 1) throw ContractError(kModule, "epochs must be >= 1");
  if (batch_size < 2) throw ContractError(kModule, "batch_size must be >= 2");
  if (!(lr > 0.0)) throw ContractError(kModule, "lr must be > 0");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
    throw ContractError(kModule, "plateau_factor must lie in (0, 1)");
  if (plateau_patience < 1) throw ContractError(kModule, "plateau_patience must be >= 1");
  if (min_lr < 0.0) throw ContractError(kModule, "min_lr must be >= 0");
  if (clip_norm < 0.0) throw ContractError(kModule, "clip_norm must be >= 0");
  if (ngram_orders.empty() || ngram_orders.count(0))
    throw ContractError(kModule, "ngram_orders must be nonempty positive integers");
  if (decoder.hidden == 0 || decoder.symbol_embed == 0)
    throw ContractError(kModule, "decoder sizes must be >= 1");
  if (tau_variant != "eq5" && tau_variant != "tau_b")
    throw ContractError(kModule, "tau_variant must be eq5 or tau_b");
}

bool RunConfig::has_recurrent_part() const {
  return encoder.kind == encoders::EncoderKind::kBgru ||
         objective == objectives::Objective::kWord2Phones;
}

std::string RunConfig::to_json() const {
  json j;
  j["name"] = name;
  j["encoder"] = std::string(encoders::to_string(encoder.kind));
  j["input_dim"] = encoder.input_dim;
  j["cnn_filters"] = encoder.cnn_filters;
  j["cnn_widths"] = encoder.cnn_widths;
  j["gru_layers"] = encoder.gru_layers;
  j["gru_hidden"] = encoder.gru_hidden;
  j["dropout"] = encoder.dropout;
  j["readout"] = std::string(encoders::to_string(encoder.readout));
  j["objective"] = std::string(objectives::to_string(objective));
  j["sampling"] = std::string(objectives::to_string(triplet.sampling));
  j["margin"] = triplet.margin;
  j["scaled_distance"] = triplet.scaled_distance;
  j["symmetric_pairs"] = triplet.symmetric;
  j["decoder_hidden"] = decoder.hidden;
  j["decoder_symbol_embed"] = decoder.symbol_embed;
  j["ngram_orders"] = std::vector<std::size_t>(ngram_orders.begin(), ngram_orders.end());
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["plateau_factor"] = plateau_factor;
  j["plateau_patience"] = plateau_patience;
  j["min_lr"] = min_lr;
  j["clip_norm"] = clip_norm;
  j["seed"] = seed;
  j["manifest"] = manifest;
  j["features"] = features;
  j["hamming_norm"] = std::string(phonology::to_string(hamming_norm));
  j["tau_variant"] = tau_variant;
  j["eval_max_candidates"] = eval_max_candidates;
  j["eval_subsample_seed"] = eval_subsample_seed;
  j["record_wall_time"] = record_wall_time;
  return j.dump();
}

std::string RunConfig::fingerprint() const { return hex64(fnv1a64(to_json())); }

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(kModule, source + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(kModule, source + ": expected a JSON object");

  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "name") c.name = get<std::string>(j, key, source);
    else if (key == "encoder") c.encoder.kind = encoders::parse_encoder_kind(get<std::string>(j, key, source));
    else if (key == "input_dim") c.encoder.input_dim = get<std::size_t>(j, key, source);
    else if (key == "cnn_filters") c.encoder.cnn_filters = get<std::vector<std::size_t>>(j, key, source);
    else if (key == "cnn_widths") c.encoder.cnn_widths = get<std::vector<std::size_t>>(j, key, source);
    else if (key == "gru_layers") c.encoder.gru_layers = get<std::size_t>(j, key, source);
    else if (key == "gru_hidden") c.encoder.gru_hidden = get<std::size_t>(j, key, source);
    else if (key == "dropout") c.encoder.dropout = get<double>(j, key, source);
    else if (key == "readout") c.encoder.readout = encoders::parse_readout(get<std::string>(j, key, source));
    else if (key == "objective") c.objective = objectives::parse_objective(get<std::string>(j, key, source));
    else if (key == "sampling") c.triplet.sampling = objectives::parse_sampling(get<std::string>(j, key, source));
    else if (key == "margin") c.triplet.margin = get<double>(j, key, source);
    else if (key == "scaled_distance") c.triplet.scaled_distance = get<bool>(j, key, source);
    else if (key == "symmetric_pairs") c.triplet.symmetric = get<bool>(j, key, source);
    else if (key == "decoder_hidden") c.decoder.hidden = get<std::size_t>(j, key, source);
    else if (key == "decoder_symbol_embed") c.decoder.symbol_embed = get<std::size_t>(j, key, source);
    else if (key == "ngram_orders") {
      const auto v = get<std::vector<std::size_t>>(j, key, source);
      c.ngram_orders = std::set<std::size_t>(v.begin(), v.end());
    }
    else if (key == "epochs") c.epochs = get<std::size_t>(j, key, source);
    else if (key == "batch_size") c.batch_size = get<std::size_t>(j, key, source);
    else if (key == "lr") c.lr = get<double>(j, key, source);
    else if (key == "plateau_factor") c.plateau_factor = get<double>(j, key, source);
    else if (key == "plateau_patience") c.plateau_patience = get<std::size_t>(j, key, source);
    else if (key == "min_lr") c.min_lr = get<double>(j, key, source);
    else if (key == "clip_norm") c.clip_norm = get<double>(j, key, source);
    else if (key == "seed") c.seed = get<std::uint64_t>(j, key, source);
    else if (key == "manifest") c.manifest = get<std::string>(j, key, source);
    else if (key == "features") c.features = get<std::string>(j, key, source);
    else if (key == "hamming_norm") c.hamming_norm = phonology::parse_hamming_norm(get<std::string>(j, key, source));
    else if (key == "tau_variant") c.tau_variant = get<std::string>(j, key, source);
    else if (key == "eval_max_candidates") c.eval_max_candidates = get<std::size_t>(j, key, source);
    else if (key == "eval_subsample_seed") c.eval_subsample_seed = get<std::uint64_t>(j, key, source);
    else if (key == "record_wall_time") c.record_wall_time = get<bool>(j, key, source);
    else throw ParseError(kModule, source + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c = parse_run_config(read_file(path), path);
  const auto base = std::filesystem::path(path).parent_path();
  c.manifest = resolve(c.manifest, base);
  c.features = resolve(c.features, base);
  return c;
}

std::vector<RunConfig> experiment_matrix(const RunConfig& base) {
  using encoders::EncoderKind;
  using objectives::Objective;
  using objectives::Sampling;
  struct Variant {
    const char* label;
    Objective objective;
    Sampling sampling;
  };
  const Variant variants[] = {
      {"phone_detect", Objective::kPhoneDetect, base.triplet.sampling},
      {"word2phones", Objective::kWord2Phones, base.triplet.sampling},
      {"siamese_random", Objective::kSiamese, Sampling::kRandom},
      {"siamese_semi_hard", Objective::kSiamese, Sampling::kSemiHard},
  };
  std::vector<RunConfig> out;
  for (EncoderKind kind : {EncoderKind::kCnn, EncoderKind::kBgru}) {
    for (const auto& v : variants) {
      RunConfig c = base;
      c.encoder.kind = kind;
      c.objective = v.objective;
      c.triplet.sampling = v.sampling;
      c.name = std::string(encoders::to_string(kind)) + "_" + v.label;
      out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace awe::train
