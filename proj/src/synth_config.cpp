#include <algorithm>
#include <json.hpp>
#include <variant>

#include "awe/corpus.h"
#include "awe/error.h"

namespace awe::corpus {

namespace {

using nlohmann::json;
using Field = std::variant<std::size_t SynthConfig::*, double SynthConfig::*>;

// Declaration order, which is also the order synth_config_json writes. The
// seed is handled on its own.
const std::vector<std::pair<const char*, Field>>& fields() {
  static const std::vector<std::pair<const char*, Field>> f{
      {"n_word_types", &SynthConfig::n_word_types},
      {"n_speakers", &SynthConfig::n_speakers},
      {"segments_per_type", &SynthConfig::segments_per_type},
      {"phone_proto_dim", &SynthConfig::phone_proto_dim},
      {"min_phones", &SynthConfig::min_phones},
      {"max_phones", &SynthConfig::max_phones},
      {"min_frames_per_phone", &SynthConfig::min_frames_per_phone},
      {"max_frames_per_phone", &SynthConfig::max_frames_per_phone},
      {"noise_std", &SynthConfig::noise_std},
      {"speaker_shift_std", &SynthConfig::speaker_shift_std},
      {"duration_jitter", &SynthConfig::duration_jitter},
      {"segment_shift_std", &SynthConfig::segment_shift_std},
      {"neighbor_fraction", &SynthConfig::neighbor_fraction},
      {"feature_coupling", &SynthConfig::feature_coupling},
      {"train_fraction", &SynthConfig::train_fraction},
      {"valid_fraction", &SynthConfig::valid_fraction},
  };
  return f;
}

}  // namespace

SynthConfig parse_synth_config(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("corpus", source + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError("corpus", source + ": expected a JSON object");
  SynthConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      if (!value.is_number_unsigned())
        throw ParseError("corpus", source + ": key 'seed' has the wrong type");
      c.seed = value.get<std::uint64_t>();
      continue;
    }
    const auto it = std::find_if(fields().begin(), fields().end(),
                                 [&](const auto& f) { return key == f.first; });
    if (it == fields().end()) throw ParseError("corpus", source + ": unknown key '" + key + "'");
    // Counts must be non-negative integers; rates accept any number.
    const bool integral = std::holds_alternative<std::size_t SynthConfig::*>(it->second);
    if (integral ? !value.is_number_unsigned() : !value.is_number())
      throw ParseError("corpus", source + ": key '" + key + "' has the wrong type");
    std::visit([&](auto member) { c.*member = value.get<std::remove_reference_t<decltype(c.*member)>>(); },
               it->second);
  }
  validate(c);
  return c;
}

std::string synth_config_json(const SynthConfig& scfg) {
  nlohmann::ordered_json j;
  for (const auto& [name, member] : fields())
    std::visit([&](auto m) { j[name] = scfg.*m; }, member);
  j["seed"] = scfg.seed;
  return j.dump();
}

}  // namespace awe::corpus
