#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "awe/corpus.h"
#include "awe/error.h"
#include "awe/util.h"

namespace awe::corpus {

namespace {

constexpr const char* kModule = "corpus";

}  // namespace

void validate(const SynthConfig& c) {
  if (c.n_word_types < 1 || c.n_speakers < 1 || c.segments_per_type < 1)
    throw ContractError(kModule, "synth counts must be >= 1");
  if (c.noise_std < 0 || c.speaker_shift_std < 0 || c.duration_jitter < 0 ||
      c.segment_shift_std < 0)
    throw ContractError(kModule, "synth standard deviations must be >= 0");
  if (c.min_phones < 1 || c.min_phones > c.max_phones ||
      c.min_frames_per_phone < 1 || c.min_frames_per_phone > c.max_frames_per_phone)
    throw ContractError(kModule, "synth length ranges are empty");
  if (c.phone_proto_dim != kFrameDim)
    throw ContractError(kModule, "phone_proto_dim must equal the frame dimension");
  if (c.feature_coupling < 0 || c.feature_coupling > 1)
    throw ContractError(kModule, "feature_coupling must lie in [0, 1]");
  if (c.neighbor_fraction < 0 || c.neighbor_fraction > 1)
    throw ContractError(kModule, "neighbor_fraction must lie in [0, 1]");
  if (c.train_fraction < 0 || c.valid_fraction < 0 ||
      c.train_fraction + c.valid_fraction > 1)
    throw ContractError(kModule, "split fractions must be non-negative and sum to <= 1");
}

std::vector<std::vector<float>> phone_prototypes(const SynthConfig& scfg,
                                                 const phonology::FeatureTable& table) {
  Rng rng(scfg.seed ^ 0x70726f746fULL);
  const std::size_t dim = scfg.phone_proto_dim;
  const std::size_t nf = table.num_features();
  std::vector<double> projection(dim * nf);
  for (auto& w : projection) w = rng.normal();

  std::vector<std::vector<double>> feature_part(table.num_phones(), std::vector<double>(dim));
  double sq = 0.0;
  for (std::size_t p = 0; p < table.num_phones(); ++p) {
    const auto row = table.row(p);
    for (std::size_t d = 0; d < dim; ++d) {
      double acc = 0.0;
      for (std::size_t f = 0; f < nf; ++f) acc += projection[d * nf + f] * row[f];
      feature_part[p][d] = acc;
      sq += acc * acc;
    }
  }
  // Unit variance per coordinate so coupling weights mix comparable scales.
  const double scale = sq > 0 ? 1.0 / std::sqrt(sq / static_cast<double>(table.num_phones() * dim)) : 0.0;
  const double a = std::sqrt(scfg.feature_coupling);
  const double b = std::sqrt(1.0 - scfg.feature_coupling);
  std::vector<std::vector<float>> protos(table.num_phones(), std::vector<float>(dim));
  for (std::size_t p = 0; p < table.num_phones(); ++p)
    for (std::size_t d = 0; d < dim; ++d)
      protos[p][d] = static_cast<float>(a * scale * feature_part[p][d] + b * rng.normal());
  return protos;
}

CorpusSplit synthesize_corpus(const SynthConfig& scfg, const phonology::FeatureTable& table) {
  validate(scfg);
  const auto protos = phone_prototypes(scfg, table);
  Rng rng(scfg.seed);
  const std::size_t dim = scfg.phone_proto_dim;

  // Word types: distinct phone strings, either fresh random strings or
  // edits of an earlier type.
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> type_phones;
  std::vector<std::vector<std::size_t>> type_durations;
  std::set<std::vector<std::size_t>> used;
  const std::size_t span_len = scfg.max_phones - scfg.min_phones + 1;
  const std::size_t span_dur = scfg.max_frames_per_phone - scfg.min_frames_per_phone + 1;
  std::size_t attempts = 0;
  while (type_phones.size() < scfg.n_word_types) {
    if (++attempts > 1000 * scfg.n_word_types)
      throw ContractError(kModule, "cannot draw enough distinct word types");
    std::vector<std::size_t> phones;
    if (!type_phones.empty() && rng.uniform() < scfg.neighbor_fraction) {
      phones = type_phones[rng.index(type_phones.size())];
      const std::size_t edits = 1 + rng.index(2);
      for (std::size_t e = 0; e < edits; ++e) {
        const std::size_t op = rng.index(3);
        if (op == 1 && phones.size() < scfg.max_phones) {
          phones.insert(phones.begin() + static_cast<long>(rng.index(phones.size() + 1)),
                        rng.index(table.num_phones()));
        } else if (op == 2 && phones.size() > scfg.min_phones) {
          phones.erase(phones.begin() + static_cast<long>(rng.index(phones.size())));
        } else {
          phones[rng.index(phones.size())] = rng.index(table.num_phones());
        }
      }
    } else {
      phones.resize(scfg.min_phones + rng.index(span_len));
      for (auto& p : phones) p = rng.index(table.num_phones());
    }
    if (!used.insert(phones).second) continue;
    const std::size_t len = phones.size();
    std::vector<std::size_t> durs(len);
    for (auto& d : durs) d = scfg.min_frames_per_phone + rng.index(span_dur);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "w%03zu", type_phones.size());
    names.emplace_back(buf);
    type_phones.push_back(std::move(phones));
    type_durations.push_back(std::move(durs));
  }

  std::vector<std::vector<float>> speaker_offsets(scfg.n_speakers, std::vector<float>(dim));
  for (auto& off : speaker_offsets)
    for (auto& v : off) v = static_cast<float>(scfg.speaker_shift_std * rng.normal());

  CorpusSplit corpus;
  const auto n_train = static_cast<std::size_t>(
      std::lround(scfg.train_fraction * static_cast<double>(scfg.segments_per_type)));
  const auto n_valid = static_cast<std::size_t>(
      std::lround(scfg.valid_fraction * static_cast<double>(scfg.segments_per_type)));

  for (std::size_t w = 0; w < type_phones.size(); ++w) {
    std::vector<std::string> symbols;
    for (std::size_t p : type_phones[w]) symbols.push_back(table.symbols()[p]);
    phonology::PhoneSequence seq(symbols);
    corpus.vocabulary.emplace(names[w], seq);

    // Segment j goes to the split given by its position in a per-type shuffle.
    std::vector<std::size_t> order(scfg.segments_per_type);
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    for (std::size_t j = order.size(); j > 1; --j) std::swap(order[j - 1], order[rng.index(j)]);

    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::size_t j = order[pos];
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%03zu", names[w].c_str(), j);
      WordSegment s;
      s.segment_id = id;
      s.word_type = names[w];
      s.phones = seq;
      const std::size_t speaker = (w + j) % scfg.n_speakers;
      s.speaker_id = "spk" + std::to_string(speaker);

      Rng seg_rng(scfg.seed ^ fnv1a64(s.segment_id));
      std::vector<std::size_t> counts;
      std::size_t total = 0;
      for (std::size_t base : type_durations[w]) {
        double c = static_cast<double>(base);
        if (scfg.duration_jitter > 0) c *= 1.0 + scfg.duration_jitter * seg_rng.normal();
        const auto n = static_cast<std::size_t>(std::clamp<double>(
            std::round(c), static_cast<double>(scfg.min_frames_per_phone),
            static_cast<double>(scfg.max_frames_per_phone)));
        counts.push_back(n);
        total += n;
      }
      std::vector<double> channel(dim, 0.0);
      if (scfg.segment_shift_std > 0)
        for (auto& c : channel) c = scfg.segment_shift_std * seg_rng.normal();
      s.frames = FrameMatrix{total, dim, std::vector<float>(total * dim)};
      std::size_t t = 0;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        const auto& proto = protos[type_phones[w][k]];
        for (std::size_t r = 0; r < counts[k]; ++r, ++t) {
          float* row = s.frames.row(t);
          for (std::size_t d = 0; d < dim; ++d) {
            double v = proto[d] + speaker_offsets[speaker][d] + channel[d];
            if (scfg.noise_std > 0) v += scfg.noise_std * seg_rng.normal();
            row[d] = static_cast<float>(v);
          }
        }
      }
      s.start_s = 0.0;
      s.end_s = s.duration_s = 0.01 * static_cast<double>(total);
      s.source = SourceKind::kFeats;
      if (pos < n_train) corpus.train.push_back(std::move(s));
      else if (pos < n_train + n_valid) corpus.valid.push_back(std::move(s));
      else corpus.test.push_back(std::move(s));
    }
  }
  return corpus;
}

}  // namespace awe::corpus
