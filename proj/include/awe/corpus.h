#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "awe/phonology.h"

namespace awe::corpus {

inline constexpr std::size_t kFrameDim = 39;

// Row-major T x dim matrix of spectral frames.
struct FrameMatrix {
  std::size_t rows = 0;
  std::size_t cols = kFrameDim;
  std::vector<float> data;

  const float* row(std::size_t t) const { return data.data() + t * cols; }
  float* row(std::size_t t) { return data.data() + t * cols; }
  friend bool operator==(const FrameMatrix&, const FrameMatrix&) = default;
};

enum class SourceKind { kAudio, kFeats };

struct WordSegment {
  std::string segment_id;
  std::string word_type;
  phonology::PhoneSequence phones;
  FrameMatrix frames;
  std::string speaker_id;
  double duration_s = 0.0;
  // Provenance as recorded in the manifest.
  SourceKind source = SourceKind::kFeats;
  std::string path;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct CorpusSplit {
  std::vector<WordSegment> train;
  std::vector<WordSegment> valid;
  std::vector<WordSegment> test;
  // Word type -> phone sequence.
  std::map<std::string, phonology::PhoneSequence> vocabulary;

  const std::vector<WordSegment>& split(std::string_view name) const;
};

// Checks the CorpusSplit invariants: disjoint ids, vocabulary coverage,
// frame shapes. Throws ContractError / ConflictError.
void validate(const CorpusSplit& corpus);

// ---- MFSC ------------------------------------------------------------------

struct MfscConfig {
  int sample_rate_hz = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t n_mels = kFrameDim;
  double log_floor = 1e-10;

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  std::size_t fft_size() const;
};

// Triangular mel filters (HTK mel scale) over the one-sided power spectrum,
// n_mels rows of fft_size/2+1 weights.
std::vector<std::vector<double>> mel_filterbank(const MfscConfig& cfg);
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Center frequency (Hz) of mel band b.
double mel_band_center_hz(const MfscConfig& cfg, std::size_t band);

// Log mel filterbank energies of the Hamming-windowed power spectrum.
FrameMatrix extract_mfsc(std::span<const float> pcm, const MfscConfig& cfg);

// ---- audio / feature files ---------------------------------------------------

struct Waveform {
  int sample_rate_hz = 0;
  std::vector<float> samples;  // mono, [-1, 1]
};

// RIFF/WAVE reader for mono 16-bit PCM or 32-bit float.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& wav);

// Little-endian: uint32 T, uint32 dim, then T*dim float32.
FrameMatrix read_feature_file(const std::string& path);
void write_feature_file(const std::string& path, const FrameMatrix& frames);

// ---- manifest ----------------------------------------------------------------

// Columns: segment_id split word_type phones speaker_id source path start_s end_s.
// Relative paths are resolved against the manifest's directory.
CorpusSplit load_manifest(const std::string& path,
                          const phonology::FeatureTable& table,
                          const MfscConfig& mfsc = {});
// Writes the metadata rows; frames must already be stored at each segment's
// path.
void write_manifest(const std::string& path, const CorpusSplit& corpus);

// ---- synthetic corpora ---------------------------------------------------------

struct SynthConfig {
  std::size_t n_word_types = 20;
  std::size_t n_speakers = 5;
  std::size_t segments_per_type = 20;
  std::size_t phone_proto_dim = kFrameDim;
  std::size_t min_phones = 4;
  std::size_t max_phones = 9;
  std::size_t min_frames_per_phone = 3;
  std::size_t max_frames_per_phone = 8;
  double noise_std = 0.5;
  double speaker_shift_std = 0.3;
  double duration_jitter = 0.25;
  // Per-segment constant offset (recording channel).
  double segment_shift_std = 0.2;
  // Share of word types derived from an earlier type by one or two phone
  // edits, giving the vocabulary minimal pairs and graded PWLD neighbors.
  double neighbor_fraction = 0.5;
  // Weight of the feature-derived component in each phone prototype; the
  // rest is phone-specific random noise. 0 gives independent prototypes.
  double feature_coupling = 0.7;
  double train_fraction = 0.6;
  double valid_fraction = 0.2;
  std::uint64_t seed = 1;
};

// ContractError on counts, ranges or fractions out of bounds.
void validate(const SynthConfig& scfg);

// JSON object keyed by the field names above; unknown keys and wrong types
// are ParseErrors, missing keys keep their defaults.
SynthConfig parse_synth_config(const std::string& text, const std::string& source = "synth config");
std::string synth_config_json(const SynthConfig& scfg);

// Per-phone prototype vectors (table index -> phone_proto_dim values).
std::vector<std::vector<float>> phone_prototypes(
    const SynthConfig& scfg, const phonology::FeatureTable& table);

CorpusSplit synthesize_corpus(const SynthConfig& scfg,
                              const phonology::FeatureTable& table);

// Writes manifest.tsv plus feats/<segment_id>.f32 under out_dir and rewrites
// each segment's path/source accordingly.
void write_corpus(const std::string& out_dir, CorpusSplit& corpus);

// ---- phone n-grams ---------------------------------------------------------------

inline constexpr const char* kBoundary = "#";

using NGram = std::vector<std::string>;

// N-grams of the boundary-padded sequence for one order.
std::vector<NGram> ngrams(const phonology::PhoneSequence& phones,
                          std::size_t order);
std::string ngram_label(const NGram& g);

// Sorted set of n-grams over a vocabulary, giving stable output-unit indices.
class NGramInventory {
 public:
  NGramInventory() = default;
  NGramInventory(std::vector<NGram> grams, std::set<std::size_t> orders);

  std::size_t size() const { return grams_.size(); }
  const std::vector<NGram>& grams() const { return grams_; }
  const std::set<std::size_t>& orders() const { return orders_; }
  // -1 if absent.
  long index_of(const NGram& g) const;

 private:
  std::vector<NGram> grams_;
  std::set<std::size_t> orders_;
  std::map<NGram, std::size_t> index_;
};

NGramInventory ngram_inventory(
    const std::map<std::string, phonology::PhoneSequence>& vocabulary,
    const std::set<std::size_t>& orders);
NGramInventory ngram_inventory(std::span<const phonology::PhoneSequence> words,
                               const std::set<std::size_t>& orders);

enum class TargetMode { kLenient, kStrict };

// Presence vector over the inventory. Strict mode throws LookupError on an
// n-gram missing from the inventory; lenient mode skips it.
std::vector<std::uint8_t> ngram_targets(const WordSegment& segment,
                                        const NGramInventory& inventory,
                                        TargetMode mode = TargetMode::kLenient);
std::vector<std::uint8_t> ngram_targets(const phonology::PhoneSequence& phones,
                                        const NGramInventory& inventory,
                                        TargetMode mode = TargetMode::kLenient);

}  // namespace awe::corpus
