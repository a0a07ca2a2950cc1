#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "awe/adam.h"
#include "awe/corpus.h"
#include "awe/ops.h"
#include "awe/phonology.h"
#include "awe/tensor.h"
#include "awe/util.h"

namespace awe::objectives {

enum class Objective { kPhoneDetect, kWord2Phones, kSiamese };
enum class Sampling {
  kRandom,
  // Hardest in batch: the different-type segment closest to the anchor.
  kSemiHard,
  // Closest negative that is still farther than the positive but inside the
  // margin; falls back to kSemiHard when that band is empty.
  kSemiHardBand,
};

std::string_view to_string(Objective o);
Objective parse_objective(std::string_view s);
std::string_view to_string(Sampling s);
Sampling parse_sampling(std::string_view s);

// Sigmoid output layer over the n-gram inventory.
template <typename T>
class DetectHead {
 public:
  DetectHead(std::size_t embed_dim, std::size_t n_targets, Rng& rng);

  std::size_t n_targets() const { return w_.cols(); }
  ad::Tensor<T> logits(const ad::Tensor<T>& x) const;
  std::vector<ad::NamedTensor<T>> parameters();

 private:
  ad::Tensor<T> w_, b_;
};

// BCE summed over the inventory and averaged over the batch. targets is
// row-major B x |inventory| in {0,1}.
template <typename T>
ad::Tensor<T> detect_loss(const ad::Tensor<T>& x, std::span<const T> targets,
                          const DetectHead<T>& head);

struct DecoderConfig {
  std::size_t hidden = 512;
  std::size_t symbol_embed = 64;
};

// GRU phone decoder. Vocabulary: the phones of the feature table in table
// order, then BOS, then EOS.
template <typename T>
class PhoneDecoder {
 public:
  PhoneDecoder(std::size_t embed_dim, std::vector<std::string> phones,
               const DecoderConfig& cfg, Rng& rng);

  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t bos() const { return vocab_.size() - 2; }
  std::size_t eos() const { return vocab_.size() - 1; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  // Symbol ids for a phone string (no BOS/EOS). LookupError on unknown phones.
  std::vector<std::size_t> encode(const phonology::PhoneSequence& phones) const;

  ad::Tensor<T> initial_state(const ad::Tensor<T>& x) const;
  // One decoder step: previous symbols (B) and state (B x H) to the new
  // state; logits via output().
  ad::Tensor<T> step(std::span<const std::size_t> prev, const ad::Tensor<T>& h) const;
  ad::Tensor<T> output(const ad::Tensor<T>& h) const;

  std::vector<ad::NamedTensor<T>> parameters();

 private:
  std::vector<std::string> vocab_;
  ad::Tensor<T> emb_, w_init_, b_init_, w_ih_, w_hh_, b_ih_, b_hh_, w_out_, b_out_;
};

// Teacher-forced cross-entropy of (phones..., EOS) given BOS, summed over
// steps and averaged over the batch. targets[i] are symbol ids from encode().
template <typename T>
ad::Tensor<T> word2phones_loss(const ad::Tensor<T>& x,
                               std::span<const std::vector<std::size_t>> targets,
                               const PhoneDecoder<T>& decoder);

// Greedy decode of one embedding (1 x D), for inspection.
template <typename T>
std::vector<std::string> greedy_decode(const ad::Tensor<T>& x, const PhoneDecoder<T>& decoder,
                                       std::size_t max_len = 30);

struct TripletConfig {
  double margin = 0.4;
  Sampling sampling = Sampling::kSemiHard;
  // d = (1 - cos) / 2 when true, 1 - cos otherwise.
  bool scaled_distance = true;
  // Use each (anchor, positive) pair in both directions.
  bool symmetric = true;

  void validate() const;
};

// Mean over rows of max(0, margin + d(a, p) - d(a, n)).
template <typename T>
ad::Tensor<T> triplet_loss(const ad::Tensor<T>& anchors, const ad::Tensor<T>& positives,
                           const ad::Tensor<T>& negatives, const TripletConfig& cfg);

// Cosine distance in 64-bit, scaled or raw per cfg.
double cosine_distance(std::span<const double> u, std::span<const double> v, bool scaled);

// Picks a negative for `anchor` among rows of a different type. embeddings
// is row-major n x dim. d_pos is the anchor-positive distance, only used by
// kSemiHardBand. Ties go to the lowest index. ContractError when every row
// shares the anchor's type.
std::size_t sample_negative(std::span<const double> embeddings, std::size_t dim,
                            std::span<const std::size_t> types, std::size_t anchor,
                            Sampling strategy, Rng& rng, const TripletConfig& cfg = {},
                            double d_pos = 0.0);

struct TripletPair {
  std::size_t anchor;
  std::size_t positive;
};

// Samples batch_size (anchor, positive) pairs over segment indices. Anchors
// are drawn uniformly over segments whose type has >= 2 segments, so types
// appear in proportion to their segment counts. The batch always holds at
// least two types. DegenerateInputError if fewer than two such types exist.
std::vector<TripletPair> build_triplet_batch(std::span<const corpus::WordSegment> split,
                                             std::size_t batch_size, Rng& rng);

}  // namespace awe::objectives
