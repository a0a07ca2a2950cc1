#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "awe/phonology.h"
#include "awe/util.h"

namespace awe::eval {

struct SegmentMeta {
  std::string segment_id;
  std::string word_type;
  phonology::PhoneSequence phones;
};

// Exact full-scan cosine index. Rows are stored as given; norms and dot
// products are accumulated in double.
class SearchIndex {
 public:
  // embeddings is row-major meta.size() x dim. DegenerateInputError naming
  // the segment for a zero row.
  SearchIndex(std::vector<float> embeddings, std::size_t dim, std::vector<SegmentMeta> meta);

  std::size_t size() const { return meta_.size(); }
  std::size_t dim() const { return dim_; }
  const SegmentMeta& meta(std::size_t i) const { return meta_[i]; }
  const std::vector<SegmentMeta>& metas() const { return meta_; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(emb_).subspan(i * dim_, dim_);
  }
  double similarity(std::span<const float> query, double query_norm, std::size_t j) const;

 private:
  std::vector<float> emb_;
  std::size_t dim_;
  std::vector<SegmentMeta> meta_;
  std::vector<double> norms_;
};

// An ordering of candidates (indices into an index). Similarity lists run
// best-first with descending scores; distance lists ascending. Equal scores
// form a tie group.
struct RankedList {
  std::string query_id;
  std::vector<std::size_t> order;
  std::vector<double> scores;
  bool descending = true;
};

// R_theta: descending cosine similarity, ties broken by segment_id.
// `exclude` drops one candidate (the query itself).
RankedList rank_by_embedding(const SearchIndex& index, std::span<const float> query,
                             std::optional<std::size_t> exclude = std::nullopt,
                             std::string query_id = {});

// R_phi: ascending PWLD to the query phones. Distances within 1e-9 of the
// first member of a run share one tie group and one score.
RankedList rank_by_pwld(const phonology::PhoneSequence& query, const SearchIndex& index,
                        const phonology::PwldCalculator& pwld,
                        std::optional<std::size_t> exclude = std::nullopt,
                        std::string query_id = {});

// AP from relevance flags listed in rank order. ContractError if no flag is
// set (AP undefined).
double average_precision(std::span<const std::uint8_t> relevant_in_rank_order);

struct QueryScore {
  std::string segment_id;
  double value;
};

struct MapResult {
  double map = 0.0;
  double std = 0.0;  // over queries
  std::vector<QueryScore> per_query;  // sorted by segment_id
  std::size_t excluded_queries = 0;  // no same-type candidate
};

// Optional cap on each query's candidate set for large indices. The kept
// candidates are those with the smallest keyed hash of (seed, query id,
// candidate id), so the subset depends on ids only. 0 keeps every candidate.
struct CandidateSample {
  std::size_t max_candidates = 0;
  std::uint64_t seed = 0;
};

// Every row is a query against all other rows. Queries left without a
// same-type candidate are excluded.
MapResult mean_average_precision(const SearchIndex& index, std::size_t threads = 1,
                                 const CandidateSample& sample = {});

enum class TauVariant { kEq5, kTauB };
std::string_view to_string(TauVariant v);
TauVariant parse_tau_variant(std::string_view s);

// Keys give rank positions: smaller key = earlier, equal keys = tie.
// eq5: 1 - 2*delta / (k(k-1)/2), delta counting pairs strictly ordered by
// phi that theta orders the other way. Pairs tied in phi never count.
double kendall_tau_eq5(std::span<const double> theta_key, std::span<const double> phi_key);
// Tau-b with tie corrections on both sides (Knight's O(k log k) method).
// 0 when either side is entirely tied.
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

// Both lists must order the same candidate set (ContractError otherwise).
// eq5 uses theta's positions; tau_b uses its score ties.
double kendall_tau(const RankedList& theta, const RankedList& phi, TauVariant variant);

struct TauResult {
  TauVariant variant = TauVariant::kEq5;
  double mean_tau = 0.0;
  double std = 0.0;
  std::vector<QueryScore> per_query;
};

// Every row is a query; candidates are all other rows.
TauResult phonological_similarity_eval(const SearchIndex& index,
                                       const phonology::FeatureTable& table,
                                       const phonology::CostModel& cm, TauVariant variant,
                                       std::size_t threads = 1,
                                       const CandidateSample& sample = {});

// Chance distributions: scores under uniformly random candidate orderings,
// one sample per permutation round.
struct NullInterval {
  double mean = 0.0;
  double lo = 0.0;  // 2.5th percentile
  double hi = 0.0;  // 97.5th percentile
  std::vector<double> samples;
  bool contains(double v) const { return v >= lo && v <= hi; }
};
NullInterval map_null(std::span<const std::string> word_types, std::size_t rounds, Rng& rng);
NullInterval tau_null(const SearchIndex& index, const phonology::FeatureTable& table,
                      const phonology::CostModel& cm, TauVariant variant,
                      std::size_t rounds, Rng& rng);

struct EvalReport {
  std::string fingerprint;
  CandidateSample sample;
  std::optional<MapResult> map;
  std::optional<TauResult> tau;

  // Deterministic JSON with per-query arrays and aggregates.
  std::string to_json() const;
  // One header line and one row: mAP, its std, tau mean, its std.
  std::string to_tsv() const;
};

}  // namespace awe::eval
