#include "awe/evalkit.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <numeric>
#include <sstream>

#include "awe/error.h"

namespace awe::eval {

namespace {

constexpr const char* kModule = "evalkit";
constexpr double kTieTolerance = 1e-9;

double norm64(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

// Ascending distance list with tie groups snapped to one score each. Within
// a group candidates follow segment_id so the list itself is deterministic.
RankedList distance_ranking(const SearchIndex& index, std::vector<std::size_t> cands,
                            const std::vector<double>& dist, std::string query_id) {
  std::sort(cands.begin(), cands.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return index.meta(a).segment_id < index.meta(b).segment_id;
  });
  RankedList r;
  r.query_id = std::move(query_id);
  r.descending = false;
  r.order = std::move(cands);
  r.scores.resize(r.order.size());
  double group = 0.0;
  for (std::size_t i = 0; i < r.order.size(); ++i) {
    const double d = dist[r.order[i]];
    if (i == 0 || d - group > kTieTolerance) group = d;
    r.scores[i] = group;
  }
  // Snapping can reorder ids inside a merged group; restore the id order.
  for (std::size_t i = 0; i < r.order.size();) {
    std::size_t j = i + 1;
    while (j < r.order.size() && r.scores[j] == r.scores[i]) ++j;
    std::sort(r.order.begin() + static_cast<long>(i), r.order.begin() + static_cast<long>(j),
              [&](std::size_t a, std::size_t b) {
                return index.meta(a).segment_id < index.meta(b).segment_id;
              });
    i = j;
  }
  return r;
}

std::vector<std::size_t> candidates(std::size_t n, std::optional<std::size_t> exclude) {
  std::vector<std::size_t> c;
  c.reserve(n);
  for (std::size_t j = 0; j < n; ++j)
    if (!exclude || *exclude != j) c.push_back(j);
  return c;
}

// Candidates of query q after the optional subsample, in index order.
std::vector<std::size_t> query_candidates(const SearchIndex& index, std::size_t q,
                                          const CandidateSample& sample) {
  auto c = candidates(index.size(), q);
  if (sample.max_candidates == 0 || c.size() <= sample.max_candidates) return c;
  const std::uint64_t qkey = fnv1a64(index.meta(q).segment_id, splitmix64(sample.seed));
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(c.size());
  for (std::size_t j : c) keyed.emplace_back(fnv1a64(index.meta(j).segment_id, qkey), j);
  const auto by_key = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return index.meta(a.second).segment_id < index.meta(b.second).segment_id;
  };
  std::nth_element(keyed.begin(), keyed.begin() + static_cast<long>(sample.max_candidates),
                   keyed.end(), by_key);
  c.clear();
  for (std::size_t i = 0; i < sample.max_candidates; ++i) c.push_back(keyed[i].second);
  std::sort(c.begin(), c.end());
  return c;
}

RankedList similarity_ranking(const SearchIndex& index, std::span<const float> query,
                              std::vector<std::size_t> cands, std::string query_id) {
  if (query.size() != index.dim())
    throw ShapeError(kModule, "query of dim " + std::to_string(query.size()) + " for index dim " +
                                  std::to_string(index.dim()));
  const double qn = norm64(query);
  if (qn == 0.0) throw DegenerateInputError(kModule, "zero query embedding");
  std::vector<double> sim(index.size(), 0.0);
  for (std::size_t j : cands) sim[j] = index.similarity(query, qn, j);
  std::sort(cands.begin(), cands.end(), [&](std::size_t a, std::size_t b) {
    if (sim[a] != sim[b]) return sim[a] > sim[b];
    return index.meta(a).segment_id < index.meta(b).segment_id;
  });
  RankedList r;
  r.query_id = std::move(query_id);
  r.descending = true;
  r.order = std::move(cands);
  for (std::size_t j : r.order) r.scores.push_back(sim[j]);
  return r;
}

// PWLD between the distinct phone strings of an index, plus each row's
// string id. Equal strings get exactly equal distances.
struct TypeDistances {
  std::vector<std::size_t> row_type;
  phonology::DistanceMatrix matrix;
};

TypeDistances type_distances(const SearchIndex& index, const phonology::FeatureTable& table,
                             const phonology::CostModel& cm, std::size_t threads) {
  std::map<std::string, std::size_t> ids;
  std::vector<phonology::PhoneSequence> words;
  TypeDistances td;
  for (const auto& m : index.metas()) {
    auto [it, fresh] = ids.emplace(m.phones.str(), words.size());
    if (fresh) words.push_back(m.phones);
    td.row_type.push_back(it->second);
  }
  td.matrix = phonology::pwld_matrix(words, table, cm, threads);
  return td;
}

NullInterval summarize(std::vector<double> samples) {
  NullInterval n;
  n.mean = mean(samples);
  std::vector<double> s = samples;
  std::sort(s.begin(), s.end());
  const auto at = [&](double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  n.lo = at(0.025);
  n.hi = at(0.975);
  n.samples = std::move(samples);
  return n;
}

std::vector<QueryScore> sorted_scores(const SearchIndex& index, const std::vector<double>& values,
                                      const std::vector<std::uint8_t>& keep) {
  std::vector<QueryScore> out;
  for (std::size_t q = 0; q < index.size(); ++q)
    if (keep[q]) out.push_back({index.meta(q).segment_id, values[q]});
  std::sort(out.begin(), out.end(),
            [](const QueryScore& a, const QueryScore& b) { return a.segment_id < b.segment_id; });
  return out;
}

// Mean and std in the fixed (sorted id) order so results never depend on
// thread scheduling.
std::pair<double, double> aggregate(const std::vector<QueryScore>& scores) {
  std::vector<double> v;
  v.reserve(scores.size());
  for (const auto& s : scores) v.push_back(s.value);
  if (v.empty()) return {0.0, 0.0};
  return {mean(v), stddev(v)};
}

}  // namespace

SearchIndex::SearchIndex(std::vector<float> embeddings, std::size_t dim,
                         std::vector<SegmentMeta> meta)
    : emb_(std::move(embeddings)), dim_(dim), meta_(std::move(meta)) {
  if (meta_.empty()) throw ContractError(kModule, "search index needs at least one row");
  if (dim_ == 0 || emb_.size() != meta_.size() * dim_)
    throw ShapeError(kModule, "search index: " + std::to_string(emb_.size()) +
                                  " values for " + std::to_string(meta_.size()) + " rows of dim " +
                                  std::to_string(dim_));
  norms_.resize(meta_.size());
  for (std::size_t i = 0; i < meta_.size(); ++i) {
    norms_[i] = norm64(row(i));
    if (norms_[i] == 0.0)
      throw DegenerateInputError(kModule, "zero embedding for segment " + meta_[i].segment_id);
  }
}

double SearchIndex::similarity(std::span<const float> query, double query_norm,
                               std::size_t j) const {
  const auto r = row(j);
  double dot = 0.0;
  for (std::size_t d = 0; d < dim_; ++d)
    dot += static_cast<double>(query[d]) * static_cast<double>(r[d]);
  return dot / (query_norm * norms_[j]);
}

RankedList rank_by_embedding(const SearchIndex& index, std::span<const float> query,
                             std::optional<std::size_t> exclude, std::string query_id) {
  return similarity_ranking(index, query, candidates(index.size(), exclude), std::move(query_id));
}

RankedList rank_by_pwld(const phonology::PhoneSequence& query, const SearchIndex& index,
                        const phonology::PwldCalculator& pwld, std::optional<std::size_t> exclude,
                        std::string query_id) {
  const auto q = pwld.resolve(query);
  auto cands = candidates(index.size(), exclude);
  std::vector<double> dist(index.size(), 0.0);
  for (std::size_t j : cands) dist[j] = pwld.distance(q, pwld.resolve(index.meta(j).phones));
  return distance_ranking(index, std::move(cands), dist, std::move(query_id));
}

double average_precision(std::span<const std::uint8_t> relevant_in_rank_order) {
  double hits = 0.0, sum = 0.0;
  for (std::size_t r = 0; r < relevant_in_rank_order.size(); ++r) {
    if (!relevant_in_rank_order[r]) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(r + 1);
  }
  if (hits == 0.0) throw ContractError(kModule, "average precision undefined: no relevant item");
  return sum / hits;
}

MapResult mean_average_precision(const SearchIndex& index, std::size_t threads,
                                 const CandidateSample& sample) {
  const std::size_t n = index.size();
  std::map<std::string, std::size_t> type_count;
  for (const auto& m : index.metas()) ++type_count[m.word_type];

  std::vector<double> ap(n, 0.0);
  std::vector<std::uint8_t> keep(n, 0);
  parallel_for(n, threads, [&](std::size_t q) {
    if (type_count.at(index.meta(q).word_type) < 2) return;
    const auto r = similarity_ranking(index, index.row(q), query_candidates(index, q, sample), {});
    std::vector<std::uint8_t> rel(r.order.size());
    bool any = false;
    for (std::size_t i = 0; i < r.order.size(); ++i) {
      rel[i] = index.meta(r.order[i]).word_type == index.meta(q).word_type;
      any = any || rel[i];
    }
    if (!any) return;
    ap[q] = average_precision(rel);
    keep[q] = 1;
  });
  MapResult out;
  out.per_query = sorted_scores(index, ap, keep);
  out.excluded_queries = n - out.per_query.size();
  std::tie(out.map, out.std) = aggregate(out.per_query);
  return out;
}

TauResult phonological_similarity_eval(const SearchIndex& index,
                                       const phonology::FeatureTable& table,
                                       const phonology::CostModel& cm, TauVariant variant,
                                       std::size_t threads, const CandidateSample& sample) {
  const std::size_t n = index.size();
  if (n < 3) throw ContractError(kModule, "phonological similarity needs at least 3 segments");
  const auto td = type_distances(index, table, cm, threads);
  std::vector<double> tau(n, 0.0);
  parallel_for(n, threads, [&](std::size_t q) {
    const auto cands = query_candidates(index, q, sample);
    const auto theta = similarity_ranking(index, index.row(q), cands, {});
    std::vector<double> dist(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) dist[j] = td.matrix.at(td.row_type[q], td.row_type[j]);
    const auto phi = distance_ranking(index, cands, dist, {});
    tau[q] = kendall_tau(theta, phi, variant);
  });
  TauResult out;
  out.variant = variant;
  out.per_query = sorted_scores(index, tau, std::vector<std::uint8_t>(n, 1));
  std::tie(out.mean_tau, out.std) = aggregate(out.per_query);
  return out;
}

NullInterval map_null(std::span<const std::string> word_types, std::size_t rounds, Rng& rng) {
  const std::size_t n = word_types.size();
  if (rounds < 2) throw ContractError(kModule, "null distribution needs >= 2 rounds");
  std::map<std::string, std::size_t> count;
  for (const auto& t : word_types) ++count[t];
  std::vector<double> samples;
  std::vector<std::size_t> perm;
  for (std::size_t round = 0; round < rounds; ++round) {
    std::vector<double> aps;
    for (std::size_t q = 0; q < n; ++q) {
      if (count[word_types[q]] < 2) continue;
      perm = candidates(n, q);
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
      std::vector<std::uint8_t> rel(perm.size());
      for (std::size_t i = 0; i < perm.size(); ++i) rel[i] = word_types[perm[i]] == word_types[q];
      aps.push_back(average_precision(rel));
    }
    if (aps.empty()) throw ContractError(kModule, "no query has a relevant candidate");
    samples.push_back(mean(aps));
  }
  return summarize(std::move(samples));
}

NullInterval tau_null(const SearchIndex& index, const phonology::FeatureTable& table,
                      const phonology::CostModel& cm, TauVariant variant, std::size_t rounds,
                      Rng& rng) {
  const std::size_t n = index.size();
  if (rounds < 2) throw ContractError(kModule, "null distribution needs >= 2 rounds");
  if (n < 3) throw ContractError(kModule, "phonological similarity needs at least 3 segments");
  const auto td = type_distances(index, table, cm, 1);
  std::vector<RankedList> phis;
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<double> dist(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) dist[j] = td.matrix.at(td.row_type[q], td.row_type[j]);
    phis.push_back(distance_ranking(index, candidates(n, q), dist, {}));
  }
  std::vector<double> samples;
  for (std::size_t round = 0; round < rounds; ++round) {
    std::vector<double> taus;
    for (std::size_t q = 0; q < n; ++q) {
      RankedList theta;
      theta.order = candidates(n, q);
      auto& p = theta.order;
      for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
      // Distinct descending scores: a strict random order.
      for (std::size_t i = 0; i < p.size(); ++i)
        theta.scores.push_back(static_cast<double>(p.size() - i));
      taus.push_back(kendall_tau(theta, phis[q], variant));
    }
    samples.push_back(mean(taus));
  }
  return summarize(std::move(samples));
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["fingerprint"] = fingerprint;
  j["candidates"] = {{"max_candidates", sample.max_candidates}, {"subsample_seed", sample.seed}};
  if (map) {
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (const auto& q : map->per_query) per.push_back({{"segment_id", q.segment_id}, {"ap", q.value}});
    j["map"] = {{"map", map->map},
                {"std_over_queries", map->std},
                {"n_queries", map->per_query.size()},
                {"excluded_queries", map->excluded_queries},
                {"per_query", per}};
  }
  if (tau) {
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (const auto& q : tau->per_query) per.push_back({{"segment_id", q.segment_id}, {"tau", q.value}});
    j["phonsim"] = {{"variant", std::string(to_string(tau->variant))},
                    {"mean_tau", tau->mean_tau},
                    {"std_over_queries", tau->std},
                    {"n_queries", tau->per_query.size()},
                    {"per_query", per}};
  }
  return j.dump(2) + "\n";
}

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "fingerprint\tmap\tmap_std\ttau\ttau_std\ttau_variant\n";
  os << fingerprint << '\t';
  if (map) os << map->map << '\t' << map->std << '\t';
  else os << "-\t-\t";
  if (tau) os << tau->mean_tau << '\t' << tau->std << '\t' << to_string(tau->variant) << '\n';
  else os << "-\t-\t-\n";
  return os.str();
}

}  // namespace awe::eval
