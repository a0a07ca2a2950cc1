#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace awe::phonology {

struct Phone {
  std::string symbol;
  std::size_t index = 0;
};

// Discrete phonological feature vectors keyed by phone symbol. Values are
// stored as +1 / -1 / 0 ('+', '-', '0' in the file format); "0" is an
// ordinary value, not a wildcard.
class FeatureTable {
 public:
  FeatureTable(std::vector<std::string> feature_names,
               std::vector<std::string> symbols,
               std::vector<std::vector<std::int8_t>> rows);

  std::size_t num_features() const { return feature_names_.size(); }
  std::size_t num_phones() const { return symbols_.size(); }
  const std::vector<std::string>& feature_names() const {
    return feature_names_;
  }
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::span<const std::int8_t> row(std::size_t index) const {
    return rows_[index];
  }

  bool contains(std::string_view symbol) const;
  // Throws LookupError naming the symbol.
  Phone phone(std::string_view symbol) const;
  std::size_t index_of(std::string_view symbol) const;

  // Number of differing feature positions.
  std::size_t hamming(std::size_t a, std::size_t b) const;
  // Largest Hamming distance between any two rows of the table.
  std::size_t max_hamming() const { return max_hamming_; }

  // FNV-1a over the canonical TSV rendering.
  std::uint64_t checksum() const;
  std::string to_tsv() const;

 private:
  std::vector<std::string> feature_names_;
  std::vector<std::string> symbols_;
  std::vector<std::vector<std::int8_t>> rows_;
  std::unordered_map<std::string, std::size_t> by_symbol_;
  std::size_t max_hamming_ = 0;
};

FeatureTable parse_feature_table(std::string_view text,
                                 std::string_view source_name = "<memory>");
FeatureTable load_feature_table(const std::string& path);

// 46 phones (German plus a few Czech segments) over the 37 PHOIBLE features.
std::string_view bundled_feature_table_text();
const FeatureTable& bundled_feature_table();

enum class HammingNorm {
  // Divide by the table's maximum pairwise distance: the most distant pair
  // of phones costs exactly max_sub_cost.
  kInventoryMax,
  // Divide by the number of features F.
  kFeatureCount,
  // Raw differing-position count times max_sub_cost.
  kNone,
};

struct CostModel {
  double indel_cost = 0.5;
  double max_sub_cost = 0.5;
  HammingNorm norm = HammingNorm::kInventoryMax;
};

std::string_view to_string(HammingNorm norm);
HammingNorm parse_hamming_norm(std::string_view name);

class PhoneSequence {
 public:
  PhoneSequence() = default;
  explicit PhoneSequence(std::vector<std::string> phones);
  // Space-separated phone symbols.
  static PhoneSequence parse(std::string_view text);

  std::size_t size() const { return phones_.size(); }
  const std::string& operator[](std::size_t i) const { return phones_[i]; }
  const std::vector<std::string>& phones() const { return phones_; }
  std::string str() const;

  friend bool operator==(const PhoneSequence&, const PhoneSequence&) = default;
  friend auto operator<=>(const PhoneSequence&, const PhoneSequence&) = default;

 private:
  std::vector<std::string> phones_;
};

double substitution_cost(const Phone& a, const Phone& b,
                         const FeatureTable& table, const CostModel& cm);

// Unit-cost edit distance over phone symbols.
std::size_t levenshtein(const PhoneSequence& a, const PhoneSequence& b);

// Phonologically weighted Levenshtein distance: raw minimum alignment cost,
// not normalized by length.
double pwld(const PhoneSequence& a, const PhoneSequence& b,
            const FeatureTable& table, const CostModel& cm);
// pwld divided by max(|a|, |b|). For analysis only.
double pwld_length_normalized(const PhoneSequence& a, const PhoneSequence& b,
                              const FeatureTable& table, const CostModel& cm);

// Precomputes substitution costs for a table so repeated pwld calls only run
// the DP. Sequences are given as table indices.
class PwldCalculator {
 public:
  PwldCalculator(const FeatureTable& table, const CostModel& cm);
  std::vector<std::size_t> resolve(const PhoneSequence& s) const;
  double distance(std::span<const std::size_t> a,
                  std::span<const std::size_t> b) const;
  double sub_cost(std::size_t a, std::size_t b) const {
    return sub_[a * n_ + b];
  }
  double indel_cost() const { return indel_; }

 private:
  const FeatureTable& table_;
  std::size_t n_;
  double indel_;
  std::vector<double> sub_;
};

// Row-major k x k matrix of pairwise pwld. Symmetric with zero diagonal.
struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<double> values;
  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

DistanceMatrix pwld_matrix(std::span<const PhoneSequence> words,
                           const FeatureTable& table, const CostModel& cm,
                           std::size_t threads = 1);

}  // namespace awe::phonology
