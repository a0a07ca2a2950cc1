#include "awe/phonology.h"

#include <algorithm>
#include <limits>

#include "awe/error.h"
#include "awe/util.h"

namespace awe::phonology {

namespace {

constexpr const char* kModule = "phonology";

std::int8_t parse_value(std::string_view v, std::string_view where) {
  if (v == "+") return 1;
  if (v == "-") return -1;
  if (v == "0") return 0;
  throw ParseError(kModule, std::string(where) + ": feature value '" +
                                std::string(v) + "' not in {+,-,0}");
}

char render_value(std::int8_t v) { return v > 0 ? '+' : (v < 0 ? '-' : '0'); }

}  // namespace

FeatureTable::FeatureTable(std::vector<std::string> feature_names,
                           std::vector<std::string> symbols,
                           std::vector<std::vector<std::int8_t>> rows)
    : feature_names_(std::move(feature_names)),
      symbols_(std::move(symbols)),
      rows_(std::move(rows)) {
  if (feature_names_.empty())
    throw ParseError(kModule, "feature table declares no features");
  if (symbols_.size() != rows_.size())
    throw ContractError(kModule, "symbol count does not match row count");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (symbols_[i].empty())
      throw ParseError(kModule, "empty phone symbol in row " + std::to_string(i));
    if (rows_[i].size() != feature_names_.size())
      throw ParseError(kModule, "row for '" + symbols_[i] + "' has " +
                                    std::to_string(rows_[i].size()) +
                                    " values, expected " +
                                    std::to_string(feature_names_.size()));
    if (!by_symbol_.emplace(symbols_[i], i).second)
      throw ConflictError(kModule, "duplicate phone symbol '" + symbols_[i] + "'");
  }
  for (std::size_t a = 0; a < rows_.size(); ++a)
    for (std::size_t b = a + 1; b < rows_.size(); ++b)
      max_hamming_ = std::max(max_hamming_, hamming(a, b));
  if (rows_.size() >= 2 && max_hamming_ == 0)
    throw DegenerateInputError(kModule, "all feature rows are identical");
}

bool FeatureTable::contains(std::string_view symbol) const {
  return by_symbol_.count(std::string(symbol)) > 0;
}

std::size_t FeatureTable::index_of(std::string_view symbol) const {
  auto it = by_symbol_.find(std::string(symbol));
  if (it == by_symbol_.end())
    throw LookupError(kModule, "unknown phone '" + std::string(symbol) + "'");
  return it->second;
}

Phone FeatureTable::phone(std::string_view symbol) const {
  return Phone{std::string(symbol), index_of(symbol)};
}

std::size_t FeatureTable::hamming(std::size_t a, std::size_t b) const {
  const auto& ra = rows_[a];
  const auto& rb = rows_[b];
  std::size_t d = 0;
  for (std::size_t f = 0; f < ra.size(); ++f) d += ra[f] != rb[f];
  return d;
}

std::string FeatureTable::to_tsv() const {
  std::string out = "phone";
  for (const auto& f : feature_names_) out += "\t" + f;
  out += "\n";
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    out += symbols_[i];
    for (std::int8_t v : rows_[i]) {
      out += '\t';
      out += render_value(v);
    }
    out += "\n";
  }
  return out;
}

std::uint64_t FeatureTable::checksum() const { return fnv1a64(to_tsv()); }

FeatureTable parse_feature_table(std::string_view text,
                                 std::string_view source_name) {
  std::vector<std::string> lines = split(text, '\n');
  std::vector<std::string> names;
  std::vector<std::string> symbols;
  std::vector<std::vector<std::int8_t>> rows;
  bool have_header = false;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string line = lines[ln];
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where =
        std::string(source_name) + ":" + std::to_string(ln + 1);
    auto cols = split(line, '\t');
    if (!have_header) {
      if (cols.size() < 2)
        throw ParseError(kModule, where + ": header must name at least one feature");
      names.assign(cols.begin() + 1, cols.end());
      have_header = true;
      continue;
    }
    if (cols.size() != names.size() + 1)
      throw ParseError(kModule, where + ": expected " +
                                    std::to_string(names.size()) +
                                    " feature values, got " +
                                    std::to_string(cols.size() - 1));
    std::vector<std::int8_t> row;
    row.reserve(names.size());
    for (std::size_t c = 1; c < cols.size(); ++c)
      row.push_back(parse_value(trim(cols[c]), where));
    const std::string symbol(trim(cols[0]));
    if (std::find(symbols.begin(), symbols.end(), symbol) != symbols.end())
      throw ConflictError(kModule, where + ": duplicate phone symbol '" + symbol + "'");
    symbols.push_back(symbol);
    rows.push_back(std::move(row));
  }
  if (!have_header)
    throw ParseError(kModule, std::string(source_name) + ": empty feature table");
  if (symbols.empty())
    throw ParseError(kModule, std::string(source_name) + ": feature table has no phones");
  return FeatureTable(std::move(names), std::move(symbols), std::move(rows));
}

FeatureTable load_feature_table(const std::string& path) {
  return parse_feature_table(read_file(path), path);
}

const FeatureTable& bundled_feature_table() {
  static const FeatureTable table =
      parse_feature_table(bundled_feature_table_text(), "<bundled>");
  return table;
}

std::string_view to_string(HammingNorm norm) {
  switch (norm) {
    case HammingNorm::kInventoryMax: return "inventory_max";
    case HammingNorm::kFeatureCount: return "feature_count";
    case HammingNorm::kNone: return "none";
  }
  return "?";
}

HammingNorm parse_hamming_norm(std::string_view name) {
  if (name == "inventory_max") return HammingNorm::kInventoryMax;
  if (name == "feature_count") return HammingNorm::kFeatureCount;
  if (name == "none") return HammingNorm::kNone;
  throw ParseError(kModule, "unknown hamming normalization '" + std::string(name) + "'");
}

PhoneSequence::PhoneSequence(std::vector<std::string> phones)
    : phones_(std::move(phones)) {
  if (phones_.empty()) throw ContractError(kModule, "empty phone sequence");
  for (const auto& p : phones_)
    if (p.empty()) throw ContractError(kModule, "empty phone symbol in sequence");
}

PhoneSequence PhoneSequence::parse(std::string_view text) {
  return PhoneSequence(split_ws(text));
}

std::string PhoneSequence::str() const { return join(phones_, " "); }

namespace {

double scaled_hamming(std::size_t diff, const FeatureTable& table,
                      const CostModel& cm) {
  switch (cm.norm) {
    case HammingNorm::kInventoryMax:
      return table.max_hamming() == 0
                 ? 0.0
                 : cm.max_sub_cost * static_cast<double>(diff) /
                       static_cast<double>(table.max_hamming());
    case HammingNorm::kFeatureCount:
      return cm.max_sub_cost * static_cast<double>(diff) /
             static_cast<double>(table.num_features());
    case HammingNorm::kNone:
      return cm.max_sub_cost * static_cast<double>(diff);
  }
  return 0.0;
}

}  // namespace

double substitution_cost(const Phone& a, const Phone& b,
                         const FeatureTable& table, const CostModel& cm) {
  const std::size_t ia = table.index_of(a.symbol);
  const std::size_t ib = table.index_of(b.symbol);
  return scaled_hamming(table.hamming(ia, ib), table, cm);
}

std::size_t levenshtein(const PhoneSequence& a, const PhoneSequence& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

PwldCalculator::PwldCalculator(const FeatureTable& table, const CostModel& cm)
    : table_(table), n_(table.num_phones()), indel_(cm.indel_cost),
      sub_(n_ * n_) {
  for (std::size_t a = 0; a < n_; ++a)
    for (std::size_t b = 0; b < n_; ++b)
      sub_[a * n_ + b] = scaled_hamming(table.hamming(a, b), table, cm);
}

std::vector<std::size_t> PwldCalculator::resolve(const PhoneSequence& s) const {
  std::vector<std::size_t> out;
  out.reserve(s.size());
  for (const auto& p : s.phones()) out.push_back(table_.index_of(p));
  return out;
}

double PwldCalculator::distance(std::span<const std::size_t> a,
                                std::span<const std::size_t> b) const {
  const std::size_t n = a.size(), m = b.size();
  std::vector<double> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = indel_ * static_cast<double>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = indel_ * static_cast<double>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const double del = prev[j] + indel_;
      const double ins = cur[j - 1] + indel_;
      const double sub = prev[j - 1] + sub_[a[i - 1] * n_ + b[j - 1]];
      cur[j] = std::min({del, ins, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double pwld(const PhoneSequence& a, const PhoneSequence& b,
            const FeatureTable& table, const CostModel& cm) {
  // Only the rows this pair needs; cheaper than a full PwldCalculator for
  // one-off calls.
  std::vector<std::size_t> ia, ib;
  for (const auto& p : a.phones()) ia.push_back(table.index_of(p));
  for (const auto& p : b.phones()) ib.push_back(table.index_of(p));
  const std::size_t n = ia.size(), m = ib.size();
  std::vector<double> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = cm.indel_cost * static_cast<double>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = cm.indel_cost * static_cast<double>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const double del = prev[j] + cm.indel_cost;
      const double ins = cur[j - 1] + cm.indel_cost;
      const double sub =
          prev[j - 1] + scaled_hamming(table.hamming(ia[i - 1], ib[j - 1]), table, cm);
      cur[j] = std::min({del, ins, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double pwld_length_normalized(const PhoneSequence& a, const PhoneSequence& b,
                              const FeatureTable& table, const CostModel& cm) {
  return pwld(a, b, table, cm) /
         static_cast<double>(std::max(a.size(), b.size()));
}

DistanceMatrix pwld_matrix(std::span<const PhoneSequence> words,
                           const FeatureTable& table, const CostModel& cm,
                           std::size_t threads) {
  if (words.empty()) throw ContractError(kModule, "pwld_matrix needs at least one word");
  PwldCalculator calc(table, cm);
  std::vector<std::vector<std::size_t>> resolved;
  resolved.reserve(words.size());
  for (const auto& w : words) resolved.push_back(calc.resolve(w));
  DistanceMatrix m{words.size(), std::vector<double>(words.size() * words.size(), 0.0)};
  parallel_for(words.size(), threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < words.size(); ++j)
      m.values[i * m.n + j] = calc.distance(resolved[i], resolved[j]);
  });
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t j = i + 1; j < m.n; ++j) m.values[j * m.n + i] = m.values[i * m.n + j];
  return m;
}

}  // namespace awe::phonology
