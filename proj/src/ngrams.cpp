#include <algorithm>

#include "awe/corpus.h"
#include "awe/error.h"

namespace awe::corpus {

std::vector<NGram> ngrams(const phonology::PhoneSequence& phones, std::size_t order) {
  if (order == 0) throw ContractError("corpus", "n-gram order must be >= 1");
  std::vector<std::string> padded;
  padded.reserve(phones.size() + 2);
  padded.emplace_back(kBoundary);
  for (const auto& p : phones.phones()) padded.push_back(p);
  padded.emplace_back(kBoundary);
  std::vector<NGram> out;
  for (std::size_t i = 0; i + order <= padded.size(); ++i)
    out.emplace_back(padded.begin() + static_cast<long>(i),
                     padded.begin() + static_cast<long>(i + order));
  return out;
}

std::string ngram_label(const NGram& g) {
  std::string s;
  for (const auto& p : g) s += p;
  return s;
}

NGramInventory::NGramInventory(std::vector<NGram> grams, std::set<std::size_t> orders)
    : grams_(std::move(grams)), orders_(std::move(orders)) {
  std::sort(grams_.begin(), grams_.end());
  grams_.erase(std::unique(grams_.begin(), grams_.end()), grams_.end());
  for (std::size_t i = 0; i < grams_.size(); ++i) index_.emplace(grams_[i], i);
}

long NGramInventory::index_of(const NGram& g) const {
  auto it = index_.find(g);
  return it == index_.end() ? -1 : static_cast<long>(it->second);
}

NGramInventory ngram_inventory(std::span<const phonology::PhoneSequence> words,
                               const std::set<std::size_t>& orders) {
  if (orders.empty()) throw ContractError("corpus", "n-gram orders must be nonempty");
  std::vector<NGram> all;
  for (const auto& w : words)
    for (std::size_t n : orders)
      for (auto& g : ngrams(w, n)) all.push_back(std::move(g));
  return NGramInventory(std::move(all), orders);
}

NGramInventory ngram_inventory(
    const std::map<std::string, phonology::PhoneSequence>& vocabulary,
    const std::set<std::size_t>& orders) {
  std::vector<phonology::PhoneSequence> words;
  for (const auto& [_, seq] : vocabulary) words.push_back(seq);
  return ngram_inventory(words, orders);
}

std::vector<std::uint8_t> ngram_targets(const phonology::PhoneSequence& phones,
                                        const NGramInventory& inventory, TargetMode mode) {
  std::vector<std::uint8_t> y(inventory.size(), 0);
  for (std::size_t n : inventory.orders()) {
    for (const auto& g : ngrams(phones, n)) {
      const long idx = inventory.index_of(g);
      if (idx < 0) {
        if (mode == TargetMode::kStrict)
          throw LookupError("corpus", "n-gram '" + ngram_label(g) + "' of /" + phones.str() +
                                          "/ is not in the inventory");
        continue;
      }
      y[static_cast<std::size_t>(idx)] = 1;
    }
  }
  return y;
}

std::vector<std::uint8_t> ngram_targets(const WordSegment& segment,
                                        const NGramInventory& inventory, TargetMode mode) {
  try {
    return ngram_targets(segment.phones, inventory, mode);
  } catch (const LookupError& e) {
    throw LookupError("corpus", "segment '" + segment.segment_id + "': " + e.what());
  }
}

}  // namespace awe::corpus
