#include "awe/objectives.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "awe/encoders.h"
#include "awe/error.h"

namespace awe::objectives {

namespace {

constexpr const char* kModule = "objectives";

template <typename T>
ad::Tensor<T> uniform_param(ad::Shape shape, double bound, Rng& rng) {
  std::vector<T> v(shape.size());
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return ad::Tensor<T>::from(shape, std::move(v), true);
}

// d = (1 - cos) / 2 or 1 - cos, as a graph node.
template <typename T>
ad::Tensor<T> distance(const ad::Tensor<T>& a, const ad::Tensor<T>& b, bool scaled) {
  const auto d = ad::add_scalar(ad::scale(ad::cosine_rows(a, b), T(-1)), T(1));
  return scaled ? ad::scale(d, T(0.5)) : d;
}

}  // namespace

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::kPhoneDetect: return "phone_detect";
    case Objective::kWord2Phones: return "word2phones";
    case Objective::kSiamese: return "siamese";
  }
  return "?";
}

Objective parse_objective(std::string_view s) {
  if (s == "phone_detect") return Objective::kPhoneDetect;
  if (s == "word2phones") return Objective::kWord2Phones;
  if (s == "siamese") return Objective::kSiamese;
  throw ParseError(kModule, "unknown objective '" + std::string(s) + "'");
}

std::string_view to_string(Sampling s) {
  switch (s) {
    case Sampling::kRandom: return "random";
    case Sampling::kSemiHard: return "semi_hard";
    case Sampling::kSemiHardBand: return "semi_hard_band";
  }
  return "?";
}

Sampling parse_sampling(std::string_view s) {
  if (s == "random") return Sampling::kRandom;
  if (s == "semi_hard") return Sampling::kSemiHard;
  if (s == "semi_hard_band") return Sampling::kSemiHardBand;
  throw ParseError(kModule, "unknown sampling strategy '" + std::string(s) + "'");
}

template <typename T>
DetectHead<T>::DetectHead(std::size_t embed_dim, std::size_t n_targets, Rng& rng) {
  if (embed_dim == 0 || n_targets == 0)
    throw ContractError(kModule, "detect head needs nonzero input and output sizes");
  const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  w_ = uniform_param<T>({embed_dim, n_targets}, bound, rng);
  b_ = uniform_param<T>({1, n_targets}, bound, rng);
}

template <typename T>
ad::Tensor<T> DetectHead<T>::logits(const ad::Tensor<T>& x) const {
  return ad::add_bias(ad::matmul(x, w_), b_);
}

template <typename T>
std::vector<ad::NamedTensor<T>> DetectHead<T>::parameters() {
  return {{"detect.weight", w_}, {"detect.bias", b_}};
}

template <typename T>
ad::Tensor<T> detect_loss(const ad::Tensor<T>& x, std::span<const T> targets,
                          const DetectHead<T>& head) {
  if (targets.size() != x.rows() * head.n_targets())
    throw ShapeError(kModule, "detect_loss: " + std::to_string(targets.size()) +
                                  " targets for batch " + std::to_string(x.rows()) + " x " +
                                  std::to_string(head.n_targets()) + " n-grams");
  const auto per_entry = ad::bce_with_logits(head.logits(x), targets);
  return ad::scale(ad::sum(per_entry), T(1) / static_cast<T>(x.rows()));
}

template <typename T>
PhoneDecoder<T>::PhoneDecoder(std::size_t embed_dim, std::vector<std::string> phones,
                              const DecoderConfig& cfg, Rng& rng)
    : vocab_(std::move(phones)) {
  if (vocab_.empty()) throw ContractError(kModule, "decoder needs a nonempty phone set");
  vocab_.push_back("<s>");
  vocab_.push_back("</s>");
  const std::size_t v = vocab_.size(), h = cfg.hidden, e = cfg.symbol_embed;
  const double bh = 1.0 / std::sqrt(static_cast<double>(h));
  const double bx = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  emb_ = uniform_param<T>({v, e}, 1.0, rng);
  w_init_ = uniform_param<T>({embed_dim, h}, bx, rng);
  b_init_ = uniform_param<T>({1, h}, bx, rng);
  w_ih_ = uniform_param<T>({e, 3 * h}, bh, rng);
  w_hh_ = uniform_param<T>({h, 3 * h}, bh, rng);
  b_ih_ = uniform_param<T>({1, 3 * h}, bh, rng);
  b_hh_ = uniform_param<T>({1, 3 * h}, bh, rng);
  w_out_ = uniform_param<T>({h, v}, bh, rng);
  b_out_ = uniform_param<T>({1, v}, bh, rng);
}

template <typename T>
std::vector<std::size_t> PhoneDecoder<T>::encode(const phonology::PhoneSequence& phones) const {
  std::vector<std::size_t> ids;
  ids.reserve(phones.size());
  for (const auto& p : phones.phones()) {
    const auto it = std::find(vocab_.begin(), vocab_.end() - 2, p);
    if (it == vocab_.end() - 2)
      throw LookupError(kModule, "phone '" + p + "' is not in the decoder vocabulary");
    ids.push_back(static_cast<std::size_t>(it - vocab_.begin()));
  }
  return ids;
}

template <typename T>
ad::Tensor<T> PhoneDecoder<T>::initial_state(const ad::Tensor<T>& x) const {
  return ad::tanh(ad::add_bias(ad::matmul(x, w_init_), b_init_));
}

template <typename T>
ad::Tensor<T> PhoneDecoder<T>::step(std::span<const std::size_t> prev,
                                    const ad::Tensor<T>& h) const {
  const auto gi = ad::add_bias(ad::matmul(ad::gather_rows(emb_, prev), w_ih_), b_ih_);
  return encoders::gru_cell(gi, h, w_hh_, b_hh_);
}

template <typename T>
ad::Tensor<T> PhoneDecoder<T>::output(const ad::Tensor<T>& h) const {
  return ad::add_bias(ad::matmul(h, w_out_), b_out_);
}

template <typename T>
std::vector<ad::NamedTensor<T>> PhoneDecoder<T>::parameters() {
  return {{"decoder.embedding", emb_}, {"decoder.init.weight", w_init_},
          {"decoder.init.bias", b_init_}, {"decoder.w_ih", w_ih_},
          {"decoder.w_hh", w_hh_},        {"decoder.b_ih", b_ih_},
          {"decoder.b_hh", b_hh_},        {"decoder.out.weight", w_out_},
          {"decoder.out.bias", b_out_}};
}

template <typename T>
ad::Tensor<T> word2phones_loss(const ad::Tensor<T>& x,
                               std::span<const std::vector<std::size_t>> targets,
                               const PhoneDecoder<T>& decoder) {
  const std::size_t b = x.rows();
  if (targets.size() != b)
    throw ShapeError(kModule, "word2phones_loss: " + std::to_string(targets.size()) +
                                  " target sequences for a batch of " + std::to_string(b));
  std::size_t steps = 0;
  for (const auto& t : targets) {
    if (t.empty()) throw ContractError(kModule, "word2phones_loss: empty phone sequence");
    for (std::size_t id : t)
      if (id >= decoder.bos())
        throw LookupError(kModule, "word2phones_loss: symbol id " + std::to_string(id) +
                                       " is not a phone");
    steps = std::max(steps, t.size() + 1);
  }
  ad::Tensor<T> h = decoder.initial_state(x);
  std::vector<std::size_t> prev(b, decoder.bos());
  std::vector<ad::Tensor<T>> picked;
  for (std::size_t t = 0; t < steps; ++t) {
    h = decoder.step(prev, h);
    const auto logp = ad::log_softmax(decoder.output(h));
    std::vector<std::size_t> rows, gold;
    for (std::size_t s = 0; s < b; ++s) {
      const std::size_t n = targets[s].size();
      if (t > n) continue;
      rows.push_back(s);
      gold.push_back(t < n ? targets[s][t] : decoder.eos());
    }
    const auto lp = rows.size() == b ? logp : ad::gather_rows(logp, rows);
    picked.push_back(ad::pick(lp, gold));
    for (std::size_t s = 0; s < b; ++s) {
      const std::size_t n = targets[s].size();
      prev[s] = t < n ? targets[s][t] : decoder.eos();
    }
  }
  const auto all = ad::concat_rows<T>(picked);
  return ad::scale(ad::sum(all), T(-1) / static_cast<T>(b));
}

template <typename T>
std::vector<std::string> greedy_decode(const ad::Tensor<T>& x, const PhoneDecoder<T>& decoder,
                                       std::size_t max_len) {
  if (x.rows() != 1) throw ShapeError(kModule, "greedy_decode expects a single embedding");
  ad::NoGradGuard no_grad;
  ad::Tensor<T> h = decoder.initial_state(x);
  std::vector<std::size_t> prev{decoder.bos()};
  std::vector<std::string> out;
  for (std::size_t t = 0; t < max_len; ++t) {
    h = decoder.step(prev, h);
    const auto logits = decoder.output(h);
    const auto& v = logits.data();
    const std::size_t best =
        static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    if (best == decoder.eos()) break;
    out.push_back(decoder.vocabulary()[best]);
    prev[0] = best;
  }
  return out;
}

void TripletConfig::validate() const {
  if (!(margin > 0.0)) throw ContractError(kModule, "triplet margin must be > 0");
}

template <typename T>
ad::Tensor<T> triplet_loss(const ad::Tensor<T>& anchors, const ad::Tensor<T>& positives,
                           const ad::Tensor<T>& negatives, const TripletConfig& cfg) {
  cfg.validate();
  const auto d_pos = distance(anchors, positives, cfg.scaled_distance);
  const auto d_neg = distance(anchors, negatives, cfg.scaled_distance);
  const auto hinge = ad::relu(ad::add_scalar(ad::sub(d_pos, d_neg), static_cast<T>(cfg.margin)));
  return ad::mean(hinge);
}

double cosine_distance(std::span<const double> u, std::span<const double> v, bool scaled) {
  double dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw DegenerateInputError(kModule, "cosine of a zero vector");
  const double d = 1.0 - dot / (std::sqrt(uu) * std::sqrt(vv));
  return scaled ? 0.5 * d : d;
}

std::size_t sample_negative(std::span<const double> embeddings, std::size_t dim,
                            std::span<const std::size_t> types, std::size_t anchor,
                            Sampling strategy, Rng& rng, const TripletConfig& cfg,
                            double d_pos) {
  const std::size_t n = types.size();
  if (dim == 0 || embeddings.size() != n * dim)
    throw ShapeError(kModule, "sample_negative: embedding matrix does not match the type list");
  if (anchor >= n) throw ContractError(kModule, "sample_negative: anchor index out of range");
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < n; ++i)
    if (types[i] != types[anchor]) negatives.push_back(i);
  if (negatives.empty())
    throw ContractError(kModule, "sampling: no segment of a different word type in the batch");
  if (strategy == Sampling::kRandom) return negatives[rng.index(negatives.size())];

  const auto row = [&](std::size_t i) { return embeddings.subspan(i * dim, dim); };
  std::size_t best = negatives.front(), best_band = n;
  double best_d = std::numeric_limits<double>::infinity(), best_band_d = best_d;
  for (std::size_t i : negatives) {
    const double d = cosine_distance(row(anchor), row(i), cfg.scaled_distance);
    if (d < best_d) best_d = d, best = i;
    if (d > d_pos && d < d_pos + cfg.margin && d < best_band_d) best_band_d = d, best_band = i;
  }
  if (strategy == Sampling::kSemiHardBand && best_band < n) return best_band;
  return best;
}

std::vector<TripletPair> build_triplet_batch(std::span<const corpus::WordSegment> split,
                                             std::size_t batch_size, Rng& rng) {
  if (batch_size < 2) throw ContractError(kModule, "triplet batch size must be >= 2");
  std::map<std::string, std::vector<std::size_t>> by_type;
  for (std::size_t i = 0; i < split.size(); ++i) by_type[split[i].word_type].push_back(i);
  std::vector<std::size_t> eligible;
  std::size_t n_types = 0;
  for (const auto& [type, members] : by_type) {
    if (members.size() < 2) continue;
    ++n_types;
    eligible.insert(eligible.end(), members.begin(), members.end());
  }
  if (n_types < 2)
    throw DegenerateInputError(kModule, "corpus too degenerate for triplets: need >= 2 word "
                                        "types with >= 2 segments, found " +
                                            std::to_string(n_types));
  std::sort(eligible.begin(), eligible.end());

  const auto positive_for = [&](std::size_t a) {
    const auto& members = by_type.at(split[a].word_type);
    std::size_t k = rng.index(members.size() - 1);
    if (members[k] == a) k = members.size() - 1;
    return members[k];
  };
  std::vector<TripletPair> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t a = eligible[rng.index(eligible.size())];
    batch.push_back({a, positive_for(a)});
  }
  const auto& first_type = split[batch.front().anchor].word_type;
  const bool one_type = std::all_of(batch.begin(), batch.end(), [&](const TripletPair& p) {
    return split[p.anchor].word_type == first_type;
  });
  if (one_type) {
    std::vector<std::size_t> others;
    for (std::size_t i : eligible)
      if (split[i].word_type != first_type) others.push_back(i);
    const std::size_t a = others[rng.index(others.size())];
    batch.back() = {a, positive_for(a)};
  }
  return batch;
}

#define AWE_INSTANTIATE_OBJECTIVES(T)                                                     \
  template class DetectHead<T>;                                                           \
  template class PhoneDecoder<T>;                                                         \
  template ad::Tensor<T> detect_loss<T>(const ad::Tensor<T>&, std::span<const T>,         \
                                        const DetectHead<T>&);                            \
  template ad::Tensor<T> word2phones_loss<T>(const ad::Tensor<T>&,                        \
                                             std::span<const std::vector<std::size_t>>,   \
                                             const PhoneDecoder<T>&);                     \
  template std::vector<std::string> greedy_decode<T>(const ad::Tensor<T>&,                \
                                                     const PhoneDecoder<T>&, std::size_t); \
  template ad::Tensor<T> triplet_loss<T>(const ad::Tensor<T>&, const ad::Tensor<T>&,      \
                                         const ad::Tensor<T>&, const TripletConfig&);

AWE_INSTANTIATE_OBJECTIVES(float)
AWE_INSTANTIATE_OBJECTIVES(double)

}  // namespace awe::objectives
