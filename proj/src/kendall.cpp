#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "awe/error.h"
#include "awe/evalkit.h"

namespace awe::eval {

namespace {

constexpr const char* kModule = "evalkit";

// Sorts v in place and returns the number of pairs i < j with v[i] > v[j].
std::uint64_t count_inversions(std::vector<double>& v) {
  std::vector<double> buf(v.size());
  std::uint64_t inv = 0;
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size());
      const std::size_t hi = std::min(lo + 2 * width, v.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          inv += mid - i;
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
    }
    v.swap(buf);
  }
  return inv;
}

// Sum over runs of equal values of t(t-1)/2; v must be sorted.
std::uint64_t tied_pairs(std::span<const double> v) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i + 1;
    while (j < v.size() && v[j] == v[i]) ++j;
    const std::uint64_t t = j - i;
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ContractError(kModule, "kendall_tau: rankings of different sizes");
  if (a.size() < 2) throw ContractError(kModule, "kendall_tau: needs at least 2 candidates");
}

}  // namespace

double kendall_tau_eq5(std::span<const double> theta_key, std::span<const double> phi_key) {
  check_pair(theta_key, phi_key);
  const std::size_t k = theta_key.size();
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  // Ordered by phi, and within a phi tie by theta, so tied-phi pairs never
  // show up as inversions.
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (phi_key[a] != phi_key[b]) return phi_key[a] < phi_key[b];
    return theta_key[a] < theta_key[b];
  });
  std::vector<double> seq(k);
  for (std::size_t i = 0; i < k; ++i) seq[i] = theta_key[idx[i]];
  const double delta = static_cast<double>(count_inversions(seq));
  const double pairs = 0.5 * static_cast<double>(k) * static_cast<double>(k - 1);
  return 1.0 - 2.0 * delta / pairs;
}

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const std::size_t k = x.size();
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });
  std::vector<double> xs(k), ys(k);
  for (std::size_t i = 0; i < k; ++i) xs[i] = x[idx[i]], ys[i] = y[idx[i]];

  const std::uint64_t n1 = tied_pairs(xs);
  std::uint64_t n3 = 0;  // tied in both
  for (std::size_t i = 0; i < k;) {
    std::size_t j = i + 1;
    while (j < k && xs[j] == xs[i] && ys[j] == ys[i]) ++j;
    const std::uint64_t t = j - i;
    n3 += t * (t - 1) / 2;
    i = j;
  }
  const std::uint64_t swaps = count_inversions(ys);  // leaves ys sorted
  const std::uint64_t n2 = tied_pairs(ys);
  const std::uint64_t n0 = static_cast<std::uint64_t>(k) * (k - 1) / 2;

  const double num = static_cast<double>(n0) - static_cast<double>(n1) -
                     static_cast<double>(n2) + static_cast<double>(n3) -
                     2.0 * static_cast<double>(swaps);
  const double den = std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
  return den == 0.0 ? 0.0 : num / den;
}

double kendall_tau(const RankedList& theta, const RankedList& phi, TauVariant variant) {
  if (theta.order.size() != phi.order.size())
    throw ContractError(kModule, "kendall_tau: candidate sets differ in size");
  const std::size_t k = theta.order.size();
  std::unordered_map<std::size_t, std::size_t> pos_in_phi;
  for (std::size_t i = 0; i < k; ++i) pos_in_phi[phi.order[i]] = i;
  if (pos_in_phi.size() != k)
    throw ContractError(kModule, "kendall_tau: repeated candidate in a ranking");

  const auto key = [](const RankedList& r, std::size_t i) {
    return r.descending ? -r.scores[i] : r.scores[i];
  };
  std::vector<double> th(k), ph(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto it = pos_in_phi.find(theta.order[i]);
    if (it == pos_in_phi.end())
      throw ContractError(kModule, "kendall_tau: candidate sets differ");
    th[i] = variant == TauVariant::kEq5 ? static_cast<double>(i) : key(theta, i);
    ph[i] = key(phi, it->second);
  }
  return variant == TauVariant::kEq5 ? kendall_tau_eq5(th, ph) : kendall_tau_b(th, ph);
}

std::string_view to_string(TauVariant v) { return v == TauVariant::kEq5 ? "eq5" : "tau_b"; }

TauVariant parse_tau_variant(std::string_view s) {
  if (s == "eq5") return TauVariant::kEq5;
  if (s == "tau_b") return TauVariant::kTauB;
  throw ParseError(kModule, "unknown tau variant '" + std::string(s) + "'");
}

}  // namespace awe::eval
