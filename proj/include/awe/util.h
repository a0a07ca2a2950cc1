#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace awe {

// Seeded generator used for every random decision in a run. Conversions to
// floating point are done here rather than through <random> distributions so
// that streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  double normal();

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stateless counter-based generator: the same (seed, counter) always yields
// the same value, independent of call order.
std::uint64_t splitmix64(std::uint64_t x);
inline double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
  return static_cast<double>(splitmix64(seed ^ splitmix64(counter)) >> 11) *
         0x1.0p-53;
}

std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_ws(std::string_view s);
std::string_view trim(std::string_view s);
std::string join(std::span<const std::string> parts, std::string_view sep);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

// Runs fn(i) for i in [0, n) over `threads` workers. Each index is handled by
// exactly one worker, so callers writing results by index stay deterministic.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

double mean(std::span<const double> v);
// Population standard deviation.
double stddev(std::span<const double> v);

}  // namespace awe
