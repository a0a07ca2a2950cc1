#include <fftw3.h>

#include <cmath>
#include <mutex>

#include "awe/corpus.h"
#include "awe/error.h"

namespace awe::corpus {

namespace {

constexpr const char* kModule = "corpus";

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex& planner_mutex() {
  static std::mutex mu;
  return mu;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard<std::mutex> lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void power_spectrum(std::vector<double>& power) {
    fftw_execute(plan_);
    power.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k <= n_ / 2; ++k)
      power[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

}  // namespace

std::size_t MfscConfig::window_samples() const {
  return static_cast<std::size_t>(std::lround(sample_rate_hz * window_ms / 1000.0));
}

std::size_t MfscConfig::hop_samples() const {
  return static_cast<std::size_t>(std::lround(sample_rate_hz * hop_ms / 1000.0));
}

std::size_t MfscConfig::fft_size() const {
  std::size_t n = 1;
  while (n < window_samples()) n <<= 1;
  return n;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

double mel_band_center_hz(const MfscConfig& cfg, std::size_t band) {
  const double top = hz_to_mel(cfg.sample_rate_hz / 2.0);
  const double step = top / static_cast<double>(cfg.n_mels + 1);
  return mel_to_hz(step * static_cast<double>(band + 1));
}

std::vector<std::vector<double>> mel_filterbank(const MfscConfig& cfg) {
  const std::size_t nfft = cfg.fft_size();
  const std::size_t bins = nfft / 2 + 1;
  const double top = hz_to_mel(cfg.sample_rate_hz / 2.0);
  const double step = top / static_cast<double>(cfg.n_mels + 1);
  std::vector<std::vector<double>> bank(cfg.n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t b = 0; b < cfg.n_mels; ++b) {
    const double lo = mel_to_hz(step * static_cast<double>(b));
    const double mid = mel_to_hz(step * static_cast<double>(b + 1));
    const double hi = mel_to_hz(step * static_cast<double>(b + 2));
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate_hz / static_cast<double>(nfft);
      if (f > lo && f <= mid) bank[b][k] = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) bank[b][k] = (hi - f) / (hi - mid);
    }
  }
  return bank;
}

FrameMatrix extract_mfsc(std::span<const float> pcm, const MfscConfig& cfg) {
  if (!(cfg.window_ms > cfg.hop_ms && cfg.hop_ms > 0.0) || cfg.n_mels == 0 ||
      cfg.sample_rate_hz <= 0)
    throw ContractError(kModule, "invalid MFSC configuration");
  const std::size_t win = cfg.window_samples();
  const std::size_t hop = cfg.hop_samples();
  if (pcm.size() < win)
    throw DegenerateInputError(kModule, "waveform of " + std::to_string(pcm.size()) +
                                            " samples is shorter than one " +
                                            std::to_string(win) + "-sample window");
  const std::size_t frames = (pcm.size() - win) / hop + 1;
  const std::size_t nfft = cfg.fft_size();
  const auto bank = mel_filterbank(cfg);

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                       static_cast<double>(win - 1));

  FrameMatrix out{frames, cfg.n_mels, std::vector<float>(frames * cfg.n_mels)};
  RealFft fft(nfft);
  std::vector<double> power;
  for (std::size_t t = 0; t < frames; ++t) {
    double* in = fft.input();
    for (std::size_t i = 0; i < nfft; ++i)
      in[i] = i < win ? window[i] * pcm[t * hop + i] : 0.0;
    fft.power_spectrum(power);
    for (std::size_t b = 0; b < cfg.n_mels; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) e += bank[b][k] * power[k];
      out.data[t * cfg.n_mels + b] = static_cast<float>(std::log(e + cfg.log_floor));
    }
  }
  return out;
}

}  // namespace awe::corpus
