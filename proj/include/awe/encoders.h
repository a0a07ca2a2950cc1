#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "awe/adam.h"
#include "awe/corpus.h"
#include "awe/ops.h"
#include "awe/tensor.h"
#include "awe/util.h"

namespace awe::encoders {

enum class EncoderKind { kCnn, kBgru };
enum class Readout {
  // Top-layer forward state after the last frame concatenated with the
  // backward state after the first frame.
  kFinalStates,
  kMeanOverTime,
};

std::string_view to_string(EncoderKind k);
EncoderKind parse_encoder_kind(std::string_view s);
std::string_view to_string(Readout r);
Readout parse_readout(std::string_view s);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kBgru;
  std::size_t input_dim = corpus::kFrameDim;
  std::vector<std::size_t> cnn_filters{256, 512, 1024};
  std::vector<std::size_t> cnn_widths{16, 32, 48};
  std::size_t gru_layers = 2;
  std::size_t gru_hidden = 512;
  double dropout = 0.2;
  Readout readout = Readout::kFinalStates;

  // Last filter count (cnn) or 2 x hidden (bgru).
  std::size_t embed_dim() const;
  void validate() const;
};

template <typename T>
class AcousticEncoder {
 public:
  explicit AcousticEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~AcousticEncoder() = default;

  const EncoderConfig& config() const { return cfg_; }
  std::size_t embed_dim() const { return cfg_.embed_dim(); }

  // B x embed_dim embeddings, one row per input sequence. In eval mode each
  // row depends only on its own sequence.
  virtual ad::Tensor<T> forward(std::span<const corpus::FrameMatrix* const> batch,
                                ad::Mode mode, ad::DropoutStream& stream) = 0;
  virtual std::vector<ad::NamedTensor<T>> parameters() = 0;
  // Non-trainable state that must travel with the weights.
  virtual std::vector<std::pair<std::string, std::vector<T>*>> buffers() { return {}; }

 protected:
  void check_inputs(std::span<const corpus::FrameMatrix* const> batch) const;

 private:
  EncoderConfig cfg_;
};

template <typename T>
std::unique_ptr<AcousticEncoder<T>> make_encoder(const EncoderConfig& cfg, Rng& rng);

// Single-segment embedding.
template <typename T>
std::vector<T> embed(AcousticEncoder<T>& enc, const corpus::FrameMatrix& frames,
                     ad::Mode mode = ad::Mode::kEval);

// Eval-mode embeddings of many segments, processed in chunks of `chunk`
// sequences; the result does not depend on the chunking. Row-major N x D.
template <typename T>
std::vector<T> embed_batch(AcousticEncoder<T>& enc,
                           std::span<const corpus::FrameMatrix* const> segments,
                           std::size_t chunk = 64, std::size_t threads = 1);

// Converts float frames to a packed tensor (rows concatenated).
template <typename T>
ad::Packed<T> pack_frames(std::span<const corpus::FrameMatrix* const> batch);

// One GRU step for a batch, written against the autodiff ops. gi holds the
// precomputed input projection x W_ih + b_ih (B x 3H), gate order r, z, n.
template <typename T>
ad::Tensor<T> gru_cell(const ad::Tensor<T>& gi, const ad::Tensor<T>& h,
                       const ad::Tensor<T>& w_hh, const ad::Tensor<T>& b_hh);

// Number of input sequences the CNN encoder has left-padded because they were
// shorter than a kernel width, since construction.
template <typename T>
std::size_t cnn_padded_inputs(const AcousticEncoder<T>& enc);

}  // namespace awe::encoders
