#include "awe/encoders.h"

#include <atomic>
#include <cmath>

#include "awe/error.h"

namespace awe::encoders {

namespace {

constexpr const char* kModule = "encoders";

template <typename T>
ad::Tensor<T> uniform_param(ad::Shape shape, double bound, Rng& rng) {
  std::vector<T> v(shape.size());
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return ad::Tensor<T>::from(shape, std::move(v), true);
}

template <typename T>
ad::Tensor<T> constant_param(ad::Shape shape, T value) {
  return ad::Tensor<T>::from(shape, std::vector<T>(shape.size(), value), true);
}

template <typename T>
class CnnEncoder final : public AcousticEncoder<T> {
 public:
  CnnEncoder(const EncoderConfig& cfg, Rng& rng) : AcousticEncoder<T>(cfg) {
    std::size_t in = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.cnn_filters.size(); ++l) {
      const std::size_t out = cfg.cnn_filters[l], w = cfg.cnn_widths[l];
      const double bound = 1.0 / std::sqrt(static_cast<double>(w * in));
      Block b;
      b.width = w;
      b.weight = uniform_param<T>({w * in, out}, bound, rng);
      b.bias = uniform_param<T>({1, out}, bound, rng);
      b.gamma = constant_param<T>({1, out}, T(1));
      b.beta = constant_param<T>({1, out}, T(0));
      b.stats = ad::BatchNormStats<T>(out);
      blocks_.push_back(std::move(b));
      in = out;
    }
  }

  ad::Tensor<T> forward(std::span<const corpus::FrameMatrix* const> batch, ad::Mode mode,
                        ad::DropoutStream& stream) override {
    this->check_inputs(batch);
    ad::Packed<T> x = pack_frames<T>(batch);
    std::vector<std::uint8_t> padded(batch.size(), 0);
    for (auto& b : blocks_) {
      for (std::size_t s = 0; s < x.lengths.size(); ++s)
        if (x.lengths[s] < b.width) padded[s] = 1;
      ad::Packed<T> y = ad::conv1d(x, b.weight, b.bias, b.width);
      ad::Tensor<T> h = ad::batch_norm(y.data, b.gamma, b.beta, b.stats, mode);
      h = ad::relu(h);
      h = ad::dropout(h, this->config().dropout, mode, stream);
      x = ad::Packed<T>{std::move(h), std::move(y.lengths)};
    }
    std::size_t n = 0;
    for (auto p : padded) n += p;
    padded_inputs_ += n;
    return ad::mean_over_time(x);
  }

  std::vector<ad::NamedTensor<T>> parameters() override {
    std::vector<ad::NamedTensor<T>> out;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const std::string p = "cnn." + std::to_string(l) + ".";
      out.push_back({p + "conv.weight", blocks_[l].weight});
      out.push_back({p + "conv.bias", blocks_[l].bias});
      out.push_back({p + "bn.gamma", blocks_[l].gamma});
      out.push_back({p + "bn.beta", blocks_[l].beta});
    }
    return out;
  }

  std::vector<std::pair<std::string, std::vector<T>*>> buffers() override {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const std::string p = "cnn." + std::to_string(l) + ".bn.";
      out.emplace_back(p + "running_mean", &blocks_[l].stats.running_mean);
      out.emplace_back(p + "running_var", &blocks_[l].stats.running_var);
    }
    return out;
  }

  std::size_t padded_inputs() const { return padded_inputs_.load(); }

 private:
  struct Block {
    std::size_t width = 0;
    ad::Tensor<T> weight, bias, gamma, beta;
    ad::BatchNormStats<T> stats;
  };
  std::vector<Block> blocks_;
  std::atomic<std::size_t> padded_inputs_{0};
};

template <typename T>
struct GruWeights {
  ad::Tensor<T> w_ih, w_hh, b_ih, b_hh;
};

template <typename T>
class BgruEncoder final : public AcousticEncoder<T> {
 public:
  BgruEncoder(const EncoderConfig& cfg, Rng& rng) : AcousticEncoder<T>(cfg) {
    const std::size_t h = cfg.gru_hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    std::size_t in = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.gru_layers; ++l) {
      for (int dir = 0; dir < 2; ++dir) {
        GruWeights<T> w;
        w.w_ih = uniform_param<T>({in, 3 * h}, bound, rng);
        w.w_hh = uniform_param<T>({h, 3 * h}, bound, rng);
        w.b_ih = uniform_param<T>({1, 3 * h}, bound, rng);
        w.b_hh = uniform_param<T>({1, 3 * h}, bound, rng);
        layers_.push_back(std::move(w));
      }
      in = 2 * h;
    }
  }

  ad::Tensor<T> forward(std::span<const corpus::FrameMatrix* const> batch, ad::Mode mode,
                        ad::DropoutStream& stream) override {
    this->check_inputs(batch);
    const std::size_t b = batch.size();
    const std::size_t hdim = this->config().gru_hidden;
    std::size_t steps = 0;
    for (const auto* f : batch) steps = std::max(steps, f->rows);

    // Time-major padded input: row t*B + s holds frame t of sequence s.
    const std::size_t din = this->config().input_dim;
    std::vector<T> xs(steps * b * din, T(0));
    std::vector<std::vector<std::uint8_t>> active(steps, std::vector<std::uint8_t>(b, 0));
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t t = 0; t < batch[s]->rows; ++t) {
        active[t][s] = 1;
        const float* src = batch[s]->row(t);
        for (std::size_t d = 0; d < din; ++d) xs[(t * b + s) * din + d] = static_cast<T>(src[d]);
      }
    ad::Tensor<T> input = ad::Tensor<T>::from({steps * b, din}, std::move(xs));

    const ad::Tensor<T> h0 = ad::Tensor<T>::zeros({b, hdim});
    ad::Tensor<T> fwd_final, bwd_final;
    std::vector<ad::Tensor<T>> fwd_out, bwd_out;
    for (std::size_t l = 0; l < this->config().gru_layers; ++l) {
      if (l > 0) input = ad::dropout(input, this->config().dropout, mode, stream);
      fwd_out = run(layers_[2 * l], input, active, b, h0, false, fwd_final);
      bwd_out = run(layers_[2 * l + 1], input, active, b, h0, true, bwd_final);
      std::vector<ad::Tensor<T>> rows;
      rows.reserve(steps);
      for (std::size_t t = 0; t < steps; ++t) {
        const ad::Tensor<T> pair[2] = {fwd_out[t], bwd_out[t]};
        rows.push_back(ad::concat_cols<T>(pair));
      }
      input = ad::concat_rows<T>(rows);
    }
    if (this->config().readout == Readout::kFinalStates) {
      const ad::Tensor<T> pair[2] = {fwd_final, bwd_final};
      return ad::concat_cols<T>(pair);
    }
    // Mean over each sequence's valid steps of the top-layer outputs.
    std::vector<std::size_t> order, lengths;
    for (std::size_t s = 0; s < b; ++s) {
      lengths.push_back(batch[s]->rows);
      for (std::size_t t = 0; t < batch[s]->rows; ++t) order.push_back(t * b + s);
    }
    return ad::mean_over_time(ad::Packed<T>{ad::gather_rows(input, order), lengths});
  }

  std::vector<ad::NamedTensor<T>> parameters() override {
    std::vector<ad::NamedTensor<T>> out;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const std::string p = "gru." + std::to_string(k / 2) + (k % 2 ? ".bwd." : ".fwd.");
      out.push_back({p + "w_ih", layers_[k].w_ih});
      out.push_back({p + "w_hh", layers_[k].w_hh});
      out.push_back({p + "b_ih", layers_[k].b_ih});
      out.push_back({p + "b_hh", layers_[k].b_hh});
    }
    return out;
  }

 private:
  // Runs one direction over all steps. Padded steps keep the previous state,
  // so the forward pass ends holding each sequence's last valid state and
  // the backward pass starts from zeros at each sequence's own last frame.
  std::vector<ad::Tensor<T>> run(const GruWeights<T>& w, const ad::Tensor<T>& input,
                                 const std::vector<std::vector<std::uint8_t>>& active,
                                 std::size_t b, const ad::Tensor<T>& h0, bool reverse,
                                 ad::Tensor<T>& final_state) {
    const std::size_t steps = active.size();
    const ad::Tensor<T> gi_all = ad::add_bias(ad::matmul(input, w.w_ih), w.b_ih);
    std::vector<ad::Tensor<T>> out(steps);
    ad::Tensor<T> h = h0;
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = reverse ? steps - 1 - k : k;
      const ad::Tensor<T> gi = ad::slice_rows(gi_all, t * b, b);
      const ad::Tensor<T> next = gru_cell(gi, h, w.w_hh, w.b_hh);
      bool all_active = true;
      for (auto a : active[t]) all_active = all_active && a;
      h = all_active ? next : ad::select_rows<T>(active[t], next, h);
      out[t] = h;
    }
    final_state = h;
    return out;
  }

  std::vector<GruWeights<T>> layers_;
};

}  // namespace

std::string_view to_string(EncoderKind k) { return k == EncoderKind::kCnn ? "cnn" : "bgru"; }

EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "cnn") return EncoderKind::kCnn;
  if (s == "bgru") return EncoderKind::kBgru;
  throw ParseError(kModule, "unknown encoder kind '" + std::string(s) + "'");
}

std::string_view to_string(Readout r) {
  return r == Readout::kFinalStates ? "final_states" : "mean";
}

Readout parse_readout(std::string_view s) {
  if (s == "final_states") return Readout::kFinalStates;
  if (s == "mean") return Readout::kMeanOverTime;
  throw ParseError(kModule, "unknown readout '" + std::string(s) + "'");
}

std::size_t EncoderConfig::embed_dim() const {
  if (kind == EncoderKind::kCnn) return cnn_filters.empty() ? 0 : cnn_filters.back();
  return 2 * gru_hidden;
}

void EncoderConfig::validate() const {
  if (input_dim == 0) throw ContractError(kModule, "input_dim must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ContractError(kModule, "dropout must lie in [0, 1)");
  if (kind == EncoderKind::kCnn) {
    if (cnn_filters.empty() || cnn_filters.size() != cnn_widths.size())
      throw ContractError(kModule, "cnn_filters and cnn_widths must be nonempty and equally long");
    for (std::size_t v : cnn_filters)
      if (v == 0) throw ContractError(kModule, "filter counts must be >= 1");
    for (std::size_t v : cnn_widths)
      if (v == 0) throw ContractError(kModule, "kernel widths must be >= 1");
  } else {
    if (gru_layers == 0 || gru_hidden == 0)
      throw ContractError(kModule, "gru_layers and gru_hidden must be >= 1");
  }
}

template <typename T>
void AcousticEncoder<T>::check_inputs(std::span<const corpus::FrameMatrix* const> batch) const {
  if (batch.empty()) throw ContractError(kModule, "empty batch");
  for (const auto* f : batch) {
    if (f->cols != cfg_.input_dim)
      throw ShapeError(kModule, "frame dimension " + std::to_string(f->cols) + ", expected " +
                                    std::to_string(cfg_.input_dim));
    if (f->rows == 0) throw ShapeError(kModule, "segment with zero frames");
  }
}

template <typename T>
ad::Packed<T> pack_frames(std::span<const corpus::FrameMatrix* const> batch) {
  ad::Packed<T> p;
  std::size_t rows = 0;
  const std::size_t cols = batch.empty() ? 0 : batch[0]->cols;
  for (const auto* f : batch) rows += f->rows;
  std::vector<T> data;
  data.reserve(rows * cols);
  for (const auto* f : batch) {
    for (float v : f->data) data.push_back(static_cast<T>(v));
    p.lengths.push_back(f->rows);
  }
  p.data = ad::Tensor<T>::from({rows, cols}, std::move(data));
  return p;
}

template <typename T>
ad::Tensor<T> gru_cell(const ad::Tensor<T>& gi, const ad::Tensor<T>& h,
                       const ad::Tensor<T>& w_hh, const ad::Tensor<T>& b_hh) {
  const std::size_t hd = h.cols();
  const ad::Tensor<T> gh = ad::add_bias(ad::matmul(h, w_hh), b_hh);
  const auto r = ad::sigmoid(ad::add(ad::slice_cols(gi, 0, hd), ad::slice_cols(gh, 0, hd)));
  const auto z = ad::sigmoid(ad::add(ad::slice_cols(gi, hd, hd), ad::slice_cols(gh, hd, hd)));
  const auto n = ad::tanh(
      ad::add(ad::slice_cols(gi, 2 * hd, hd), ad::mul(r, ad::slice_cols(gh, 2 * hd, hd))));
  // h' = (1 - z) * n + z * h = n + z * (h - n)
  return ad::add(n, ad::mul(z, ad::sub(h, n)));
}

template <typename T>
std::unique_ptr<AcousticEncoder<T>> make_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.kind == EncoderKind::kCnn) return std::make_unique<CnnEncoder<T>>(cfg, rng);
  return std::make_unique<BgruEncoder<T>>(cfg, rng);
}

template <typename T>
std::size_t cnn_padded_inputs(const AcousticEncoder<T>& enc) {
  const auto* cnn = dynamic_cast<const CnnEncoder<T>*>(&enc);
  return cnn ? cnn->padded_inputs() : 0;
}

template <typename T>
std::vector<T> embed(AcousticEncoder<T>& enc, const corpus::FrameMatrix& frames, ad::Mode mode) {
  ad::NoGradGuard no_grad;
  ad::DropoutStream stream(0);
  const corpus::FrameMatrix* one[1] = {&frames};
  const auto out = enc.forward(one, mode, stream);
  return std::vector<T>(out.data().begin(), out.data().end());
}

template <typename T>
std::vector<T> embed_batch(AcousticEncoder<T>& enc,
                           std::span<const corpus::FrameMatrix* const> segments,
                           std::size_t chunk, std::size_t threads) {
  if (segments.empty()) throw ContractError(kModule, "embed_batch on an empty list");
  if (chunk == 0) chunk = 1;
  const std::size_t d = enc.embed_dim();
  std::vector<T> out(segments.size() * d);
  const std::size_t n_chunks = (segments.size() + chunk - 1) / chunk;
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    ad::NoGradGuard no_grad;
    ad::DropoutStream stream(0);
    const std::size_t begin = c * chunk;
    const std::size_t count = std::min(chunk, segments.size() - begin);
    const auto emb = enc.forward(segments.subspan(begin, count), ad::Mode::kEval, stream);
    std::copy(emb.data().begin(), emb.data().end(), out.begin() + static_cast<long>(begin * d));
  });
  return out;
}

#define AWE_INSTANTIATE_ENCODERS(T)                                                        \
  template class AcousticEncoder<T>;                                                       \
  template std::unique_ptr<AcousticEncoder<T>> make_encoder<T>(const EncoderConfig&, Rng&); \
  template std::vector<T> embed<T>(AcousticEncoder<T>&, const corpus::FrameMatrix&, ad::Mode); \
  template std::vector<T> embed_batch<T>(AcousticEncoder<T>&,                              \
                                         std::span<const corpus::FrameMatrix* const>,     \
                                         std::size_t, std::size_t);                        \
  template ad::Packed<T> pack_frames<T>(std::span<const corpus::FrameMatrix* const>);      \
  template ad::Tensor<T> gru_cell<T>(const ad::Tensor<T>&, const ad::Tensor<T>&,           \
                                     const ad::Tensor<T>&, const ad::Tensor<T>&);          \
  template std::size_t cnn_padded_inputs<T>(const AcousticEncoder<T>&);

AWE_INSTANTIATE_ENCODERS(float)
AWE_INSTANTIATE_ENCODERS(double)

}  // namespace awe::encoders
