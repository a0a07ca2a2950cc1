#include "awe/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "awe/encoders.h"
#include "awe/error.h"
#include "awe/objectives.h"
#include "awe/ops.h"
#include "awe/util.h"

namespace awe::ad {

namespace {

using T = double;
using Inputs = std::vector<Tensor<T>>;

Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(s.size());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<T>::from(s, std::move(v));
}

// Entries bounded away from zero, for ops with a kink there.
Tensor<T> off_kink_tensor(Shape s, Rng& rng) {
  std::vector<T> v(s.size());
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return Tensor<T>::from(s, std::move(v));
}

// Reduces any output to a scalar with fixed random weights so every output
// entry contributes a distinct gradient.
struct Projector {
  std::map<std::pair<std::size_t, std::size_t>, Tensor<T>> weights;
  std::uint64_t seed;
  Tensor<T> operator()(const Tensor<T>& out) {
    const auto key = std::make_pair(out.rows(), out.cols());
    auto it = weights.find(key);
    if (it == weights.end()) {
      Rng rng(seed ^ (key.first * 1315423911ULL + key.second));
      it = weights.emplace(key, random_tensor(out.shape(), rng)).first;
    }
    return sum(mul(out, it->second));
  }
};

corpus::FrameMatrix random_frames(std::size_t rows, std::size_t cols, Rng& rng) {
  corpus::FrameMatrix f;
  f.rows = rows;
  f.cols = cols;
  f.data.resize(rows * cols);
  for (auto& x : f.data) x = static_cast<float>(rng.normal());
  return f;
}

struct Case {
  ScalarFn f;
  Inputs inputs;
};

class Suite {
 public:
  Suite(std::uint64_t seed, const GradCheckOptions& opts) : rng_(seed), opts_(opts) {}

  // Runs `make` for three shapes and folds the results under one name.
  template <typename Make>
  void add(const std::string& name, Make make) {
    GradCheckResult total{name, 0.0, 0, 0, true};
    for (std::size_t variant = 0; variant < 3; ++variant) {
      ++total.n_shapes;
      Case c = make(variant, rng_);
      const auto r = check_gradients(name, c.f, std::move(c.inputs), opts_);
      total.max_rel_error = std::max(total.max_rel_error, r.max_rel_error);
      total.n_checked += r.n_checked;
      total.passed = total.passed && r.passed;
    }
    results_.push_back(total);
  }

  std::vector<GradCheckResult> results() && { return std::move(results_); }

 private:
  Rng rng_;
  GradCheckOptions opts_;
  std::vector<GradCheckResult> results_;
};

std::size_t dim_for(std::size_t variant, std::size_t base) { return base + 2 * variant; }

template <typename Op>
auto unary(Op op, bool off_kink = false) {
  return [op, off_kink](std::size_t v, Rng& rng) {
    const Shape s{dim_for(v, 2), dim_for(v, 3)};
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    Tensor<T> a = off_kink ? off_kink_tensor(s, rng) : random_tensor(s, rng, -2.0, 2.0);
    return Case{[op, proj](const Inputs& in) { return (*proj)(op(in[0])); }, {a}};
  };
}

template <typename Op>
auto binary(Op op) {
  return [op](std::size_t v, Rng& rng) {
    const Shape s{dim_for(v, 2), dim_for(v, 3)};
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    return Case{[op, proj](const Inputs& in) { return (*proj)(op(in[0], in[1])); },
                {random_tensor(s, rng), random_tensor(s, rng)}};
  };
}

encoders::EncoderConfig tiny_cnn() {
  encoders::EncoderConfig c;
  c.kind = encoders::EncoderKind::kCnn;
  c.input_dim = 3;
  c.cnn_filters = {4, 3};
  c.cnn_widths = {2, 3};
  c.dropout = 0.25;
  return c;
}

encoders::EncoderConfig tiny_bgru(encoders::Readout readout) {
  encoders::EncoderConfig c;
  c.kind = encoders::EncoderKind::kBgru;
  c.input_dim = 3;
  c.gru_layers = 2;
  c.gru_hidden = 3;
  c.dropout = 0.25;
  c.readout = readout;
  return c;
}

// Sequences of varied length, including one shorter than every kernel.
std::vector<corpus::FrameMatrix> tiny_batch(std::size_t variant, Rng& rng) {
  std::vector<corpus::FrameMatrix> out;
  const std::size_t lengths[] = {1, 4, 6, 3};
  for (std::size_t i = 0; i < 2 + variant; ++i) out.push_back(random_frames(lengths[i], 3, rng));
  return out;
}

// Wraps an encoder so its parameters are the checked inputs. Dropout masks
// come from a fresh stream on every call.
struct EncoderCase {
  std::shared_ptr<encoders::AcousticEncoder<T>> enc;
  std::shared_ptr<std::vector<corpus::FrameMatrix>> frames;

  Tensor<T> forward() const {
    std::vector<const corpus::FrameMatrix*> ptrs;
    for (const auto& f : *frames) ptrs.push_back(&f);
    DropoutStream stream(99);
    return enc->forward(ptrs, Mode::kTrain, stream);
  }
  Inputs params() const {
    Inputs in;
    for (auto& p : enc->parameters()) in.push_back(p.tensor);
    return in;
  }
};

EncoderCase make_encoder_case(const encoders::EncoderConfig& cfg, std::size_t variant, Rng& rng) {
  EncoderCase c;
  c.enc = encoders::make_encoder<T>(cfg, rng);
  c.frames = std::make_shared<std::vector<corpus::FrameMatrix>>(tiny_batch(variant, rng));
  return c;
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, const ScalarFn& f,
                                std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& opts) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor<T> out = f(inputs);
  if (out.size() != 1) throw ContractError("gradcheck", name + ": function is not scalar");
  out.backward();

  GradCheckResult r{name, 0.0, 0, 1, true};
  NoGradGuard no_grad;
  for (auto& t : inputs) {
    const std::vector<T> analytic = t.has_grad() ? std::vector<T>(t.grad().begin(), t.grad().end())
                                                 : std::vector<T>(t.size(), T(0));
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + opts.eps;
      const T up = f(inputs).item();
      values[i] = saved - opts.eps;
      const T down = f(inputs).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      if (!std::isfinite(rel)) r.max_rel_error = std::numeric_limits<double>::infinity();
      else r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.n_checked;
    }
  }
  r.passed = r.max_rel_error < opts.tolerance;
  return r;
}

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opts) {
  Suite s(seed, opts);

  s.add("matmul", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    const std::size_t m = 2 + v, k = 3 + v, n = 2 + 2 * v;
    return Case{[proj](const Inputs& in) { return (*proj)(matmul(in[0], in[1])); },
                {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}};
  });
  s.add("add", binary([](const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }));
  s.add("sub", binary([](const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }));
  s.add("mul", binary([](const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }));
  s.add("add_bias", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    const std::size_t m = 2 + v, n = 3 + v;
    return Case{[proj](const Inputs& in) { return (*proj)(add_bias(in[0], in[1])); },
                {random_tensor({m, n}, rng), random_tensor({1, n}, rng)}};
  });
  s.add("scale", unary([](const Tensor<T>& a) { return scale(a, T(-1.7)); }));
  s.add("add_scalar", unary([](const Tensor<T>& a) { return add_scalar(a, T(0.3)); }));
  s.add("relu", unary([](const Tensor<T>& a) { return relu(a); }, true));
  s.add("sigmoid", unary([](const Tensor<T>& a) { return sigmoid(a); }));
  s.add("tanh", unary([](const Tensor<T>& a) { return tanh(a); }));
  s.add("log_softmax", unary([](const Tensor<T>& a) { return log_softmax(a); }));
  s.add("dropout", unary([](const Tensor<T>& a) {
          DropoutStream stream(17);
          return dropout(a, 0.3, Mode::kTrain, stream);
        }));
  s.add("batch_norm_train", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    const std::size_t m = 3 + v, n = 2 + v;
    return Case{[proj, n](const Inputs& in) {
                  BatchNormStats<T> stats(n);
                  return (*proj)(batch_norm(in[0], in[1], in[2], stats, Mode::kTrain));
                },
                {random_tensor({m, n}, rng, -2, 2), random_tensor({1, n}, rng, 0.5, 1.5),
                 random_tensor({1, n}, rng)}};
  });
  s.add("batch_norm_eval", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    const std::size_t m = 3 + v, n = 2 + v;
    auto stats = std::make_shared<BatchNormStats<T>>(n);
    for (std::size_t j = 0; j < n; ++j) {
      stats->running_mean[j] = rng.uniform(-1, 1);
      stats->running_var[j] = rng.uniform(0.5, 2);
    }
    return Case{[proj, stats](const Inputs& in) {
                  return (*proj)(batch_norm(in[0], in[1], in[2], *stats, Mode::kEval));
                },
                {random_tensor({m, n}, rng), random_tensor({1, n}, rng, 0.5, 1.5),
                 random_tensor({1, n}, rng)}};
  });
  s.add("concat_cols", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    const std::size_t m = 2 + v;
    return Case{[proj](const Inputs& in) { return (*proj)(concat_cols<T>(in)); },
                {random_tensor({m, 2}, rng), random_tensor({m, 1 + v}, rng),
                 random_tensor({m, 3}, rng)}};
  });
  s.add("concat_rows", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    const std::size_t n = 2 + v;
    return Case{[proj](const Inputs& in) { return (*proj)(concat_rows<T>(in)); },
                {random_tensor({1, n}, rng), random_tensor({2 + v, n}, rng)}};
  });
  s.add("slice_cols", unary([](const Tensor<T>& a) { return slice_cols(a, 1, a.cols() - 2); }));
  s.add("slice_rows", unary([](const Tensor<T>& a) { return slice_rows(a, 1, a.rows() - 1); }));
  s.add("gather_rows", unary([](const Tensor<T>& a) {
          const std::vector<std::size_t> idx{a.rows() - 1, 0, a.rows() - 1, 1};
          return gather_rows(a, idx);
        }));
  s.add("select_rows", binary([](const Tensor<T>& a, const Tensor<T>& b) {
          std::vector<std::uint8_t> take(a.rows());
          for (std::size_t i = 0; i < take.size(); ++i) take[i] = i % 2;
          return select_rows<T>(take, a, b);
        }));
  s.add("sum", unary([](const Tensor<T>& a) { return sum(a); }));
  s.add("mean", unary([](const Tensor<T>& a) { return mean(a); }));
  s.add("row_sum", unary([](const Tensor<T>& a) { return row_sum(a); }));
  s.add("pick", unary([](const Tensor<T>& a) {
          std::vector<std::size_t> idx(a.rows());
          for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = (2 * i + 1) % a.cols();
          return pick(a, idx);
        }));
  s.add("bce_with_logits", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    const Shape sh{2 + v, 3 + v};
    auto y = std::make_shared<std::vector<T>>(sh.size());
    for (auto& t : *y) t = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return Case{[proj, y](const Inputs& in) { return (*proj)(bce_with_logits<T>(in[0], *y)); },
                {random_tensor(sh, rng, -3, 3)}};
  });
  s.add("cosine_rows", binary([](const Tensor<T>& a, const Tensor<T>& b) {
          return cosine_rows(a, b);
        }));
  s.add("mean_over_time", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    std::vector<std::size_t> lengths{1, 3 + v, 2};
    const std::size_t total = 6 + v;
    return Case{[proj, lengths](const Inputs& in) {
                  return (*proj)(mean_over_time(Packed<T>{in[0], lengths}));
                },
                {random_tensor({total, 2 + v}, rng)}};
  });
  s.add("unfold", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    std::vector<std::size_t> lengths{1, 4 + v, 2};
    const std::size_t total = 7 + v;
    return Case{[proj, lengths](const Inputs& in) {
                  return (*proj)(unfold(Packed<T>{in[0], lengths}, 3).data);
                },
                {random_tensor({total, 2}, rng)}};
  });
  s.add("conv1d", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    std::vector<std::size_t> lengths{2, 5 + v};
    const std::size_t total = 7 + v, cin = 2, cout = 2 + v, width = 3;
    return Case{[proj, lengths, width](const Inputs& in) {
                  return (*proj)(conv1d(Packed<T>{in[0], lengths}, in[1], in[2], width).data);
                },
                {random_tensor({total, cin}, rng), random_tensor({width * cin, cout}, rng),
                 random_tensor({1, cout}, rng)}};
  });
  s.add("gru_cell", [](std::size_t v, Rng& rng) {
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    const std::size_t b = 2 + v, h = 2 + v;
    return Case{[proj](const Inputs& in) {
                  return (*proj)(encoders::gru_cell(in[0], in[1], in[2], in[3]));
                },
                {random_tensor({b, 3 * h}, rng), random_tensor({b, h}, rng),
                 random_tensor({h, 3 * h}, rng), random_tensor({1, 3 * h}, rng)}};
  });

  s.add("detect_loss", [](std::size_t v, Rng& rng) {
    const std::size_t b = 2 + v, d = 3 + v, n = 4 + v;
    auto head = std::make_shared<objectives::DetectHead<T>>(d, n, rng);
    auto y = std::make_shared<std::vector<T>>(b * n);
    for (auto& t : *y) t = rng.uniform() < 0.4 ? 1.0 : 0.0;
    Inputs in{random_tensor({b, d}, rng)};
    for (auto& p : head->parameters()) in.push_back(p.tensor);
    return Case{[head, y](const Inputs& x) { return objectives::detect_loss<T>(x[0], *y, *head); },
                in};
  });
  s.add("word2phones_loss", [](std::size_t v, Rng& rng) {
    const std::size_t d = 3;
    objectives::DecoderConfig dc{3, 2};
    auto dec = std::make_shared<objectives::PhoneDecoder<T>>(
        d, std::vector<std::string>{"a", "b", "c"}, dc, rng);
    auto targets = std::make_shared<std::vector<std::vector<std::size_t>>>();
    for (std::size_t i = 0; i < 2 + v; ++i) {
      std::vector<std::size_t> t(1 + (i + v) % 3);
      for (auto& id : t) id = rng.index(3);
      targets->push_back(t);
    }
    Inputs in{random_tensor({targets->size(), d}, rng)};
    for (auto& p : dec->parameters()) in.push_back(p.tensor);
    return Case{[dec, targets](const Inputs& x) {
                  return objectives::word2phones_loss<T>(x[0], *targets, *dec);
                },
                in};
  });
  s.add("triplet_loss", [](std::size_t v, Rng& rng) {
    const Shape sh{2 + v, 3 + v};
    objectives::TripletConfig cfg;
    cfg.margin = 1.2;  // keeps every hinge active, away from its kink
    cfg.scaled_distance = v != 1;
    if (!cfg.scaled_distance) cfg.margin = 2.5;
    return Case{[cfg](const Inputs& x) { return objectives::triplet_loss<T>(x[0], x[1], x[2], cfg); },
                {random_tensor(sh, rng), random_tensor(sh, rng), random_tensor(sh, rng)}};
  });

  s.add("cnn_encoder", [](std::size_t v, Rng& rng) {
    auto c = make_encoder_case(tiny_cnn(), v, rng);
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    return Case{[c, proj](const Inputs&) { return (*proj)(c.forward()); }, c.params()};
  });
  s.add("bgru_encoder", [](std::size_t v, Rng& rng) {
    auto c = make_encoder_case(tiny_bgru(encoders::Readout::kFinalStates), v, rng);
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    return Case{[c, proj](const Inputs&) { return (*proj)(c.forward()); }, c.params()};
  });
  s.add("bgru_encoder_mean_readout", [](std::size_t v, Rng& rng) {
    auto c = make_encoder_case(tiny_bgru(encoders::Readout::kMeanOverTime), v, rng);
    auto proj = std::make_shared<Projector>(Projector{{}, rng.next()});
    return Case{[c, proj](const Inputs&) { return (*proj)(c.forward()); }, c.params()};
  });
  s.add("detect_loss_through_cnn", [](std::size_t v, Rng& rng) {
    auto c = make_encoder_case(tiny_cnn(), v, rng);
    const std::size_t n = 5;
    auto head = std::make_shared<objectives::DetectHead<T>>(c.enc->embed_dim(), n, rng);
    auto y = std::make_shared<std::vector<T>>(c.frames->size() * n);
    for (auto& t : *y) t = rng.uniform() < 0.4 ? 1.0 : 0.0;
    Inputs in = c.params();
    for (auto& p : head->parameters()) in.push_back(p.tensor);
    return Case{[c, head, y](const Inputs&) {
                  return objectives::detect_loss<T>(c.forward(), *y, *head);
                },
                in};
  });
  s.add("word2phones_loss_through_bgru", [](std::size_t v, Rng& rng) {
    auto c = make_encoder_case(tiny_bgru(encoders::Readout::kFinalStates), v, rng);
    objectives::DecoderConfig dc{3, 2};
    auto dec = std::make_shared<objectives::PhoneDecoder<T>>(
        c.enc->embed_dim(), std::vector<std::string>{"a", "b"}, dc, rng);
    auto targets = std::make_shared<std::vector<std::vector<std::size_t>>>();
    for (std::size_t i = 0; i < c.frames->size(); ++i)
      targets->push_back(std::vector<std::size_t>(1 + i % 2, i % 2));
    Inputs in = c.params();
    for (auto& p : dec->parameters()) in.push_back(p.tensor);
    return Case{[c, dec, targets](const Inputs&) {
                  return objectives::word2phones_loss<T>(c.forward(), *targets, *dec);
                },
                in};
  });
  s.add("triplet_loss_through_bgru", [](std::size_t v, Rng& rng) {
    auto c = make_encoder_case(tiny_bgru(encoders::Readout::kFinalStates), v + 1, rng);
    objectives::TripletConfig cfg;
    cfg.margin = 1.2;
    return Case{[c, cfg](const Inputs&) {
                  const auto e = c.forward();
                  const std::vector<std::size_t> a{0, 1}, p{1, 2}, n{2, 0};
                  return objectives::triplet_loss<T>(gather_rows(e, a), gather_rows(e, p),
                                                     gather_rows(e, n), cfg);
                },
                c.params()};
  });
  return std::move(s).results();
}

}  // namespace awe::ad
