#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "awe/encoders.h"
#include "awe/error.h"

using namespace awe;
using namespace awe::encoders;
using corpus::FrameMatrix;

namespace {

FrameMatrix random_frames(std::size_t t, std::size_t dim, Rng& rng) {
  FrameMatrix f{t, dim, std::vector<float>(t * dim)};
  for (auto& x : f.data) x = static_cast<float>(rng.normal());
  return f;
}

EncoderConfig small_cnn() {
  EncoderConfig c;
  c.kind = EncoderKind::kCnn;
  c.input_dim = 5;
  c.cnn_filters = {6, 4};
  c.cnn_widths = {3, 5};
  c.dropout = 0.2;
  return c;
}

EncoderConfig small_bgru(std::size_t layers = 2, Readout readout = Readout::kFinalStates) {
  EncoderConfig c;
  c.kind = EncoderKind::kBgru;
  c.input_dim = 5;
  c.gru_layers = layers;
  c.gru_hidden = 4;
  c.dropout = 0.3;
  c.readout = readout;
  return c;
}

std::vector<const FrameMatrix*> ptrs(const std::vector<FrameMatrix>& v) {
  std::vector<const FrameMatrix*> out;
  for (const auto& f : v) out.push_back(&f);
  return out;
}

// Plain per-timestep GRU with PyTorch gate conventions, one sequence at a time.
using Vec = std::vector<double>;

struct RefGru {
  const ad::Tensor<double>*w_ih, *w_hh, *b_ih, *b_hh;
  std::size_t hidden;

  Vec step(const Vec& x, const Vec& h) const {
    const std::size_t H = hidden;
    auto lin = [&](const ad::Tensor<double>& w, const ad::Tensor<double>& b, const Vec& v,
                   std::size_t gate, std::size_t j) {
      double s = b.at(0, gate * H + j);
      for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * w.at(i, gate * H + j);
      return s;
    };
    auto sig = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
    Vec out(H);
    for (std::size_t j = 0; j < H; ++j) {
      const double r = sig(lin(*w_ih, *b_ih, x, 0, j) + lin(*w_hh, *b_hh, h, 0, j));
      const double z = sig(lin(*w_ih, *b_ih, x, 1, j) + lin(*w_hh, *b_hh, h, 1, j));
      const double n = std::tanh(lin(*w_ih, *b_ih, x, 2, j) + r * lin(*w_hh, *b_hh, h, 2, j));
      out[j] = (1 - z) * n + z * h[j];
    }
    return out;
  }
};

Vec reference_bgru(AcousticEncoder<double>& enc, const FrameMatrix& f) {
  const auto& cfg = enc.config();
  std::map<std::string, ad::Tensor<double>> p;
  for (auto& nt : enc.parameters()) p[nt.name] = nt.tensor;
  std::vector<Vec> seq(f.rows);
  for (std::size_t t = 0; t < f.rows; ++t) seq[t].assign(f.row(t), f.row(t) + f.cols);
  Vec fwd_last, bwd_first;
  for (std::size_t l = 0; l < cfg.gru_layers; ++l) {
    auto gru = [&](const char* dir) {
      const std::string k = "gru." + std::to_string(l) + "." + dir + ".";
      return RefGru{&p[k + "w_ih"], &p[k + "w_hh"], &p[k + "b_ih"], &p[k + "b_hh"], cfg.gru_hidden};
    };
    const RefGru fwd = gru("fwd"), bwd = gru("bwd");
    std::vector<Vec> fo(f.rows), bo(f.rows);
    Vec h(cfg.gru_hidden, 0.0);
    for (std::size_t t = 0; t < f.rows; ++t) fo[t] = h = fwd.step(seq[t], h);
    h.assign(cfg.gru_hidden, 0.0);
    for (std::size_t t = f.rows; t-- > 0;) bo[t] = h = bwd.step(seq[t], h);
    for (std::size_t t = 0; t < f.rows; ++t) {
      seq[t] = fo[t];
      seq[t].insert(seq[t].end(), bo[t].begin(), bo[t].end());
    }
    fwd_last = fo.back();
    bwd_first = bo.front();
  }
  if (cfg.readout == Readout::kFinalStates) {
    fwd_last.insert(fwd_last.end(), bwd_first.begin(), bwd_first.end());
    return fwd_last;
  }
  Vec mean(seq[0].size(), 0.0);
  for (const auto& v : seq)
    for (std::size_t i = 0; i < v.size(); ++i) mean[i] += v[i] / static_cast<double>(seq.size());
  return mean;
}

}  // namespace

TEST(Encoders, FullSizeShapes) {
  Rng rng(1);
  EncoderConfig bgru;
  EncoderConfig cnn;
  cnn.kind = EncoderKind::kCnn;
  EXPECT_EQ(bgru.embed_dim(), 1024u);
  EXPECT_EQ(cnn.embed_dim(), 1024u);
  auto enc = make_encoder<float>(bgru, rng);
  Rng data(2);
  const auto f = random_frames(7, corpus::kFrameDim, data);
  const auto e = embed(*enc, f);
  EXPECT_EQ(e.size(), 1024u);
}

TEST(Encoders, LengthOneBgruIsFinite) {
  Rng rng(3);
  auto enc = make_encoder<double>(small_bgru(), rng);
  Rng data(4);
  const auto f = random_frames(1, 5, data);
  const auto e = embed(*enc, f);
  for (double v : e) EXPECT_TRUE(std::isfinite(v));
  const auto ref = reference_bgru(*enc, f);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(e[i], ref[i], 1e-12);
}

TEST(Encoders, BgruMatchesPerTimestepReference) {
  for (Readout readout : {Readout::kFinalStates, Readout::kMeanOverTime})
    for (std::size_t layers : {1u, 2u}) {
      Rng rng(5 + layers);
      auto enc = make_encoder<double>(small_bgru(layers, readout), rng);
      Rng data(6);
      std::vector<FrameMatrix> batch;
      for (std::size_t t : {3u, 8u, 1u, 5u}) batch.push_back(random_frames(t, 5, data));
      ad::DropoutStream s;
      const auto p = ptrs(batch);
      const auto out = enc->forward(p, ad::Mode::kEval, s);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto ref = reference_bgru(*enc, batch[b]);
        for (std::size_t i = 0; i < ref.size(); ++i)
          EXPECT_NEAR(out.at(b, i), ref[i], 1e-6) << "layers " << layers << " row " << b;
      }
    }
}

TEST(Encoders, GruCellMatchesReference) {
  Rng rng(8);
  const std::size_t B = 3, D = 4, H = 5;
  auto rnd = [&](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = rng.normal();
    return ad::Tensor<double>::from({r, c}, v);
  };
  auto x = rnd(B, D), h = rnd(B, H), w_ih = rnd(D, 3 * H), w_hh = rnd(H, 3 * H);
  auto b_ih = rnd(1, 3 * H), b_hh = rnd(1, 3 * H);
  auto gi = ad::add_bias(ad::matmul(x, w_ih), b_ih);
  auto out = gru_cell(gi, h, w_hh, b_hh);
  const RefGru ref{&w_ih, &w_hh, &b_ih, &b_hh, H};
  for (std::size_t b = 0; b < B; ++b) {
    Vec xv(x.data().begin() + b * D, x.data().begin() + (b + 1) * D);
    Vec hv(h.data().begin() + b * H, h.data().begin() + (b + 1) * H);
    const auto r = ref.step(xv, hv);
    for (std::size_t j = 0; j < H; ++j) EXPECT_NEAR(out.at(b, j), r[j], 1e-12);
  }
}

class BatchInvariance : public ::testing::TestWithParam<EncoderKind> {};

TEST_P(BatchInvariance, MixedLengthBatchEqualsOneByOne) {
  Rng rng(9);
  auto cfg = GetParam() == EncoderKind::kCnn ? small_cnn() : small_bgru();
  auto enc = make_encoder<float>(cfg, rng);
  Rng data(10);
  std::vector<FrameMatrix> segs;
  for (std::size_t t : {2u, 9u, 4u, 1u, 12u, 6u, 6u}) segs.push_back(random_frames(t, 5, data));
  const auto p = ptrs(segs);
  const auto all = embed_batch(*enc, std::span<const FrameMatrix* const>(p), 64);
  const std::size_t d = enc->embed_dim();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto one = embed(*enc, segs[i]);
    for (std::size_t k = 0; k < d; ++k) ASSERT_EQ(all[i * d + k], one[k]) << "segment " << i;
  }
  // Chunking and threads do not matter.
  EXPECT_EQ(embed_batch(*enc, std::span<const FrameMatrix* const>(p), 3, 2), all);
  // A shuffled batch permutes the rows.
  std::vector<const FrameMatrix*> rev(p.rbegin(), p.rend());
  const auto back = embed_batch(*enc, std::span<const FrameMatrix* const>(rev), 64);
  for (std::size_t i = 0; i < segs.size(); ++i)
    for (std::size_t k = 0; k < d; ++k)
      ASSERT_EQ(back[(segs.size() - 1 - i) * d + k], all[i * d + k]);
}

INSTANTIATE_TEST_SUITE_P(Kinds, BatchInvariance,
                         ::testing::Values(EncoderKind::kCnn, EncoderKind::kBgru),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Encoders, EvalEmbedIsPure) {
  Rng rng(11);
  auto enc = make_encoder<float>(small_cnn(), rng);
  Rng data(12);
  const auto f = random_frames(10, 5, data);
  EXPECT_EQ(embed(*enc, f), embed(*enc, f));
}

TEST(Encoders, TrainModeDropoutFollowsTheStream) {
  Rng rng(13);
  auto enc = make_encoder<float>(small_bgru(), rng);
  Rng data(14);
  std::vector<FrameMatrix> segs{random_frames(5, 5, data)};
  const auto p = ptrs(segs);
  ad::DropoutStream a(7), b(7);
  const auto x = enc->forward(p, ad::Mode::kTrain, a);
  const auto y = enc->forward(p, ad::Mode::kTrain, b);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  const auto z = enc->forward(p, ad::Mode::kTrain, a);
  EXPECT_FALSE(std::equal(x.data().begin(), x.data().end(), z.data().begin()));
}

TEST(Encoders, ShortInputsAreCountedAsPadded) {
  Rng rng(15);
  auto enc = make_encoder<float>(small_cnn(), rng);
  Rng data(16);
  // Widths are 3 then 5; after the first layer a length-6 input has 4 rows.
  std::vector<FrameMatrix> segs{random_frames(2, 5, data), random_frames(6, 5, data),
                                random_frames(20, 5, data)};
  const auto p = ptrs(segs);
  ad::DropoutStream s;
  const auto out = enc->forward(p, ad::Mode::kEval, s);
  EXPECT_EQ(cnn_padded_inputs(*enc), 2u);
  for (float v : out.data()) EXPECT_TRUE(std::isfinite(v));
  Rng rng2(15);
  auto bgru = make_encoder<float>(small_bgru(), rng2);
  EXPECT_EQ(cnn_padded_inputs(*bgru), 0u);
}

TEST(Encoders, WrongFrameWidthIsAShapeError) {
  Rng rng(17);
  auto enc = make_encoder<float>(small_cnn(), rng);
  Rng data(18);
  const auto f = random_frames(4, 7, data);
  EXPECT_THROW(embed(*enc, f), ShapeError);
}

TEST(Encoders, InvalidConfigIsRejected) {
  auto c = small_cnn();
  c.cnn_widths = {3};
  Rng rng(1);
  EXPECT_THROW(make_encoder<float>(c, rng), ContractError);
  auto g = small_bgru();
  g.dropout = 1.0;
  EXPECT_THROW(make_encoder<float>(g, rng), ContractError);
}

TEST(Encoders, CnnGoldenEmbedding) {
  // Recorded once from this configuration; regenerate with AWE_WRITE_GOLDEN=1.
  const std::string path = std::string(AWE_TEST_DIR) + "/golden/cnn_embedding.txt";
  Rng rng(2024);
  auto enc = make_encoder<float>(small_cnn(), rng);
  Rng data(77);
  const auto e = embed(*enc, random_frames(12, 5, data));
  if (std::getenv("AWE_WRITE_GOLDEN")) {
    std::ofstream out(path);
    out.precision(9);
    for (float v : e) out << v << "\n";
    GTEST_SKIP() << "golden written";
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << path;
  std::vector<double> golden;
  for (double v; in >> v;) golden.push_back(v);
  ASSERT_EQ(golden.size(), e.size());
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(e[i], golden[i], 1e-5);
}
