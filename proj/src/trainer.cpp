#include "awe/trainer.h"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <json.hpp>
#include <limits>
#include <map>
#include <sstream>

#include "awe/adam.h"
#include "awe/error.h"
#include "awe/util.h"

namespace awe::train {

namespace {

constexpr const char* kModule = "trainer";
// Salts separating the parameter-init, data-order and dropout streams.
constexpr std::uint64_t kOrderSalt = 0x6f72646572ULL;
constexpr std::uint64_t kDropoutSalt = 0x64726f70ULL;

std::vector<const corpus::FrameMatrix*> frames_of(std::span<const corpus::WordSegment> segs,
                                                  std::span<const std::size_t> idx) {
  std::vector<const corpus::FrameMatrix*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&segs[i].frames);
  return out;
}

void copy_into(std::span<float> dst, const StoredTensor& src, std::size_t rows, std::size_t cols,
               const std::string& source) {
  if (src.rows != rows || src.cols != cols)
    throw ParseError("checkpoint", source + ": field 'tensors." + src.name + "': shape " +
                                       std::to_string(src.rows) + "x" + std::to_string(src.cols) +
                                       ", model expects " + std::to_string(rows) + "x" +
                                       std::to_string(cols));
  std::copy(src.values.begin(), src.values.end(), dst.begin());
}

const StoredTensor& require(const Checkpoint& ckpt, const std::string& name) {
  const auto* t = ckpt.find(name);
  if (!t) throw ParseError("checkpoint", "field 'tensors." + name + "': missing");
  return *t;
}

void load_encoder_tensors(encoders::AcousticEncoder<float>& enc, const Checkpoint& ckpt) {
  for (auto& p : enc.parameters()) {
    const auto& t = require(ckpt, "encoder." + p.name);
    copy_into(p.tensor.mutable_data(), t, p.tensor.rows(), p.tensor.cols(), "checkpoint");
  }
  for (auto& [name, buf] : enc.buffers()) {
    const auto& t = require(ckpt, "encoder." + name);
    copy_into(*buf, t, 1, buf->size(), "checkpoint");
  }
}

std::string run_info_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["fingerprint"] = cfg.fingerprint();
  j["seed"] = cfg.seed;
  j["version"] = AWE_VERSION;
  j["config"] = nlohmann::ordered_json::parse(cfg.to_json());
  return j.dump(2) + "\n";
}

}  // namespace

PlateauScheduler::PlateauScheduler(double lr, double factor, std::size_t patience, double min_lr)
    : lr_(lr),
      factor_(factor),
      min_lr_(min_lr),
      patience_(patience),
      best_(-std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::step(double metric) {
  if (metric > best_) {
    best_ = metric;
    bad_ = 0;
    return false;
  }
  if (++bad_ < patience_) return false;
  bad_ = 0;
  const double next = std::max(lr_ * factor_, min_lr_);
  if (next >= lr_) return false;
  lr_ = next;
  ++reductions_;
  return true;
}

void PlateauScheduler::restore(double lr, double best, std::size_t bad, std::size_t reductions) {
  lr_ = lr;
  best_ = best;
  bad_ = bad;
  reductions_ = reductions;
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["val_map"] = val_map;
  j["lr"] = lr;
  j["seconds"] = seconds;
  return j.dump();
}

struct Model::Impl {
  RunConfig cfg;
  const corpus::CorpusSplit& corpus;
  std::optional<objectives::DetectHead<float>> detect;
  std::optional<objectives::PhoneDecoder<float>> decoder;
  corpus::NGramInventory inventory;
  std::vector<std::vector<float>> detect_targets;        // per train segment
  std::vector<std::vector<std::size_t>> decoder_targets;  // per train segment
  std::vector<std::size_t> type_id;                       // per train segment

  Impl(const RunConfig& c, const corpus::CorpusSplit& cs) : cfg(c), corpus(cs) {}
};

Model::Model(const RunConfig& cfg, const corpus::CorpusSplit& corpus,
             const phonology::FeatureTable& table)
    : impl_(std::make_unique<Impl>(cfg, corpus)) {
  cfg.validate();
  if (corpus.train.empty()) throw ContractError(kModule, "training split is empty");
  Rng init(cfg.seed);
  encoder_ = encoders::make_encoder<float>(cfg.encoder, init);
  auto& im = *impl_;
  const auto& train = corpus.train;

  std::map<std::string, std::size_t> types;
  for (const auto& s : train) im.type_id.push_back(types.emplace(s.word_type, types.size()).first->second);

  switch (cfg.objective) {
    case objectives::Objective::kPhoneDetect: {
      std::vector<phonology::PhoneSequence> words;
      for (const auto& s : train) words.push_back(s.phones);
      im.inventory = corpus::ngram_inventory(words, cfg.ngram_orders);
      im.detect.emplace(encoder_->embed_dim(), im.inventory.size(), init);
      for (const auto& s : train) {
        const auto y = corpus::ngram_targets(s, im.inventory, corpus::TargetMode::kStrict);
        im.detect_targets.emplace_back(y.begin(), y.end());
      }
      break;
    }
    case objectives::Objective::kWord2Phones: {
      im.decoder.emplace(encoder_->embed_dim(), table.symbols(), cfg.decoder, init);
      for (const auto& s : train) im.decoder_targets.push_back(im.decoder->encode(s.phones));
      break;
    }
    case objectives::Objective::kSiamese: {
      // Fails early when the split cannot supply triplets.
      Rng probe(0);
      objectives::build_triplet_batch(train, 2, probe);
      break;
    }
  }
}

Model::~Model() = default;

std::vector<ad::NamedTensor<float>> Model::parameters() {
  std::vector<ad::NamedTensor<float>> out;
  for (auto& p : encoder_->parameters()) out.push_back({"encoder." + p.name, p.tensor});
  std::vector<ad::NamedTensor<float>> head;
  if (impl_->detect) head = impl_->detect->parameters();
  if (impl_->decoder) head = impl_->decoder->parameters();
  for (auto& p : head) out.push_back({"head." + p.name, p.tensor});
  return out;
}

std::vector<StoredTensor> Model::export_tensors() {
  std::vector<StoredTensor> out;
  for (auto& p : parameters()) {
    const auto d = p.tensor.data();
    out.push_back({p.name, p.tensor.rows(), p.tensor.cols(), {d.begin(), d.end()}});
  }
  for (auto& [name, buf] : encoder_->buffers()) out.push_back({"encoder." + name, 1, buf->size(), *buf});
  return out;
}

void Model::import_tensors(const Checkpoint& ckpt) {
  for (auto& p : parameters())
    copy_into(p.tensor.mutable_data(), require(ckpt, p.name), p.tensor.rows(), p.tensor.cols(),
              "checkpoint");
  for (auto& [name, buf] : encoder_->buffers())
    copy_into(*buf, require(ckpt, "encoder." + name), 1, buf->size(), "checkpoint");
}

std::vector<std::vector<std::size_t>> Model::epoch_batches(Rng& rng) const {
  const auto& cfg = impl_->cfg;
  const std::size_t n = impl_->corpus.train.size();
  std::vector<std::vector<std::size_t>> batches;
  if (cfg.objective == objectives::Objective::kSiamese) {
    // Pairs are sampled inside batch_loss; here only the count matters.
    const std::size_t count = (n + cfg.batch_size - 1) / cfg.batch_size;
    batches.assign(count, {});
    return batches;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  for (std::size_t b = 0; b < n; b += cfg.batch_size)
    batches.emplace_back(order.begin() + static_cast<long>(b),
                         order.begin() + static_cast<long>(std::min(n, b + cfg.batch_size)));
  return batches;
}

ad::Tensor<float> Model::batch_loss(std::span<const std::size_t> batch, ad::DropoutStream& stream,
                                    Rng& rng) {
  auto& im = *impl_;
  const auto& train = im.corpus.train;
  switch (im.cfg.objective) {
    case objectives::Objective::kPhoneDetect: {
      const auto frames = frames_of(train, batch);
      const auto x = encoder_->forward(frames, ad::Mode::kTrain, stream);
      std::vector<float> y;
      for (std::size_t i : batch) y.insert(y.end(), im.detect_targets[i].begin(), im.detect_targets[i].end());
      return objectives::detect_loss<float>(x, y, *im.detect);
    }
    case objectives::Objective::kWord2Phones: {
      const auto frames = frames_of(train, batch);
      const auto x = encoder_->forward(frames, ad::Mode::kTrain, stream);
      std::vector<std::vector<std::size_t>> targets;
      for (std::size_t i : batch) targets.push_back(im.decoder_targets[i]);
      return objectives::word2phones_loss<float>(x, targets, *im.decoder);
    }
    case objectives::Objective::kSiamese:
      break;
  }
  const auto pairs = objectives::build_triplet_batch(train, im.cfg.batch_size, rng);
  const std::size_t b = pairs.size();
  std::vector<std::size_t> rows;
  for (const auto& p : pairs) rows.push_back(p.anchor);
  for (const auto& p : pairs) rows.push_back(p.positive);
  const auto frames = frames_of(train, rows);
  const auto e = encoder_->forward(frames, ad::Mode::kTrain, stream);

  const std::size_t dim = e.cols();
  std::vector<double> values(e.data().begin(), e.data().end());
  std::vector<std::size_t> types;
  for (std::size_t r : rows) types.push_back(im.type_id[r]);
  std::vector<std::size_t> a_idx, p_idx, n_idx;
  const auto add = [&](std::size_t a, std::size_t p) {
    const std::span<const double> all(values);
    const double d_pos = objectives::cosine_distance(all.subspan(a * dim, dim),
                                                     all.subspan(p * dim, dim),
                                                     im.cfg.triplet.scaled_distance);
    a_idx.push_back(a);
    p_idx.push_back(p);
    n_idx.push_back(objectives::sample_negative(values, dim, types, a, im.cfg.triplet.sampling,
                                                rng, im.cfg.triplet, d_pos));
  };
  for (std::size_t i = 0; i < b; ++i) add(i, b + i);
  if (im.cfg.triplet.symmetric)
    for (std::size_t i = 0; i < b; ++i) add(b + i, i);
  return objectives::triplet_loss<float>(ad::gather_rows(e, a_idx), ad::gather_rows(e, p_idx),
                                         ad::gather_rows(e, n_idx), im.cfg.triplet);
}

phonology::FeatureTable feature_table_for(const RunConfig& cfg) {
  if (cfg.features.empty()) return phonology::bundled_feature_table();
  return phonology::load_feature_table(cfg.features);
}

std::vector<float> embed_segments(encoders::AcousticEncoder<float>& enc,
                                  std::span<const corpus::WordSegment> segments,
                                  std::size_t threads) {
  std::vector<const corpus::FrameMatrix*> frames;
  for (const auto& s : segments) frames.push_back(&s.frames);
  return encoders::embed_batch<float>(enc, frames, 64, threads);
}

eval::SearchIndex build_index(std::vector<float> embeddings, std::size_t dim,
                              std::span<const corpus::WordSegment> segments) {
  std::vector<eval::SegmentMeta> meta;
  for (const auto& s : segments) meta.push_back({s.segment_id, s.word_type, s.phones});
  return eval::SearchIndex(std::move(embeddings), dim, std::move(meta));
}

std::unique_ptr<encoders::AcousticEncoder<float>> encoder_from_checkpoint(const Checkpoint& ckpt) {
  Rng unused(0);
  auto enc = encoders::make_encoder<float>(ckpt.config.encoder, unused);
  load_encoder_tensors(*enc, ckpt);
  return enc;
}

TrainResult train(const RunConfig& cfg, const corpus::CorpusSplit& corpus,
                  const phonology::FeatureTable& table, const TrainOptions& opts) {
  namespace fs = std::filesystem;
  const auto say = [&](const std::string& line) {
    if (opts.progress) opts.progress(line);
  };
  if (opts.out_dir.empty()) throw ContractError(kModule, "no output directory");
  if (corpus.valid.empty()) throw ContractError(kModule, "validation split is empty");
  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw IoError(kModule, "cannot create " + opts.out_dir + ": " + ec.message());
  const fs::path dir(opts.out_dir);

  Model model(cfg, corpus, table);
  auto params = model.parameters();
  auto adam = ad::AdamState<float>::zeros_like(params);
  PlateauScheduler sched(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
  Rng rng(cfg.seed ^ kOrderSalt);
  ad::DropoutStream stream(splitmix64(cfg.seed ^ kDropoutSalt));
  TrainState state;
  state.best_val_map = -1.0;
  std::vector<EpochRecord> log;

  if (!opts.resume_from.empty()) {
    const Checkpoint ckpt = load_checkpoint(opts.resume_from);
    if (ckpt.config.fingerprint() != cfg.fingerprint())
      throw ConflictError(kModule, "checkpoint " + opts.resume_from +
                                       " was written by a different config (" +
                                       ckpt.config.fingerprint() + " vs " + cfg.fingerprint() + ")");
    model.import_tensors(ckpt);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& m = require(ckpt, "adam.m." + params[k].name);
      const auto& v = require(ckpt, "adam.v." + params[k].name);
      copy_into(adam.m[k], m, params[k].tensor.rows(), params[k].tensor.cols(), opts.resume_from);
      copy_into(adam.v[k], v, params[k].tensor.rows(), params[k].tensor.cols(), opts.resume_from);
    }
    state = ckpt.state;
    adam.step = state.adam_step;
    rng.set_state(state.rng_state);
    stream.set_counter(state.dropout_counter);
    sched.restore(state.lr, state.best_val_map, state.plateau_bad_epochs,
                  state.plateau_reductions);
    // Keep the log lines of the epochs the checkpoint covers.
    const fs::path log_path = dir / "train_log.jsonl";
    if (fs::exists(log_path)) {
      std::istringstream in(read_file(log_path.string()));
      std::string line;
      while (log.size() < state.epoch && std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        log.push_back({j.at("epoch").get<std::size_t>(), j.at("loss").get<double>(),
                       j.at("val_map").get<double>(), j.at("lr").get<double>(),
                       j.at("seconds").get<double>()});
      }
    }
    say("resumed from " + opts.resume_from + " after epoch " + std::to_string(state.epoch));
  }

  write_file((dir / "run.json").string(), run_info_json(cfg));
  const auto write_log = [&] {
    std::string text;
    for (const auto& r : log) text += r.to_json() + "\n";
    write_file((dir / "train_log.jsonl").string(), text);
  };
  const auto snapshot = [&](const TrainState& s) {
    Checkpoint c;
    c.config = cfg;
    c.state = s;
    c.tensors = model.export_tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& p = params[k];
      c.tensors.push_back({"adam.m." + p.name, p.tensor.rows(), p.tensor.cols(), adam.m[k]});
      c.tensors.push_back({"adam.v." + p.name, p.tensor.rows(), p.tensor.cols(), adam.v[k]});
    }
    return c;
  };

  const std::size_t last = opts.stop_after_epoch ? std::min(opts.stop_after_epoch, cfg.epochs)
                                                 : cfg.epochs;
  const bool clip = cfg.clip_norm > 0.0 && cfg.has_recurrent_part();
  for (std::size_t epoch = state.epoch + 1; epoch <= last; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = sched.lr();
    const auto batches = model.epoch_batches(rng);
    double loss_sum = 0.0;
    std::size_t clipped = 0;
    const std::size_t padded_before = encoders::cnn_padded_inputs(model.encoder());
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      ad::zero_grad<float>(params);
      auto loss = model.batch_loss(batches[bi], stream, rng);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericalError(kModule, "non-finite loss at epoch " + std::to_string(epoch) +
                                          ", batch " + std::to_string(bi + 1));
      loss.backward();
      if (clip && ad::clip_grad_norm<float>(params, cfg.clip_norm) > cfg.clip_norm) ++clipped;
      ad::adam_step<float>(params, adam, lr);
      loss_sum += value;
    }
    if (clipped) say("epoch " + std::to_string(epoch) + ": clipped " + std::to_string(clipped) +
                     " of " + std::to_string(batches.size()) + " gradient updates");
    if (const auto padded = encoders::cnn_padded_inputs(model.encoder()) - padded_before)
      say("epoch " + std::to_string(epoch) + ": left-padded " + std::to_string(padded) +
          " segments shorter than the widest kernel");

    const auto val = eval::mean_average_precision(
        build_index(embed_segments(model.encoder(), corpus.valid, opts.threads),
                    model.encoder().embed_dim(), corpus.valid),
        opts.threads);
    const double seconds =
        cfg.record_wall_time
            ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
            : 0.0;
    log.push_back({epoch, loss_sum / static_cast<double>(batches.size()), val.map, lr, seconds});
    say("epoch " + std::to_string(epoch) + " loss " + std::to_string(log.back().loss) +
        " val_map " + std::to_string(val.map) + " lr " + std::to_string(lr));

    const bool improved = val.map > state.best_val_map;
    if (sched.step(val.map)) say("learning rate reduced to " + std::to_string(sched.lr()));
    state.epoch = epoch;
    state.val_map = val.map;
    state.lr = sched.lr();
    state.plateau_bad_epochs = sched.bad_epochs();
    state.plateau_reductions = sched.reductions();
    if (improved) {
      state.best_val_map = val.map;
      state.best_epoch = epoch;
    }
    state.adam_step = adam.step;
    state.dropout_counter = stream.counter();
    state.rng_state = rng.state();
    const Checkpoint ckpt = snapshot(state);
    if (improved) save_checkpoint((dir / "best.ckpt").string(), ckpt);
    save_checkpoint((dir / "last.ckpt").string(), ckpt);
    write_log();
  }

  TrainResult result;
  result.log = log;
  if (!fs::exists(dir / "best.ckpt")) return result;
  result.best = load_checkpoint((dir / "best.ckpt").string());
  if (!opts.evaluate_test || last < cfg.epochs || corpus.test.empty()) return result;

  auto enc = encoder_from_checkpoint(result.best);
  const auto index = build_index(embed_segments(*enc, corpus.test, opts.threads),
                                 enc->embed_dim(), corpus.test);
  phonology::CostModel cm;
  cm.norm = cfg.hamming_norm;
  eval::EvalReport report;
  report.fingerprint = cfg.fingerprint();
  report.sample = {cfg.eval_max_candidates, cfg.eval_subsample_seed};
  report.map = eval::mean_average_precision(index, opts.threads, report.sample);
  report.tau = eval::phonological_similarity_eval(
      index, table, cm, eval::parse_tau_variant(cfg.tau_variant), opts.threads, report.sample);
  write_file((dir / "test_report.json").string(), report.to_json());
  say("test map " + std::to_string(report.map->map) + " tau " +
      std::to_string(report.tau->mean_tau));
  result.test_report = std::move(report);
  return result;
}

}  // namespace awe::train
