#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "awe/checkpoint.h"
#include "awe/corpus.h"
#include "awe/encoders.h"
#include "awe/evalkit.h"
#include "awe/objectives.h"
#include "awe/run_config.h"

namespace awe::train {

// Halves (by `factor`) the learning rate once the metric has failed to beat
// its best value for `patience` consecutive epochs. The counter restarts on
// every improvement and after every reduction.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, std::size_t patience, double min_lr);

  double lr() const { return lr_; }
  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_; }
  std::size_t reductions() const { return reductions_; }
  // Feeds one epoch's metric. Returns true if the rate was reduced.
  bool step(double metric);
  void restore(double lr, double best, std::size_t bad, std::size_t reductions);

 private:
  double lr_, factor_, min_lr_;
  std::size_t patience_;
  double best_;
  std::size_t bad_ = 0;
  std::size_t reductions_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_map = 0.0;
  double lr = 0.0;
  double seconds = 0.0;

  std::string to_json() const;
};

// Encoder plus the objective's head. Parameters are named "encoder.*" and
// "head.*".
class Model {
 public:
  Model(const RunConfig& cfg, const corpus::CorpusSplit& corpus,
        const phonology::FeatureTable& table);
  ~Model();

  encoders::AcousticEncoder<float>& encoder() { return *encoder_; }
  std::vector<ad::NamedTensor<float>> parameters();
  // Parameters followed by non-trainable buffers, as stored in checkpoints.
  std::vector<StoredTensor> export_tensors();
  // Copies every matching tensor; ParseError when one is missing or
  // mis-shaped.
  void import_tensors(const Checkpoint& ckpt);

  // One batch's loss with the graph attached.
  ad::Tensor<float> batch_loss(std::span<const std::size_t> batch, ad::DropoutStream& stream,
                               Rng& rng);
  // Batches for one epoch, in training order.
  std::vector<std::vector<std::size_t>> epoch_batches(Rng& rng) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::unique_ptr<encoders::AcousticEncoder<float>> encoder_;
};

struct TrainOptions {
  std::string out_dir;
  // Continue from this checkpoint (normally out_dir/last.ckpt).
  std::string resume_from;
  // Stop after this epoch instead of cfg.epochs; 0 runs to the end.
  std::size_t stop_after_epoch = 0;
  bool evaluate_test = true;
  // Workers for validation and test embedding/evaluation. Training itself
  // is single-threaded.
  std::size_t threads = 1;
  std::function<void(const std::string&)> progress;
};

struct TrainResult {
  std::vector<EpochRecord> log;  // complete log, including resumed epochs
  Checkpoint best;
  std::optional<eval::EvalReport> test_report;
};

// Writes out_dir/{run.json, train_log.jsonl, last.ckpt, best.ckpt,
// test_report.json}.
TrainResult train(const RunConfig& cfg, const corpus::CorpusSplit& corpus,
                  const phonology::FeatureTable& table, const TrainOptions& opts);

// Encoder rebuilt from a checkpoint's config and weights.
std::unique_ptr<encoders::AcousticEncoder<float>> encoder_from_checkpoint(const Checkpoint& ckpt);

// Eval-mode embeddings of a split (row-major, split order).
std::vector<float> embed_segments(encoders::AcousticEncoder<float>& enc,
                                  std::span<const corpus::WordSegment> segments,
                                  std::size_t threads = 1);
eval::SearchIndex build_index(std::vector<float> embeddings, std::size_t dim,
                              std::span<const corpus::WordSegment> segments);

// Resolved feature table for a config (bundled when cfg.features is empty).
phonology::FeatureTable feature_table_for(const RunConfig& cfg);

}  // namespace awe::train
