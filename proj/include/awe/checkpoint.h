#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "awe/run_config.h"

namespace awe::train {

struct StoredTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;
};

// Training state needed to continue a run exactly where it stopped.
struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  double val_map = 0.0;
  double lr = 0.0;
  double best_val_map = 0.0;
  std::size_t best_epoch = 0;
  std::size_t plateau_bad_epochs = 0;
  std::size_t plateau_reductions = 0;
  std::uint64_t adam_step = 0;
  std::uint64_t dropout_counter = 0;
  std::string rng_state;
};

// File layout: "AWE1", header length (u64 LE), JSON header, raw little-endian
// float32 payload. The header lists every tensor with its shape and float
// offset and carries an FNV-1a digest of the payload.
struct Checkpoint {
  RunConfig config;
  TrainState state;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// ParseError naming the offending field on any inconsistency; nothing is
// returned for a damaged file.
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace awe::train
