#include "awe/checkpoint.h"

#include <bit>
#include <cstring>
#include <filesystem>
#include <json.hpp>

#include "awe/error.h"
#include "awe/util.h"

namespace awe::train {

namespace {

constexpr const char* kModule = "checkpoint";
constexpr char kMagic[4] = {'A', 'W', 'E', '1'};
constexpr int kFormatVersion = 1;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order");

[[noreturn]] void fail(const std::string& source, const std::string& field,
                       const std::string& what) {
  throw ParseError(kModule, source + ": field '" + field + "': " + what);
}

template <typename V>
V field(const json& j, const std::string& key, const std::string& source) {
  if (!j.contains(key)) fail(source, key, "missing");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    fail(source, key, "wrong type");
  }
}

}  // namespace

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string payload;
  json table = json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (t.values.size() != t.rows * t.cols)
      throw ShapeError(kModule, "tensor '" + t.name + "' holds " +
                                    std::to_string(t.values.size()) + " values for shape " +
                                    std::to_string(t.rows) + "x" + std::to_string(t.cols));
    table.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
    payload.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
    offset += t.values.size();
  }
  const auto& s = ckpt.state;
  json header = {
      {"format_version", kFormatVersion},
      {"config", json::parse(ckpt.config.to_json())},
      {"state",
       {{"epoch", s.epoch},
        {"val_map", s.val_map},
        {"lr", s.lr},
        {"best_val_map", s.best_val_map},
        {"best_epoch", s.best_epoch},
        {"plateau_bad_epochs", s.plateau_bad_epochs},
        {"plateau_reductions", s.plateau_reductions},
        {"adam_step", s.adam_step},
        {"dropout_counter", s.dropout_counter},
        {"rng_state", s.rng_state}}},
      {"tensors", table},
      {"payload_bytes", payload.size()},
      {"checksum", hex64(fnv1a64(payload))},
  };
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  const std::uint64_t n = text.size();
  out.append(reinterpret_cast<const char*>(&n), sizeof n);
  out += text;
  out += payload;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(source, "magic", "not an AWE1 checkpoint");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 4, sizeof n);
  if (n > bytes.size() - 12) fail(source, "header_length", "exceeds file size (truncated?)");
  json header;
  try {
    header = json::parse(bytes.substr(12, n));
  } catch (const json::parse_error&) {
    fail(source, "header", "malformed JSON");
  }
  if (field<int>(header, "format_version", source) != kFormatVersion)
    fail(source, "format_version", "unsupported version");

  const std::string payload = bytes.substr(12 + n);
  const auto payload_bytes = field<std::size_t>(header, "payload_bytes", source);
  if (payload.size() != payload_bytes)
    fail(source, "payload_bytes", "expected " + std::to_string(payload_bytes) + " bytes, found " +
                                      std::to_string(payload.size()));
  if (field<std::string>(header, "checksum", source) != hex64(fnv1a64(payload)))
    fail(source, "checksum", "payload digest mismatch");

  Checkpoint ckpt;
  if (!header.contains("config")) fail(source, "config", "missing");
  ckpt.config = parse_run_config(header["config"].dump(), source + " (config)");

  if (!header.contains("state")) fail(source, "state", "missing");
  const json& st = header["state"];
  auto& s = ckpt.state;
  s.epoch = field<std::size_t>(st, "epoch", source);
  s.val_map = field<double>(st, "val_map", source);
  s.lr = field<double>(st, "lr", source);
  s.best_val_map = field<double>(st, "best_val_map", source);
  s.best_epoch = field<std::size_t>(st, "best_epoch", source);
  s.plateau_bad_epochs = field<std::size_t>(st, "plateau_bad_epochs", source);
  s.plateau_reductions = field<std::size_t>(st, "plateau_reductions", source);
  s.adam_step = field<std::uint64_t>(st, "adam_step", source);
  s.dropout_counter = field<std::uint64_t>(st, "dropout_counter", source);
  s.rng_state = field<std::string>(st, "rng_state", source);

  const auto table = field<json>(header, "tensors", source);
  if (!table.is_array()) fail(source, "tensors", "expected an array");
  const std::size_t n_floats = payload.size() / sizeof(float);
  std::size_t expected_offset = 0;
  for (const auto& entry : table) {
    StoredTensor t;
    t.name = field<std::string>(entry, "name", source);
    t.rows = field<std::size_t>(entry, "rows", source);
    t.cols = field<std::size_t>(entry, "cols", source);
    const auto offset = field<std::size_t>(entry, "offset", source);
    if (offset != expected_offset || offset + t.rows * t.cols > n_floats)
      fail(source, "tensors." + t.name + ".offset", "inconsistent with the payload");
    t.values.resize(t.rows * t.cols);
    std::memcpy(t.values.data(), payload.data() + offset * sizeof(float),
                t.values.size() * sizeof(float));
    expected_offset += t.values.size();
    ckpt.tensors.push_back(std::move(t));
  }
  if (expected_offset != n_floats) fail(source, "tensors", "payload has unlisted bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const std::string tmp = path + ".tmp";
  write_file(tmp, serialize_checkpoint(ckpt));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(kModule, "cannot move " + tmp + " to " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path), path);
}

}  // namespace awe::train
