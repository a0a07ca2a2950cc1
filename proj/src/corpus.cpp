#include "awe/corpus.h"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "awe/error.h"
#include "awe/util.h"

namespace awe::corpus {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "corpus";

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError(kModule, what + ": '" + s + "' is not a number");
  return v;
}

}  // namespace

const std::vector<WordSegment>& CorpusSplit::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw LookupError(kModule, "unknown split '" + std::string(name) + "'");
}

void validate(const CorpusSplit& corpus) {
  std::set<std::string> ids;
  for (const auto* part : {&corpus.train, &corpus.valid, &corpus.test}) {
    for (const auto& s : *part) {
      if (!ids.insert(s.segment_id).second)
        throw ConflictError(kModule, "segment '" + s.segment_id + "' appears twice");
      if (!corpus.vocabulary.count(s.word_type))
        throw ContractError(kModule, "segment '" + s.segment_id + "': word type '" +
                                         s.word_type + "' missing from vocabulary");
      if (s.frames.rows == 0 || s.frames.cols != kFrameDim ||
          s.frames.data.size() != s.frames.rows * s.frames.cols)
        throw ShapeError(kModule, "segment '" + s.segment_id + "': frames must be Tx" +
                                      std::to_string(kFrameDim) + " with T >= 1");
      if (!(s.duration_s > 0.0))
        throw ContractError(kModule, "segment '" + s.segment_id + "': duration must be > 0");
    }
  }
}

CorpusSplit load_manifest(const std::string& path,
                          const phonology::FeatureTable& table,
                          const MfscConfig& mfsc) {
  std::ifstream in(path);
  if (!in) throw IoError(kModule, "cannot open manifest '" + path + "'");
  const fs::path base = fs::path(path).parent_path();
  CorpusSplit corpus;
  std::set<std::string> seen;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    auto cols = split(line, '\t');
    if (ln == 1 && !cols.empty() && cols[0] == "segment_id") continue;
    const std::string where = path + ":" + std::to_string(ln);
    if (cols.size() != 9)
      throw ParseError(kModule, where + ": expected 9 tab-separated columns, got " +
                                    std::to_string(cols.size()));
    WordSegment s;
    s.segment_id = cols[0];
    const std::string& split_name = cols[1];
    s.word_type = cols[2];
    const std::string ctx = "segment '" + s.segment_id + "'";
    if (s.segment_id.empty()) throw ParseError(kModule, where + ": empty segment_id");
    if (!seen.insert(s.segment_id).second)
      throw ConflictError(kModule, ctx + ": duplicate segment_id");
    try {
      s.phones = phonology::PhoneSequence::parse(cols[3]);
    } catch (const ContractError&) {
      throw ParseError(kModule, ctx + ": empty phone sequence");
    }
    for (const auto& p : s.phones.phones())
      if (!table.contains(p))
        throw LookupError(kModule, ctx + ": phone '" + p + "' not in feature table");
    s.speaker_id = cols[4];
    if (cols[5] == "audio") s.source = SourceKind::kAudio;
    else if (cols[5] == "feats") s.source = SourceKind::kFeats;
    else throw ParseError(kModule, ctx + ": source must be 'audio' or 'feats'");
    s.path = cols[6];
    s.start_s = parse_double(cols[7], ctx + " start_s");
    s.end_s = parse_double(cols[8], ctx + " end_s");
    s.duration_s = s.end_s - s.start_s;
    if (!(s.duration_s > 0.0))
      throw ParseError(kModule, ctx + ": end_s must exceed start_s");

    fs::path file = s.path;
    if (file.is_relative()) file = base / file;
    if (!fs::exists(file))
      throw IoError(kModule, ctx + ": missing file '" + file.string() + "'");
    if (s.source == SourceKind::kFeats) {
      s.frames = read_feature_file(file.string());
    } else {
      const Waveform wav = read_wav(file.string());
      if (wav.sample_rate_hz != mfsc.sample_rate_hz)
        throw DataError(kModule, ctx + ": sample rate " + std::to_string(wav.sample_rate_hz) +
                                     " differs from configured " +
                                     std::to_string(mfsc.sample_rate_hz));
      const auto begin = static_cast<std::size_t>(s.start_s * wav.sample_rate_hz + 0.5);
      const auto end = std::min(wav.samples.size(),
                                static_cast<std::size_t>(s.end_s * wav.sample_rate_hz + 0.5));
      if (begin >= end)
        throw DataError(kModule, ctx + ": time span lies outside '" + file.string() + "'");
      try {
        s.frames = extract_mfsc(std::span<const float>(wav.samples).subspan(begin, end - begin), mfsc);
      } catch (const DegenerateInputError& e) {
        throw DegenerateInputError(kModule, ctx + ": " + e.what());
      }
    }
    if (s.frames.cols != kFrameDim || s.frames.rows == 0)
      throw ShapeError(kModule, ctx + ": frames must be Tx" + std::to_string(kFrameDim));

    auto [it, inserted] = corpus.vocabulary.emplace(s.word_type, s.phones);
    if (!inserted && !(it->second == s.phones))
      throw ConflictError(kModule, ctx + ": word type '" + s.word_type +
                                       "' has conflicting phone sequences");
    if (split_name == "train") corpus.train.push_back(std::move(s));
    else if (split_name == "valid") corpus.valid.push_back(std::move(s));
    else if (split_name == "test") corpus.test.push_back(std::move(s));
    else throw ParseError(kModule, ctx + ": unknown split '" + split_name + "'");
  }
  return corpus;
}

void write_manifest(const std::string& path, const CorpusSplit& corpus) {
  std::ostringstream out;
  out << "segment_id\tsplit\tword_type\tphones\tspeaker_id\tsource\tpath\tstart_s\tend_s\n";
  for (const char* name : {"train", "valid", "test"}) {
    for (const auto& s : corpus.split(name)) {
      out << s.segment_id << '\t' << name << '\t' << s.word_type << '\t' << s.phones.str()
          << '\t' << s.speaker_id << '\t'
          << (s.source == SourceKind::kAudio ? "audio" : "feats") << '\t' << s.path << '\t'
          << format_double(s.start_s) << '\t' << format_double(s.end_s) << '\n';
    }
  }
  write_file(path, out.str());
}

void write_corpus(const std::string& out_dir, CorpusSplit& corpus) {
  const fs::path dir(out_dir);
  fs::create_directories(dir / "feats");
  for (auto* part : {&corpus.train, &corpus.valid, &corpus.test}) {
    for (auto& s : *part) {
      s.source = SourceKind::kFeats;
      s.path = "feats/" + s.segment_id + ".f32";
      write_feature_file((dir / s.path).string(), s.frames);
    }
  }
  write_manifest((dir / "manifest.tsv").string(), corpus);
}

}  // namespace awe::corpus
