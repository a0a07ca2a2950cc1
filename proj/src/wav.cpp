#include <bit>
#include <cmath>
#include <cstring>

#include "awe/corpus.h"
#include "awe/error.h"
#include "awe/util.h"

namespace awe::corpus {

namespace {

constexpr const char* kModule = "corpus";

std::uint32_t get_u32(std::string_view b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[off + i]);
  return v;
}

std::uint16_t get_u16(std::string_view b, std::size_t off) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[off]) |
                                    (static_cast<unsigned char>(b[off + 1]) << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

float get_f32(std::string_view b, std::size_t off) {
  return std::bit_cast<float>(get_u32(b, off));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 ||
      bytes.compare(8, 4, "WAVE") != 0)
    throw ParseError(kModule, "'" + path + "' is not a RIFF/WAVE file");
  std::size_t pos = 12;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t size = get_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size())
      throw ParseError(kModule, "'" + path + "': truncated chunk '" + id + "'");
    if (id == "fmt ") {
      format = get_u16(bytes, body);
      channels = get_u16(bytes, body + 2);
      rate = get_u32(bytes, body + 4);
      bits = get_u16(bytes, body + 14);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ParseError(kModule, "'" + path + "': data before fmt chunk");
      if (channels != 1)
        throw ParseError(kModule, "'" + path + "': only mono audio is supported");
      Waveform w;
      w.sample_rate_hz = static_cast<int>(rate);
      if (format == 1 && bits == 16) {
        w.samples.resize(size / 2);
        for (std::size_t i = 0; i < w.samples.size(); ++i)
          w.samples[i] = static_cast<std::int16_t>(get_u16(bytes, body + 2 * i)) / 32768.0f;
      } else if (format == 3 && bits == 32) {
        w.samples.resize(size / 4);
        for (std::size_t i = 0; i < w.samples.size(); ++i)
          w.samples[i] = get_f32(bytes, body + 4 * i);
      } else {
        throw ParseError(kModule, "'" + path + "': unsupported sample format");
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw ParseError(kModule, "'" + path + "': no data chunk");
}

void write_wav(const std::string& path, const Waveform& wav) {
  std::string out = "RIFF";
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wav.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(wav.sample_rate_hz * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (float s : wav.samples) {
    // Same 1/32768 scale as the reader, rounded to nearest.
    const long q = std::lround(static_cast<double>(s) * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
  }
  write_file(path, out);
}

FrameMatrix read_feature_file(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8)
    throw ParseError(kModule, "'" + path + "': feature file shorter than its header");
  FrameMatrix m;
  m.rows = get_u32(bytes, 0);
  m.cols = get_u32(bytes, 4);
  if (bytes.size() != 8 + 4 * m.rows * m.cols)
    throw ParseError(kModule, "'" + path + "': header declares " + std::to_string(m.rows) +
                                  "x" + std::to_string(m.cols) + " but payload has " +
                                  std::to_string(bytes.size() - 8) + " bytes");
  m.data.resize(m.rows * m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = get_f32(bytes, 8 + 4 * i);
  return m;
}

void write_feature_file(const std::string& path, const FrameMatrix& frames) {
  std::string out;
  out.reserve(8 + 4 * frames.data.size());
  put_u32(out, static_cast<std::uint32_t>(frames.rows));
  put_u32(out, static_cast<std::uint32_t>(frames.cols));
  for (float v : frames.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  write_file(path, out);
}

}  // namespace awe::corpus
