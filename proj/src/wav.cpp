#include "convsense/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace convsense {

namespace {

void put_u32(std::vector<char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::vector<char>& buf, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

std::uint16_t get_u16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                    (static_cast<unsigned char>(p[1]) << 8));
}

}  // namespace

void write_wav(const std::string& path, const VectorXd& samples, int sample_rate_hz) {
  const std::uint32_t n = static_cast<std::uint32_t>(samples.size());
  const std::uint32_t data_bytes = n * 2;

  std::vector<char> buf;
  buf.reserve(44 + data_bytes);
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  put_u32(buf, 36 + data_bytes);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E'});
  buf.insert(buf.end(), {'f', 'm', 't', ' '});
  put_u32(buf, 16);
  put_u16(buf, 1);  // PCM
  put_u16(buf, 1);  // mono
  put_u32(buf, static_cast<std::uint32_t>(sample_rate_hz));
  put_u32(buf, static_cast<std::uint32_t>(sample_rate_hz) * 2);
  put_u16(buf, 2);   // block align
  put_u16(buf, 16);  // bits per sample
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  put_u32(buf, data_bytes);

  for (std::uint32_t i = 0; i < n; ++i) {
    double v = std::clamp(samples[i], -1.0, 32767.0 / 32768.0);
    auto s = static_cast<std::int16_t>(std::lround(v * 32768.0));
    put_u16(buf, static_cast<std::uint16_t>(s));
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write: " + path);
}

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path);

  WavData wav;
  size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  while (pos + 8 <= buf.size()) {
    const char* id = buf.data() + pos;
    std::uint32_t chunk_size = get_u32(buf.data() + pos + 4);
    size_t body = pos + 8;
    if (body + chunk_size > buf.size()) throw IoError("truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw IoError("malformed fmt chunk in " + path);
      std::uint16_t format = get_u16(buf.data() + body);
      channels = get_u16(buf.data() + body + 2);
      wav.sample_rate_hz = static_cast<int>(get_u32(buf.data() + body + 4));
      bits = get_u16(buf.data() + body + 14);
      if (format != 1) throw IoError("only PCM wav supported: " + path);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw IoError("data chunk before fmt in " + path);
      if (channels != 1 || bits != 16)
        throw IoError("expected mono 16-bit PCM in " + path);
      std::uint32_t n = chunk_size / 2;
      wav.samples.resize(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        auto s = static_cast<std::int16_t>(get_u16(buf.data() + body + 2 * i));
        wav.samples[i] = static_cast<double>(s) / 32768.0;
      }
      return wav;
    }
    pos = body + chunk_size + (chunk_size & 1);
  }
  throw IoError("no data chunk in " + path);
}

}  // namespace convsense
