// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "avgen/common.hpp"
#include "avgen/signal.hpp"

namespace avgen {

namespace {

void put_u32(std::vector<char>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}
void put_u16(std::vector<char>& v, std::uint16_t x) {
  for (int i = 0; i < 2; ++i) v.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError("read_wav: " + path + " is not a RIFF/WAVE file");
  }

  size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t chunk_len = get_u32(&bytes[pos + 4]);
    if (pos + 8 + chunk_len > bytes.size()) throw IoError("read_wav: truncated chunk in " + path);
    if (std::memcmp(&bytes[pos], "fmt ", 4) == 0 && chunk_len >= 16) {
      format = get_u16(&bytes[pos + 8]);
      channels = get_u16(&bytes[pos + 10]);
      rate = get_u32(&bytes[pos + 12]);
      bits = get_u16(&bytes[pos + 22]);
      have_fmt = true;
    } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
      data = &bytes[pos + 8];
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (!have_fmt || !data) throw IoError("read_wav: missing fmt/data chunk in " + path);
  if (format != 1) throw IoError("read_wav: " + path + ": only PCM (format 1) is supported");
  if (channels != 1) throw IoError("read_wav: " + path + ": only mono is supported");
  if (bits != 16) throw IoError("read_wav: " + path + ": only 16-bit samples are supported");
  if (rate != kSampleRate) {
    throw IoError("read_wav: " + path + ": expected 16000 Hz, got " + std::to_string(rate));
  }

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const std::uint32_t n = data_len / 2;
  w.samples.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::int16_t s = static_cast<std::int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
    w.samples[i] = s / 32768.0;
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  check(w.sample_rate == kSampleRate, "write_wav: expected 16 kHz waveform");
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  std::vector<char> out;
  out.reserve(44 + 2 * n);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, kSampleRate);
  put_u32(out, kSampleRate * 2);  // byte rate
  put_u16(out, 2);                // block align
  put_u16(out, 16);               // bits
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, 2 * n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double x = std::clamp(w.samples[i], -1.0, 1.0);
    const auto s = static_cast<std::int16_t>(std::lrint(x * 32767.0));
    out.push_back(static_cast<char>(s & 0xff));
    out.push_back(static_cast<char>((s >> 8) & 0xff));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_wav: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write_wav: write failed for " + path);
}

}  // namespace avgen
