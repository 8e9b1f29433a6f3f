// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avgen/signal.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "avgen/common.hpp"
#include "avgen/fft.hpp"

namespace avgen {

StftConfig StftConfig::make_default() {
  StftConfig cfg;
  cfg.window.resize(cfg.window_len);
  for (int n = 0; n < cfg.window_len; ++n) {
    cfg.window[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / cfg.window_len));
  }
  return cfg;
}

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
  check(w.sample_rate == kSampleRate, "stft: expected 16 kHz input");
  check(w.length() >= cfg.window_len, "stft: waveform shorter than the analysis window");
  check(static_cast<int>(cfg.window.size()) == cfg.window_len, "stft: window not initialized");

  const int len = w.length();
  const int half = cfg.window_len / 2;
  const int frames = cfg.num_frames(len);
  ComplexSpectrogram out(cfg.bins(), frames, false);
  out.frame_rate = cfg.frame_rate();

  RealFft fft(cfg.fft_len);
  std::vector<double> buf(cfg.fft_len);
  std::vector<std::complex<double>> spec(fft.bins());
  for (int t = 0; t < frames; ++t) {
    const int start = t * cfg.hop - half;  // centered framing, zero outside
    for (int n = 0; n < cfg.window_len; ++n) {
      const int idx = start + n;
      const double x = (idx >= 0 && idx < len) ? w.samples[idx] : 0.0;
      buf[n] = x * cfg.window[n];
    }
    for (int n = cfg.window_len; n < cfg.fft_len; ++n) buf[n] = 0.0;
    fft.forward(buf.data(), spec.data());
    for (int f = 0; f < out.num_bins; ++f) out.at(f, t) = spec[f];
  }
  return out;
}

Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg, int out_len) {
  check(!s.compressed, "istft: decompress the spectrogram first");
  check(s.num_bins == cfg.bins(), "istft: bin count does not match the config");
  check(out_len >= 1, "istft: out_len must be positive");

  const int half = cfg.window_len / 2;
  RealFft fft(cfg.fft_len);
  std::vector<std::complex<double>> spec(fft.bins(), {0.0, 0.0});
  std::vector<double> frame(cfg.fft_len);

  // Accumulate in padded coordinates, then cut out the centered region.
  const int padded = (s.num_frames - 1) * cfg.hop + cfg.window_len;
  std::vector<double> acc(padded, 0.0), wsum(padded, 0.0);
  for (int t = 0; t < s.num_frames; ++t) {
    for (int f = 0; f < s.num_bins; ++f) spec[f] = s.at(f, t);
    fft.inverse(spec.data(), frame.data());
    const int start = t * cfg.hop;
    for (int n = 0; n < cfg.window_len; ++n) {
      acc[start + n] += cfg.window[n] * frame[n];
      wsum[start + n] += cfg.window[n] * cfg.window[n];
    }
  }

  Waveform out;
  out.samples.assign(out_len, 0.0);
  for (int i = 0; i < out_len; ++i) {
    const int j = i + half;
    if (j < padded && wsum[j] > 1e-12) out.samples[i] = acc[j] / wsum[j];
  }
  return out;
}

ComplexSpectrogram compress(const ComplexSpectrogram& s) {
  check(!s.compressed, "compress: spectrogram already compressed");
  ComplexSpectrogram out = s;
  out.compressed = true;
  for (auto& c : out.data) {
    const double mag = std::abs(c);
    if (mag == 0.0) continue;
    c *= kCompressBeta * std::pow(mag, kCompressAlpha) / mag;
  }
  return out;
}

ComplexSpectrogram decompress(const ComplexSpectrogram& s) {
  check(s.compressed, "decompress: spectrogram is not compressed");
  ComplexSpectrogram out = s;
  out.compressed = false;
  for (auto& c : out.data) {
    const double mag = std::abs(c);
    if (mag == 0.0) continue;
    c *= std::pow(mag / kCompressBeta, 1.0 / kCompressAlpha) / mag;
  }
  return out;
}

double signal_power(const Waveform& w) {
  double p = 0.0;
  for (double x : w.samples) p += x * x;
  return p / std::max<size_t>(1, w.samples.size());
}

MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                     std::uint64_t rng_seed) {
  check(std::isfinite(snr_db), "mix_at_snr: snr_db must be finite");
  check(noise.length() >= clean.length(), "mix_at_snr: noise shorter than clean");
  const double p_clean = signal_power(clean);
  check(p_clean > 0.0, "mix_at_snr: clean signal has zero energy");

  std::mt19937_64 rng(rng_seed);
  const int max_off = noise.length() - clean.length();
  int offset = 0;
  if (max_off > 0) {
    offset = static_cast<int>(std::uniform_int_distribution<int>(0, max_off)(rng));
  }
  double p_noise = 0.0;
  for (int i = 0; i < clean.length(); ++i) {
    p_noise += noise.samples[offset + i] * noise.samples[offset + i];
  }
  p_noise /= clean.length();
  check(p_noise > 0.0, "mix_at_snr: noise crop has zero energy");

  const double alpha = std::sqrt(p_clean / p_noise) * std::pow(10.0, -snr_db / 20.0);
  MixResult r;
  r.noise_scale = alpha;
  r.noise_offset = offset;
  r.noisy.sample_rate = clean.sample_rate;
  r.noisy.samples.resize(clean.samples.size());
  for (int i = 0; i < clean.length(); ++i) {
    r.noisy.samples[i] = clean.samples[i] + alpha * noise.samples[offset + i];
  }
  return r;
}

}  // namespace avgen
