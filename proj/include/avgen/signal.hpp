// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace avgen {

constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  int length() const { return static_cast<int>(samples.size()); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Analysis front-end: 510-tap periodic Hann window, hop 160, FFT length 510.
/// This gives exactly 256 unique one-sided bins and a 100 Hz frame rate, so
/// the audio frame rate is 4x the 25 Hz conditioning rate.
struct StftConfig {
  int window_len = 510;
  int hop = 160;
  int fft_len = 510;
  std::vector<double> window;  // periodic Hann, filled by make_default()

  static StftConfig make_default();

  int bins() const { return fft_len / 2 + 1; }
  double frame_rate() const { return static_cast<double>(kSampleRate) / hop; }
  /// Frames produced for a waveform of `len` samples (centered convention).
  int num_frames(int len) const { return len / hop + 1; }
};

/// F x T complex time-frequency matrix, stored bin-major (row f is a
/// contiguous time series). `compressed` tracks whether the amplitude
/// transform has been applied; mixing the two domains is an error.
struct ComplexSpectrogram {
  int num_bins = 0;
  int num_frames = 0;
  bool compressed = false;
  double frame_rate = 100.0;
  std::vector<std::complex<double>> data;  // size num_bins * num_frames

  ComplexSpectrogram() = default;
  ComplexSpectrogram(int f, int t, bool comp = false)
      : num_bins(f), num_frames(t), compressed(comp),
        data(static_cast<size_t>(f) * t, {0.0, 0.0}) {}

  std::complex<double>& at(int f, int t) { return data[static_cast<size_t>(f) * num_frames + t]; }
  const std::complex<double>& at(int f, int t) const {
    return data[static_cast<size_t>(f) * num_frames + t];
  }
  bool same_shape(const ComplexSpectrogram& o) const {
    return num_bins == o.num_bins && num_frames == o.num_frames;
  }
};

/// Centered STFT: the signal is zero-padded by window_len/2 on both sides and
/// frame t is centered on sample t*hop. Requires len >= window_len.
ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg);

/// Overlap-add inverse with synthesis-window normalization; the result is
/// trimmed or zero-padded to out_len samples. Rejects compressed input.
Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg, int out_len);

/// Magnitude compression c -> beta * |c|^alpha * exp(i angle(c)).
constexpr double kCompressAlpha = 0.5;
constexpr double kCompressBeta = 0.15;

ComplexSpectrogram compress(const ComplexSpectrogram& s);
ComplexSpectrogram decompress(const ComplexSpectrogram& s);

/// Scales a random crop of `noise` so that 10*log10(P_clean/P_noise) equals
/// snr_db exactly, and adds it to `clean`. Returns the mixture and the scale
/// applied to the noise. No normalization is applied to the result.
struct MixResult {
  Waveform noisy;
  double noise_scale = 0.0;
  int noise_offset = 0;
};
MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                     std::uint64_t rng_seed);

double signal_power(const Waveform& w);

// RIFF PCM 16-bit little-endian mono 16 kHz only; anything else is an IoError.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

}  // namespace avgen
