// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avgen/signal.hpp"

namespace avgen {

constexpr int kVideoRate = 25;                       // conditioning frame rate, Hz
constexpr int kSamplesPerVideoFrame = kSampleRate / kVideoRate;  // 640

/// Pseudo-phone corpus parameters. Each symbol of the alphabet is a harmonic
/// tone complex with its own fundamental and a formant-like band emphasis;
/// clips are sequences of 2..8 video-frame segments (80..320 ms).
struct SynthSpec {
  int alphabet_size = 12;
  double duration_min_s = 2.0;
  double duration_max_s = 2.56;
  int seg_min_frames = 2;   // at 25 Hz
  int seg_max_frames = 8;
  int max_harmonics = 10;
  double f0_min_hz = 115.0;
  double f0_max_hz = 400.0;
  double formant_gain = 5.0;
  double formant_bw_hz = 400.0;
  double amp_min = 0.12;
  double amp_max = 0.25;

  // Noise model: colored noise (power ~ f^slope) plus band-limited
  // amplitude-modulated bursts that overlap the speech band.
  double noise_slope = -0.5;
  double noise_rms = 0.08;
  double burst_rate_hz = 1.5;
  double burst_gain = 3.0;
  double burst_len_min_s = 0.10;
  double burst_len_max_s = 0.30;
  double burst_band_min_hz = 250.0;
  double burst_band_max_hz = 3500.0;
  double burst_bw_hz = 500.0;

  void validate() const;
  double symbol_f0(int symbol) const;
  double symbol_formant(int symbol) const;
};

std::string symbol_name(int symbol);

/// Per-video-frame symbol track plus its run-length-merged transcript.
struct SegmentLabels {
  int frame_rate = kVideoRate;
  std::vector<int> symbols;             // one entry per 25 Hz frame
  std::vector<std::string> transcript;  // merged symbol names
};

struct CleanClip {
  Waveform wave;
  SegmentLabels labels;
};

/// Deterministic pseudo-phone clip; duration is drawn from the spec range and
/// rounded to whole video frames, so wave.length() == 640 * labels.size().
CleanClip synth_clean(const SynthSpec& spec, std::uint64_t rng_seed);

/// Deterministic noise clip of the requested duration.
Waveform synth_noise(const SynthSpec& spec, double duration_s, std::uint64_t rng_seed);

/// Renders `frames` video frames of a single symbol at unit segment amplitude
/// with canonical phases; used for decoder template calibration.
Waveform render_symbol(const SynthSpec& spec, int symbol, int frames);

}  // namespace avgen
