// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avgen/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "avgen/common.hpp"
#include "avgen/fft.hpp"

namespace avgen {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kFadeS = 0.005;  // segment boundary crossfade
}  // namespace

void SynthSpec::validate() const {
  check(alphabet_size >= 1, "SynthSpec: alphabet_size must be >= 1");
  check(duration_min_s >= 2.0 && duration_max_s <= 12.0 && duration_min_s <= duration_max_s,
        "SynthSpec: durations must lie in [2, 12] s");
  check(seg_min_frames >= 1 && seg_max_frames >= seg_min_frames,
        "SynthSpec: bad segment length range");
  check(max_harmonics >= 1, "SynthSpec: need at least one harmonic");
  check(noise_rms > 0.0, "SynthSpec: noise_rms must be positive");
}

double SynthSpec::symbol_f0(int symbol) const {
  check(symbol >= 0 && symbol < alphabet_size, "unknown symbol");
  if (alphabet_size == 1) return f0_min_hz;
  const double r = static_cast<double>(symbol) / (alphabet_size - 1);
  return f0_min_hz * std::pow(f0_max_hz / f0_min_hz, r);
}

double SynthSpec::symbol_formant(int symbol) const {
  check(symbol >= 0 && symbol < alphabet_size, "unknown symbol");
  // Decorrelate the formant ordering from the fundamental ordering.
  const int perm = alphabet_size > 1 ? (5 * symbol + 3) % alphabet_size : 0;
  const double r = alphabet_size > 1 ? static_cast<double>(perm) / (alphabet_size - 1) : 0.0;
  return 500.0 * std::pow(3500.0 / 500.0, r);
}

std::string symbol_name(int symbol) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "s%02d", symbol);
  return buf;
}

namespace {

// Harmonic tone complex for one segment, rendered additively into out.
void render_segment(const SynthSpec& spec, int symbol, double amplitude,
                    double* out, int n_samples, const double* phases) {
  const double f0 = spec.symbol_f0(symbol);
  const double formant = spec.symbol_formant(symbol);
  const int fade = static_cast<int>(kFadeS * kSampleRate);
  double weight_sum = 0.0;
  std::vector<double> amps(spec.max_harmonics, 0.0);
  for (int h = 1; h <= spec.max_harmonics; ++h) {
    const double fh = h * f0;
    if (fh > 7600.0) break;
    const double bump = (fh - formant) / spec.formant_bw_hz;
    amps[h - 1] = std::pow(h, -0.6) * (1.0 + spec.formant_gain * std::exp(-bump * bump));
    weight_sum += amps[h - 1] * amps[h - 1];
  }
  const double norm = weight_sum > 0.0 ? amplitude / std::sqrt(weight_sum / 2.0) : 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    double v = 0.0;
    for (int h = 1; h <= spec.max_harmonics; ++h) {
      if (amps[h - 1] == 0.0) continue;
      v += amps[h - 1] * std::sin(kTwoPi * h * f0 * t + phases[h - 1]);
    }
    double env = 1.0;
    if (i < fade) env = 0.5 * (1.0 - std::cos(std::numbers::pi * i / fade));
    if (n_samples - 1 - i < fade) {
      env *= 0.5 * (1.0 - std::cos(std::numbers::pi * (n_samples - 1 - i) / fade));
    }
    out[i] += norm * env * v;
  }
}

}  // namespace

CleanClip synth_clean(const SynthSpec& spec, std::uint64_t rng_seed) {
  spec.validate();
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double dur = spec.duration_min_s + (spec.duration_max_s - spec.duration_min_s) * unit(rng);
  const int total_frames = std::max(2 * kVideoRate, static_cast<int>(std::lround(dur * kVideoRate)));

  CleanClip clip;
  clip.labels.symbols.reserve(total_frames);
  clip.wave.samples.assign(static_cast<size_t>(total_frames) * kSamplesPerVideoFrame, 0.0);

  std::uniform_int_distribution<int> seg_len(spec.seg_min_frames, spec.seg_max_frames);
  std::uniform_int_distribution<int> sym_draw(0, spec.alphabet_size - 1);
  std::uniform_real_distribution<double> amp_draw(spec.amp_min, spec.amp_max);

  int frame = 0;
  int prev_symbol = -1;
  std::vector<double> phases(spec.max_harmonics);
  while (frame < total_frames) {
    int len = std::min(seg_len(rng), total_frames - frame);
    int symbol = sym_draw(rng);
    while (spec.alphabet_size > 1 && symbol == prev_symbol) symbol = sym_draw(rng);
    const double amplitude = amp_draw(rng);
    for (auto& ph : phases) ph = kTwoPi * unit(rng);

    render_segment(spec, symbol, amplitude,
                   clip.wave.samples.data() + static_cast<size_t>(frame) * kSamplesPerVideoFrame,
                   len * kSamplesPerVideoFrame, phases.data());
    for (int i = 0; i < len; ++i) clip.labels.symbols.push_back(symbol);
    clip.labels.transcript.push_back(symbol_name(symbol));
    prev_symbol = symbol;
    frame += len;
  }
  return clip;
}

Waveform synth_noise(const SynthSpec& spec, double duration_s, std::uint64_t rng_seed) {
  spec.validate();
  check(duration_s > 0.0, "synth_noise: duration must be positive");
  const int n = static_cast<int>(std::lround(duration_s * kSampleRate));
  check(n >= 16, "synth_noise: duration too short");

  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Colored base: shape a white draw in the frequency domain, power ~ f^slope.
  std::vector<double> x(n);
  for (auto& v : x) v = gauss(rng);
  RealFft fft(n);
  std::vector<std::complex<double>> spec_buf(fft.bins());
  fft.forward(x.data(), spec_buf.data());
  spec_buf[0] = 0.0;
  for (int k = 1; k < fft.bins(); ++k) {
    const double f = static_cast<double>(k) * kSampleRate / n;
    spec_buf[k] *= std::pow(f / 1000.0, spec.noise_slope / 2.0);
  }
  fft.inverse(spec_buf.data(), x.data());
  double p = 0.0;
  for (double v : x) p += v * v;
  const double base_scale = spec.noise_rms / std::sqrt(std::max(1e-300, p / n));
  for (auto& v : x) v *= base_scale;

  // Band-limited amplitude-modulated bursts.
  const int n_bursts = static_cast<int>(std::lround(spec.burst_rate_hz * duration_s));
  for (int b = 0; b < n_bursts; ++b) {
    const double len_s =
        spec.burst_len_min_s + (spec.burst_len_max_s - spec.burst_len_min_s) * unit(rng);
    const int len = std::min(n, static_cast<int>(std::lround(len_s * kSampleRate)));
    const int start = static_cast<int>(unit(rng) * std::max(1, n - len));
    const double fc = spec.burst_band_min_hz *
                      std::pow(spec.burst_band_max_hz / spec.burst_band_min_hz, unit(rng));

    std::vector<double> burst(len);
    for (auto& v : burst) v = gauss(rng);
    RealFft bfft(len);
    std::vector<std::complex<double>> bspec(bfft.bins());
    bfft.forward(burst.data(), bspec.data());
    for (int k = 0; k < bfft.bins(); ++k) {
      const double f = static_cast<double>(k) * kSampleRate / len;
      const double d = (f - fc) / spec.burst_bw_hz;
      bspec[k] *= std::exp(-d * d);
    }
    bfft.inverse(bspec.data(), burst.data());
    double bp = 0.0;
    for (double v : burst) bp += v * v;
    const double bscale =
        spec.burst_gain * spec.noise_rms / std::sqrt(std::max(1e-300, bp / len));
    for (int i = 0; i < len; ++i) {
      const double env = 0.5 * (1.0 - std::cos(kTwoPi * i / len));
      x[start + i] += bscale * env * burst[i];
    }
  }

  Waveform w;
  w.samples = std::move(x);
  return w;
}

Waveform render_symbol(const SynthSpec& spec, int symbol, int frames) {
  spec.validate();
  check(frames >= 1, "render_symbol: frames must be >= 1");
  Waveform w;
  w.samples.assign(static_cast<size_t>(frames) * kSamplesPerVideoFrame, 0.0);
  std::vector<double> phases(spec.max_harmonics, 0.0);
  render_segment(spec, symbol, 0.2, w.samples.data(), w.length(), phases.data());
  return w;
}

}  // namespace avgen
