// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "avgen/conditioner.hpp"
#include "avgen/scorenet.hpp"
#include "avgen/sde.hpp"
#include "avgen/signal.hpp"

namespace avgen {

struct SamplerConfig {
  int steps = 30;              // predictor steps N
  int corrector_steps = 1;     // Langevin steps after each predictor step
  double corrector_snr = 0.5;  // r
  std::uint64_t seed = 0;
  int max_trajectory_states = 1024;

  void validate() const;
};

using ScoreFn = std::function<ComplexSpectrogram(const ComplexSpectrogram& x, double t)>;

/// One Euler-Maruyama step of the reverse SDE from t to t - dt:
///   x <- x + [-gamma*(y - x) + g(t)^2 * score] * dt + g(t) * sqrt(dt) * z.
ComplexSpectrogram predictor_step(const ComplexSpectrogram& x, const ComplexSpectrogram& y,
                                  const ComplexSpectrogram& score, double t, double dt,
                                  const SdeParams& p, std::mt19937_64& rng);

/// One annealed Langevin step x <- x + eps*s + sqrt(2 eps)*z with
/// eps = 2*(r*||z||/||s||)^2; a zero-norm score skips the update.
ComplexSpectrogram corrector_step(const ComplexSpectrogram& x, const ScoreFn& score_fn, double t,
                                  double r, std::mt19937_64& rng);

/// Full reverse run from x_T ~ N(y, sigma(T)^2) down to t_eps on a uniform
/// grid. When trajectory != nullptr every intermediate state is recorded
/// (N + 1 states including the start).
ComplexSpectrogram reverse_sde(const ComplexSpectrogram& y, const ScoreFn& score_fn,
                               const SdeParams& p, const SamplerConfig& cfg,
                               std::vector<ComplexSpectrogram>* trajectory = nullptr);

struct EnhanceResult {
  Waveform wave;
  int nfe = 0;  // score-network evaluations
  double total_ms = 0.0;
  std::vector<double> step_ms;  // per predictor step (correctors included)
};

/// Enhancement entry point: STFT + compress, reverse SDE with the trained
/// score model, decompress + iSTFT back to the input length. emb == nullptr
/// runs audio-only conditioning. Deterministic given cfg.seed.
EnhanceResult enhance(const Waveform& noisy, const LayerEmbeddings* emb, const Checkpoint& ckpt,
                      const StftConfig& stft_cfg, const SamplerConfig& cfg,
                      bool use_double = false);

/// Score function backed by a checkpointed model; used by enhance and by
/// diagnostics that count NFEs.
ScoreFn make_model_score_fn(const Checkpoint& ckpt, const ComplexSpectrogram& y,
                            const LayerEmbeddings* emb, bool use_double, int* nfe_counter);

}  // namespace avgen
