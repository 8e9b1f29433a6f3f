// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "avgen/scorenet.hpp"
#include "avgen/sde.hpp"

namespace avgen {

enum class CondMode { kAv, kAudioOnly, kShuffledEmb };

CondMode cond_mode_from_string(const std::string& s);
std::string to_string(CondMode m);

struct TrainConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_tokens = 2000;   // token = one STFT frame
  int epochs = 1 << 20;    // effectively "until max_steps"
  int max_steps = 2000;
  CondMode mode = CondMode::kAv;
  bool use_double = false; // f64 compute instead of f32
  int threads = 1;         // intra-batch parallelism; results match serial
  int val_draws = 8;       // (t, z) draws per item in validate()
  std::uint64_t seed = 1;
  std::uint64_t val_seed = 977;

  void validate() const;
};

/// Mean over bins of |score + z/sigma|^2 plus its gradient w.r.t. score.
struct DsmLoss {
  double loss = 0.0;
  ComplexSpectrogram dscore;
};
DsmLoss dsm_loss(const ComplexSpectrogram& score, const ComplexSpectrogram& z, double sigma);

/// Uniform process-time draw on [t_eps, T].
double sample_t(std::mt19937_64& rng, const SdeParams& p);

/// Standard Adam with bias correction. step_index is 1-based. Non-finite
/// gradients raise with the offending parameter index.
template <typename S>
void adam_step(std::vector<S>& params, const std::vector<S>& grads, std::vector<S>& m,
               std::vector<S>& v, std::uint64_t step_index, const TrainConfig& cfg);

extern template void adam_step<float>(std::vector<float>&, const std::vector<float>&,
                                      std::vector<float>&, std::vector<float>&, std::uint64_t,
                                      const TrainConfig&);
extern template void adam_step<double>(std::vector<double>&, const std::vector<double>&,
                                       std::vector<double>&, std::vector<double>&, std::uint64_t,
                                       const TrainConfig&);

/// Token-bucketed batching: seeded shuffle, coarse length-bucket sort, then
/// greedy fill up to max_tokens. Every item lands in exactly one batch.
struct BatchPlan {
  std::vector<std::vector<int>> batches;  // item indices
};
BatchPlan bucket_batches(const std::vector<int>& token_counts, int max_tokens,
                         std::uint64_t rng_seed);

/// One corpus item, fully prepared for training.
struct TrainItem {
  std::string id;
  ComplexSpectrogram x0;  // compressed clean spectrogram
  ComplexSpectrogram y;   // compressed noisy spectrogram
  LayerEmbeddings emb;
  int tokens = 0;         // STFT frame count
};

struct StepStats {
  std::uint64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  int tokens = 0;
  double wall_ms = 0.0;
};

struct EpochStats {
  double mean_loss = 0.0;
  int steps = 0;
  double wall_ms = 0.0;
};

/// Trainer owns the parameter/moment state; the scalar type follows
/// cfg.use_double. Items are borrowed and must outlive the trainer.
class Trainer {
 public:
  Trainer(const ScoreNetShape& shape, const SdeParams& sde, const TrainConfig& cfg,
          const std::vector<TrainItem>* items, std::uint64_t init_seed);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Runs one pass over a fresh batch plan (or until max_steps). Returns the
  /// epoch summary; per-step stats go to the callback when provided.
  EpochStats train_epoch(int epoch_index,
                         const std::function<void(const StepStats&)>& on_step = nullptr);

  /// Trains until max_steps (or epochs) is exhausted.
  void train(const std::function<void(const StepStats&)>& on_step = nullptr);

  std::uint64_t step() const;
  Checkpoint to_checkpoint() const;
  void load(const Checkpoint& ckpt);

  /// Mean DSM loss under fixed validation seeds; comparable across
  /// checkpoints and conditioning modes.
  double validate(const std::vector<TrainItem>& val_items) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Mean DSM loss of a checkpoint over `items` with fixed seeds; standalone
/// flavor of Trainer::validate for evaluation pipelines.
double validate_checkpoint(const Checkpoint& ckpt, const std::vector<TrainItem>& items,
                           const TrainConfig& cfg);

}  // namespace avgen
