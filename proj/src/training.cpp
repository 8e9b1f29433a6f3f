// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avgen/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "avgen/common.hpp"

namespace avgen {

CondMode cond_mode_from_string(const std::string& s) {
  if (s == "av") return CondMode::kAv;
  if (s == "audio_only") return CondMode::kAudioOnly;
  if (s == "shuffled_emb") return CondMode::kShuffledEmb;
  throw std::invalid_argument("unknown conditioning mode: " + s);
}

std::string to_string(CondMode m) {
  switch (m) {
    case CondMode::kAv: return "av";
    case CondMode::kAudioOnly: return "audio_only";
    case CondMode::kShuffledEmb: return "shuffled_emb";
  }
  return "?";
}

void TrainConfig::validate() const {
  check(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
  check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "TrainConfig: bad betas");
  check(adam_eps > 0.0, "TrainConfig: adam_eps must be > 0");
  check(max_tokens >= 1, "TrainConfig: max_tokens must be >= 1");
  check(epochs >= 1, "TrainConfig: epochs must be >= 1");
  check(threads >= 0, "TrainConfig: threads must be >= 0");
  check(val_draws >= 1, "TrainConfig: val_draws must be >= 1");
}

DsmLoss dsm_loss(const ComplexSpectrogram& score, const ComplexSpectrogram& z, double sigma) {
  check(score.same_shape(z), "dsm_loss: shape mismatch");
  check(sigma > 0.0, "dsm_loss: sigma must be positive");
  DsmLoss out;
  out.dscore = ComplexSpectrogram(score.num_bins, score.num_frames, score.compressed);
  const double inv_sigma = 1.0 / sigma;
  const double count = static_cast<double>(score.data.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < score.data.size(); ++i) {
    const std::complex<double> r = score.data[i] + z.data[i] * inv_sigma;
    loss += std::norm(r);
    out.dscore.data[i] = 2.0 * r / count;
  }
  out.loss = loss / count;
  return out;
}

double sample_t(std::mt19937_64& rng, const SdeParams& p) {
  std::uniform_real_distribution<double> u(p.t_eps, p.t_max);
  return u(rng);
}

template <typename S>
void adam_step(std::vector<S>& params, const std::vector<S>& grads, std::vector<S>& m,
               std::vector<S>& v, std::uint64_t step_index, const TrainConfig& cfg) {
  check(params.size() == grads.size() && params.size() == m.size() && params.size() == v.size(),
        "adam_step: size mismatch");
  check(step_index >= 1, "adam_step: step_index is 1-based");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      throw std::runtime_error("adam_step: non-finite gradient at index " + std::to_string(i) +
                               " (value " + std::to_string(static_cast<double>(grads[i])) +
                               ", step " + std::to_string(step_index) + ")");
    }
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double md = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
    const double vd = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<S>(md);
    v[i] = static_cast<S>(vd);
    const double upd = cfg.learning_rate * (md / bc1) / (std::sqrt(vd / bc2) + cfg.adam_eps);
    params[i] = static_cast<S>(static_cast<double>(params[i]) - upd);
  }
}

template void adam_step<float>(std::vector<float>&, const std::vector<float>&,
                               std::vector<float>&, std::vector<float>&, std::uint64_t,
                               const TrainConfig&);
template void adam_step<double>(std::vector<double>&, const std::vector<double>&,
                                std::vector<double>&, std::vector<double>&, std::uint64_t,
                                const TrainConfig&);

BatchPlan bucket_batches(const std::vector<int>& token_counts, int max_tokens,
                         std::uint64_t rng_seed) {
  check(max_tokens >= 1, "bucket_batches: max_tokens must be >= 1");
  for (std::size_t i = 0; i < token_counts.size(); ++i) {
    check(token_counts[i] >= 1, "bucket_batches: empty item");
    check(token_counts[i] <= max_tokens,
          "bucket_batches: item " + std::to_string(i) + " exceeds max_tokens");
  }
  std::vector<int> order(token_counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(rng_seed);
  std::shuffle(order.begin(), order.end(), rng);
  constexpr int kBucketWidth = 100;  // coarse length bucket, in tokens
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return token_counts[a] / kBucketWidth < token_counts[b] / kBucketWidth;
  });

  BatchPlan plan;
  std::vector<int> cur;
  int cur_tokens = 0;
  for (int idx : order) {
    if (cur_tokens + token_counts[idx] > max_tokens) {
      plan.batches.push_back(cur);
      cur.clear();
      cur_tokens = 0;
    }
    cur.push_back(idx);
    cur_tokens += token_counts[idx];
  }
  if (!cur.empty()) plan.batches.push_back(cur);
  return plan;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

template <typename S>
struct TrainerState {
  ScoreModel<S> model;
  std::vector<S> params, m, v;
  std::uint64_t step = 0;

  TrainerState(const ScoreNetShape& shape, std::uint64_t init_seed)
      : model(shape), params(model.init_params(init_seed)),
        m(model.param_count(), S(0)), v(model.param_count(), S(0)) {}
};

const LayerEmbeddings* pick_embeddings(const std::vector<TrainItem>& items, int idx,
                                       CondMode mode) {
  switch (mode) {
    case CondMode::kAv: return &items[idx].emb;
    case CondMode::kAudioOnly: return nullptr;
    case CondMode::kShuffledEmb:
      return &items[(idx + 1) % items.size()].emb;
  }
  return nullptr;
}

template <typename S>
double run_validate_impl(const ScoreModel<S>& model, const std::vector<S>& params,
                         const std::vector<TrainItem>& val_items, const TrainConfig& cfg,
                         const SdeParams& sde);

template <typename S>
double run_item(const ScoreModel<S>& model, const std::vector<S>& params,
                typename ScoreModel<S>::Work& work, const std::vector<TrainItem>& items, int idx,
                CondMode mode, const SdeParams& sde, std::uint64_t base_seed,
                std::vector<S>* grad_out) {
  const TrainItem& it = items[idx];
  std::mt19937_64 trng(mix_seed(base_seed, 1));
  const double t = sample_t(trng, sde);
  const ForwardSample fs = sample_forward(it.x0, it.y, t, sde, mix_seed(base_seed, 2));
  const LayerEmbeddings* emb = pick_embeddings(items, idx, mode);
  model.forward(work, params, fs.x_t, it.y, emb, fs.sigma);
  const ComplexSpectrogram sc = model.score(work);
  DsmLoss dl = dsm_loss(sc, fs.noise, fs.sigma);
  if (grad_out) model.backward(work, params, dl.dscore, *grad_out);
  return dl.loss;
}

template <typename S>
double run_validate_impl(const ScoreModel<S>& model, const std::vector<S>& params,
                         const std::vector<TrainItem>& val_items, const TrainConfig& cfg,
                         const SdeParams& sde) {
  check(!val_items.empty(), "validate: empty validation set");
  typename ScoreModel<S>::Work work;
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < val_items.size(); ++i) {
    for (int r = 0; r < cfg.val_draws; ++r) {
      const std::uint64_t base = mix_seed(cfg.val_seed, i * 4096 + r);
      sum += run_item<S>(model, params, work, val_items, static_cast<int>(i), cfg.mode, sde,
                         base, nullptr);
      ++n;
    }
  }
  return sum / n;
}

}  // namespace

struct Trainer::Impl {
  ScoreNetShape shape;
  SdeParams sde;
  TrainConfig cfg;
  const std::vector<TrainItem>* items;
  std::optional<TrainerState<float>> f32;
  std::optional<TrainerState<double>> f64;

  template <typename S>
  TrainerState<S>& state();

  template <typename S>
  double process_batch(TrainerState<S>& st, const std::vector<int>& batch,
                       std::uint64_t plan_step) {
    const int B = static_cast<int>(batch.size());
    std::vector<double> losses(B, 0.0);
    std::vector<std::vector<S>> grads(B);
    for (auto& g : grads) g.assign(st.model.param_count(), S(0));
    std::vector<std::string> errors;

    int nt = cfg.threads > 0 ? cfg.threads
                             : std::max(1u, std::thread::hardware_concurrency());
    nt = std::min(nt, B);
    auto slot_fn = [&](int slot, typename ScoreModel<S>::Work& work) {
      for (int j = slot; j < B; j += nt) {
        const int idx = batch[j];
        const std::uint64_t base = mix_seed(mix_seed(cfg.seed, plan_step), j);
        try {
          losses[j] = run_item(st.model, st.params, work, *items, idx, cfg.mode, sde, base,
                               &grads[j]);
        } catch (const std::exception& e) {
          throw std::runtime_error("train step " + std::to_string(plan_step) + ", item '" +
                                   (*items)[idx].id + "': " + e.what());
        }
      }
    };

    if (nt <= 1) {
      typename ScoreModel<S>::Work work;
      slot_fn(0, work);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errs(nt);
      std::vector<std::unique_ptr<typename ScoreModel<S>::Work>> works(nt);
      for (int s = 0; s < nt; ++s) works[s] = std::make_unique<typename ScoreModel<S>::Work>();
      for (int s = 0; s < nt; ++s) {
        pool.emplace_back([&, s] {
          try {
            slot_fn(s, *works[s]);
          } catch (...) {
            errs[s] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errs) {
        if (e) std::rethrow_exception(e);
      }
    }

    // fixed-order reduction: identical result for any thread count
    std::vector<S>& g0 = grads[0];
    for (int j = 1; j < B; ++j) {
      const std::vector<S>& gj = grads[j];
      for (std::size_t i = 0; i < g0.size(); ++i) g0[i] += gj[i];
    }
    const S inv_b = S(1.0 / B);
    for (auto& g : g0) g *= inv_b;
    double loss = 0.0;
    for (double l : losses) loss += l;
    loss /= B;

    st.step += 1;
    adam_step(st.params, g0, st.m, st.v, st.step, cfg);
    return loss;
  }

  template <typename S>
  EpochStats run_epoch(TrainerState<S>& st, int epoch_index,
                       const std::function<void(const StepStats&)>& on_step) {
    std::vector<int> tokens;
    tokens.reserve(items->size());
    for (const auto& it : *items) tokens.push_back(it.tokens);
    const BatchPlan plan =
        bucket_batches(tokens, cfg.max_tokens, mix_seed(cfg.seed, 0xE70C000ull + epoch_index));

    EpochStats stats;
    const auto t_epoch = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (const auto& batch : plan.batches) {
      if (cfg.max_steps > 0 && st.step >= static_cast<std::uint64_t>(cfg.max_steps)) break;
      const auto t0 = std::chrono::steady_clock::now();
      const double loss = process_batch(st, batch, st.step);
      const auto t1 = std::chrono::steady_clock::now();
      loss_sum += loss;
      stats.steps += 1;
      if (on_step) {
        StepStats s;
        s.step = st.step;
        s.epoch = epoch_index;
        s.loss = loss;
        s.tokens = 0;
        for (int idx : batch) s.tokens += (*items)[idx].tokens;
        s.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        on_step(s);
      }
    }
    stats.mean_loss = stats.steps > 0 ? loss_sum / stats.steps : 0.0;
    stats.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_epoch)
            .count();
    return stats;
  }

};

template <>
TrainerState<float>& Trainer::Impl::state<float>() { return *f32; }
template <>
TrainerState<double>& Trainer::Impl::state<double>() { return *f64; }

Trainer::Trainer(const ScoreNetShape& shape, const SdeParams& sde, const TrainConfig& cfg,
                 const std::vector<TrainItem>* items, std::uint64_t init_seed)
    : impl_(std::make_unique<Impl>()) {
  shape.validate();
  sde.validate();
  cfg.validate();
  check(items != nullptr && !items->empty(), "Trainer: empty corpus");
  for (const auto& it : *items) {
    check(it.tokens == it.x0.num_frames && it.x0.same_shape(it.y), "Trainer: bad item shapes");
    check(it.x0.compressed && it.y.compressed, "Trainer: items must hold compressed spectra");
    check(it.tokens <= cfg.max_tokens, "Trainer: item '" + it.id + "' exceeds max_tokens");
  }
  impl_->shape = shape;
  impl_->sde = sde;
  impl_->cfg = cfg;
  impl_->items = items;
  if (cfg.use_double) {
    impl_->f64.emplace(shape, init_seed);
  } else {
    impl_->f32.emplace(shape, init_seed);
  }
}

Trainer::~Trainer() = default;

EpochStats Trainer::train_epoch(int epoch_index,
                                const std::function<void(const StepStats&)>& on_step) {
  if (impl_->f64) return impl_->run_epoch(*impl_->f64, epoch_index, on_step);
  return impl_->run_epoch(*impl_->f32, epoch_index, on_step);
}

void Trainer::train(const std::function<void(const StepStats&)>& on_step) {
  for (int e = 0; e < impl_->cfg.epochs; ++e) {
    train_epoch(e, on_step);
    if (impl_->cfg.max_steps > 0 && step() >= static_cast<std::uint64_t>(impl_->cfg.max_steps)) {
      break;
    }
  }
}

std::uint64_t Trainer::step() const {
  return impl_->f64 ? impl_->f64->step : impl_->f32->step;
}

namespace {
template <typename S>
Checkpoint state_to_checkpoint(const TrainerState<S>& st, const ScoreNetShape& shape,
                               const SdeParams& sde) {
  Checkpoint c;
  c.shape = shape;
  c.sde = sde;
  c.params.assign(st.params.begin(), st.params.end());
  AdamMoments mo;
  mo.step = st.step;
  mo.m.assign(st.m.begin(), st.m.end());
  mo.v.assign(st.v.begin(), st.v.end());
  c.moments = std::move(mo);
  return c;
}

template <typename S>
void checkpoint_to_state(const Checkpoint& c, TrainerState<S>& st) {
  check(c.params.size() == st.model.param_count(), "checkpoint parameter count mismatch");
  st.params.assign(c.params.begin(), c.params.end());
  if (c.moments) {
    st.step = c.moments->step;
    st.m.assign(c.moments->m.begin(), c.moments->m.end());
    st.v.assign(c.moments->v.begin(), c.moments->v.end());
  } else {
    st.step = 0;
    std::fill(st.m.begin(), st.m.end(), S(0));
    std::fill(st.v.begin(), st.v.end(), S(0));
  }
}
}  // namespace

Checkpoint Trainer::to_checkpoint() const {
  if (impl_->f64) return state_to_checkpoint(*impl_->f64, impl_->shape, impl_->sde);
  return state_to_checkpoint(*impl_->f32, impl_->shape, impl_->sde);
}

void Trainer::load(const Checkpoint& ckpt) {
  if (impl_->f64) {
    checkpoint_to_state(ckpt, *impl_->f64);
  } else {
    checkpoint_to_state(ckpt, *impl_->f32);
  }
}

double Trainer::validate(const std::vector<TrainItem>& val_items) const {
  if (impl_->f64) {
    return run_validate_impl(impl_->f64->model, impl_->f64->params, val_items, impl_->cfg,
                             impl_->sde);
  }
  return run_validate_impl(impl_->f32->model, impl_->f32->params, val_items, impl_->cfg,
                           impl_->sde);
}

double validate_checkpoint(const Checkpoint& ckpt, const std::vector<TrainItem>& items,
                           const TrainConfig& cfg) {
  if (cfg.use_double) {
    ScoreModel<double> model(ckpt.shape);
    std::vector<double> params(ckpt.params.begin(), ckpt.params.end());
    return run_validate_impl(model, params, items, cfg, ckpt.sde);
  }
  ScoreModel<float> model(ckpt.shape);
  std::vector<float> params(ckpt.params.begin(), ckpt.params.end());
  return run_validate_impl(model, params, items, cfg, ckpt.sde);
}

}  // namespace avgen
