// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avgen/sampler.hpp"

#include <chrono>
#include <cmath>
#include <memory>

#include "avgen/common.hpp"

namespace avgen {

void SamplerConfig::validate() const {
  check(steps >= 1, "SamplerConfig: steps must be >= 1");
  check(corrector_steps >= 0, "SamplerConfig: corrector_steps must be >= 0");
  check(corrector_snr > 0.0, "SamplerConfig: corrector_snr must be > 0");
  check(max_trajectory_states >= 2, "SamplerConfig: trajectory guard too small");
}

namespace {

void draw_complex_normal(ComplexSpectrogram& z, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  for (auto& c : z.data) c = {gauss(rng), gauss(rng)};
}

void check_finite(const ComplexSpectrogram& x, const char* where, double t) {
  for (const auto& c : x.data) {
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
      throw std::runtime_error(std::string(where) + ": non-finite state at t=" +
                               std::to_string(t));
    }
  }
}

double l2_norm(const ComplexSpectrogram& x) {
  double s = 0.0;
  for (const auto& c : x.data) s += std::norm(c);
  return std::sqrt(s);
}

}  // namespace

ComplexSpectrogram predictor_step(const ComplexSpectrogram& x, const ComplexSpectrogram& y,
                                  const ComplexSpectrogram& score, double t, double dt,
                                  const SdeParams& p, std::mt19937_64& rng) {
  check(dt > 0.0, "predictor_step: dt must be positive");
  check(x.same_shape(y) && x.same_shape(score), "predictor_step: shape mismatch");
  check(t - dt >= p.t_eps - 1e-9, "predictor_step: step would pass t_eps");
  const double g = diffusion(t, p);
  const double g2 = g * g;
  const double noise_scale = g * std::sqrt(dt);

  ComplexSpectrogram z(x.num_bins, x.num_frames, x.compressed);
  draw_complex_normal(z, rng);
  ComplexSpectrogram out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] += (-p.gamma * (y.data[i] - x.data[i]) + g2 * score.data[i]) * dt +
                   noise_scale * z.data[i];
  }
  check_finite(out, "predictor_step", t);
  return out;
}

ComplexSpectrogram corrector_step(const ComplexSpectrogram& x, const ScoreFn& score_fn, double t,
                                  double r, std::mt19937_64& rng) {
  check(r > 0.0, "corrector_step: snr parameter must be positive");
  const ComplexSpectrogram s = score_fn(x, t);
  check(x.same_shape(s), "corrector_step: score shape mismatch");
  ComplexSpectrogram z(x.num_bins, x.num_frames, x.compressed);
  draw_complex_normal(z, rng);
  const double s_norm = l2_norm(s);
  if (s_norm == 0.0) return x;  // documented: skip on zero score
  const double z_norm = l2_norm(z);
  const double eps = 2.0 * (r * z_norm / s_norm) * (r * z_norm / s_norm);
  const double noise_scale = std::sqrt(2.0 * eps);
  ComplexSpectrogram out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] += eps * s.data[i] + noise_scale * z.data[i];
  }
  check_finite(out, "corrector_step", t);
  return out;
}

ComplexSpectrogram reverse_sde(const ComplexSpectrogram& y, const ScoreFn& score_fn,
                               const SdeParams& p, const SamplerConfig& cfg,
                               std::vector<ComplexSpectrogram>* trajectory,
                               const std::function<void(int)>& on_step) {
  p.validate();
  cfg.validate();
  if (trajectory) {
    check(cfg.steps + 1 <= cfg.max_trajectory_states,
          "reverse_sde: trajectory would exceed the state guard");
    trajectory->clear();
  }
  std::mt19937_64 rng(cfg.seed);

  // x_T ~ N(y, sigma(T)^2): the forward marginal's large-t behavior around y
  ComplexSpectrogram x = y;
  {
    ComplexSpectrogram z(y.num_bins, y.num_frames, y.compressed);
    draw_complex_normal(z, rng);
    const double sigma_T = marginal_std(p.t_max, p);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += sigma_T * z.data[i];
  }
  if (trajectory) trajectory->push_back(x);

  const double dt = (p.t_max - p.t_eps) / cfg.steps;
  for (int i = 0; i < cfg.steps; ++i) {
    const double t = p.t_max - i * dt;
    const ComplexSpectrogram s = score_fn(x, t);
    x = predictor_step(x, y, s, t, dt, p, rng);
    const double t_next = t - dt;
    for (int c = 0; c < cfg.corrector_steps; ++c) {
      x = corrector_step(x, score_fn, t_next, cfg.corrector_snr, rng);
    }
    if (trajectory) trajectory->push_back(x);
    if (on_step) on_step(i);
  }
  return x;
}

namespace {

// Holds a model instance and its workspace alive inside the returned closure.
template <typename S>
ScoreFn model_score_fn(const Checkpoint& ckpt, const ComplexSpectrogram& y,
                       const LayerEmbeddings* emb, int* nfe_counter) {
  auto model = std::make_shared<ScoreModel<S>>(ckpt.shape);
  auto params =
      std::make_shared<std::vector<S>>(ckpt.params.begin(), ckpt.params.end());
  auto work = std::make_shared<typename ScoreModel<S>::Work>();
  const SdeParams sde = ckpt.sde;
  return [model, params, work, &y, emb, sde, nfe_counter](const ComplexSpectrogram& x,
                                                          double t) {
    model->forward(*work, *params, x, y, emb, marginal_std(t, sde));
    if (nfe_counter) ++*nfe_counter;
    return model->score(*work);
  };
}

}  // namespace

ScoreFn make_model_score_fn(const Checkpoint& ckpt, const ComplexSpectrogram& y,
                            const LayerEmbeddings* emb, bool use_double, int* nfe_counter) {
  if (use_double) return model_score_fn<double>(ckpt, y, emb, nfe_counter);
  return model_score_fn<float>(ckpt, y, emb, nfe_counter);
}

EnhanceResult enhance(const Waveform& noisy, const LayerEmbeddings* emb, const Checkpoint& ckpt,
                      const StftConfig& stft_cfg, const SamplerConfig& cfg, bool use_double) {
  const auto t_start = std::chrono::steady_clock::now();
  ckpt.sde.validate();
  cfg.validate();
  const ComplexSpectrogram y = compress(stft(noisy, stft_cfg));

  if (emb) {
    // audio frames per video frame is 4; allow one video frame of slack
    const int audio_frames_from_emb = 4 * emb->frames;
    check(std::abs(audio_frames_from_emb - y.num_frames) <= 2 * 4,
          "enhance: embeddings cover " + std::to_string(emb->frames) +
              " video frames but the clip has " + std::to_string(y.num_frames) +
              " audio frames");
  }

  EnhanceResult res;
  ScoreFn fn = make_model_score_fn(ckpt, y, emb, use_double, &res.nfe);
  auto t_step = std::chrono::steady_clock::now();
  auto on_step = [&](int) {
    const auto now = std::chrono::steady_clock::now();
    res.step_ms.push_back(std::chrono::duration<double, std::milli>(now - t_step).count());
    t_step = now;
  };
  const ComplexSpectrogram x_final = reverse_sde(y, fn, ckpt.sde, cfg, nullptr, on_step);

  res.wave = istft(decompress(x_final), stft_cfg, noisy.length());
  res.total_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
          .count();
  return res;
}

}  // namespace avgen
