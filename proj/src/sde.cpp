// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avgen/sde.hpp"

#include <cmath>
#include <random>

#include "avgen/common.hpp"

namespace avgen {

void SdeParams::validate() const {
  check(gamma >= 0.0, "SdeParams: gamma must be >= 0");
  check(sigma_min > 0.0, "SdeParams: sigma_min must be > 0");
  check(sigma_max > sigma_min, "SdeParams: sigma_max must exceed sigma_min");
  check(t_eps > 0.0 && t_eps < t_max, "SdeParams: need 0 < t_eps < t_max");
}

namespace {
void check_time(double t, const SdeParams& p) {
  check(t >= 0.0 && t <= p.t_max, "process time outside [0, T]");
}
}  // namespace

ComplexSpectrogram drift(const ComplexSpectrogram& x, const ComplexSpectrogram& y,
                         const SdeParams& p) {
  check(x.same_shape(y), "drift: shape mismatch");
  check(x.compressed == y.compressed, "drift: compression flag mismatch");
  ComplexSpectrogram out = x;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = p.gamma * (y.data[i] - x.data[i]);
  return out;
}

double diffusion(double t, const SdeParams& p) {
  check_time(t, p);
  const double ratio = p.sigma_max / p.sigma_min;
  return p.sigma_min * std::pow(ratio, t) * std::sqrt(2.0 * std::log(ratio));
}

double marginal_std(double t, const SdeParams& p) {
  check_time(t, p);
  const double logr = std::log(p.sigma_max / p.sigma_min);
  const double var = p.sigma_min * p.sigma_min * logr / (p.gamma + logr) *
                     (std::exp(2.0 * logr * t) - std::exp(-2.0 * p.gamma * t));
  return std::sqrt(std::max(0.0, var));
}

PerturbationKernel marginal(const ComplexSpectrogram& x0, const ComplexSpectrogram& y,
                            double t, const SdeParams& p) {
  check(x0.same_shape(y), "marginal: shape mismatch");
  check(x0.compressed == y.compressed, "marginal: compression flag mismatch");
  check_time(t, p);
  PerturbationKernel k;
  k.mean = x0;
  const double decay = std::exp(-p.gamma * t);
  for (size_t i = 0; i < k.mean.data.size(); ++i) {
    k.mean.data[i] = y.data[i] + (x0.data[i] - y.data[i]) * decay;
  }
  k.std = marginal_std(t, p);
  return k;
}

ForwardSample sample_forward(const ComplexSpectrogram& x0, const ComplexSpectrogram& y,
                             double t, const SdeParams& p, std::uint64_t rng_seed) {
  PerturbationKernel k = marginal(x0, y, t, p);
  ForwardSample s;
  s.sigma = k.std;
  s.noise = ComplexSpectrogram(x0.num_bins, x0.num_frames, x0.compressed);
  s.noise.frame_rate = x0.frame_rate;
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  for (auto& z : s.noise.data) z = {gauss(rng), gauss(rng)};
  s.x_t = std::move(k.mean);
  for (size_t i = 0; i < s.x_t.data.size(); ++i) s.x_t.data[i] += s.sigma * s.noise.data[i];
  return s;
}

ComplexSpectrogram analytic_score(const ComplexSpectrogram& x_t, const ComplexSpectrogram& x0,
                                  const ComplexSpectrogram& y, double t, const SdeParams& p) {
  PerturbationKernel k = marginal(x0, y, t, p);
  check(k.std > 0.0, "analytic_score: sigma(t) is zero");
  check(x_t.same_shape(x0), "analytic_score: shape mismatch");
  ComplexSpectrogram out = x_t;
  const double inv_var = 1.0 / (k.std * k.std);
  for (size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = -(x_t.data[i] - k.mean.data[i]) * inv_var;
  }
  return out;
}

double variance_ode_rk4(double t, double gamma, const std::function<double(double)>& g,
                        int steps) {
  check(steps >= 1, "variance_ode_rk4: steps must be >= 1");
  auto f = [&](double u, double v) {
    const double gu = g(u);
    return -2.0 * gamma * v + gu * gu;
  };
  const double h = t / steps;
  double v = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double u = i * h;
    const double k1 = f(u, v);
    const double k2 = f(u + 0.5 * h, v + 0.5 * h * k1);
    const double k3 = f(u + 0.5 * h, v + 0.5 * h * k2);
    const double k4 = f(u + h, v + h * k3);
    v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return v;
}

ScalarMoments em_forward_moments(double x0, double y, double t, const SdeParams& p,
                                 int steps, int paths, std::uint64_t rng_seed) {
  check_time(t, p);
  check(steps >= 1 && paths >= 2, "em_forward_moments: bad steps/paths");
  const double dt = t / steps;
  const double sqdt = std::sqrt(dt);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < paths; ++i) {
    double x = x0;
    for (int s = 0; s < steps; ++s) {
      const double u = s * dt;
      x += p.gamma * (y - x) * dt + diffusion(u, p) * sqdt * gauss(rng);
    }
    sum += x;
    sum_sq += x * x;
  }
  ScalarMoments m;
  m.mean = sum / paths;
  m.std = std::sqrt(std::max(0.0, (sum_sq - sum * sum / paths) / (paths - 1)));
  return m;
}

}  // namespace avgen
