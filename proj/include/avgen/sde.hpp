// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>

#include "avgen/signal.hpp"

namespace avgen {

/// Forward process dx = gamma*(y - x) dt + g(t) dw with the geometric
/// diffusion schedule g(t) = sigma_min * (sigma_max/sigma_min)^t *
/// sqrt(2 * ln(sigma_max/sigma_min)).
struct SdeParams {
  double gamma = 1.5;
  double sigma_min = 0.05;
  double sigma_max = 0.5;
  double t_max = 1.0;
  double t_eps = 0.03;

  void validate() const;
};

/// Gaussian perturbation kernel p(x_t | x_0, y): per-bin complex normal with
/// shared scalar std.
struct PerturbationKernel {
  ComplexSpectrogram mean;
  double std = 0.0;
};

struct ForwardSample {
  ComplexSpectrogram x_t;
  ComplexSpectrogram noise;  // the unit draw z, E|z|^2 = 1 per bin
  double sigma = 0.0;
};

ComplexSpectrogram drift(const ComplexSpectrogram& x, const ComplexSpectrogram& y,
                         const SdeParams& p);

double diffusion(double t, const SdeParams& p);

/// Closed-form std of the perturbation kernel; solves
/// d(sigma^2)/dt = -2*gamma*sigma^2 + g(t)^2 with sigma(0) = 0.
double marginal_std(double t, const SdeParams& p);

PerturbationKernel marginal(const ComplexSpectrogram& x0, const ComplexSpectrogram& y,
                            double t, const SdeParams& p);

/// mean + sigma * z with z circularly-symmetric complex standard normal
/// (independent re/im parts of variance 1/2 each).
ForwardSample sample_forward(const ComplexSpectrogram& x0, const ComplexSpectrogram& y,
                             double t, const SdeParams& p, std::uint64_t rng_seed);

/// Exact conditional score for a single-point data distribution:
/// -(x_t - mean(t)) / sigma(t)^2. Used as the solver-validation oracle.
ComplexSpectrogram analytic_score(const ComplexSpectrogram& x_t, const ComplexSpectrogram& x0,
                                  const ComplexSpectrogram& y, double t, const SdeParams& p);

/// RK4 integration of the variance ODE with an arbitrary diffusion
/// coefficient; reference oracle for marginal_std.
double variance_ode_rk4(double t, double gamma, const std::function<double(double)>& g,
                        int steps = 4000);

/// Scalar-state Euler-Maruyama simulation of the forward SDE; returns the
/// empirical mean and std at time t over `paths` trajectories.
struct ScalarMoments {
  double mean = 0.0;
  double std = 0.0;
};
ScalarMoments em_forward_moments(double x0, double y, double t, const SdeParams& p,
                                 int steps, int paths, std::uint64_t rng_seed);

}  // namespace avgen
