#pragma once

#include "transportgrad/estimators.hpp"

#include <vector>

namespace tg {

struct LambdaGradient {
  Matrix b;  // d surrogate / dB, M x D
  Matrix c;
  /// sum over all coordinates of (grad f . v)^2 at the current lambda
  double surrogate = 0.0;
};

/// Gradient of sum_alpha (grad f(z) . v_lambda^alpha(z))^2 with respect to B
/// and C. `grad_f` is grad_z f evaluated at z.
LambdaGradient variance_grad_lambda(const LocationScale& p, const AvfParams& avf,
                                    const Vector& grad_f, const Vector& z);
LambdaGradient variance_grad_lambda(const MvnParams& p, const AvfParams& avf,
                                    const TestFunction& f, const Vector& z);

enum class OptimizerKind { Sgd, Adam };

struct AvfOptimizerConfig {
  double step_size_theta = 1e-3;
  double step_size_lambda = 1e-2;
  int n_steps = 1000;
  int samples_per_step = 1;
  int rank = 1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  /// Adapt lambda only; theta stays at its initial value.
  bool freeze_theta = false;
  /// Ascend E[f] in theta instead of descending it.
  bool maximize = false;
  /// Trailing window for the recorded variance estimate.
  int window = 500;
};

/// B = 0 and C small random. The all-zero point is a stationary point of the
/// surrogate in (B, C), so starting exactly there never moves; with B = 0 the
/// fields still coincide with the reparameterisation ones.
AvfParams initial_avf(int rank, int dim, RngStream& rng, double scale = 0.1);

struct AvfTraceRow {
  int step = 0;
  double surrogate = 0.0;        // per-step second moment, averaged over samples_per_step
  double window_variance = 0.0;  // trailing-window centered variance of the gradient
  double theta_norm = 0.0;
};

struct AvfRunResult {
  std::vector<AvfTraceRow> trace;
  MvnParams params;
  AvfParams avf;
  /// lambda at the start, midpoint and end of the run.
  std::vector<AvfParams> checkpoints;
};

/// Joint stochastic optimisation of theta = (mu, L) and lambda = (B, C).
/// Each step draws samples from q_theta, takes the pathwise theta-gradient
/// with the current fields and descends the variance surrogate in lambda.
/// Throws std::runtime_error on a non-finite gradient or when L leaves the
/// positive-diagonal region.
AvfRunResult avf_optimize(const MvnParams& params_init, const AvfParams& avf_init,
                          const TestFunction& f, const AvfOptimizerConfig& cfg, RngStream& rng);

/// Mean of the trace surrogate over steps [begin, end).
double window_mean_surrogate(const std::vector<AvfTraceRow>& trace, int begin, int end);

}  // namespace tg
