#include "transportgrad/avf.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tg {

LambdaGradient variance_grad_lambda(const LocationScale& p, const AvfParams& avf,
                                    const Vector& grad_f, const Vector& z) {
  const int d = p.dim();
  if (avf.dim() != d || grad_f.size() != d || z.size() != d) {
    throw std::invalid_argument("variance_grad_lambda: shape mismatch");
  }
  const Vector w = p.whiten(z);
  const Vector lg = p.chol.transpose() * grad_f;
  const Matrix s = avf.pair_scalars();

  Matrix g_mat = Matrix::Zero(d, d);
  double surrogate = grad_f.squaredNorm();
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b <= a; ++b) {
      double g = grad_f[a] * w[b];
      if (a != b) {
        const double null_dot = lg[a] * w[b] - lg[b] * w[a];
        g += s(a, b) * null_dot;
        g_mat(a, b) = 2.0 * g * null_dot;
      }
      surrogate += g * g;
    }
  }
  LambdaGradient out;
  out.b = avf.c * g_mat.transpose();
  out.c = avf.b * g_mat;
  out.surrogate = surrogate;
  return out;
}

LambdaGradient variance_grad_lambda(const MvnParams& p, const AvfParams& avf,
                                    const TestFunction& f, const Vector& z) {
  return variance_grad_lambda(p, avf, f.gradient(z), z);
}

AvfParams initial_avf(int rank, int dim, RngStream& rng, double scale) {
  Matrix c(rank, dim);
  for (int l = 0; l < rank; ++l)
    for (int a = 0; a < dim; ++a) c(l, a) = scale * rng.normal();
  return AvfParams(Matrix::Zero(rank, dim), std::move(c));
}

namespace {

Vector theta_vector(const MvnParams& p) {
  const auto coords = p.coordinates();
  Vector out(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t n = 0; n < coords.size(); ++n) out[static_cast<Eigen::Index>(n)] = p.get(coords[n]);
  return out;
}

MvnParams theta_from_vector(const MvnParams& like, const Vector& v) {
  MvnParams out = like;
  const auto coords = like.coordinates();
  for (std::size_t n = 0; n < coords.size(); ++n) out.set(coords[n], v[static_cast<Eigen::Index>(n)]);
  for (int a = 0; a < out.dim(); ++a) {
    if (!(out.chol(a, a) > 0.0)) {
      throw std::runtime_error("avf_optimize: Cholesky diagonal left the positive region");
    }
  }
  return out;
}

Vector lambda_vector(const AvfParams& avf) {
  Vector out(avf.b.size() + avf.c.size());
  out << avf.b.reshaped(), avf.c.reshaped();
  return out;
}

AvfParams lambda_from_vector(const AvfParams& like, const Vector& v) {
  const Eigen::Index n = like.b.size();
  return AvfParams(v.head(n).reshaped(like.rank(), like.dim()),
                   v.tail(n).reshaped(like.rank(), like.dim()));
}

}  // namespace

AvfRunResult avf_optimize(const MvnParams& params_init, const AvfParams& avf_init,
                          const TestFunction& f, const AvfOptimizerConfig& cfg, RngStream& rng) {
  if (avf_init.dim() != params_init.dim()) {
    throw std::invalid_argument("avf_optimize: avf dimension does not match the distribution");
  }
  if (cfg.n_steps < 1 || cfg.samples_per_step < 1 || cfg.window < 1 ||
      !(cfg.step_size_theta >= 0.0) || !(cfg.step_size_lambda >= 0.0)) {
    throw std::invalid_argument("avf_optimize: invalid optimizer configuration");
  }

  MvnParams params = params_init;
  AvfParams avf = avf_init;
  Vector theta = theta_vector(params);
  Vector lambda = lambda_vector(avf);
  AdamState theta_state = AdamState::fresh(theta.size(), cfg.step_size_theta);
  AdamState lambda_state = AdamState::fresh(lambda.size(), cfg.step_size_lambda);

  AvfRunResult result{{}, params, avf, {avf}};
  result.trace.reserve(cfg.n_steps);

  // trailing window of per-step gradients for the centered variance estimate
  std::vector<Vector> ring(static_cast<std::size_t>(cfg.window));
  std::vector<double> ring_sq(static_cast<std::size_t>(cfg.window), 0.0);
  Vector window_sum = Vector::Zero(theta.size());
  double window_sq = 0.0;

  for (int step = 0; step < cfg.n_steps; ++step) {
    Vector theta_grad = Vector::Zero(theta.size());
    Matrix grad_b = Matrix::Zero(avf.rank(), avf.dim());
    Matrix grad_c = Matrix::Zero(avf.rank(), avf.dim());
    double surrogate = 0.0;
    for (int n = 0; n < cfg.samples_per_step; ++n) {
      const Vector z = sample(params, rng).value;
      const Vector gf = f.gradient(z);
      theta_grad += location_scale_fields_dot(params, avf, gf, z);
      const LambdaGradient lg = variance_grad_lambda(params, avf, gf, z);
      grad_b += lg.b;
      grad_c += lg.c;
      surrogate += lg.surrogate;
    }
    const double inv_n = 1.0 / cfg.samples_per_step;
    theta_grad *= inv_n;
    grad_b *= inv_n;
    grad_c *= inv_n;
    surrogate *= inv_n;
    if (!theta_grad.allFinite() || !grad_b.allFinite() || !grad_c.allFinite()) {
      throw std::runtime_error("avf_optimize: non-finite gradient at step " + std::to_string(step));
    }

    const std::size_t slot = static_cast<std::size_t>(step % cfg.window);
    if (step >= cfg.window) {
      window_sum -= ring[slot];
      window_sq -= ring_sq[slot];
    }
    ring[slot] = theta_grad;
    ring_sq[slot] = theta_grad.squaredNorm();
    window_sum += theta_grad;
    window_sq += ring_sq[slot];
    const double count = std::min(step + 1, cfg.window);
    const double window_variance =
        std::max(0.0, window_sq / count - (window_sum / count).squaredNorm());

    if (cfg.step_size_lambda > 0.0) {
      Vector lambda_grad(lambda.size());
      lambda_grad << grad_b.reshaped(), grad_c.reshaped();
      if (cfg.optimizer == OptimizerKind::Adam) {
        adam_update(lambda_state, lambda, lambda_grad);
      } else {
        lambda -= cfg.step_size_lambda * lambda_grad;
      }
      avf = lambda_from_vector(avf, lambda);
    }
    if (!cfg.freeze_theta && cfg.step_size_theta > 0.0) {
      const Vector descent = cfg.maximize ? Vector(-theta_grad) : theta_grad;
      if (cfg.optimizer == OptimizerKind::Adam) {
        adam_update(theta_state, theta, descent);
      } else {
        theta -= cfg.step_size_theta * descent;
      }
      params = theta_from_vector(params, theta);
    }

    result.trace.push_back({step, surrogate, window_variance, theta.norm()});
    if (step + 1 == cfg.n_steps / 2) result.checkpoints.push_back(avf);
  }
  if (cfg.n_steps < 2) result.checkpoints.push_back(avf);
  result.checkpoints.push_back(avf);
  result.params = params;
  result.avf = avf;
  return result;
}

double window_mean_surrogate(const std::vector<AvfTraceRow>& trace, int begin, int end) {
  begin = std::max(begin, 0);
  end = std::min<int>(end, static_cast<int>(trace.size()));
  if (end <= begin) throw std::invalid_argument("window_mean_surrogate: empty window");
  double sum = 0.0;
  for (int i = begin; i < end; ++i) sum += trace[static_cast<std::size_t>(i)].surrogate;
  return sum / (end - begin);
}

}  // namespace tg
