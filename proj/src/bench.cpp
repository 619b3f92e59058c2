#include "transportgrad/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tg {

// ---------------------------------------------------------------------------
// Random instances

MvnParams random_mvn(int dim, RngStream& rng, double off_diag) {
  Matrix l = Matrix::Identity(dim, dim);
  for (int a = 1; a < dim; ++a)
    for (int b = 0; b < a; ++b) l(a, b) = off_diag * rng.normal();
  return MvnParams(rng.normal_vector(dim), std::move(l));
}

namespace {

Vector log_normal_vector(int n, double sd, RngStream& rng) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = std::exp(sd * rng.normal());
  return v;
}

Matrix log_normal_matrix(int rows, int cols, double sd, RngStream& rng) {
  Matrix m(rows, cols);
  for (int j = 0; j < rows; ++j)
    for (int i = 0; i < cols; ++i) m(j, i) = std::exp(sd * rng.normal());
  return m;
}

MixtureParams assemble(MixtureFamily family, Vector logits, Matrix means, double scale_sd,
                       RngStream& rng) {
  const int k = static_cast<int>(logits.size());
  const int d = static_cast<int>(means.cols());
  switch (family) {
    case MixtureFamily::SharedDiagCov:
      return MixtureParams(SharedDiagCov{std::move(logits), std::move(means),
                                         log_normal_vector(d, scale_sd, rng)});
    case MixtureFamily::ZeroMeanGsm: {
      Vector scale = log_normal_vector(d, scale_sd, rng);
      return MixtureParams(
          ZeroMeanGsm{std::move(logits), std::move(scale), log_normal_vector(k, scale_sd, rng)});
    }
    case MixtureFamily::Gsm: {
      Vector scale = log_normal_vector(d, scale_sd, rng);
      return MixtureParams(Gsm{std::move(logits), std::move(means), std::move(scale),
                               log_normal_vector(k, scale_sd, rng)});
    }
    case MixtureFamily::DiagNormals:
      break;
  }
  return MixtureParams(
      DiagNormals{std::move(logits), std::move(means), log_normal_matrix(k, d, scale_sd, rng)});
}

}  // namespace

MixtureParams random_mixture(MixtureFamily family, int dim, int components, RngStream& rng) {
  Vector logits = rng.normal_vector(components);
  Matrix means(components, dim);
  for (int j = 0; j < components; ++j) means.row(j) = rng.normal_vector(dim).transpose();
  return assemble(family, std::move(logits), std::move(means), 0.3, rng);
}

MvnParams off_diagonal_mvn(int dim, double r, RngStream& rng) {
  Matrix l = Matrix::Identity(dim, dim);
  for (int a = 1; a < dim; ++a)
    for (int b = 0; b < a; ++b) l(a, b) = r * rng.uniform();
  return MvnParams(Vector::Zero(dim), std::move(l));
}

MixtureParams sphere_mixture(MixtureFamily family, int dim, int components, double radius,
                             double spread, RngStream& rng) {
  Matrix means(components, dim);
  for (int j = 0; j < components; ++j) {
    Vector v = rng.normal_vector(dim);
    means.row(j) = radius * v.normalized().transpose();
  }
  return assemble(family, Vector::Zero(components), std::move(means), spread, rng);
}

// ---------------------------------------------------------------------------
// Paired variance ratios

BlockMoments::BlockMoments(int n_coords, int n_blocks)
    : block_sum_(Matrix::Zero(n_blocks, n_coords)),
      block_sq_(Vector::Zero(n_blocks)),
      block_rows_(static_cast<std::size_t>(n_blocks), 0),
      coord_sq_(Vector::Zero(n_coords)) {
  if (n_blocks < 1) throw std::invalid_argument("BlockMoments: need at least one block");
}

void BlockMoments::add(const Vector& row) {
  if (row.size() != block_sum_.cols()) throw std::invalid_argument("BlockMoments: row size");
  const int b = count_ % n_blocks();
  block_sum_.row(b) += row.transpose();
  block_sq_[b] += row.squaredNorm();
  coord_sq_ += row.cwiseAbs2();
  ++block_rows_[static_cast<std::size_t>(b)];
  ++count_;
}

Vector BlockMoments::per_coordinate_variance() const {
  if (count_ == 0) throw std::invalid_argument("BlockMoments: empty");
  const Vector mean = block_sum_.colwise().sum().transpose() / count_;
  return (coord_sq_ / count_ - mean.cwiseAbs2()).cwiseMax(0.0);
}

double BlockMoments::total_variance() const {
  return total_variance(std::vector<int>(static_cast<std::size_t>(n_blocks()), 1));
}

double BlockMoments::total_variance(const std::vector<int>& block_counts) const {
  Vector sum = Vector::Zero(block_sum_.cols());
  double sq = 0.0;
  double rows = 0.0;
  for (int b = 0; b < n_blocks(); ++b) {
    const int c = block_counts[static_cast<std::size_t>(b)];
    if (c == 0) continue;
    sum += c * block_sum_.row(b).transpose();
    sq += c * block_sq_[b];
    rows += c * block_rows_[static_cast<std::size_t>(b)];
  }
  if (rows == 0.0) throw std::invalid_argument("BlockMoments: empty");
  return std::max(0.0, sq / rows - (sum / rows).squaredNorm());
}

RatioEstimate paired_variance_ratio(const BlockMoments& num, const BlockMoments& den,
                                    int n_bootstrap, double confidence, RngStream& rng) {
  if (num.count() != den.count() || num.n_blocks() != den.n_blocks()) {
    throw std::invalid_argument("paired_variance_ratio: accumulators are not paired");
  }
  RatioEstimate out;
  out.ratio = num.total_variance() / den.total_variance();

  const Vector vn = num.per_coordinate_variance();
  const Vector vd = den.per_coordinate_variance();
  double acc = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < vd.size(); ++c) {
    if (vd[c] > 0.0) {
      acc += vn[c] / vd[c];
      ++used;
    }
  }
  out.mean_coord_ratio = used > 0 ? acc / used : std::numeric_limits<double>::quiet_NaN();

  if (n_bootstrap < 1) {
    out.ci_low = out.ci_high = out.ratio;
    return out;
  }
  const int g = num.n_blocks();
  std::vector<double> ratios;
  ratios.reserve(static_cast<std::size_t>(n_bootstrap));
  std::vector<int> counts(static_cast<std::size_t>(g));
  for (int rep = 0; rep < n_bootstrap; ++rep) {
    std::fill(counts.begin(), counts.end(), 0);
    for (int n = 0; n < g; ++n) {
      const int b = std::min(g - 1, static_cast<int>(rng.uniform() * g));
      ++counts[static_cast<std::size_t>(b)];
    }
    ratios.push_back(num.total_variance(counts) / den.total_variance(counts));
  }
  std::sort(ratios.begin(), ratios.end());
  const double tail = 0.5 * (1.0 - confidence);
  const auto pick = [&](double q) {
    const double pos = q * (n_bootstrap - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, ratios.size() - 1);
    return ratios[lo] + (pos - std::floor(pos)) * (ratios[hi] - ratios[lo]);
  };
  out.ci_low = pick(tail);
  out.ci_high = pick(1.0 - tail);
  return out;
}

// ---------------------------------------------------------------------------
// Toy variational inference

double ToyTarget::log_unnormalized(const Vector& z) const {
  return log_density(density, z) + log_normalizer;
}

Vector ToyTarget::grad_log_unnormalized(const Vector& z) const {
  return grad_log_density(density, z);
}

ToyTarget default_toy_target() {
  Vector logits(2);
  logits << std::log(0.35), std::log(0.65);
  Matrix means(2, 2);
  means << -1.2, 0.3, 1.0, -0.4;
  Matrix scales(2, 2);
  scales << 0.8, 1.1, 1.0, 0.6;
  return ToyTarget{MixtureParams(DiagNormals{logits, means, scales}), 1.5};
}

std::string sgvi_estimator_name(SgviEstimator e) {
  switch (e) {
    case SgviEstimator::Pathwise: return "pathwise";
    case SgviEstimator::Hybrid: return "hybrid";
    case SgviEstimator::Score: return "score";
    case SgviEstimator::GumbelSoft: return "gs_soft";
    case SgviEstimator::GumbelHard: return "gs_hard";
  }
  return "";
}

std::optional<SgviEstimator> parse_sgvi_estimator(const std::string& name) {
  for (auto e : {SgviEstimator::Pathwise, SgviEstimator::Hybrid, SgviEstimator::Score,
                 SgviEstimator::GumbelSoft, SgviEstimator::GumbelHard}) {
    if (sgvi_estimator_name(e) == name) return e;
  }
  return std::nullopt;
}

TestFunction elbo_integrand(const ToyTarget& target, const MixtureParams& q) {
  TestFunction f;
  f.name = "elbo_integrand";
  f.value = [target, q](const Vector& z) {
    return target.log_unnormalized(z) - log_density(q, z);
  };
  f.gradient = [target, q](const Vector& z) -> Vector {
    return target.grad_log_unnormalized(z) - grad_log_density(q, z);
  };
  return f;
}

double elbo_estimate(const ToyTarget& target, const MixtureParams& q, int n_samples,
                     RngStream& rng) {
  if (n_samples < 1) throw std::invalid_argument("elbo_estimate: need at least one sample");
  double acc = 0.0;
  for (int n = 0; n < n_samples; ++n) {
    const Vector z = sample(q, rng).value;
    acc += target.log_unnormalized(z) - log_density(q, z);
  }
  return acc / n_samples;
}

Vector elbo_gradient(const ToyTarget& target, const MixtureParams& q, SgviEstimator estimator,
                     double temperature, RngStream& rng) {
  const TestFunction f = elbo_integrand(target, q);
  switch (estimator) {
    case SgviEstimator::Pathwise:
      return mixture_pathwise_grad(q, f, sample(q, rng).value);
    case SgviEstimator::Hybrid:
      return hybrid_grad(q, f, sample(q, rng));
    case SgviEstimator::Score:
      return score_grad(q, f, sample(q, rng));
    case SgviEstimator::GumbelSoft:
      return gumbel_softmax_grad(q, f, {temperature, GumbelMode::Soft}, rng);
    case SgviEstimator::GumbelHard:
      return gumbel_softmax_grad(q, f, {temperature, GumbelMode::Hard}, rng);
  }
  throw std::invalid_argument("elbo_gradient: unknown estimator");
}

MixtureParams sgvi_initial_q(RngStream& rng) {
  Matrix means(2, 2);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) means(j, i) = 0.5 * rng.normal();
  return MixtureParams(DiagNormals{Vector::Zero(2), std::move(means), Matrix::Ones(2, 2)});
}

std::vector<SgviTraceRow> run_sgvi(const ToyTarget& target, const MixtureParams& q_init,
                                   SgviEstimator estimator, const SgviConfig& cfg,
                                   RngStream& rng) {
  if (q_init.family() != MixtureFamily::DiagNormals) {
    throw std::invalid_argument("run_sgvi: variational family must be diag_normals");
  }
  if (cfg.n_steps < 0 || cfg.samples_per_step < 1 || cfg.log_every < 1 || cfg.eval_samples < 1 ||
      cfg.final_eval_samples < 1 || !(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("run_sgvi: invalid configuration");
  }
  const int k = q_init.components();
  const int d = q_init.dim();
  const auto& init = q_init.as<DiagNormals>();

  // unconstrained vector (logits, means, log scales), same order as the coordinates
  Vector eta(k + 2 * k * d);
  eta.head(k) = init.logits;
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < d; ++i) {
      eta[k + j * d + i] = init.means(j, i);
      eta[k + k * d + j * d + i] = std::log(init.scales(j, i));
    }
  }
  const auto unpack = [&](const Vector& v) {
    DiagNormals out{v.head(k), Matrix(k, d), Matrix(k, d)};
    for (int j = 0; j < k; ++j) {
      for (int i = 0; i < d; ++i) {
        out.means(j, i) = v[k + j * d + i];
        out.scales(j, i) = std::exp(v[k + k * d + j * d + i]);
      }
    }
    return MixtureParams(std::move(out));
  };

  RngStream grad_rng = rng.split(1);
  RngStream eval_rng = rng.split(2);
  AdamState adam = AdamState::fresh(eta.size(), cfg.learning_rate);
  std::vector<SgviTraceRow> trace;
  const auto record = [&](int step, const MixtureParams& q, int n_eval) {
    const double elbo = elbo_estimate(target, q, n_eval, eval_rng);
    trace.push_back({step, elbo, target.log_normalizer - elbo});
  };

  MixtureParams q = q_init;
  record(0, q, cfg.n_steps == 0 ? cfg.final_eval_samples : cfg.eval_samples);
  for (int step = 1; step <= cfg.n_steps; ++step) {
    Vector g = Vector::Zero(eta.size());
    for (int n = 0; n < cfg.samples_per_step; ++n) {
      g += elbo_gradient(target, q, estimator, cfg.temperature, grad_rng);
    }
    g /= cfg.samples_per_step;
    // chain rule to log scales
    g.tail(k * d).array() *= q.effective_scales().transpose().reshaped().array();
    if (!g.allFinite()) {
      throw std::runtime_error("run_sgvi: non-finite gradient at step " + std::to_string(step));
    }
    adam_update(adam, eta, -g);
    q = unpack(eta);
    if (step == cfg.n_steps) {
      record(step, q, cfg.final_eval_samples);
    } else if (step % cfg.log_every == 0) {
      record(step, q, cfg.eval_samples);
    }
  }
  return trace;
}

}  // namespace tg
