#include "transportgrad/estimators.hpp"

#include <cmath>
#include <stdexcept>

namespace tg {

// ---------------------------------------------------------------------------
// Test functions

Matrix random_coupling_matrix(int dim, RngStream& rng) {
  Matrix q = Matrix::Zero(dim, dim);
  for (int i = 1; i < dim; ++i)
    for (int j = 0; j < i; ++j) q(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return q + q.transpose();
}

TestFunction make_cosine(const Matrix& coupling) {
  const double d = static_cast<double>(coupling.rows());
  const Vector row_sums = coupling * Vector::Ones(coupling.cols()) / d;
  TestFunction f;
  f.kind = TestFunctionKind::Cosine;
  f.name = "cosine";
  f.value = [row_sums](const Vector& z) { return std::cos(row_sums.dot(z)); };
  f.gradient = [row_sums](const Vector& z) -> Vector {
    return -std::sin(row_sums.dot(z)) * row_sums;
  };
  f.coupling = coupling;
  return f;
}

TestFunction make_quadratic(const Matrix& coupling) {
  const Matrix sym = coupling + coupling.transpose();
  TestFunction f;
  f.kind = TestFunctionKind::Quadratic;
  f.name = "quadratic";
  f.value = [coupling](const Vector& z) { return z.dot(coupling * z); };
  f.gradient = [sym](const Vector& z) -> Vector { return sym * z; };
  f.coupling = coupling;
  return f;
}

TestFunction make_quartic(const Matrix& coupling) {
  const Matrix sym = coupling + coupling.transpose();
  TestFunction f;
  f.kind = TestFunctionKind::Quartic;
  f.name = "quartic";
  f.value = [coupling](const Vector& z) {
    const double u = z.dot(coupling * z);
    return u * u;
  };
  f.gradient = [coupling, sym](const Vector& z) -> Vector {
    return 2.0 * z.dot(coupling * z) * (sym * z);
  };
  f.coupling = coupling;
  return f;
}

TestFunction make_squared_norm(int dim) {
  TestFunction f;
  f.kind = TestFunctionKind::SquaredNorm;
  f.name = "sq_norm";
  f.value = [](const Vector& z) { return z.squaredNorm(); };
  f.gradient = [](const Vector& z) -> Vector { return 2.0 * z; };
  f.coupling = Matrix::Identity(dim, dim);
  return f;
}

TestFunction make_linear(const Vector& c) {
  TestFunction f;
  f.kind = TestFunctionKind::Linear;
  f.name = "linear";
  f.value = [c](const Vector& z) { return c.dot(z); };
  f.gradient = [c](const Vector&) -> Vector { return c; };
  return f;
}

TestFunction make_constant(double c, int dim) {
  TestFunction f;
  f.kind = TestFunctionKind::Constant;
  f.name = "constant";
  f.value = [c](const Vector&) { return c; };
  f.gradient = [dim](const Vector&) -> Vector { return Vector::Zero(dim); };
  return f;
}

std::optional<TestFunction> make_test_function(const std::string& name, int dim, RngStream& rng) {
  if (name == "sq_norm") return make_squared_norm(dim);
  if (name == "cosine") return make_cosine(random_coupling_matrix(dim, rng));
  if (name == "quadratic") return make_quadratic(random_coupling_matrix(dim, rng));
  if (name == "quartic") return make_quartic(random_coupling_matrix(dim, rng));
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Single-sample estimators

Vector pathwise_grad(const VelocityFieldSet& fields, const TestFunction& f, const Vector& z) {
  return fields.evaluate(z).transpose() * f.gradient(z);
}

Vector pathwise_grad(const VelocityFieldSet& fields, const TestFunction& f, const Vector& z,
                     const std::vector<Coordinate>& requested) {
  std::vector<int> idx;
  for (const auto& c : requested) idx.push_back(fields.index_of(c));
  const Vector all = pathwise_grad(fields, f, z);
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t n = 0; n < idx.size(); ++n) out[static_cast<Eigen::Index>(n)] = all[idx[n]];
  return out;
}

Vector mixture_pathwise_grad(const MixtureParams& p, const TestFunction& f, const Vector& z) {
  const Vector g = f.gradient(z);
  const Vector logits = logit_fields(p, z).transpose() * g;
  const Vector comps = component_fields_dot(p, g, z);
  Vector out(logits.size() + comps.size());
  out << logits, comps;
  return out;
}

Vector score_grad(const MvnParams& p, const TestFunction& f, const Sample& s) {
  return f.value(s.value) * score(p, s.value);
}

Vector score_grad(const MixtureParams& p, const TestFunction& f, const Sample& s) {
  return f.value(s.value) * score(p, s.value);
}

Vector hybrid_grad(const MixtureParams& p, const TestFunction& f, const Sample& s) {
  const Vector logits = f.value(s.value) * score_logits(p, s.value);
  const Vector comps = component_fields_dot(p, f.gradient(s.value), s.value);
  Vector out(logits.size() + comps.size());
  out << logits, comps;
  return out;
}

GumbelDraw gumbel_softmax_draw(const MixtureParams& p, const TestFunction& f,
                               const GumbelConfig& cfg, RngStream& rng) {
  if (p.family() != MixtureFamily::DiagNormals) {
    throw std::invalid_argument("gumbel_softmax_grad: requires a diag_normals mixture");
  }
  if (!(cfg.temperature > 0.0)) {
    throw std::invalid_argument("gumbel_softmax_grad: temperature must be positive");
  }
  const int k = p.components();
  const int d = p.dim();
  const double tau = cfg.temperature;
  Vector perturbed(k);
  for (int j = 0; j < k; ++j) perturbed[j] = (p.logits()[j] + rng.gumbel()) / tau;
  const Vector eps = rng.normal_vector(d);

  GumbelDraw out;
  out.relaxed_weights = softmax(perturbed);
  const Vector& y = out.relaxed_weights;
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();
  const Matrix centers = m + (s.array().rowwise() * eps.transpose().array()).matrix();  // K x D
  const Vector z_soft = centers.transpose() * y;

  Vector forward_weights = y;
  if (cfg.mode == GumbelMode::Hard) {
    Eigen::Index top = 0;
    y.maxCoeff(&top);
    forward_weights.setZero();
    forward_weights[top] = 1.0;
  }
  out.value = centers.transpose() * forward_weights;
  const Vector gf = f.gradient(out.value);

  out.gradient.resize(k + 2 * k * d);
  for (int j = 0; j < k; ++j) {
    out.gradient[j] = y[j] / tau * gf.dot(centers.row(j).transpose() - z_soft);
  }
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < d; ++i) {
      out.gradient[k + j * d + i] = forward_weights[j] * gf[i];
      out.gradient[k + k * d + j * d + i] = forward_weights[j] * eps[i] * gf[i];
    }
  }
  return out;
}

Vector gumbel_softmax_grad(const MixtureParams& p, const TestFunction& f,
                           const GumbelConfig& cfg, RngStream& rng) {
  return gumbel_softmax_draw(p, f, cfg, rng).gradient;
}

// ---------------------------------------------------------------------------
// Estimator closures

Estimator pathwise_estimator(const MvnParams& p, const std::optional<AvfParams>& avf,
                             const TestFunction& f) {
  return [p, avf, f](RngStream& rng) -> Vector {
    const Vector z = sample(p, rng).value;
    return location_scale_fields_dot(p, avf, f.gradient(z), z);
  };
}

Estimator pathwise_estimator(const StudentTParams& p, const std::optional<AvfParams>& avf,
                             const TestFunction& f) {
  return [p, avf, f](RngStream& rng) -> Vector {
    const Vector z = sample(p, rng).value;
    return location_scale_fields_dot(p, avf, f.gradient(z), z);
  };
}

Estimator pathwise_estimator(const MixtureParams& p, const TestFunction& f) {
  return [p, f](RngStream& rng) -> Vector {
    return mixture_pathwise_grad(p, f, sample(p, rng).value);
  };
}

Estimator score_estimator(const MvnParams& p, const TestFunction& f) {
  return [p, f](RngStream& rng) { return score_grad(p, f, sample(p, rng)); };
}

Estimator score_estimator(const MixtureParams& p, const TestFunction& f) {
  return [p, f](RngStream& rng) { return score_grad(p, f, sample(p, rng)); };
}

Estimator hybrid_estimator(const MixtureParams& p, const TestFunction& f) {
  return [p, f](RngStream& rng) { return hybrid_grad(p, f, sample(p, rng)); };
}

Estimator gumbel_estimator(const MixtureParams& p, const TestFunction& f, const GumbelConfig& cfg) {
  return [p, f, cfg](RngStream& rng) { return gumbel_softmax_grad(p, f, cfg, rng); };
}

// ---------------------------------------------------------------------------
// Batches

GradientBatch collect_batch(const Estimator& estimator, const std::vector<std::string>& labels,
                            int n_samples, RngStream& rng) {
  if (n_samples < 1) throw std::invalid_argument("collect_batch: n_samples must be >= 1");
  GradientBatch batch;
  batch.labels = labels;
  batch.samples.resize(n_samples, static_cast<Eigen::Index>(labels.size()));
  for (int n = 0; n < n_samples; ++n) {
    const Vector g = estimator(rng);
    if (g.size() != batch.samples.cols()) {
      throw std::invalid_argument("collect_batch: estimator returned the wrong number of coordinates");
    }
    batch.samples.row(n) = g.transpose();
  }
  return batch;
}

Vector batch_mean(const GradientBatch& batch) {
  if (batch.n_samples() < 1) throw std::invalid_argument("batch_mean: empty batch");
  return batch.samples.colwise().mean().transpose();
}

VarianceEstimate estimate_variance(const GradientBatch& batch) {
  if (batch.n_samples() < 1) throw std::invalid_argument("estimate_variance: empty batch");
  VarianceEstimate out;
  if (batch.n_samples() == 1) {
    out.per_coordinate = batch.samples.row(0).transpose().cwiseAbs2();
  } else {
    const Vector mean = batch_mean(batch);
    out.per_coordinate =
        (batch.samples.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
  }
  out.total = out.per_coordinate.sum();
  return out;
}

Vector batch_standard_error(const GradientBatch& batch) {
  const int n = batch.n_samples();
  if (n < 2) throw std::invalid_argument("batch_standard_error: need at least two samples");
  const Vector var = estimate_variance(batch).per_coordinate * (static_cast<double>(n) / (n - 1));
  return (var / n).cwiseSqrt();
}

std::vector<std::string> labels_of(const std::vector<Coordinate>& coords) {
  std::vector<std::string> out;
  out.reserve(coords.size());
  for (const auto& c : coords) out.push_back(c.label());
  return out;
}

}  // namespace tg
