#include "transportgrad/verification.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tg {

namespace {

template <class P>
Vector fd_source(const P& p, const std::vector<Coordinate>& coords, const Vector& z, double h) {
  Vector out(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const double x = p.get(coords[n]);
    const double plus = std::exp(log_density(p.with(coords[n], x + h), z));
    const double minus = std::exp(log_density(p.with(coords[n], x - h), z));
    out[static_cast<Eigen::Index>(n)] = (plus - minus) / (2.0 * h);
  }
  return out;
}

template <class P>
TransportProblem location_scale_problem(const P& p, const std::optional<AvfParams>& avf,
                                        const FiniteDiffConfig& cfg, const char* name) {
  TransportProblem prob;
  prob.name = name;
  prob.dim = p.dim();
  prob.coordinates = p.coordinates();
  prob.log_density = [p](const Vector& z) { return log_density(p, z); };
  prob.fields = [p, avf](const Vector& z) -> Matrix {
    if constexpr (std::is_same_v<P, MvnParams>) {
      return mvn_fields(p, avf, z);
    } else {
      return student_t_fields(p, avf, z);
    }
  };
  prob.source = [p, coords = prob.coordinates, h = cfg.step_h](const Vector& z) {
    return fd_source(p, coords, z, h);
  };
  prob.sampler = [p](RngStream& rng) { return sample(p, rng).value; };
  prob.center = p.mean;
  prob.basis = p.chol;
  return prob;
}

template <class P>
TransportProblem location_scale_null_problem(const P& p, const AvfParams& avf, const char* name) {
  if (avf.dim() != p.dim()) throw std::invalid_argument("null problem: avf dimension mismatch");
  TransportProblem prob;
  prob.name = name;
  prob.dim = p.dim();
  for (const auto& c : p.coordinates())
    if (c.kind == CoordKind::Chol && c.first != c.second) prob.coordinates.push_back(c);
  const Matrix s = avf.pair_scalars();
  prob.log_density = [p](const Vector& z) { return log_density(p, z); };
  prob.fields = [p, s, coords = prob.coordinates](const Vector& z) {
    Matrix out(p.dim(), static_cast<Eigen::Index>(coords.size()));
    for (std::size_t n = 0; n < coords.size(); ++n) {
      const int a = coords[n].first, b = coords[n].second;
      out.col(static_cast<Eigen::Index>(n)) = s(a, b) * elementary_null_field(p, a, b, z);
    }
    return out;
  };
  prob.source = [n = prob.coordinates.size()](const Vector&) {
    return Vector::Zero(static_cast<Eigen::Index>(n)).eval();
  };
  prob.sampler = [p](RngStream& rng) { return sample(p, rng).value; };
  prob.center = p.mean;
  prob.basis = p.chol;
  return prob;
}

}  // namespace

TransportProblem transport_problem(const MvnParams& p, const std::optional<AvfParams>& avf,
                                   const FiniteDiffConfig& cfg) {
  return location_scale_problem(p, avf, cfg, avf ? "mvn_avf" : "mvn_rt");
}

TransportProblem transport_problem(const StudentTParams& p, const std::optional<AvfParams>& avf,
                                   const FiniteDiffConfig& cfg) {
  return location_scale_problem(p, avf, cfg, avf ? "student_t_avf" : "student_t_rt");
}

TransportProblem null_transport_problem(const MvnParams& p, const AvfParams& avf) {
  return location_scale_null_problem(p, avf, "mvn_null");
}

TransportProblem null_transport_problem(const StudentTParams& p, const AvfParams& avf) {
  return location_scale_null_problem(p, avf, "student_t_null");
}

TransportProblem transport_problem(const MixtureParams& p, MixtureFieldSelection selection,
                                   const FiniteDiffConfig& cfg) {
  const int k = p.components();
  const auto all = p.coordinates();
  const std::vector<Coordinate> logits(all.begin(), all.begin() + k);
  const std::vector<Coordinate> comps(all.begin() + k, all.end());

  TransportProblem prob;
  prob.dim = p.dim();
  prob.log_density = [p](const Vector& z) { return log_density(p, z); };
  prob.sampler = [p](RngStream& rng) { return sample(p, rng).value; };
  prob.center = p.effective_means().transpose() * p.weights();
  const Matrix offset = p.effective_means().rowwise() - prob.center.transpose();
  const Matrix spread = p.effective_scales().array().square() + offset.array().square();
  prob.basis = spread.colwise().maxCoeff().transpose().cwiseSqrt().asDiagonal();

  auto logit_source = [p](const Vector& z) -> Vector {
    const Vector log_qj = component_log_densities(p, z);
    const double q = std::exp(log_density(p, z));
    return (p.log_weights() + log_qj).array().exp().matrix() - p.weights() * q;
  };
  auto comp_source = [p, comps, h = cfg.step_h](const Vector& z) {
    return fd_source(p, comps, z, h);
  };

  const std::string family = family_name(p.family());
  switch (selection) {
    case MixtureFieldSelection::All:
      prob.name = family + "_all";
      prob.coordinates = all;
      prob.fields = [p](const Vector& z) { return mixture_fields(p, z); };
      prob.source = [logit_source, comp_source](const Vector& z) -> Vector {
        const Vector a = logit_source(z);
        const Vector b = comp_source(z);
        Vector out(a.size() + b.size());
        out << a, b;
        return out;
      };
      break;
    case MixtureFieldSelection::Logits:
      prob.name = family + "_logits";
      prob.coordinates = logits;
      prob.fields = [p](const Vector& z) { return logit_fields(p, z); };
      prob.source = logit_source;
      break;
    case MixtureFieldSelection::Components:
      prob.name = family + "_components";
      prob.coordinates = comps;
      prob.fields = [p](const Vector& z) { return component_fields(p, z); };
      prob.source = comp_source;
      break;
    case MixtureFieldSelection::NegativeExample:
      prob.name = family + "_negative_example";
      prob.coordinates = logits;
      prob.fields = [p](const Vector& z) { return negative_example_cdf_field(p, z); };
      prob.source = logit_source;
      break;
  }
  return prob;
}

// ---------------------------------------------------------------------------

std::vector<ResidualReport> transport_residuals(const TransportProblem& problem, const Vector& z,
                                                const FiniteDiffConfig& cfg) {
  const auto& fields = problem.fields;
  const auto& log_q = problem.log_density;
  const MatrixField flux = [&](const Vector& x) -> Matrix {
    return std::exp(log_q(x)) * fields(x);
  };
  const Vector div = finite_diff_divergences(flux, z, cfg);
  const Vector src = problem.source(z);
  const double q = std::exp(log_q(z));
  if (!std::isfinite(q) || !div.allFinite() || !src.allFinite()) {
    throw std::runtime_error("transport_residual: non-finite intermediate in " + problem.name);
  }
  std::vector<ResidualReport> out;
  out.reserve(problem.coordinates.size());
  for (std::size_t n = 0; n < problem.coordinates.size(); ++n) {
    ResidualReport r;
    r.coordinate = problem.coordinates[n].label();
    r.point = z;
    r.density = q;
    r.source_term = src[static_cast<Eigen::Index>(n)];
    r.divergence_term = div[static_cast<Eigen::Index>(n)];
    r.relative_residual = std::fabs(r.source_term + r.divergence_term) / std::max(q, kResidualFloor);
    out.push_back(std::move(r));
  }
  return out;
}

ResidualReport transport_residual(const TransportProblem& problem, int coordinate_index,
                                  const Vector& z, const FiniteDiffConfig& cfg) {
  if (coordinate_index < 0 || coordinate_index >= static_cast<int>(problem.coordinates.size())) {
    throw std::out_of_range("transport_residual: coordinate index out of range");
  }
  TransportProblem single = problem;
  single.coordinates = {problem.coordinates[coordinate_index]};
  single.fields = [f = problem.fields, coordinate_index](const Vector& x) -> Matrix {
    return f(x).col(coordinate_index);
  };
  single.source = [s = problem.source, coordinate_index](const Vector& x) -> Vector {
    return Vector::Constant(1, s(x)[coordinate_index]);
  };
  return transport_residuals(single, z, cfg).front();
}

// ---------------------------------------------------------------------------

Vector boundary_decay_probe(const TransportProblem& problem, int coordinate_index,
                            const Vector& direction, const std::vector<double>& radii) {
  Vector out(static_cast<Eigen::Index>(radii.size()));
  const Vector step = problem.basis * direction;
  for (std::size_t n = 0; n < radii.size(); ++n) {
    const Vector z = problem.center + radii[n] * step;
    const double q = std::exp(problem.log_density(z));
    const Vector v = problem.fields(z).col(coordinate_index);
    out[static_cast<Eigen::Index>(n)] = q == 0.0 ? 0.0 : (q * v).norm();
  }
  return out;
}

DecayCheck boundary_decay_check(const TransportProblem& problem, int coordinate_index,
                                const Vector& direction, double near_radius, double far_radius,
                                double bound) {
  const Vector v = boundary_decay_probe(problem, coordinate_index, direction,
                                        {near_radius, far_radius});
  DecayCheck out;
  out.near_value = v[0];
  out.far_value = v[1];
  if (out.far_value == 0.0) {
    out.ratio = 0.0;
  } else if (out.near_value == 0.0) {
    out.ratio = std::numeric_limits<double>::infinity();
  } else {
    out.ratio = out.far_value / out.near_value;
  }
  out.pass = out.ratio < bound;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

const Matrix& oracle_coupling(const TestFunction& f) {
  if ((f.kind != TestFunctionKind::Quadratic && f.kind != TestFunctionKind::SquaredNorm) ||
      !f.coupling) {
    throw std::invalid_argument("analytic_grad_oracle: unsupported test function " + f.name);
  }
  return *f.coupling;
}

Vector location_scale_oracle(const LocationScale& p, const Matrix& q, double cov_factor) {
  const int d = p.dim();
  const Matrix sym = q + q.transpose();
  const Matrix dl = cov_factor * sym * p.chol;
  Vector out(d + d * (d + 1) / 2);
  out.head(d) = sym * p.mean;
  int idx = d;
  for (int a = 0; a < d; ++a)
    for (int b = 0; b <= a; ++b) out[idx++] = dl(a, b);
  return out;
}

}  // namespace

Vector analytic_grad_oracle(const MvnParams& p, const TestFunction& f) {
  return location_scale_oracle(p, oracle_coupling(f), 1.0);
}

Vector analytic_grad_oracle(const StudentTParams& p, const TestFunction& f) {
  if (!(p.dof > 2.0)) throw std::invalid_argument("analytic_grad_oracle: student-t needs dof > 2");
  return location_scale_oracle(p, oracle_coupling(f), p.dof / (p.dof - 2.0));
}

double analytic_expectation(const MvnParams& p, const TestFunction& f) {
  const Matrix& q = oracle_coupling(f);
  return p.mean.dot(q * p.mean) + (q * p.chol * p.chol.transpose()).trace();
}

namespace {

Vector component_expectations(const MixtureParams& p, const Matrix& q) {
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();
  Vector e(p.components());
  for (int j = 0; j < p.components(); ++j) {
    const Vector mj = m.row(j).transpose();
    e[j] = mj.dot(q * mj) + (q.diagonal().array() * s.row(j).transpose().array().square()).sum();
  }
  return e;
}

}  // namespace

double analytic_expectation(const MixtureParams& p, const TestFunction& f) {
  return p.weights().dot(component_expectations(p, oracle_coupling(f)));
}

Vector analytic_grad_oracle(const MixtureParams& p, const TestFunction& f) {
  const Matrix& q = oracle_coupling(f);
  const Matrix sym = q + q.transpose();
  const Vector e = component_expectations(p, q);
  const Vector& w = p.weights();
  const double total = w.dot(e);
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();
  const Vector lambda = p.multipliers();

  const auto coords = p.coordinates();
  Vector out(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const Coordinate& c = coords[n];
    double v = 0.0;
    switch (c.kind) {
      case CoordKind::Logit:
        v = w[c.first] * (e[c.first] - total);
        break;
      case CoordKind::CompMean:
        v = w[c.first] * sym.row(c.second).dot(m.row(c.first));
        break;
      case CoordKind::CompScale:
        v = w[c.first] * 2.0 * q(c.second, c.second) * s(c.first, c.second);
        break;
      case CoordKind::Scale:
        for (int j = 0; j < p.components(); ++j)
          v += w[j] * 2.0 * q(c.first, c.first) * s(j, c.first) * lambda[j];
        break;
      case CoordKind::Multiplier: {
        const Vector& sigma = p.shared_scale();
        for (int i = 0; i < p.dim(); ++i) v += 2.0 * q(i, i) * s(c.first, i) * sigma[i];
        v *= w[c.first];
        break;
      }
      default:
        throw std::logic_error("unexpected coordinate " + c.label());
    }
    out[static_cast<Eigen::Index>(n)] = v;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<ZTestReport> ztest_reports(const std::vector<std::string>& labels, const Vector& mean,
                                       const Vector& se, const Vector& oracle, double threshold) {
  std::vector<ZTestReport> out;
  for (Eigen::Index n = 0; n < oracle.size(); ++n) {
    ZTestReport r;
    r.coordinate = n < static_cast<Eigen::Index>(labels.size()) ? labels[static_cast<std::size_t>(n)]
                                                                : std::to_string(n);
    r.estimator_mean = mean[n];
    r.oracle_value = oracle[n];
    r.standard_error = se[n];
    const double diff = mean[n] - oracle[n];
    if (se[n] > 0.0) {
      r.z_score = diff / se[n];
    } else {
      const double tol = 1e-12 * std::max(1.0, std::fabs(oracle[n]));
      r.z_score = std::fabs(diff) <= tol ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    }
    r.pass = std::fabs(r.z_score) <= threshold;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<ZTestReport> unbiasedness_ztest(const GradientBatch& batch, const Vector& oracle,
                                            double threshold) {
  if (oracle.size() != batch.samples.cols()) {
    throw std::invalid_argument("unbiasedness_ztest: oracle length does not match the batch");
  }
  const Vector mean = batch_mean(batch);
  const Vector se = batch.n_samples() >= 2 ? batch_standard_error(batch)
                                           : Vector::Zero(oracle.size()).eval();
  return ztest_reports(batch.labels, mean, se, oracle, threshold);
}

std::vector<ZTestReport> unbiasedness_ztest(const Estimator& estimator,
                                            const std::vector<std::string>& labels,
                                            const Vector& oracle, int n_samples, RngStream& rng,
                                            double threshold) {
  if (n_samples < 1) throw std::invalid_argument("unbiasedness_ztest: n_samples must be >= 1");
  if (oracle.size() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("unbiasedness_ztest: oracle length does not match the labels");
  }
  // streaming Welford moments; batches at D = 50 would not fit in memory
  Vector mean = Vector::Zero(oracle.size());
  Vector m2 = Vector::Zero(oracle.size());
  for (int n = 0; n < n_samples; ++n) {
    const Vector g = estimator(rng);
    if (g.size() != oracle.size()) {
      throw std::invalid_argument("unbiasedness_ztest: estimator returned the wrong number of coordinates");
    }
    const Vector delta = g - mean;
    mean += delta / (n + 1.0);
    m2.array() += delta.array() * (g - mean).array();
  }
  Vector se = Vector::Zero(oracle.size());
  if (n_samples >= 2) se = (m2 / (n_samples - 1.0) / n_samples).cwiseSqrt();
  return ztest_reports(labels, mean, se, oracle, threshold);
}

bool all_pass(const std::vector<ZTestReport>& reports) {
  for (const auto& r : reports)
    if (!r.pass) return false;
  return true;
}

}  // namespace tg
