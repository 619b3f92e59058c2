#pragma once

#include "transportgrad/estimators.hpp"

#include <functional>
#include <string>
#include <vector>

namespace tg {

// ---------------------------------------------------------------------------
// Transport residuals

/// A density together with a set of velocity fields to check against it.
/// `source(z)` returns d q(z) / d theta for every coordinate; fields(z) is
/// D x P. `center` and `basis` define whitened units for the decay probe:
/// z = center + radius * basis * direction.
struct TransportProblem {
  std::string name;
  int dim = 0;
  std::vector<Coordinate> coordinates;
  std::function<double(const Vector&)> log_density;
  std::function<Matrix(const Vector&)> fields;
  std::function<Vector(const Vector&)> source;
  std::function<Vector(RngStream&)> sampler;
  Vector center;
  Matrix basis;
};

struct ResidualReport {
  std::string coordinate;
  Vector point;
  double density = 0.0;
  double source_term = 0.0;      // dq/dtheta
  double divergence_term = 0.0;  // div(q v)
  double relative_residual = 0.0;
};

inline constexpr double kResidualFloor = 1e-300;

/// Residuals for every coordinate at z, sharing one finite-difference
/// divergence of z -> q(z) V(z). Throws std::runtime_error on non-finite
/// intermediates.
std::vector<ResidualReport> transport_residuals(const TransportProblem& problem, const Vector& z,
                                                const FiniteDiffConfig& cfg = {});
ResidualReport transport_residual(const TransportProblem& problem, int coordinate_index,
                                  const Vector& z, const FiniteDiffConfig& cfg = {});

/// All coordinates, RT fields (plus the null term when avf is set).
TransportProblem transport_problem(const MvnParams& p, const std::optional<AvfParams>& avf = {},
                                   const FiniteDiffConfig& cfg = {});
TransportProblem transport_problem(const StudentTParams& p,
                                   const std::optional<AvfParams>& avf = {},
                                   const FiniteDiffConfig& cfg = {});
/// Null fields s_ab n^{ab} alone for the off-diagonal Cholesky coordinates,
/// with zero source.
TransportProblem null_transport_problem(const MvnParams& p, const AvfParams& avf);
TransportProblem null_transport_problem(const StudentTParams& p, const AvfParams& avf);

enum class MixtureFieldSelection { All, Logits, Components, NegativeExample };

/// Logit sources are analytic (pi_j (q_j - q)); component sources use
/// central differences in the parameter.
TransportProblem transport_problem(const MixtureParams& p,
                                   MixtureFieldSelection selection = MixtureFieldSelection::All,
                                   const FiniteDiffConfig& cfg = {});

// ---------------------------------------------------------------------------
// Boundary behaviour

/// |q(z) v(z)| along z = center + radius * basis * direction for each radius.
Vector boundary_decay_probe(const TransportProblem& problem, int coordinate_index,
                            const Vector& direction, const std::vector<double>& radii);

struct DecayCheck {
  double near_value = 0.0;
  double far_value = 0.0;
  double ratio = 0.0;  // far / near, 0 when both vanish
  bool pass = false;
};

/// Compares the probe at radii (near, far) against `bound`.
DecayCheck boundary_decay_check(const TransportProblem& problem, int coordinate_index,
                                const Vector& direction, double near_radius = 1.0,
                                double far_radius = 10.0, double bound = 1e-8);

// ---------------------------------------------------------------------------
// Exact expectation gradients

/// d E[f] / d theta for quadratic or squared-norm test functions; throws
/// std::invalid_argument for anything else. Student-t requires dof > 2.
Vector analytic_grad_oracle(const MvnParams& p, const TestFunction& f);
Vector analytic_grad_oracle(const StudentTParams& p, const TestFunction& f);
Vector analytic_grad_oracle(const MixtureParams& p, const TestFunction& f);

/// E[f] itself for the same families.
double analytic_expectation(const MvnParams& p, const TestFunction& f);
double analytic_expectation(const MixtureParams& p, const TestFunction& f);

// ---------------------------------------------------------------------------
// Unbiasedness

struct ZTestReport {
  std::string coordinate;
  double estimator_mean = 0.0;
  double oracle_value = 0.0;
  double standard_error = 0.0;
  double z_score = 0.0;
  bool pass = false;
};

inline constexpr double kZThreshold = 4.0;

std::vector<ZTestReport> unbiasedness_ztest(const GradientBatch& batch, const Vector& oracle,
                                            double threshold = kZThreshold);
std::vector<ZTestReport> unbiasedness_ztest(const Estimator& estimator,
                                            const std::vector<std::string>& labels,
                                            const Vector& oracle, int n_samples, RngStream& rng,
                                            double threshold = kZThreshold);

bool all_pass(const std::vector<ZTestReport>& reports);

}  // namespace tg
