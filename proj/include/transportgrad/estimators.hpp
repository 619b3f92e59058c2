#pragma once

#include "transportgrad/velocity_fields.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tg {

// ---------------------------------------------------------------------------
// Test functions

enum class TestFunctionKind { Cosine, Quadratic, Quartic, SquaredNorm, Linear, Constant, Custom };

struct TestFunction {
  TestFunctionKind kind = TestFunctionKind::Custom;
  std::string name;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  /// Symmetric 0/1 coupling matrix of the synthetic functions (identity for
  /// the squared norm).
  std::optional<Matrix> coupling;
};

/// Strictly lower-triangular Bernoulli(1/2) entries, symmetrised.
Matrix random_coupling_matrix(int dim, RngStream& rng);

/// cos((Q 1) . z / D)
TestFunction make_cosine(const Matrix& coupling);
/// z^T Q z
TestFunction make_quadratic(const Matrix& coupling);
/// (z^T Q z)^2
TestFunction make_quartic(const Matrix& coupling);
/// |z|^2
TestFunction make_squared_norm(int dim);
/// c . z
TestFunction make_linear(const Vector& c);
TestFunction make_constant(double c, int dim);

/// Builds one of cosine/quadratic/quartic/sq_norm by name.
std::optional<TestFunction> make_test_function(const std::string& name, int dim, RngStream& rng);

// ---------------------------------------------------------------------------
// Single-sample estimators

/// grad_z f . v for each field in the set.
Vector pathwise_grad(const VelocityFieldSet& fields, const TestFunction& f, const Vector& z);
/// Restricted to `requested`; throws std::out_of_range if a field is missing.
Vector pathwise_grad(const VelocityFieldSet& fields, const TestFunction& f, const Vector& z,
                     const std::vector<Coordinate>& requested);

/// Same as pathwise_grad(make_field_set(p), f, z) without forming the
/// component-field matrix.
Vector mixture_pathwise_grad(const MixtureParams& p, const TestFunction& f, const Vector& z);

/// f(z) grad_theta log q(z) over the distribution's coordinates.
Vector score_grad(const MvnParams& p, const TestFunction& f, const Sample& s);
Vector score_grad(const MixtureParams& p, const TestFunction& f, const Sample& s);

/// Score gradients for the logits, responsibility-weighted pathwise
/// gradients for the component parameters.
Vector hybrid_grad(const MixtureParams& p, const TestFunction& f, const Sample& s);

enum class GumbelMode { Soft, Hard };

struct GumbelConfig {
  double temperature = 1.0;
  GumbelMode mode = GumbelMode::Soft;
};

struct GumbelDraw {
  Vector relaxed_weights;  // y = softmax((logits + g) / tau)
  Vector value;            // forward sample
  Vector gradient;         // over the DiagNormals coordinates
};

/// Relaxed-categorical gradient for a DiagNormals mixture. The hard mode
/// uses the arg-max component in the forward pass and the soft Jacobian for
/// the logits (straight-through). Biased in both modes.
GumbelDraw gumbel_softmax_draw(const MixtureParams& p, const TestFunction& f,
                               const GumbelConfig& cfg, RngStream& rng);
Vector gumbel_softmax_grad(const MixtureParams& p, const TestFunction& f,
                           const GumbelConfig& cfg, RngStream& rng);

// ---------------------------------------------------------------------------
// Batches

/// Draws its own sample and returns one gradient row.
using Estimator = std::function<Vector(RngStream&)>;

Estimator pathwise_estimator(const MvnParams& p, const std::optional<AvfParams>& avf,
                             const TestFunction& f);
Estimator pathwise_estimator(const StudentTParams& p, const std::optional<AvfParams>& avf,
                             const TestFunction& f);
Estimator pathwise_estimator(const MixtureParams& p, const TestFunction& f);
Estimator score_estimator(const MvnParams& p, const TestFunction& f);
Estimator score_estimator(const MixtureParams& p, const TestFunction& f);
Estimator hybrid_estimator(const MixtureParams& p, const TestFunction& f);
Estimator gumbel_estimator(const MixtureParams& p, const TestFunction& f, const GumbelConfig& cfg);

struct GradientBatch {
  std::vector<std::string> labels;
  Matrix samples;  // N x P

  int n_samples() const { return static_cast<int>(samples.rows()); }
};

GradientBatch collect_batch(const Estimator& estimator, const std::vector<std::string>& labels,
                            int n_samples, RngStream& rng);

struct VarianceEstimate {
  double total = 0.0;
  Vector per_coordinate;
};

/// Per-coordinate (1/N) sum x^2 - mean^2, computed in two passes; for N = 1
/// the uncentered second moment. Throws on an empty batch.
VarianceEstimate estimate_variance(const GradientBatch& batch);

Vector batch_mean(const GradientBatch& batch);
/// Standard error of the mean using the unbiased sample variance.
Vector batch_standard_error(const GradientBatch& batch);

std::vector<std::string> labels_of(const std::vector<Coordinate>& coords);

}  // namespace tg
