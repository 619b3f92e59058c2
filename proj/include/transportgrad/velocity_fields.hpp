#pragma once

#include "transportgrad/distributions.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace tg {

// ---------------------------------------------------------------------------
// Adaptive null-solution parameters for location-scale families

/// Low-rank parameterisation of the antisymmetric matrices that generate
/// divergence-free additions to the Cholesky fields. B and C are M x D and
/// shared by every (a, b) pair: A^{ab} = s_ab (E_ab - E_ba), s = B^T C.
struct AvfParams {
  Matrix b;
  Matrix c;

  AvfParams(Matrix b, Matrix c);
  static AvfParams zeros(int rank, int dim);
  static AvfParams random(int rank, int dim, double scale, RngStream& rng);

  int rank() const { return static_cast<int>(b.rows()); }
  int dim() const { return static_cast<int>(b.cols()); }
  /// s_ab = sum_l B_la C_lb, as a D x D matrix.
  Matrix pair_scalars() const;
  /// The full antisymmetric matrix A^{ab}.
  Matrix induced_matrix(int a, int b) const;
};

// ---------------------------------------------------------------------------
// Evaluated field sets

/// Velocity fields for a list of parameter coordinates. Evaluating at z
/// gives a D x P matrix whose column p is the field of coordinates()[p].
class VelocityFieldSet {
 public:
  using Evaluator = std::function<Matrix(const Vector&)>;

  VelocityFieldSet(std::vector<Coordinate> coordinates, Evaluator evaluator);

  const std::vector<Coordinate>& coordinates() const { return coordinates_; }
  std::vector<std::string> labels() const;
  Matrix evaluate(const Vector& z) const { return evaluator_(z); }
  /// Column index for a coordinate; throws std::out_of_range if absent.
  int index_of(const Coordinate& c) const;
  VectorField field(const Coordinate& c) const;

 private:
  std::vector<Coordinate> coordinates_;
  Evaluator evaluator_;
};

// ---------------------------------------------------------------------------
// Location-scale families

/// Columns follow LocationScale::coordinates(). Mean fields are e_a; Cholesky
/// fields are e_a w_b (w = L^{-1}(z - mu)) plus the null term when avf is set.
Matrix mvn_fields(const MvnParams& p, const std::optional<AvfParams>& avf, const Vector& z);
/// Same closed form as the Normal case; the fields do not depend on dof.
Matrix student_t_fields(const StudentTParams& p, const std::optional<AvfParams>& avf,
                        const Vector& z);

/// fields^T g without forming the D x P matrix; O(D^2).
Vector location_scale_fields_dot(const LocationScale& p, const std::optional<AvfParams>& avf,
                                 const Vector& g, const Vector& z);

/// Divergence-free (under q) direction L[:,a] w_b - L[:,b] w_a.
Vector elementary_null_field(const LocationScale& p, int a, int b, const Vector& z);

VelocityFieldSet make_field_set(const MvnParams& p, const std::optional<AvfParams>& avf = {});
VelocityFieldSet make_field_set(const StudentTParams& p,
                                const std::optional<AvfParams>& avf = {});

// ---------------------------------------------------------------------------
// Mixtures

/// Whitened pairwise coordinates for mixtures sharing a diagonal scale.
struct MixtureGeometry {
  Vector z_tilde;                   // z / sigma
  Matrix mu_tilde;                  // K x D
  std::vector<Matrix> mu_hat;       // mu_hat[j].row(k): unit direction from mu_k to mu_j
  Matrix z_par;                     // z_tilde . mu_hat^{jk}
  Matrix z_perp_norm;               // |z_tilde - z_par mu_hat^{jk}|
  Matrix mu_par;                    // mu_tilde_j . mu_hat^{jk}
  Matrix line_distance;             // distance from z_tilde to the line through mu_tilde_j, mu_tilde_k
  std::vector<std::vector<bool>> degenerate;  // |mu_tilde_j - mu_tilde_k| < 1e-12
};

MixtureGeometry mixture_geometry(const Matrix& means, const Vector& scale, const Vector& z);

/// Responsibility-weighted single-component fields for the component
/// coordinates (coordinates() without the logits), D x (P - K).
Matrix component_fields(const MixtureParams& p, const Vector& z);

/// component_fields(p, z)^T g in O(KD).
Vector component_fields_dot(const MixtureParams& p, const Vector& g, const Vector& z);

/// Logit fields, D x K. Each requires the matching family.
Matrix logit_fields_shared_cov(const MixtureParams& p, const Vector& z);
Matrix logit_fields_zero_mean_gsm(const MixtureParams& p, const Vector& z);
Matrix logit_fields_gsm(const MixtureParams& p, const Vector& z);

struct DiagNormalsOptions {
  /// Order in which dimensions are switched from reference to component
  /// factors; empty means 0..D-1.
  std::vector<int> dimension_order;
  /// Reference scale; defaults to min_j sigma_ji.
  std::optional<Vector> reference_scale;
  /// Reference mean shared by all components; defaults to sum_j pi_j mu_j.
  std::optional<Vector> reference_mean;
};

Matrix logit_fields_diag_normals(const MixtureParams& p, const Vector& z,
                                 const DiagNormalsOptions& options = {});

/// Dispatches on the family.
Matrix logit_fields(const MixtureParams& p, const Vector& z);

/// Pairwise field v^{jk} solving div(q v) = q_k - q_j (component densities
/// without weights). Shared-cov and GSM families only.
Vector pairwise_field(const MixtureParams& p, int j, int k, const Vector& z);

/// Per-dimension CDF construction that solves the transport equation but
/// leaks mass to infinity for D >= 2. Logit fields, D x K, DiagNormals only.
Matrix negative_example_cdf_field(const MixtureParams& p, const Vector& z);

/// Logit fields followed by component fields, matching p.coordinates().
Matrix mixture_fields(const MixtureParams& p, const Vector& z);

VelocityFieldSet make_field_set(const MixtureParams& p);
VelocityFieldSet make_component_field_set(const MixtureParams& p);
VelocityFieldSet make_negative_example_field_set(const MixtureParams& p);

// ---------------------------------------------------------------------------
// Radial helper

/// lambda_a^{1-D} Phi~(r/lambda_a) - lambda_b^{1-D} Phi~(r/lambda_b) as
/// (sign, log|value|), stable for small r where both terms blow up like r^{1-D}.
struct SignedLog {
  int sign = 0;
  double log_abs = -std::numeric_limits<double>::infinity();
};
SignedLog radial_flux_difference(double r, double lambda_a, double lambda_b, int dim);

}  // namespace tg
