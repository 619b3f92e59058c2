#pragma once

#include "transportgrad/numerics.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace tg {

// ---------------------------------------------------------------------------
// Parameter coordinates

enum class CoordKind { Mean, Chol, Logit, CompMean, CompScale, Scale, Multiplier };

/// One free scalar parameter. `first`/`second` are 0-based indices whose
/// meaning depends on the kind: chol[a,b] (a >= b), comp_mean[j,i],
/// comp_scale[j,i], mean[a], logit[j], scale[i], multiplier[j].
struct Coordinate {
  CoordKind kind = CoordKind::Mean;
  int first = 0;
  int second = 0;

  std::string label() const;
  bool operator==(const Coordinate&) const = default;
};

std::optional<Coordinate> parse_coordinate(const std::string& label);

// ---------------------------------------------------------------------------
// Location-scale families

/// Mean and lower-triangular Cholesky factor with positive diagonal.
struct LocationScale {
  Vector mean;
  Matrix chol;

  LocationScale(Vector mean, Matrix chol);

  int dim() const { return static_cast<int>(mean.size()); }
  /// w = L^{-1}(z - mu)
  Vector whiten(const Vector& z) const;
  /// mean[a] for every a, then chol[a,b] for a >= b in row-major order.
  std::vector<Coordinate> coordinates() const;
  double get(const Coordinate& c) const;
  void set(const Coordinate& c, double value);
};

struct MvnParams : LocationScale {
  using LocationScale::LocationScale;

  static MvnParams standard(int dim);
  MvnParams with(const Coordinate& c, double value) const;
};

struct StudentTParams : LocationScale {
  double dof;

  StudentTParams(Vector mean, Matrix chol, double dof);
  StudentTParams with(const Coordinate& c, double value) const;
};

// ---------------------------------------------------------------------------
// Mixtures of diagonal Gaussians

struct SharedDiagCov {
  Vector logits;
  Matrix means;  // K x D
  Vector scale;  // D
};

struct ZeroMeanGsm {
  Vector logits;
  Vector scale;        // D
  Vector multipliers;  // K
};

struct Gsm {
  Vector logits;
  Matrix means;  // K x D
  Vector scale;
  Vector multipliers;
};

struct DiagNormals {
  Vector logits;
  Matrix means;   // K x D
  Matrix scales;  // K x D
};

enum class MixtureFamily { SharedDiagCov, ZeroMeanGsm, Gsm, DiagNormals };

std::string family_name(MixtureFamily f);
std::optional<MixtureFamily> parse_family(const std::string& name);

/// Validated mixture with cached weights and per-component effective means
/// and scales (s_ji = lambda_j sigma_i for the scale-mixture families).
class MixtureParams {
 public:
  using Variant = std::variant<SharedDiagCov, ZeroMeanGsm, Gsm, DiagNormals>;

  MixtureParams(Variant v);

  MixtureFamily family() const { return static_cast<MixtureFamily>(variant_.index()); }
  const Variant& variant() const { return variant_; }
  template <class T>
  const T& as() const { return std::get<T>(variant_); }

  int components() const { return static_cast<int>(weights_.size()); }
  int dim() const { return static_cast<int>(means_.cols()); }
  const Vector& logits() const;
  const Vector& weights() const { return weights_; }
  const Vector& log_weights() const { return log_weights_; }
  const Matrix& effective_means() const { return means_; }
  const Matrix& effective_scales() const { return scales_; }
  /// Shared scale sigma (families that have one); throws otherwise.
  const Vector& shared_scale() const;
  /// Multipliers lambda_j; all ones for families without them.
  Vector multipliers() const;

  /// logit[j] first, then the family's component coordinates.
  std::vector<Coordinate> coordinates() const;
  double get(const Coordinate& c) const;
  MixtureParams with(const Coordinate& c, double value) const;

 private:
  void refresh();

  Variant variant_;
  Vector weights_;
  Vector log_weights_;
  Matrix means_;
  Matrix scales_;
};

// ---------------------------------------------------------------------------
// Sampling, densities, scores

struct Sample {
  Vector value;
  std::optional<int> component_index;
};

Vector softmax(const Vector& logits);

Sample sample(const MvnParams& p, RngStream& rng);
Sample sample(const StudentTParams& p, RngStream& rng);
Sample sample(const MixtureParams& p, RngStream& rng);

double log_density(const MvnParams& p, const Vector& z);
double log_density(const StudentTParams& p, const Vector& z);
double log_density(const MixtureParams& p, const Vector& z);

/// log q_j(z) for every component (without the weight).
Vector component_log_densities(const MixtureParams& p, const Vector& z);
/// pi_j q_j(z) / q(z), via log-sum-exp.
Vector responsibilities(const MixtureParams& p, const Vector& z);

/// grad_z log q(z)
Vector grad_log_density(const MvnParams& p, const Vector& z);
Vector grad_log_density(const MixtureParams& p, const Vector& z);

/// grad_theta log q(z) over MvnParams::coordinates().
Vector score(const MvnParams& p, const Vector& z);
/// d log q / d logit_j = pi_j (q_j - q) / q
Vector score_logits(const MixtureParams& p, const Vector& z);
/// Scores for the component coordinates (coordinates() without the logits).
Vector score_component_params(const MixtureParams& p, const Vector& z);
/// Logit scores followed by component scores.
Vector score(const MixtureParams& p, const Vector& z);

}  // namespace tg
