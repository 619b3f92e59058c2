#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <utility>

namespace tg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLog2Pi = 1.83787706640934548356;
inline constexpr double kSqrt2 = 1.41421356237309504880;

// ---------------------------------------------------------------------------
// Special functions

/// Complementary error function (Cody's rational Chebyshev approximations).
double erfc(double x);
/// Scaled complementary error function exp(x^2) * erfc(x).
double erfcx(double x);
double erf(double x);

double std_normal_pdf(double x);
/// Phi(x), defined through erfc so that the lower tail keeps full relative precision.
double std_normal_cdf(double x);
/// Upper tail 1 - Phi(x).
double std_normal_sf(double x);
double log_std_normal_cdf(double x);
double log_std_normal_sf(double x);

/// log(Phi(hi) - Phi(lo)) for lo < hi. Picks whichever tail avoids cancellation.
double log_std_normal_cdf_diff(double lo, double hi);

/// n!! for n >= -1 (with (-1)!! = 0!! = 1), evaluated iteratively.
double double_factorial(int n);
double log_double_factorial(int n);

/// Radial CDF  z^{1-D} (2 pi)^{-D/2} \int_z^inf t^{D-1} e^{-t^2/2} dt.
///
/// Uses the double-factorial closed forms (plus an erfc tail for odd D). The
/// common factor e^{-z^2/2} is pulled out and the odd-D tail is written with
/// erfcx, so the log form stays finite far into the tail and for large D.
/// Throws std::domain_error for z <= 0 or dim < 1.
double radial_cdf(double z, int dim);
double log_radial_cdf(double z, int dim);

/// Numerically stable log(sum(exp(v))).
double log_sum_exp(const Vector& v);

// ---------------------------------------------------------------------------
// Finite differences

struct FiniteDiffConfig {
  double step_h = 1e-5;  // central scheme only
};

using VectorField = std::function<Vector(const Vector&)>;
using MatrixField = std::function<Matrix(const Vector&)>;

/// Central-difference divergence of a vector field at `point`.
double finite_diff_divergence(const VectorField& field, const Vector& point,
                              const FiniteDiffConfig& cfg = {});

/// Divergence of every column of a D x P matrix-valued field, sharing the 2D
/// field evaluations between columns.
Vector finite_diff_divergences(const MatrixField& field, const Vector& point,
                               const FiniteDiffConfig& cfg = {});

/// Central difference of a scalar function along one coordinate.
double central_difference(const std::function<double(double)>& f, double x,
                          double h = 1e-5);

// ---------------------------------------------------------------------------
// Random numbers

/// Seeded random stream. Equal (seed, stream_id) pairs reproduce the same
/// sequence; parallel workers use one stream each, keyed by worker index.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  double normal();
  Vector normal_vector(Eigen::Index n);
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Gamma with the given shape and rate.
  double gamma(double shape, double rate);
  double gumbel();
  bool bernoulli(double p);
  int categorical(const Vector& probabilities);

  /// Child stream derived deterministically from this stream's key.
  RngStream split(std::uint64_t child) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState fresh(Eigen::Index n, double learning_rate, double beta1 = 0.9,
                         double beta2 = 0.999, double epsilon = 1e-8);
};

/// One bias-corrected Adam descent step. Throws std::invalid_argument when
/// the parameter, gradient and moment lengths disagree.
std::pair<AdamState, Vector> adam_step(AdamState state, Vector params, const Vector& grad);

/// In-place variant used by the optimisation loops.
void adam_update(AdamState& state, Vector& params, const Vector& grad);

}  // namespace tg
