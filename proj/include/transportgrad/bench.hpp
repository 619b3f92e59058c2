#pragma once

#include "transportgrad/avf.hpp"
#include "transportgrad/verification.hpp"

#include <string>
#include <vector>

namespace tg {

// ---------------------------------------------------------------------------
// Random instances

/// Mean N(0, 1), Cholesky factor with unit diagonal and N(0, off_diag^2)
/// strictly-lower entries.
MvnParams random_mvn(int dim, RngStream& rng, double off_diag = 0.5);

/// Logits N(0, 1), means N(0, 1), every scale-like parameter exp(0.3 N(0, 1)).
MixtureParams random_mixture(MixtureFamily family, int dim, int components, RngStream& rng);

/// Zero mean, L = I + r dL with dL strictly lower triangular, entries U(0, 1).
MvnParams off_diagonal_mvn(int dim, double r, RngStream& rng);

/// Equal weights, means uniform on the sphere of the given radius, scales
/// (and multipliers) exp(spread N(0, 1)).
MixtureParams sphere_mixture(MixtureFamily family, int dim, int components, double radius,
                             double spread, RngStream& rng);

// ---------------------------------------------------------------------------
// Paired variance ratios

/// Streaming per-block sums of gradient rows. Rows are assigned to blocks
/// round-robin so that resampling blocks bootstraps the underlying draws.
class BlockMoments {
 public:
  BlockMoments(int n_coords, int n_blocks);

  void add(const Vector& row);
  int count() const { return count_; }
  /// Per-coordinate centered variance over all rows.
  Vector per_coordinate_variance() const;
  double total_variance() const;
  /// Total variance after drawing blocks with the given multiplicities.
  double total_variance(const std::vector<int>& block_counts) const;
  int n_blocks() const { return static_cast<int>(block_sum_.rows()); }

 private:
  Matrix block_sum_;           // n_blocks x P
  Vector block_sq_;            // sum of |row|^2 per block
  std::vector<int> block_rows_;
  Vector coord_sq_;            // per-coordinate sum of squares
  int count_ = 0;
};

struct RatioEstimate {
  double ratio = 0.0;  // summed variance of numerator / summed variance of denominator
  double ci_low = 0.0;
  double ci_high = 0.0;
  /// Mean over coordinates of the per-coordinate ratios (coordinates with a
  /// zero denominator variance are skipped).
  double mean_coord_ratio = 0.0;
};

/// Ratio of total variances with a paired block-bootstrap percentile interval.
/// Both accumulators must have seen the same rows in the same order.
RatioEstimate paired_variance_ratio(const BlockMoments& num, const BlockMoments& den,
                                    int n_bootstrap, double confidence, RngStream& rng);

// ---------------------------------------------------------------------------
// Toy variational inference problem

/// Unnormalised two-component 2-D diagonal Gaussian mixture with a known
/// log-normaliser: log p~(z) = log p(z) + log_normalizer.
struct ToyTarget {
  MixtureParams density;
  double log_normalizer = 0.0;

  double log_unnormalized(const Vector& z) const;
  Vector grad_log_unnormalized(const Vector& z) const;
};

ToyTarget default_toy_target();

enum class SgviEstimator { Pathwise, Hybrid, Score, GumbelSoft, GumbelHard };

std::string sgvi_estimator_name(SgviEstimator e);
std::optional<SgviEstimator> parse_sgvi_estimator(const std::string& name);

struct SgviConfig {
  int n_steps = 5000;
  double learning_rate = 1e-2;
  int samples_per_step = 1;
  int log_every = 250;
  int eval_samples = 2000;
  int final_eval_samples = 20000;
  double temperature = 1.0;
};

struct SgviTraceRow {
  int step = 0;
  double elbo = 0.0;
  double kl_to_target = 0.0;
};

/// The integrand log p~(z) - log q(z) as a test function of z for fixed q.
TestFunction elbo_integrand(const ToyTarget& target, const MixtureParams& q);

/// Monte Carlo ELBO of a DiagNormals q.
double elbo_estimate(const ToyTarget& target, const MixtureParams& q, int n_samples,
                     RngStream& rng);

/// One ELBO-gradient sample over q's coordinates (logit, comp_mean,
/// comp_scale). The explicit theta-dependence of the integrand has zero
/// mean and is dropped.
Vector elbo_gradient(const ToyTarget& target, const MixtureParams& q, SgviEstimator estimator,
                     double temperature, RngStream& rng);

/// Adam ascent on (logits, means, log scales) of a DiagNormals q. The trace
/// has a row at step 0, every log_every steps and at n_steps; the last row
/// uses final_eval_samples.
std::vector<SgviTraceRow> run_sgvi(const ToyTarget& target, const MixtureParams& q_init,
                                   SgviEstimator estimator, const SgviConfig& cfg,
                                   RngStream& rng);

/// Initial q for seed-indexed runs: equal weights, N(0, 0.5^2) means, unit scales.
MixtureParams sgvi_initial_q(RngStream& rng);

}  // namespace tg
