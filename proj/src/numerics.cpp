#include "transportgrad/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace tg {

namespace {

// W. J. Cody, "Rational Chebyshev approximations for the error function",
// Math. Comp. 1969. Coefficients from the netlib specfun CALERF routine.
constexpr double kA[5] = {3.16112374387056560e00, 1.13864154151050156e02, 3.77485237685302021e02,
                          3.20937758913846947e03, 1.85777706184603153e-1};
constexpr double kB[4] = {2.36012909523441209e01, 2.44024637934444173e02, 1.28261652607737228e03,
                          2.84423683343917062e03};
constexpr double kC[9] = {5.64188496988670089e-1, 8.88314979438837594e00, 6.61191906371416295e01,
                          2.98635138197400131e02, 8.81952221241769090e02, 1.71204761263407058e03,
                          2.05107837782607147e03, 1.23033935479799725e03, 2.15311535474403846e-8};
constexpr double kD[8] = {1.57449261107098347e01, 1.17693950891312499e02, 5.37181101862009858e02,
                          1.62138957456669019e03, 3.29079923573345963e03, 4.36261909014324716e03,
                          3.43936767414372164e03, 1.23033935480374942e03};
constexpr double kP[6] = {3.05326634961232344e-1, 3.60344899949804439e-1, 1.25781726111229246e-1,
                          1.60837851487422766e-2, 6.58749161529837803e-4, 1.63153871373020978e-2};
constexpr double kQ[5] = {2.56852019228982242e00, 1.87295284992346047e00, 5.27905102951428412e-1,
                          6.05183413124413191e-2, 2.33520497626869185e-3};
constexpr double kSqrtPiInv = 5.6418958354775628695e-1;
constexpr double kThresh = 0.46875;
constexpr double kXSmall = 1.11e-16;
constexpr double kXBig = 26.543;
constexpr double kXHuge = 6.71e7;
constexpr double kXMax = 2.53e307;
constexpr double kXNeg = -26.628;

enum class ErfKind { Erf, Erfc, Erfcx };

// exp(-y^2) evaluated as exp(-ysq^2) exp(-del) with ysq = y rounded to 1/16,
// which keeps the product accurate for large y.
double exp_neg_square(double y) {
  const double ysq = std::trunc(y * 16.0) / 16.0;
  const double del = (y - ysq) * (y + ysq);
  return std::exp(-ysq * ysq) * std::exp(-del);
}

double calerf(double x, ErfKind kind) {
  const double y = std::fabs(x);
  double result = 0.0;

  if (y <= kThresh) {
    const double ysq = y > kXSmall ? y * y : 0.0;
    double xnum = kA[4] * ysq;
    double xden = ysq;
    for (int i = 0; i < 3; ++i) {
      xnum = (xnum + kA[i]) * ysq;
      xden = (xden + kB[i]) * ysq;
    }
    result = x * (xnum + kA[3]) / (xden + kB[3]);
    if (kind != ErfKind::Erf) result = 1.0 - result;
    if (kind == ErfKind::Erfcx) result = std::exp(ysq) * result;
    return result;
  }

  if (y <= 4.0) {
    double xnum = kC[8] * y;
    double xden = y;
    for (int i = 0; i < 7; ++i) {
      xnum = (xnum + kC[i]) * y;
      xden = (xden + kD[i]) * y;
    }
    result = (xnum + kC[7]) / (xden + kD[7]);
    if (kind != ErfKind::Erfcx) result *= exp_neg_square(y);
  } else {
    bool done = false;
    if (y >= kXBig) {
      if (kind != ErfKind::Erfcx || y >= kXMax) {
        result = 0.0;
        done = true;
      } else if (y >= kXHuge) {
        result = kSqrtPiInv / y;
        done = true;
      }
    }
    if (!done) {
      const double ysq = 1.0 / (y * y);
      double xnum = kP[5] * ysq;
      double xden = ysq;
      for (int i = 0; i < 4; ++i) {
        xnum = (xnum + kP[i]) * ysq;
        xden = (xden + kQ[i]) * ysq;
      }
      result = ysq * (xnum + kP[4]) / (xden + kQ[4]);
      result = (kSqrtPiInv - result) / y;
      if (kind != ErfKind::Erfcx) result *= exp_neg_square(y);
    }
  }

  switch (kind) {
    case ErfKind::Erf:
      result = (0.5 - result) + 0.5;
      return x < 0.0 ? -result : result;
    case ErfKind::Erfc:
      return x < 0.0 ? 2.0 - result : result;
    case ErfKind::Erfcx:
      if (x < 0.0) {
        if (x < kXNeg) return std::numeric_limits<double>::infinity();
        const double ysq = std::trunc(x * 16.0) / 16.0;
        const double del = (x - ysq) * (x + ysq);
        const double e = std::exp(ysq * ysq) * std::exp(del);
        result = e + e - result;
      }
      return result;
  }
  return result;
}

}  // namespace

double erfc(double x) { return calerf(x, ErfKind::Erfc); }
double erfcx(double x) { return calerf(x, ErfKind::Erfcx); }
double erf(double x) { return calerf(x, ErfKind::Erf); }

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x - 0.5 * kLog2Pi); }

double std_normal_cdf(double x) { return 0.5 * erfc(-x / kSqrt2); }

double std_normal_sf(double x) { return 0.5 * erfc(x / kSqrt2); }

double log_std_normal_sf(double x) {
  if (x <= 0.0) return std::log(0.5 * erfc(x / kSqrt2));
  return std::log(0.5 * erfcx(x / kSqrt2)) - 0.5 * x * x;
}

double log_std_normal_cdf(double x) { return log_std_normal_sf(-x); }

double log_std_normal_cdf_diff(double lo, double hi) {
  if (!(lo < hi)) {
    if (lo == hi) return -std::numeric_limits<double>::infinity();
    throw std::invalid_argument("log_std_normal_cdf_diff: lo must not exceed hi");
  }
  if (lo >= 0.0) {
    // Both in the upper tail: Q(lo) - Q(hi).
    const double a = log_std_normal_sf(lo);
    const double b = log_std_normal_sf(hi);
    return a + std::log1p(-std::exp(b - a));
  }
  if (hi <= 0.0) {
    const double a = log_std_normal_cdf(hi);
    const double b = log_std_normal_cdf(lo);
    return a + std::log1p(-std::exp(b - a));
  }
  return std::log1p(-(std_normal_sf(hi) + std_normal_cdf(lo)));
}

double double_factorial(int n) {
  if (n < -1) throw std::domain_error("double_factorial: n must be >= -1");
  double result = 1.0;
  for (int k = n; k > 1; k -= 2) result *= k;
  return result;
}

double log_double_factorial(int n) {
  if (n < -1) throw std::domain_error("log_double_factorial: n must be >= -1");
  double result = 0.0;
  for (int k = n; k > 1; k -= 2) result += std::log(static_cast<double>(k));
  return result;
}

double log_radial_cdf(double z, int dim) {
  if (dim < 1) throw std::domain_error("radial_cdf: dim must be >= 1");
  if (!(z > 0.0) || !std::isfinite(z)) {
    throw std::domain_error("radial_cdf: z must be positive and finite, got " + std::to_string(z));
  }
  const double log_z = std::log(z);
  const double log_df = log_double_factorial(dim - 2);

  // Terms of the series with e^{-z^2/2} (2 pi)^{-D/2} factored out; summed in
  // log space so (D-2)!! and z^{1-D} cannot overflow.
  const int n_terms = (dim % 2 == 0) ? dim / 2 : (dim - 1) / 2 + 1;
  Vector log_terms(n_terms);
  if (dim % 2 == 0) {
    for (int k = 0; k < dim / 2; ++k) {
      log_terms[k] = log_df - log_double_factorial(2 * k) + (2 * k + 1 - dim) * log_z;
    }
  } else {
    for (int k = 1; k <= (dim - 1) / 2; ++k) {
      log_terms[k - 1] = log_df - log_double_factorial(2 * k - 1) + (2 * k - dim) * log_z;
    }
    // (D-2)!! sqrt(pi/2) erfc(z/sqrt2) z^{1-D}, with erfc = e^{-z^2/2} erfcx.
    log_terms[n_terms - 1] =
        log_df + 0.5 * std::log(kPi / 2.0) + std::log(erfcx(z / kSqrt2)) + (1 - dim) * log_z;
  }
  return -0.5 * z * z - 0.5 * dim * kLog2Pi + log_sum_exp(log_terms);
}

double radial_cdf(double z, int dim) { return std::exp(log_radial_cdf(z, dim)); }

double log_sum_exp(const Vector& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

double finite_diff_divergence(const VectorField& field, const Vector& point,
                              const FiniteDiffConfig& cfg) {
  if (!(cfg.step_h > 0.0)) throw std::invalid_argument("finite_diff_divergence: step_h must be > 0");
  const double h = cfg.step_h;
  double div = 0.0;
  Vector x = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    x[i] = point[i] + h;
    const double plus = field(x)[i];
    x[i] = point[i] - h;
    const double minus = field(x)[i];
    x[i] = point[i];
    div += (plus - minus) / (2.0 * h);
  }
  return div;
}

Vector finite_diff_divergences(const MatrixField& field, const Vector& point,
                               const FiniteDiffConfig& cfg) {
  if (!(cfg.step_h > 0.0)) throw std::invalid_argument("finite_diff_divergences: step_h must be > 0");
  const double h = cfg.step_h;
  Vector div;
  Vector x = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    x[i] = point[i] + h;
    const Matrix plus = field(x);
    x[i] = point[i] - h;
    const Matrix minus = field(x);
    x[i] = point[i];
    if (div.size() == 0) div = Vector::Zero(plus.cols());
    div += (plus.row(i) - minus.row(i)).transpose() / (2.0 * h);
  }
  return div;
}

double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// ---------------------------------------------------------------------------

namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_id),
                    static_cast<std::uint32_t>(stream_id >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

double RngStream::normal() { return normal_(engine_); }

Vector RngStream::normal_vector(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

double RngStream::uniform() {
  // 53 random bits, shifted half an ulp off zero.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::gamma(double shape, double rate) {
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  return dist(engine_);
}

double RngStream::gumbel() { return -std::log(-std::log(uniform())); }

bool RngStream::bernoulli(double p) { return uniform() < p; }

int RngStream::categorical(const Vector& probabilities) {
  const double u = uniform() * probabilities.sum();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < probabilities.size(); ++k) {
    acc += probabilities[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probabilities.size() - 1);
}

RngStream RngStream::split(std::uint64_t child) const {
  return RngStream(seed_, stream_id_ * 0x9E3779B97F4A7C15ull + child + 1);
}

// ---------------------------------------------------------------------------

AdamState AdamState::fresh(Eigen::Index n, double learning_rate, double beta1, double beta2,
                           double epsilon) {
  AdamState s;
  s.first_moment = Vector::Zero(n);
  s.second_moment = Vector::Zero(n);
  s.learning_rate = learning_rate;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

void adam_update(AdamState& state, Vector& params, const Vector& grad) {
  if (params.size() != grad.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment lengths differ");
  }
  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

std::pair<AdamState, Vector> adam_step(AdamState state, Vector params, const Vector& grad) {
  adam_update(state, params, grad);
  return {std::move(state), std::move(params)};
}

}  // namespace tg
