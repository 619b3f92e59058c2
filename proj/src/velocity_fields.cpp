#include "transportgrad/velocity_fields.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tg {

namespace {

constexpr double kDegenerateGap = 1e-12;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_family(const MixtureParams& p, std::initializer_list<MixtureFamily> allowed,
                    const char* op) {
  for (auto f : allowed)
    if (p.family() == f) return;
  throw std::invalid_argument(std::string(op) + ": unsupported mixture family " +
                              family_name(p.family()));
}

}  // namespace

// ---------------------------------------------------------------------------

AvfParams::AvfParams(Matrix b_, Matrix c_) : b(std::move(b_)), c(std::move(c_)) {
  require(b.rows() == c.rows() && b.cols() == c.cols(), "avf: B and C must have equal shapes");
  require(b.rows() >= 1 && b.cols() >= 1, "avf: rank and dimension must be positive");
}

AvfParams AvfParams::zeros(int rank, int dim) {
  return AvfParams(Matrix::Zero(rank, dim), Matrix::Zero(rank, dim));
}

AvfParams AvfParams::random(int rank, int dim, double scale, RngStream& rng) {
  Matrix b(rank, dim), c(rank, dim);
  for (int l = 0; l < rank; ++l)
    for (int a = 0; a < dim; ++a) b(l, a) = scale * rng.normal();
  for (int l = 0; l < rank; ++l)
    for (int a = 0; a < dim; ++a) c(l, a) = scale * rng.normal();
  return AvfParams(std::move(b), std::move(c));
}

Matrix AvfParams::pair_scalars() const { return b.transpose() * c; }

Matrix AvfParams::induced_matrix(int a, int bb) const {
  Matrix out = Matrix::Zero(dim(), dim());
  const double s = b.col(a).dot(c.col(bb));
  out(a, bb) += s;
  out(bb, a) -= s;
  return out;
}

// ---------------------------------------------------------------------------

VelocityFieldSet::VelocityFieldSet(std::vector<Coordinate> coordinates, Evaluator evaluator)
    : coordinates_(std::move(coordinates)), evaluator_(std::move(evaluator)) {}

std::vector<std::string> VelocityFieldSet::labels() const {
  std::vector<std::string> out;
  for (const auto& c : coordinates_) out.push_back(c.label());
  return out;
}

int VelocityFieldSet::index_of(const Coordinate& c) const {
  const auto it = std::find(coordinates_.begin(), coordinates_.end(), c);
  if (it == coordinates_.end()) throw std::out_of_range("no field for coordinate " + c.label());
  return static_cast<int>(it - coordinates_.begin());
}

VectorField VelocityFieldSet::field(const Coordinate& c) const {
  const int idx = index_of(c);
  return [eval = evaluator_, idx](const Vector& z) -> Vector { return eval(z).col(idx); };
}

// ---------------------------------------------------------------------------
// Location-scale

namespace {

Matrix location_scale_fields(const LocationScale& p, const std::optional<AvfParams>& avf,
                             const Vector& z) {
  const int d = p.dim();
  require(z.size() == d, "fields: z has wrong dimension");
  if (avf) require(avf->dim() == d, "fields: avf dimension does not match the distribution");
  const Vector w = p.whiten(z);
  Matrix s;
  if (avf) s = avf->pair_scalars();

  Matrix out = Matrix::Zero(d, d + d * (d + 1) / 2);
  int col = 0;
  for (int a = 0; a < d; ++a) out(a, col++) = 1.0;
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b <= a; ++b, ++col) {
      out(a, col) = w[b];
      if (avf && a != b && s(a, b) != 0.0) {
        out.col(col) += s(a, b) * (p.chol.col(a) * w[b] - p.chol.col(b) * w[a]);
      }
    }
  }
  return out;
}

}  // namespace

Matrix mvn_fields(const MvnParams& p, const std::optional<AvfParams>& avf, const Vector& z) {
  return location_scale_fields(p, avf, z);
}

Matrix student_t_fields(const StudentTParams& p, const std::optional<AvfParams>& avf,
                        const Vector& z) {
  return location_scale_fields(p, avf, z);
}

Vector location_scale_fields_dot(const LocationScale& p, const std::optional<AvfParams>& avf,
                                 const Vector& g, const Vector& z) {
  const int d = p.dim();
  require(z.size() == d && g.size() == d, "fields_dot: vectors have wrong dimension");
  if (avf) require(avf->dim() == d, "fields_dot: avf dimension does not match the distribution");
  const Vector w = p.whiten(z);
  Matrix s;
  Vector lg;
  if (avf) {
    s = avf->pair_scalars();
    lg = p.chol.transpose() * g;
  }
  Vector out(d + d * (d + 1) / 2);
  out.head(d) = g;
  int idx = d;
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b <= a; ++b, ++idx) {
      double v = g[a] * w[b];
      if (avf && a != b) v += s(a, b) * (lg[a] * w[b] - lg[b] * w[a]);
      out[idx] = v;
    }
  }
  return out;
}

Vector elementary_null_field(const LocationScale& p, int a, int b, const Vector& z) {
  const Vector w = p.whiten(z);
  return p.chol.col(a) * w[b] - p.chol.col(b) * w[a];
}

VelocityFieldSet make_field_set(const MvnParams& p, const std::optional<AvfParams>& avf) {
  return VelocityFieldSet(p.coordinates(),
                          [p, avf](const Vector& z) { return mvn_fields(p, avf, z); });
}

VelocityFieldSet make_field_set(const StudentTParams& p, const std::optional<AvfParams>& avf) {
  return VelocityFieldSet(p.coordinates(),
                          [p, avf](const Vector& z) { return student_t_fields(p, avf, z); });
}

// ---------------------------------------------------------------------------
// Mixture geometry and pairwise transport

MixtureGeometry mixture_geometry(const Matrix& means, const Vector& scale, const Vector& z) {
  const int k = static_cast<int>(means.rows());
  const int d = static_cast<int>(means.cols());
  MixtureGeometry g;
  g.z_tilde = z.cwiseQuotient(scale);
  g.mu_tilde = means.array().rowwise() / scale.transpose().array();
  g.mu_hat.assign(k, Matrix::Zero(k, d));
  g.z_par = Matrix::Zero(k, k);
  g.z_perp_norm = Matrix::Zero(k, k);
  g.mu_par = Matrix::Zero(k, k);
  g.line_distance = Matrix::Zero(k, k);
  g.degenerate.assign(k, std::vector<bool>(k, true));
  for (int j = 0; j < k; ++j) {
    for (int l = 0; l < k; ++l) {
      if (l == j) continue;
      const Vector diff = (g.mu_tilde.row(j) - g.mu_tilde.row(l)).transpose();
      const double gap = diff.norm();
      if (gap < kDegenerateGap) continue;
      g.degenerate[j][l] = false;
      const Vector hat = diff / gap;
      g.mu_hat[j].row(l) = hat.transpose();
      g.z_par(j, l) = g.z_tilde.dot(hat);
      g.z_perp_norm(j, l) = (g.z_tilde - g.z_par(j, l) * hat).norm();
      g.mu_par(j, l) = g.mu_tilde.row(j).dot(hat.transpose());
      const Vector offset = g.z_tilde - g.mu_tilde.row(j).transpose();
      g.line_distance(j, l) = (offset - offset.dot(hat) * hat).norm();
    }
  }
  return g;
}

namespace {

// log of the pairwise flux magnitude F^{jk} for j < k; the flux vector is
// F * (sigma .* mu_hat^{jk}) and its divergence is q_k - q_j.
double log_pairwise_flux(const MixtureGeometry& g, const Vector& scale, int j, int k) {
  const int d = static_cast<int>(scale.size());
  const double t = g.z_par(j, k);
  const double a_j = g.mu_par(j, k);
  const double a_k = g.mu_tilde.row(k).dot(g.mu_hat[j].row(k));
  const double rho = g.line_distance(j, k);
  return -0.5 * (d - 1) * kLog2Pi - scale.array().log().sum() - 0.5 * rho * rho +
         log_std_normal_cdf_diff(t - a_j, t - a_k);
}

// Adds sum_k pi_j pi_k v^{jk} to column j of out for shared-scale mixtures.
void add_pairwise_logit_part(Matrix& out, const Matrix& means, const Vector& scale,
                             const Vector& log_w, double log_q, const Vector& z) {
  const int k = static_cast<int>(means.rows());
  if (k < 2) return;
  const MixtureGeometry g = mixture_geometry(means, scale, z);
  for (int j = 0; j < k; ++j) {
    for (int l = j + 1; l < k; ++l) {
      if (g.degenerate[j][l]) continue;
      const double mag = std::exp(log_w[j] + log_w[l] + log_pairwise_flux(g, scale, j, l) - log_q);
      const Vector v = mag * scale.cwiseProduct(g.mu_hat[j].row(l).transpose());
      out.col(j) += v;
      out.col(l) -= v;
    }
  }
}

// Adds pi_j (W_j - sum_k pi_k W_k) / q where W_j is the radial flux moving
// component j from multiplier lambda_0 to lambda_j about its own mean.
void add_radial_logit_part(Matrix& out, const Matrix& means, const Vector& scale,
                           const Vector& lambda, const Vector& weights, double log_q,
                           const Vector& z) {
  const int k = static_cast<int>(means.rows());
  const int d = static_cast<int>(scale.size());
  const double lambda0 = lambda.minCoeff();
  const double log_prod_scale = scale.array().log().sum();
  Matrix w = Matrix::Zero(d, k);
  for (int j = 0; j < k; ++j) {
    const Vector x = (z - means.row(j).transpose()).cwiseQuotient(scale);
    const double r = x.norm();
    if (!(r > 0.0)) continue;
    const SignedLog delta = radial_flux_difference(r, lambda[j], lambda0, d);
    if (delta.sign == 0) continue;
    const double mag = delta.sign * std::exp(delta.log_abs - log_prod_scale - log_q);
    w.col(j) = (mag / r) * scale.cwiseProduct(x);
  }
  const Vector mean_w = w * weights;
  for (int j = 0; j < k; ++j) out.col(j) += weights[j] * (w.col(j) - mean_w);
}

}  // namespace

SignedLog radial_flux_difference(double r, double lambda_a, double lambda_b, int dim) {
  require(dim >= 1, "radial_flux_difference: dim must be >= 1");
  SignedLog out;
  if (!(r > 0.0) || lambda_a == lambda_b) return out;
  const double half_d = 0.5 * dim;
  const double xa = r * r / (2.0 * lambda_a * lambda_a);
  const double xb = r * r / (2.0 * lambda_b * lambda_b);
  const double pa = boost::math::gamma_p(half_d, xa);
  const double pb = boost::math::gamma_p(half_d, xb);
  if (std::max(pa, pb) < 0.5) {
    // r^{1-D} K_D [P(D/2, xb) - P(D/2, xa)], K_D = (2 pi)^{-D/2} 2^{D/2-1} Gamma(D/2)
    const double diff = pb - pa;
    if (diff == 0.0) return out;
    out.sign = diff > 0.0 ? 1 : -1;
    out.log_abs = (1.0 - dim) * std::log(r) - half_d * kLog2Pi + (half_d - 1.0) * std::log(2.0) +
                  std::lgamma(half_d) + std::log(std::fabs(diff));
    return out;
  }
  const double la = (1.0 - dim) * std::log(lambda_a) + log_radial_cdf(r / lambda_a, dim);
  const double lb = (1.0 - dim) * std::log(lambda_b) + log_radial_cdf(r / lambda_b, dim);
  if (la == lb) return out;
  const double hi = std::max(la, lb);
  const double lo = std::min(la, lb);
  out.sign = la > lb ? 1 : -1;
  out.log_abs = hi + std::log1p(-std::exp(lo - hi));
  return out;
}

// ---------------------------------------------------------------------------
// Mixture fields

Matrix component_fields(const MixtureParams& p, const Vector& z) {
  const int k = p.components();
  const int d = p.dim();
  require(z.size() == d, "component_fields: z has wrong dimension");
  const Vector r = responsibilities(p, z);
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();
  const auto coords = p.coordinates();
  Matrix out = Matrix::Zero(d, static_cast<Eigen::Index>(coords.size()) - k);
  const Vector lambda = p.multipliers();
  for (std::size_t n = k; n < coords.size(); ++n) {
    const Coordinate& c = coords[n];
    auto col = out.col(static_cast<Eigen::Index>(n) - k);
    switch (c.kind) {
      case CoordKind::CompMean:
        col[c.second] = r[c.first];
        break;
      case CoordKind::CompScale:
        col[c.second] = r[c.first] * (z[c.second] - m(c.first, c.second)) / s(c.first, c.second);
        break;
      case CoordKind::Scale: {
        const double sigma = p.shared_scale()[c.first];
        for (int j = 0; j < k; ++j) col[c.first] += r[j] * (z[c.first] - m(j, c.first)) / sigma;
        break;
      }
      case CoordKind::Multiplier:
        col = r[c.first] * (z - m.row(c.first).transpose()) / lambda[c.first];
        break;
      default:
        throw std::logic_error("unexpected coordinate " + c.label());
    }
  }
  return out;
}

Vector component_fields_dot(const MixtureParams& p, const Vector& g, const Vector& z) {
  const int k = p.components();
  const int d = p.dim();
  require(z.size() == d && g.size() == d, "component_fields_dot: vectors have wrong dimension");
  const Vector r = responsibilities(p, z);
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();
  const auto coords = p.coordinates();
  Vector out(static_cast<Eigen::Index>(coords.size()) - k);
  const Vector lambda = p.multipliers();
  for (std::size_t n = k; n < coords.size(); ++n) {
    const Coordinate& c = coords[n];
    double v = 0.0;
    switch (c.kind) {
      case CoordKind::CompMean:
        v = r[c.first] * g[c.second];
        break;
      case CoordKind::CompScale:
        v = r[c.first] * g[c.second] * (z[c.second] - m(c.first, c.second)) / s(c.first, c.second);
        break;
      case CoordKind::Scale: {
        const double sigma = p.shared_scale()[c.first];
        for (int j = 0; j < k; ++j) v += r[j] * (z[c.first] - m(j, c.first));
        v *= g[c.first] / sigma;
        break;
      }
      case CoordKind::Multiplier:
        v = r[c.first] * g.dot(z - m.row(c.first).transpose()) / lambda[c.first];
        break;
      default:
        throw std::logic_error("unexpected coordinate " + c.label());
    }
    out[static_cast<Eigen::Index>(n) - k] = v;
  }
  return out;
}

Matrix logit_fields_shared_cov(const MixtureParams& p, const Vector& z) {
  require_family(p, {MixtureFamily::SharedDiagCov}, "logit_fields_shared_cov");
  require(z.size() == p.dim(), "logit_fields_shared_cov: z has wrong dimension");
  Matrix out = Matrix::Zero(p.dim(), p.components());
  add_pairwise_logit_part(out, p.effective_means(), p.shared_scale(), p.log_weights(),
                          log_density(p, z), z);
  return out;
}

Matrix logit_fields_zero_mean_gsm(const MixtureParams& p, const Vector& z) {
  require_family(p, {MixtureFamily::ZeroMeanGsm}, "logit_fields_zero_mean_gsm");
  require(z.size() == p.dim(), "logit_fields_zero_mean_gsm: z has wrong dimension");
  Matrix out = Matrix::Zero(p.dim(), p.components());
  add_radial_logit_part(out, p.effective_means(), p.shared_scale(), p.multipliers(), p.weights(),
                        log_density(p, z), z);
  return out;
}

Matrix logit_fields_gsm(const MixtureParams& p, const Vector& z) {
  require_family(p, {MixtureFamily::Gsm}, "logit_fields_gsm");
  require(z.size() == p.dim(), "logit_fields_gsm: z has wrong dimension");
  const Vector lambda = p.multipliers();
  const double log_q = log_density(p, z);
  Matrix out = Matrix::Zero(p.dim(), p.components());
  add_pairwise_logit_part(out, p.effective_means(), lambda.minCoeff() * p.shared_scale(),
                          p.log_weights(), log_q, z);
  add_radial_logit_part(out, p.effective_means(), p.shared_scale(), lambda, p.weights(), log_q, z);
  return out;
}

Matrix logit_fields_diag_normals(const MixtureParams& p, const Vector& z,
                                 const DiagNormalsOptions& options) {
  require_family(p, {MixtureFamily::DiagNormals}, "logit_fields_diag_normals");
  const int k = p.components();
  const int d = p.dim();
  require(z.size() == d, "logit_fields_diag_normals: z has wrong dimension");
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();

  std::vector<int> order = options.dimension_order;
  if (order.empty()) {
    order.resize(d);
    std::iota(order.begin(), order.end(), 0);
  }
  {
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expected(d);
    std::iota(expected.begin(), expected.end(), 0);
    require(sorted == expected, "logit_fields_diag_normals: dimension_order must be a permutation");
  }
  const Vector ref_scale =
      options.reference_scale ? *options.reference_scale : Vector(s.colwise().minCoeff().transpose());
  const Vector ref_mean =
      options.reference_mean ? *options.reference_mean : Vector(m.transpose() * p.weights());
  require(ref_scale.size() == d && (ref_scale.array() > 0.0).all(),
          "logit_fields_diag_normals: reference scale must be positive with length D");
  require(ref_mean.size() == d, "logit_fields_diag_normals: reference mean must have length D");

  const double log_q = log_density(p, z);
  const Vector zbar = (z - ref_mean).cwiseQuotient(ref_scale);

  // suffix sums over positions after p of the reference factors
  Vector ref_sq_suffix = Vector::Zero(d + 1), ref_log_suffix = Vector::Zero(d + 1);
  for (int pos = d - 1; pos >= 0; --pos) {
    const int i = order[pos];
    ref_sq_suffix[pos] = ref_sq_suffix[pos + 1] + zbar[i] * zbar[i];
    ref_log_suffix[pos] = ref_log_suffix[pos + 1] + std::log(ref_scale[i]);
  }

  Matrix flux(d, k);  // F_j / q
  for (int j = 0; j < k; ++j) {
    double comp_sq = 0.0, comp_log = 0.0;
    for (int pos = 0; pos < d; ++pos) {
      const int i = order[pos];
      const double zt = (z[i] - m(j, i)) / s(j, i);
      const double log_other = -0.5 * (d - 1) * kLog2Pi - comp_log - ref_log_suffix[pos + 1] -
                               0.5 * (comp_sq + ref_sq_suffix[pos + 1]);
      double value = 0.0;
      if (zbar[i] != zt) {
        const double lo = std::min(zbar[i], zt);
        const double hi = std::max(zbar[i], zt);
        const double sign = zbar[i] > zt ? 1.0 : -1.0;
        value = sign * std::exp(log_other + log_std_normal_cdf_diff(lo, hi) - log_q);
      }
      flux(i, j) = value;
      comp_sq += zt * zt;
      comp_log += std::log(s(j, i));
    }
  }
  const Vector w = p.weights();
  const Vector mean_flux = flux * w;
  Matrix out(d, k);
  for (int j = 0; j < k; ++j) out.col(j) = w[j] * (flux.col(j) - mean_flux);
  return out;
}

Matrix logit_fields(const MixtureParams& p, const Vector& z) {
  switch (p.family()) {
    case MixtureFamily::SharedDiagCov: return logit_fields_shared_cov(p, z);
    case MixtureFamily::ZeroMeanGsm: return logit_fields_zero_mean_gsm(p, z);
    case MixtureFamily::Gsm: return logit_fields_gsm(p, z);
    case MixtureFamily::DiagNormals: return logit_fields_diag_normals(p, z);
  }
  throw std::logic_error("unknown mixture family");
}

Vector pairwise_field(const MixtureParams& p, int j, int k, const Vector& z) {
  require_family(p, {MixtureFamily::SharedDiagCov, MixtureFamily::Gsm}, "pairwise_field");
  require(j >= 0 && k >= 0 && j < p.components() && k < p.components(),
          "pairwise_field: component index out of range");
  const int d = p.dim();
  if (j == k) return Vector::Zero(d);
  if (j > k) return -pairwise_field(p, k, j, z);

  const Vector lambda = p.multipliers();
  const double lambda0 = lambda.minCoeff();
  const Vector scale = lambda0 * p.shared_scale();
  const double log_q = log_density(p, z);
  const Matrix& m = p.effective_means();
  Vector out = Vector::Zero(d);

  Matrix pair_means(2, d);
  pair_means << m.row(j), m.row(k);
  const MixtureGeometry g = mixture_geometry(pair_means, scale, z);
  if (!g.degenerate[0][1]) {
    out = std::exp(log_pairwise_flux(g, scale, 0, 1) - log_q) *
          scale.cwiseProduct(g.mu_hat[0].row(1).transpose());
  }
  if (p.family() == MixtureFamily::Gsm) {
    // radial parts (W_j - W_k) / q, reference multiplier is the global minimum
    for (int idx : {j, k}) {
      const Vector x = (z - m.row(idx).transpose()).cwiseQuotient(p.shared_scale());
      const double r = x.norm();
      if (!(r > 0.0)) continue;
      const SignedLog delta = radial_flux_difference(r, lambda[idx], lambda0, d);
      if (delta.sign == 0) continue;
      const double mag =
          delta.sign * std::exp(delta.log_abs - p.shared_scale().array().log().sum() - log_q);
      const Vector flux = (mag / r) * p.shared_scale().cwiseProduct(x);
      out += idx == j ? flux : Vector(-flux);
    }
  }
  return out;
}

Matrix negative_example_cdf_field(const MixtureParams& p, const Vector& z) {
  require_family(p, {MixtureFamily::DiagNormals}, "negative_example_cdf_field");
  const int k = p.components();
  const int d = p.dim();
  require(z.size() == d, "negative_example_cdf_field: z has wrong dimension");
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();
  const double log_q = log_density(p, z);
  const Vector log_qj = component_log_densities(p, z);

  Matrix raw(d, k);  // v^{pi_j}
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < d; ++i) {
      const double zt = (z[i] - m(j, i)) / s(j, i);
      const double log_marginal = -0.5 * kLog2Pi - std::log(s(j, i)) - 0.5 * zt * zt;
      raw(i, j) = -std_normal_cdf(zt) * std::exp(log_qj[j] - log_marginal - log_q) / d;
    }
  }
  const Vector w = p.weights();
  const Vector mean_raw = raw * w;
  Matrix out(d, k);
  for (int j = 0; j < k; ++j) out.col(j) = w[j] * (raw.col(j) - mean_raw);
  return out;
}

Matrix mixture_fields(const MixtureParams& p, const Vector& z) {
  const Matrix logits = logit_fields(p, z);
  const Matrix comps = component_fields(p, z);
  Matrix out(p.dim(), logits.cols() + comps.cols());
  out << logits, comps;
  return out;
}

VelocityFieldSet make_field_set(const MixtureParams& p) {
  return VelocityFieldSet(p.coordinates(), [p](const Vector& z) { return mixture_fields(p, z); });
}

VelocityFieldSet make_component_field_set(const MixtureParams& p) {
  auto coords = p.coordinates();
  coords.erase(coords.begin(), coords.begin() + p.components());
  return VelocityFieldSet(std::move(coords),
                          [p](const Vector& z) { return component_fields(p, z); });
}

VelocityFieldSet make_negative_example_field_set(const MixtureParams& p) {
  auto coords = p.coordinates();
  coords.resize(p.components());
  return VelocityFieldSet(std::move(coords),
                          [p](const Vector& z) { return negative_example_cdf_field(p, z); });
}

}  // namespace tg
