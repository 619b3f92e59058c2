#include "transportgrad/distributions.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tg {

namespace {

constexpr const char* kKindNames[] = {"mean",      "chol",       "logit", "comp_mean",
                                      "comp_scale", "scale", "multiplier"};

bool two_index(CoordKind k) {
  return k == CoordKind::Chol || k == CoordKind::CompMean || k == CoordKind::CompScale;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

std::string Coordinate::label() const {
  std::ostringstream os;
  os << kKindNames[static_cast<int>(kind)] << '[' << first;
  if (two_index(kind)) os << ',' << second;
  os << ']';
  return os.str();
}

std::optional<Coordinate> parse_coordinate(const std::string& label) {
  const auto open = label.find('[');
  if (open == std::string::npos || label.back() != ']') return std::nullopt;
  const std::string name = label.substr(0, open);
  const std::string inner = label.substr(open + 1, label.size() - open - 2);
  for (int k = 0; k < 7; ++k) {
    if (name != kKindNames[k]) continue;
    Coordinate c{static_cast<CoordKind>(k), 0, 0};
    std::istringstream is(inner);
    char comma = 0;
    if (!(is >> c.first)) return std::nullopt;
    if (two_index(c.kind) && !(is >> comma >> c.second && comma == ',')) return std::nullopt;
    if (!is.eof() && is.peek() != EOF) return std::nullopt;
    return c;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

LocationScale::LocationScale(Vector m, Matrix l) : mean(std::move(m)), chol(std::move(l)) {
  require(mean.size() >= 1, "location-scale: dimension must be >= 1");
  require(chol.rows() == mean.size() && chol.cols() == mean.size(),
          "location-scale: cholesky must be D x D");
  require(all_finite(mean) && all_finite(chol), "location-scale: non-finite parameters");
  for (Eigen::Index i = 0; i < chol.rows(); ++i) {
    require(chol(i, i) > 0.0, "location-scale: cholesky diagonal must be positive");
    for (Eigen::Index j = i + 1; j < chol.cols(); ++j) {
      require(chol(i, j) == 0.0, "location-scale: cholesky must be lower triangular");
    }
  }
}

Vector LocationScale::whiten(const Vector& z) const {
  return chol.triangularView<Eigen::Lower>().solve(z - mean);
}

std::vector<Coordinate> LocationScale::coordinates() const {
  std::vector<Coordinate> out;
  const int d = dim();
  out.reserve(d + d * (d + 1) / 2);
  for (int a = 0; a < d; ++a) out.push_back({CoordKind::Mean, a, 0});
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b <= a; ++b) out.push_back({CoordKind::Chol, a, b});
  }
  return out;
}

double LocationScale::get(const Coordinate& c) const {
  if (c.kind == CoordKind::Mean) return mean[c.first];
  if (c.kind == CoordKind::Chol) return chol(c.first, c.second);
  throw std::invalid_argument("location-scale has no coordinate " + c.label());
}

void LocationScale::set(const Coordinate& c, double value) {
  if (c.kind == CoordKind::Mean) {
    mean[c.first] = value;
  } else if (c.kind == CoordKind::Chol && c.second <= c.first) {
    chol(c.first, c.second) = value;
  } else {
    throw std::invalid_argument("location-scale has no coordinate " + c.label());
  }
}

MvnParams MvnParams::standard(int dim) {
  return MvnParams(Vector::Zero(dim), Matrix::Identity(dim, dim));
}

MvnParams MvnParams::with(const Coordinate& c, double value) const {
  MvnParams out = *this;
  out.set(c, value);
  return out;
}

StudentTParams::StudentTParams(Vector m, Matrix l, double nu)
    : LocationScale(std::move(m), std::move(l)), dof(nu) {
  require(dof > 0.0 && std::isfinite(dof), "student-t: dof must be positive");
}

StudentTParams StudentTParams::with(const Coordinate& c, double value) const {
  StudentTParams out = *this;
  out.set(c, value);
  return out;
}

// ---------------------------------------------------------------------------

std::string family_name(MixtureFamily f) {
  switch (f) {
    case MixtureFamily::SharedDiagCov: return "shared_cov";
    case MixtureFamily::ZeroMeanGsm: return "zero_mean_gsm";
    case MixtureFamily::Gsm: return "gsm";
    case MixtureFamily::DiagNormals: return "diag_normals";
  }
  return "?";
}

std::optional<MixtureFamily> parse_family(const std::string& name) {
  for (auto f : {MixtureFamily::SharedDiagCov, MixtureFamily::ZeroMeanGsm, MixtureFamily::Gsm,
                 MixtureFamily::DiagNormals}) {
    if (family_name(f) == name) return f;
  }
  return std::nullopt;
}

MixtureParams::MixtureParams(Variant v) : variant_(std::move(v)) { refresh(); }

const Vector& MixtureParams::logits() const {
  return std::visit([](const auto& m) -> const Vector& { return m.logits; }, variant_);
}

const Vector& MixtureParams::shared_scale() const {
  if (auto* m = std::get_if<SharedDiagCov>(&variant_)) return m->scale;
  if (auto* m = std::get_if<ZeroMeanGsm>(&variant_)) return m->scale;
  if (auto* m = std::get_if<Gsm>(&variant_)) return m->scale;
  throw std::logic_error("diag_normals mixture has no shared scale");
}

Vector MixtureParams::multipliers() const {
  if (auto* m = std::get_if<ZeroMeanGsm>(&variant_)) return m->multipliers;
  if (auto* m = std::get_if<Gsm>(&variant_)) return m->multipliers;
  return Vector::Ones(components());
}

void MixtureParams::refresh() {
  const Vector& l = logits();
  const Eigen::Index k = l.size();
  require(k >= 1, "mixture: need at least one component");
  require(l.allFinite(), "mixture: logits must be finite");

  auto check_means = [&](const Matrix& means) {
    require(means.rows() == k && means.cols() >= 1, "mixture: means must be K x D");
    require(all_finite(means), "mixture: non-finite means");
  };
  auto check_positive = [&](const auto& x, const char* what) {
    require(x.allFinite() && (x.array() > 0.0).all(),
            std::string("mixture: ") + what + " must be positive");
  };

  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, SharedDiagCov>) {
          check_means(m.means);
          require(m.scale.size() == m.means.cols(), "mixture: scale must have length D");
          check_positive(m.scale, "scale");
          means_ = m.means;
          scales_ = m.scale.transpose().replicate(k, 1);
        } else if constexpr (std::is_same_v<T, ZeroMeanGsm>) {
          require(m.scale.size() >= 1, "mixture: scale must have length D >= 1");
          require(m.multipliers.size() == k, "mixture: multipliers must have length K");
          check_positive(m.scale, "scale");
          check_positive(m.multipliers, "multipliers");
          means_ = Matrix::Zero(k, m.scale.size());
          scales_ = m.multipliers * m.scale.transpose();
        } else if constexpr (std::is_same_v<T, Gsm>) {
          check_means(m.means);
          require(m.scale.size() == m.means.cols(), "mixture: scale must have length D");
          require(m.multipliers.size() == k, "mixture: multipliers must have length K");
          check_positive(m.scale, "scale");
          check_positive(m.multipliers, "multipliers");
          means_ = m.means;
          scales_ = m.multipliers * m.scale.transpose();
        } else {
          check_means(m.means);
          require(m.scales.rows() == k && m.scales.cols() == m.means.cols(),
                  "mixture: scales must be K x D");
          check_positive(m.scales, "scales");
          means_ = m.means;
          scales_ = m.scales;
        }
      },
      variant_);

  log_weights_ = l.array() - log_sum_exp(l);
  weights_ = log_weights_.array().exp();
}

std::vector<Coordinate> MixtureParams::coordinates() const {
  const int k = components();
  const int d = dim();
  std::vector<Coordinate> out;
  for (int j = 0; j < k; ++j) out.push_back({CoordKind::Logit, j, 0});
  auto comp_means = [&] {
    for (int j = 0; j < k; ++j)
      for (int i = 0; i < d; ++i) out.push_back({CoordKind::CompMean, j, i});
  };
  auto shared_scale = [&] {
    for (int i = 0; i < d; ++i) out.push_back({CoordKind::Scale, i, 0});
  };
  auto multipliers = [&] {
    for (int j = 0; j < k; ++j) out.push_back({CoordKind::Multiplier, j, 0});
  };
  switch (family()) {
    case MixtureFamily::SharedDiagCov:
      comp_means();
      shared_scale();
      break;
    case MixtureFamily::ZeroMeanGsm:
      shared_scale();
      multipliers();
      break;
    case MixtureFamily::Gsm:
      comp_means();
      shared_scale();
      multipliers();
      break;
    case MixtureFamily::DiagNormals:
      comp_means();
      for (int j = 0; j < k; ++j)
        for (int i = 0; i < d; ++i) out.push_back({CoordKind::CompScale, j, i});
      break;
  }
  return out;
}

namespace {

// Mutable access to the storage behind a coordinate; nullptr if the family
// does not have it.
template <class V>
double* coordinate_slot(V& variant, const Coordinate& c) {
  return std::visit(
      [&](auto& m) -> double* {
        using T = std::decay_t<decltype(m)>;
        switch (c.kind) {
          case CoordKind::Logit:
            return c.first < m.logits.size() ? &m.logits[c.first] : nullptr;
          case CoordKind::CompMean:
            if constexpr (!std::is_same_v<T, ZeroMeanGsm>) {
              if (c.first < m.means.rows() && c.second < m.means.cols())
                return &m.means(c.first, c.second);
            }
            return nullptr;
          case CoordKind::CompScale:
            if constexpr (std::is_same_v<T, DiagNormals>) {
              if (c.first < m.scales.rows() && c.second < m.scales.cols())
                return &m.scales(c.first, c.second);
            }
            return nullptr;
          case CoordKind::Scale:
            if constexpr (!std::is_same_v<T, DiagNormals>) {
              if (c.first < m.scale.size()) return &m.scale[c.first];
            }
            return nullptr;
          case CoordKind::Multiplier:
            if constexpr (std::is_same_v<T, ZeroMeanGsm> || std::is_same_v<T, Gsm>) {
              if (c.first < m.multipliers.size()) return &m.multipliers[c.first];
            }
            return nullptr;
          default:
            return nullptr;
        }
      },
      variant);
}

}  // namespace

double MixtureParams::get(const Coordinate& c) const {
  Variant copy = variant_;
  const double* slot = c.first >= 0 && c.second >= 0 ? coordinate_slot(copy, c) : nullptr;
  if (!slot) throw std::invalid_argument("mixture has no coordinate " + c.label());
  return *slot;
}

MixtureParams MixtureParams::with(const Coordinate& c, double value) const {
  Variant copy = variant_;
  double* slot = c.first >= 0 && c.second >= 0 ? coordinate_slot(copy, c) : nullptr;
  if (!slot) throw std::invalid_argument("mixture has no coordinate " + c.label());
  *slot = value;
  return MixtureParams(std::move(copy));
}

// ---------------------------------------------------------------------------

Vector softmax(const Vector& logits) {
  return (logits.array() - log_sum_exp(logits)).exp();
}

Sample sample(const MvnParams& p, RngStream& rng) {
  const Vector eps = rng.normal_vector(p.dim());
  return {p.mean + p.chol.triangularView<Eigen::Lower>() * eps, std::nullopt};
}

Sample sample(const StudentTParams& p, RngStream& rng) {
  const Vector eps = rng.normal_vector(p.dim());
  const double tau = rng.gamma(0.5 * p.dof, 0.5 * p.dof);
  return {p.mean + (p.chol.triangularView<Eigen::Lower>() * eps) / std::sqrt(tau), std::nullopt};
}

Sample sample(const MixtureParams& p, RngStream& rng) {
  const int j = rng.categorical(p.weights());
  const Vector eps = rng.normal_vector(p.dim());
  Vector z = p.effective_means().row(j).transpose() +
             p.effective_scales().row(j).transpose().cwiseProduct(eps);
  return {std::move(z), j};
}

double log_density(const MvnParams& p, const Vector& z) {
  const Vector w = p.whiten(z);
  return -0.5 * p.dim() * kLog2Pi - p.chol.diagonal().array().log().sum() - 0.5 * w.squaredNorm();
}

double log_density(const StudentTParams& p, const Vector& z) {
  const Vector w = p.whiten(z);
  const double d = p.dim();
  const double nu = p.dof;
  return std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) - 0.5 * d * std::log(nu * kPi) -
         p.chol.diagonal().array().log().sum() - 0.5 * (nu + d) * std::log1p(w.squaredNorm() / nu);
}

Vector component_log_densities(const MixtureParams& p, const Vector& z) {
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();
  const int d = p.dim();
  Vector out(p.components());
  for (int j = 0; j < p.components(); ++j) {
    const auto u = (z.transpose().array() - m.row(j).array()) / s.row(j).array();
    out[j] = -0.5 * d * kLog2Pi - s.row(j).array().log().sum() - 0.5 * u.square().sum();
  }
  return out;
}

double log_density(const MixtureParams& p, const Vector& z) {
  return log_sum_exp(p.log_weights() + component_log_densities(p, z));
}

Vector responsibilities(const MixtureParams& p, const Vector& z) {
  return softmax(p.log_weights() + component_log_densities(p, z));
}

Vector grad_log_density(const MvnParams& p, const Vector& z) {
  const Vector w = p.whiten(z);
  return -p.chol.transpose().triangularView<Eigen::Upper>().solve(w);
}

Vector grad_log_density(const MixtureParams& p, const Vector& z) {
  const Vector r = responsibilities(p, z);
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();
  Vector g = Vector::Zero(p.dim());
  for (int j = 0; j < p.components(); ++j) {
    g.array() -= r[j] * (z.transpose().array() - m.row(j).array()) / s.row(j).array().square();
  }
  return g;
}

Vector score(const MvnParams& p, const Vector& z) {
  const int d = p.dim();
  const Vector w = p.whiten(z);
  // Sigma^{-1}(z - mu) = L^{-T} w
  const Vector u = p.chol.transpose().triangularView<Eigen::Upper>().solve(w);
  Vector out(d + d * (d + 1) / 2);
  int idx = 0;
  for (int a = 0; a < d; ++a) out[idx++] = u[a];
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b <= a; ++b) {
      out[idx++] = u[a] * w[b] - (a == b ? 1.0 / p.chol(a, a) : 0.0);
    }
  }
  return out;
}

Vector score_logits(const MixtureParams& p, const Vector& z) {
  return responsibilities(p, z) - p.weights();
}

Vector score_component_params(const MixtureParams& p, const Vector& z) {
  const int k = p.components();
  const int d = p.dim();
  const Vector r = responsibilities(p, z);
  const Matrix& m = p.effective_means();
  const Matrix& s = p.effective_scales();

  // Per-entry partials of log q_j with respect to its effective mean and scale.
  Matrix dmean(k, d), dscale(k, d);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < d; ++i) {
      const double diff = z[i] - m(j, i);
      const double sji = s(j, i);
      dmean(j, i) = diff / (sji * sji);
      dscale(j, i) = -1.0 / sji + diff * diff / (sji * sji * sji);
    }
  }

  const auto coords = p.coordinates();
  Vector out(static_cast<Eigen::Index>(coords.size()) - k);
  Vector lambda = p.multipliers();
  for (std::size_t n = k; n < coords.size(); ++n) {
    const Coordinate& c = coords[n];
    double v = 0.0;
    switch (c.kind) {
      case CoordKind::CompMean:
        v = r[c.first] * dmean(c.first, c.second);
        break;
      case CoordKind::CompScale:
        v = r[c.first] * dscale(c.first, c.second);
        break;
      case CoordKind::Scale:
        for (int j = 0; j < k; ++j) v += r[j] * dscale(j, c.first) * lambda[j];
        break;
      case CoordKind::Multiplier: {
        const Vector& sigma = p.shared_scale();
        v = r[c.first] * dscale.row(c.first).dot(sigma.transpose());
        break;
      }
      default:
        throw std::logic_error("unexpected coordinate " + c.label());
    }
    out[static_cast<Eigen::Index>(n) - k] = v;
  }
  return out;
}

Vector score(const MixtureParams& p, const Vector& z) {
  const Vector a = score_logits(p, z);
  const Vector b = score_component_params(p, z);
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace tg
