#include "transportgrad/bench.hpp"
#include "transportgrad/distributions.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tg;

namespace {

const MixtureFamily kFamilies[] = {MixtureFamily::SharedDiagCov, MixtureFamily::ZeroMeanGsm,
                                   MixtureFamily::Gsm, MixtureFamily::DiagNormals};

double fd_log_density(const MixtureParams& p, const Coordinate& c, const Vector& z) {
  const double x0 = p.get(c);
  const double h = 1e-5 * std::max(1.0, std::fabs(x0));
  return (log_density(p.with(c, x0 + h), z) - log_density(p.with(c, x0 - h), z)) / (2 * h);
}

MixtureParams worked_diag_instance() {
  Matrix means(2, 2);
  means << 0.0, 0.0, 2.0, 0.0;
  return MixtureParams(DiagNormals{Vector::Zero(2), means, Matrix::Ones(2, 2)});
}

}  // namespace

TEST(Softmax, Examples) {
  Vector l(2);
  l << 0.0, 0.0;
  EXPECT_NEAR(softmax(l)[0], 0.5, 1e-15);
  l << 0.0, std::log(3.0);
  EXPECT_NEAR(softmax(l)[0], 0.25, 1e-15);
  EXPECT_NEAR(softmax(l)[1], 0.75, 1e-15);
  for (double c : {-400.0, 17.0, 500.0}) {
    l << c, c + std::log(3.0);
    EXPECT_NEAR(softmax(l)[1], 0.75, 1e-12) << c;
  }
}

TEST(Softmax, ExtremeLogitsStayNormalised) {
  Vector l(3);
  l << -500.0, 0.0, 500.0;
  const Vector p = softmax(l);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_TRUE(p.allFinite());
  EXPECT_GE(p.minCoeff(), 0.0);
}

TEST(Coordinates, LabelsRoundTrip) {
  RngStream rng(1);
  for (auto fam : kFamilies) {
    const MixtureParams p = random_mixture(fam, 3, 2, rng);
    for (const auto& c : p.coordinates()) {
      const auto parsed = parse_coordinate(c.label());
      ASSERT_TRUE(parsed.has_value()) << c.label();
      EXPECT_EQ(*parsed, c);
    }
  }
  EXPECT_EQ(MvnParams::standard(3).coordinates().size(), 3u + 6u);
  EXPECT_FALSE(parse_coordinate("bogus[1]").has_value());
}

TEST(Params, ValidationRejectsBadInput) {
  Matrix l = Matrix::Identity(2, 2);
  l(1, 1) = -1.0;
  EXPECT_THROW(MvnParams(Vector::Zero(2), l), std::invalid_argument);
  Matrix upper = Matrix::Identity(2, 2);
  upper(0, 1) = 0.5;
  EXPECT_THROW(MvnParams(Vector::Zero(2), upper), std::invalid_argument);
  EXPECT_THROW(StudentTParams(Vector::Zero(2), Matrix::Identity(2, 2), 0.0), std::invalid_argument);
  EXPECT_THROW(MixtureParams(SharedDiagCov{Vector::Zero(2), Matrix::Zero(2, 3), -Vector::Ones(3)}),
               std::invalid_argument);
  EXPECT_THROW(MixtureParams(ZeroMeanGsm{Vector::Zero(2), Vector::Ones(3), Vector::Zero(2)}),
               std::invalid_argument);
}

TEST(LogDensity, AnalyticValues) {
  EXPECT_NEAR(log_density(MvnParams::standard(2), Vector::Zero(2)), -std::log(2 * M_PI), 1e-14);
  const StudentTParams cauchy(Vector::Zero(1), Matrix::Identity(1, 1), 1.0);
  EXPECT_NEAR(log_density(cauchy, Vector::Zero(1)), std::log(1.0 / M_PI), 1e-14);
}

TEST(LogDensity, MixturesIntegrateToOneInOneDimension) {
  RngStream rng(3);
  for (auto fam : kFamilies) {
    for (int k : {1, 2, 3}) {
      const MixtureParams p = random_mixture(fam, 1, k, rng);
      double acc = 0.0;
      const double h = 1e-3;
      for (double x = -30.0; x <= 30.0; x += h) {
        Vector z(1);
        z << x;
        acc += std::exp(log_density(p, z)) * h;
      }
      EXPECT_NEAR(acc, 1.0, 1e-6) << family_name(fam) << " K=" << k;
    }
  }
  const StudentTParams t(Vector::Constant(1, 0.3), Matrix::Constant(1, 1, 0.7), 4.0);
  double acc = 0.0;
  for (double x = -2000.0; x <= 2000.0; x += 1e-2) {
    acc += std::exp(log_density(t, Vector::Constant(1, x))) * 1e-2;
  }
  EXPECT_NEAR(acc, 1.0, 1e-6);
}

TEST(LogDensity, HugeLogitsDoNotOverflow) {
  Vector l(2);
  l << 500.0, -500.0;
  const MixtureParams p(DiagNormals{l, Matrix::Zero(2, 2), Matrix::Ones(2, 2)});
  EXPECT_NEAR(log_density(p, Vector::Zero(2)), -std::log(2 * M_PI), 1e-12);
}

TEST(Sampling, DegenerateScalesReturnMeans) {
  Matrix means(2, 2);
  means << -3.0, 1.0, 4.0, 2.0;
  const MixtureParams p(DiagNormals{Vector::Zero(2), means, Matrix::Constant(2, 2, 1e-12)});
  RngStream rng(5);
  for (int n = 0; n < 100; ++n) {
    const Sample s = sample(p, rng);
    ASSERT_TRUE(s.component_index.has_value());
    EXPECT_LT((s.value - means.row(*s.component_index).transpose()).norm(), 1e-10);
  }
  EXPECT_FALSE(sample(MvnParams::standard(2), rng).component_index.has_value());
}

TEST(Sampling, MvnMeanWithinStandardErrors) {
  RngStream rng(7);
  const MvnParams p = random_mvn(10, rng);
  const int n = 200000;
  Vector acc = Vector::Zero(10);
  for (int i = 0; i < n; ++i) acc += sample(p, rng).value;
  const Vector se = (p.chol * p.chol.transpose()).diagonal().cwiseSqrt() / std::sqrt(n);
  for (int a = 0; a < 10; ++a) EXPECT_NEAR(acc[a] / n, p.mean[a], 4 * se[a]);
}

TEST(Sampling, ComponentFrequencies) {
  Vector l(3);
  l << 0.0, std::log(2.0), std::log(3.0);
  const MixtureParams p(SharedDiagCov{l, Matrix::Zero(3, 2), Vector::Ones(2)});
  RngStream rng(9);
  const int n = 120000;
  Vector counts = Vector::Zero(3);
  for (int i = 0; i < n; ++i) counts[*sample(p, rng).component_index] += 1.0;
  for (int j = 0; j < 3; ++j) {
    const double pj = (j + 1) / 6.0;
    EXPECT_NEAR(counts[j] / n, pj, 4 * std::sqrt(pj * (1 - pj) / n));
  }
}

TEST(Sampling, StudentTMomentsApproachGaussianLimit) {
  RngStream rng(11);
  const MvnParams base = random_mvn(3, rng);
  const double dof = 30.0;
  const StudentTParams p(base.mean, base.chol, dof);
  const int n = 400000;
  Vector s1 = Vector::Zero(3);
  Matrix s2 = Matrix::Zero(3, 3);
  for (int i = 0; i < n; ++i) {
    const Vector z = sample(p, rng).value - p.mean;
    s1 += z;
    s2 += z * z.transpose();
  }
  const Matrix cov = dof / (dof - 2.0) * p.chol * p.chol.transpose();
  for (int a = 0; a < 3; ++a) {
    EXPECT_NEAR(s1[a] / n, 0.0, 4 * std::sqrt(cov(a, a) / n));
    // Var(z_a^2) ~ 2 cov_aa^2 (Gaussian limit) with a heavier-tail allowance
    EXPECT_NEAR(s2(a, a) / n, cov(a, a), 4 * std::sqrt(2.5 * cov(a, a) * cov(a, a) / n));
  }
}

TEST(Scores, MvnMatchesFiniteDifferences) {
  RngStream rng(13);
  const MvnParams p = random_mvn(4, rng);
  const Vector z = sample(p, rng).value;
  const Vector s = score(p, z);
  const auto coords = p.coordinates();
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const double x0 = p.get(coords[n]);
    const double fd = (log_density(p.with(coords[n], x0 + 1e-5), z) -
                       log_density(p.with(coords[n], x0 - 1e-5), z)) / 2e-5;
    EXPECT_NEAR(s[static_cast<Eigen::Index>(n)], fd, 1e-6 * std::max(1.0, std::fabs(fd)));
  }
}

TEST(Scores, MixtureScoresMatchFiniteDifferences) {
  RngStream rng(17);
  for (auto fam : kFamilies) {
    for (int inst = 0; inst < 100; ++inst) {
      const int k = 1 + inst % 4;
      const int d = 1 + inst % 5;
      const MixtureParams p = random_mixture(fam, d, k, rng);
      const Vector z = sample(p, rng).value;
      const Vector s = score(p, z);
      const auto coords = p.coordinates();
      ASSERT_EQ(s.size(), static_cast<Eigen::Index>(coords.size()));
      for (std::size_t n = 0; n < coords.size(); ++n) {
        const double fd = fd_log_density(p, coords[n], z);
        EXPECT_NEAR(s[static_cast<Eigen::Index>(n)], fd, 1e-5 * std::max(1.0, std::fabs(fd)))
            << family_name(fam) << " " << coords[n].label();
      }
    }
  }
}

TEST(Scores, LogitScoreSumsToZero) {
  RngStream rng(19);
  for (auto fam : kFamilies) {
    const MixtureParams p = random_mixture(fam, 3, 4, rng);
    const Vector s = score_logits(p, sample(p, rng).value);
    EXPECT_NEAR(s.sum(), 0.0, 1e-12);
  }
  const MixtureParams single = random_mixture(MixtureFamily::DiagNormals, 2, 1, rng);
  EXPECT_EQ(score_logits(single, Vector::Ones(2))[0], 0.0);
}

TEST(Scores, SingleComponentMeanScore) {
  Matrix m(1, 2);
  m << 0.5, -1.0;
  Matrix s(1, 2);
  s << 2.0, 0.5;
  const MixtureParams p(DiagNormals{Vector::Zero(1), m, s});
  Vector z(2);
  z << 1.5, 0.0;
  const Vector sc = score_component_params(p, z);
  EXPECT_NEAR(sc[0], (1.5 - 0.5) / 4.0, 1e-14);
  EXPECT_NEAR(sc[1], (0.0 + 1.0) / 0.25, 1e-14);
}

TEST(Scores, VanishingResponsibility) {
  Matrix m(2, 1);
  m << 0.0, 50.0;
  const MixtureParams p(DiagNormals{Vector::Zero(2), m, Matrix::Ones(2, 1)});
  const Vector sc = score_component_params(p, Vector::Zero(1));
  // comp_mean[1,0] and comp_scale[1,0] carry the factor pi_1 q_1 / q ~ e^{-1250}
  EXPECT_NEAR(sc[1], 0.0, 1e-300);
  EXPECT_NEAR(sc[3], 0.0, 1e-300);
}

TEST(Responsibilities, SumToOneAndMatchWorkedInstance) {
  const MixtureParams p = worked_diag_instance();
  const Vector r = responsibilities(p, Vector::Zero(2));
  EXPECT_NEAR(r.sum(), 1.0, 1e-15);
  EXPECT_NEAR(r[0], 1.0 / (1.0 + std::exp(-2.0)), 1e-14);
}

TEST(GradLogDensity, MatchesFiniteDifferences) {
  RngStream rng(23);
  for (auto fam : kFamilies) {
    const MixtureParams p = random_mixture(fam, 3, 3, rng);
    const Vector z = sample(p, rng).value;
    const Vector g = grad_log_density(p, z);
    for (int i = 0; i < 3; ++i) {
      Vector zp = z, zm = z;
      zp[i] += 1e-5;
      zm[i] -= 1e-5;
      EXPECT_NEAR(g[i], (log_density(p, zp) - log_density(p, zm)) / 2e-5, 1e-6);
    }
  }
}
