#include "transportgrad/bench.hpp"
#include "transportgrad/verification.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tg;

namespace {

// E[z^T Q z] for z ~ N(m, diag(s^2)) or N(m, L L^T), written out directly.
double quad_moment(const Matrix& q, const Vector& m, const Matrix& cov) {
  return (q * cov).trace() + m.dot(q * m);
}

double mixture_quad_moment(const MixtureParams& p, const Matrix& q) {
  double acc = 0.0;
  for (int j = 0; j < p.components(); ++j) {
    const Vector s = p.effective_scales().row(j).transpose();
    const Matrix cov = s.array().square().matrix().asDiagonal();
    acc += p.weights()[j] * quad_moment(q, p.effective_means().row(j).transpose(), cov);
  }
  return acc;
}

template <class P, class Moment>
Vector fd_of_moment(const P& p, Moment moment) {
  const auto coords = p.coordinates();
  Vector out(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t c = 0; c < coords.size(); ++c) {
    out[static_cast<Eigen::Index>(c)] = central_difference(
        [&](double x) { return moment(p.with(coords[c], x)); }, p.get(coords[c]), 1e-5);
  }
  return out;
}

const MixtureFamily kFamilies[] = {MixtureFamily::SharedDiagCov, MixtureFamily::ZeroMeanGsm,
                                   MixtureFamily::Gsm, MixtureFamily::DiagNormals};

}  // namespace

TEST(Oracle, MvnQuadraticAndSquaredNorm) {
  RngStream rng(1);
  for (int d : {1, 3, 5}) {
    const MvnParams p = random_mvn(d, rng);
    const TestFunction f = *make_test_function("quadratic", d, rng);
    const Matrix q = *f.coupling;
    const auto moment = [&](const MvnParams& x) {
      return quad_moment(q, x.mean, x.chol * x.chol.transpose());
    };
    EXPECT_NEAR(analytic_expectation(p, f), moment(p), 1e-12 * (1 + std::fabs(moment(p))));
    const Vector fd = fd_of_moment(p, moment);
    EXPECT_LT((analytic_grad_oracle(p, f) - fd).cwiseAbs().maxCoeff(), 1e-7);
    const TestFunction sq = make_squared_norm(d);
    const Matrix id = Matrix::Identity(d, d);
    const Vector fd2 = fd_of_moment(
        p, [&](const MvnParams& x) { return quad_moment(id, x.mean, x.chol * x.chol.transpose()); });
    EXPECT_LT((analytic_grad_oracle(p, sq) - fd2).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(Oracle, StudentTScalesCovariance) {
  RngStream rng(2);
  const MvnParams base = random_mvn(3, rng);
  const StudentTParams p(base.mean, base.chol, 6.0);
  const TestFunction sq = make_squared_norm(3);
  const Matrix id = Matrix::Identity(3, 3);
  const Vector fd = fd_of_moment(p, [&](const StudentTParams& x) {
    return quad_moment(id, x.mean, x.dof / (x.dof - 2.0) * x.chol * x.chol.transpose());
  });
  const Vector oracle = analytic_grad_oracle(p, sq);
  for (std::size_t c = 0; c < p.coordinates().size(); ++c) {
    const auto kind = p.coordinates()[c].kind;
    if (kind == CoordKind::Mean || kind == CoordKind::Chol) {
      EXPECT_NEAR(oracle[static_cast<Eigen::Index>(c)], fd[static_cast<Eigen::Index>(c)], 1e-7);
    }
  }
  EXPECT_THROW(analytic_grad_oracle(StudentTParams(base.mean, base.chol, 2.0), sq),
               std::invalid_argument);
}

TEST(Oracle, MixtureFamilies) {
  RngStream rng(3);
  for (auto fam : kFamilies) {
    const MixtureParams p = random_mixture(fam, 3, 3, rng);
    const TestFunction f = *make_test_function("quadratic", 3, rng);
    const Matrix q = *f.coupling;
    const auto moment = [&](const MixtureParams& x) { return mixture_quad_moment(x, q); };
    EXPECT_NEAR(analytic_expectation(p, f), moment(p), 1e-12 * (1 + std::fabs(moment(p))));
    const Vector fd = fd_of_moment(p, moment);
    EXPECT_LT((analytic_grad_oracle(p, f) - fd).cwiseAbs().maxCoeff(), 1e-7) << family_name(fam);
  }
}

TEST(Oracle, RejectsUnsupportedFunctions) {
  RngStream rng(4);
  const MvnParams p = random_mvn(2, rng);
  EXPECT_THROW(analytic_grad_oracle(p, *make_test_function("cosine", 2, rng)),
               std::invalid_argument);
  EXPECT_THROW(analytic_expectation(p, *make_test_function("quartic", 2, rng)),
               std::invalid_argument);
}

TEST(ZTest, PassesUnbiasedAndCatchesBias) {
  RngStream rng(5);
  const MixtureParams p = random_mixture(MixtureFamily::Gsm, 2, 2, rng);
  const TestFunction f = make_squared_norm(2);
  const auto labels = labels_of(p.coordinates());
  const Vector oracle = analytic_grad_oracle(p, f);
  const GradientBatch batch = collect_batch(pathwise_estimator(p, f), labels, 20000, rng);
  const auto ok = unbiasedness_ztest(batch, oracle);
  ASSERT_EQ(ok.size(), labels.size());
  EXPECT_TRUE(all_pass(ok));
  EXPECT_EQ(ok[0].coordinate, labels[0]);
  const Vector se = batch_standard_error(batch);
  Vector shifted = oracle;
  shifted[1] += 10.0 * se[1];
  const auto bad = unbiasedness_ztest(batch, shifted);
  EXPECT_FALSE(all_pass(bad));
  EXPECT_FALSE(bad[1].pass);
  EXPECT_NEAR(std::fabs(bad[1].z_score), std::fabs(ok[1].z_score - 10.0), 1e-9);
}

TEST(ZTest, EstimatorsAreUnbiasedOnSmallMixtures) {
  RngStream rng(6);
  for (auto fam : kFamilies) {
    const MixtureParams p = random_mixture(fam, 2, 3, rng);
    const TestFunction f = *make_test_function("quadratic", 2, rng);
    const auto labels = labels_of(p.coordinates());
    const Vector oracle = analytic_grad_oracle(p, f);
    EXPECT_TRUE(all_pass(unbiasedness_ztest(pathwise_estimator(p, f), labels, oracle, 20000, rng)))
        << family_name(fam);
    EXPECT_TRUE(all_pass(unbiasedness_ztest(score_estimator(p, f), labels, oracle, 20000, rng)))
        << family_name(fam);
    EXPECT_TRUE(all_pass(unbiasedness_ztest(hybrid_estimator(p, f), labels, oracle, 20000, rng)))
        << family_name(fam);
  }
}

TEST(ZTest, ZeroVarianceCoordinate) {
  GradientBatch b;
  b.labels = {"a"};
  b.samples = Matrix::Constant(5, 1, 2.0);
  EXPECT_TRUE(unbiasedness_ztest(b, Vector::Constant(1, 2.0))[0].pass);
  EXPECT_FALSE(unbiasedness_ztest(b, Vector::Constant(1, 2.5))[0].pass);
}

TEST(Residuals, ReportFieldsAreConsistent) {
  RngStream rng(7);
  const MvnParams p = random_mvn(2, rng);
  const TransportProblem prob = transport_problem(p);
  const Vector z = sample(p, rng).value;
  const auto reports = transport_residuals(prob, z);
  ASSERT_EQ(reports.size(), p.coordinates().size());
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    EXPECT_EQ(r.coordinate, p.coordinates()[i].label());
    EXPECT_NEAR(r.density, std::exp(log_density(p, z)), 1e-15);
    EXPECT_LT(r.relative_residual, 1e-6);
    const auto single = transport_residual(prob, static_cast<int>(i), z);
    EXPECT_NEAR(single.divergence_term, r.divergence_term, 1e-12);
  }
}

TEST(Residuals, WrongFieldIsDetected) {
  RngStream rng(8);
  const MvnParams p = random_mvn(2, rng);
  TransportProblem prob = transport_problem(p);
  const auto fields = prob.fields;
  prob.fields = [fields](const Vector& z) -> Matrix { return 1.1 * fields(z); };
  const Vector z = sample(p, rng).value;
  double worst = 0.0;
  for (const auto& r : transport_residuals(prob, z)) worst = std::max(worst, r.relative_residual);
  EXPECT_GT(worst, 1e-3);
}

TEST(Residuals, NonFiniteThrows) {
  RngStream rng(9);
  TransportProblem prob = transport_problem(random_mvn(2, rng));
  prob.fields = [](const Vector& z) -> Matrix {
    return Matrix::Constant(z.size(), 5, std::numeric_limits<double>::quiet_NaN());
  };
  EXPECT_THROW(transport_residuals(prob, Vector::Zero(2)), std::runtime_error);
}

TEST(Boundary, GaussianFluxDecays) {
  RngStream rng(10);
  const MvnParams p = random_mvn(3, rng);
  const TransportProblem prob = transport_problem(p);
  for (int c = 0; c < static_cast<int>(prob.coordinates.size()); ++c) {
    const Vector dir = rng.normal_vector(3).normalized();
    const DecayCheck check = boundary_decay_check(prob, c, dir);
    EXPECT_TRUE(check.pass) << prob.coordinates[static_cast<std::size_t>(c)].label();
    EXPECT_LT(check.ratio, 1e-8);
  }
  const Vector profile = boundary_decay_probe(prob, 0, Vector::Unit(3, 0), {1.0, 2.0, 4.0, 8.0});
  for (int i = 1; i < 4; ++i) EXPECT_LT(profile[i], profile[i - 1]);
}

TEST(Boundary, MixtureFluxDecays) {
  RngStream rng(11);
  for (auto fam : kFamilies) {
    const MixtureParams p = random_mixture(fam, 3, 3, rng);
    const TransportProblem prob = transport_problem(p, MixtureFieldSelection::Logits);
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 3; ++i) {
        EXPECT_TRUE(boundary_decay_check(prob, c, Vector::Unit(3, i)).pass) << family_name(fam);
      }
    }
  }
}

TEST(ZTest, StreamingMatchesBatch) {
  RngStream rng(12);
  const MvnParams p = random_mvn(3, rng);
  const TestFunction f = make_squared_norm(3);
  const auto labels = labels_of(p.coordinates());
  const Vector oracle = analytic_grad_oracle(p, f);
  const Estimator est = pathwise_estimator(p, std::nullopt, f);
  RngStream a(4), b(4);
  const auto streamed = unbiasedness_ztest(est, labels, oracle, 500, a);
  const auto batched = unbiasedness_ztest(collect_batch(est, labels, 500, b), oracle);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    EXPECT_NEAR(streamed[i].estimator_mean, batched[i].estimator_mean, 1e-12);
    EXPECT_NEAR(streamed[i].standard_error, batched[i].standard_error,
                1e-10 * batched[i].standard_error);
  }
  EXPECT_THROW(unbiasedness_ztest(est, {"x"}, Vector::Zero(1), 5, a), std::invalid_argument);
}
