// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
// if any criterion fails or exceeds its time budget.

#include "transportgrad/bench.hpp"
#include "transportgrad/cli.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#ifndef TGBENCH_PATH
#error "TGBENCH_PATH must point at the tgbench executable"
#endif

using namespace tg;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;  // 0 = no budget
  std::function<Outcome()> run;
};

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

std::vector<std::map<std::string, std::string>> csv_rows(const CsvTable& t) {
  std::vector<std::map<std::string, std::string>> out;
  for (const auto& row : t.rows) {
    std::map<std::string, std::string> m;
    for (std::size_t i = 0; i < t.header.size(); ++i) m[t.header[i]] = row[i];
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome transport_residuals_suite() {
  ExperimentConfig cfg = default_config("check-transport");
  const CommandResult res = run_experiment(cfg);
  double worst = 0.0;
  std::string worst_where;
  std::map<std::string, int> per_family;
  bool pass = true;
  for (const auto& r : csv_rows(res.table)) {
    if (r.at("check") != "residual" && r.at("check") != "null_residual") continue;
    const double v = std::stod(r.at("value"));
    ++per_family[r.at("family")];
    if (!(v < 1e-5)) pass = false;
    if (v > worst) {
      worst = v;
      worst_where = r.at("family") + " D=" + r.at("D") + " K=" + r.at("K") + " " + r.at("coordinate");
    }
  }
  const std::vector<std::string> needed{"mvn", "mvn_avf", "student_t", "shared_cov",
                                        "zero_mean_gsm", "gsm", "diag_normals"};
  for (const auto& f : needed) pass = pass && per_family[f] > 0;
  int instances = 0;
  for (const auto& [f, n] : per_family) instances += n;
  return {pass, std::to_string(instances) + " instance checks x " + std::to_string(cfg.points) +
                    " points, worst " + sci(worst) + " (" + worst_where + ") < 1e-5"};
}

// ---------------------------------------------------------------------------

struct ZCase {
  std::string name;
  Estimator estimator;
  std::vector<std::string> labels;
  Vector oracle;
};

Outcome unbiasedness_suite() {
  const int n = 200000;
  RngStream root(1);
  std::uint64_t stream = 0;
  std::vector<ZCase> cases;

  for (int d : {5, 50}) {
    RngStream g = root.split(++stream);
    const MvnParams p = random_mvn(d, g);
    const TestFunction f = d == 50 ? *make_test_function("quadratic", d, g) : make_squared_norm(d);
    const AvfParams avf = AvfParams::random(2, d, 0.3, g);
    const auto labels = labels_of(p.coordinates());
    const Vector oracle = analytic_grad_oracle(p, f);
    const std::string tag = " D=" + std::to_string(d);
    cases.push_back({"mvn rt" + tag, pathwise_estimator(p, std::nullopt, f), labels, oracle});
    cases.push_back({"mvn avf" + tag, pathwise_estimator(p, avf, f), labels, oracle});
    cases.push_back({"mvn score" + tag, score_estimator(p, f), labels, oracle});

    const StudentTParams t(p.mean, p.chol, 8.0);
    const Vector t_oracle = analytic_grad_oracle(t, f);
    cases.push_back({"student_t rt" + tag, pathwise_estimator(t, std::nullopt, f), labels, t_oracle});
    cases.push_back({"student_t avf" + tag, pathwise_estimator(t, avf, f), labels, t_oracle});
  }
  for (auto fam : {MixtureFamily::SharedDiagCov, MixtureFamily::ZeroMeanGsm, MixtureFamily::Gsm,
                   MixtureFamily::DiagNormals}) {
    for (auto [d, k] : {std::pair{5, 3}, std::pair{50, 10}}) {
      RngStream g = root.split(++stream);
      // D=50 uses the near-disjoint sphere geometry of bench-mixture
      const MixtureParams p =
          d == 50 ? sphere_mixture(fam, d, k, 2.0, 0.05, g) : random_mixture(fam, d, k, g);
      const TestFunction f = d == 50 ? *make_test_function("quadratic", d, g) : make_squared_norm(d);
      const auto labels = labels_of(p.coordinates());
      const Vector oracle = analytic_grad_oracle(p, f);
      const std::string tag =
          family_name(fam) + " D=" + std::to_string(d) + " K=" + std::to_string(k);
      cases.push_back({"pathwise " + tag, pathwise_estimator(p, f), labels, oracle});
      cases.push_back({"score " + tag, score_estimator(p, f), labels, oracle});
      cases.push_back({"hybrid " + tag, hybrid_estimator(p, f), labels, oracle});
    }
  }

  bool pass = true;
  double max_abs_z = 0.0;
  std::size_t n_coords = 0;
  std::string failures;
  for (auto& c : cases) {
    RngStream rng = root.split(++stream);
    const auto reports = unbiasedness_ztest(c.estimator, c.labels, c.oracle, n, rng);
    n_coords += reports.size();
    for (const auto& r : reports) {
      max_abs_z = std::max(max_abs_z, std::fabs(r.z_score));
      if (!r.pass) {
        pass = false;
        failures += " [" + c.name + " " + r.coordinate + " z=" + sci(r.z_score) + "]";
      }
    }
  }
  return {pass, std::to_string(cases.size()) + " estimator/instance pairs, " +
                    std::to_string(n_coords) + " coordinates, N=" + std::to_string(n) +
                    ", max |z| " + sci(max_abs_z) + " (limit 4; expected null exceedances " +
                    sci(static_cast<double>(n_coords) * std::erfc(4.0 / std::sqrt(2.0))) + ")" +
                    failures};
}

// ---------------------------------------------------------------------------

Outcome mixture_logit_variance() {
  ExperimentConfig cfg = default_config("bench-mixture");
  cfg.estimators = {"pathwise", "score"};
  const CommandResult res = run_experiment(cfg);
  bool pass = true;
  int seen = 0;
  std::string detail = "D=" + std::to_string(cfg.dim) + " K=" + std::to_string(cfg.components) +
                       " f=" + cfg.test_function.front() + ", pathwise/score logit variance:";
  for (const auto& r : csv_rows(res.table)) {
    if (r.at("estimator") != "pathwise") continue;
    const double ratio = std::stod(r.at("var_ratio_vs_score"));
    pass = pass && ratio < 0.2;
    ++seen;
    detail += " " + r.at("family") + " " + sci(ratio);
  }
  return {pass && seen == 4, detail + " (< 0.2)"};
}

// ---------------------------------------------------------------------------

Outcome mvn_avf_variance() {
  ExperimentConfig cfg = default_config("bench-mvn");
  cfg.dim = 50;
  cfg.rank = 1;
  cfg.r_sweep = {1.0};
  cfg.test_function = {"quadratic"};
  cfg.estimators = {"avf"};
  cfg.steps = 2000;
  const auto adapted = csv_rows(run_experiment(cfg).table);
  cfg.steps = 0;
  const auto zero = csv_rows(run_experiment(cfg).table);
  if (adapted.size() != 1 || zero.size() != 1) return {false, "unexpected table shape"};
  const double ratio = std::stod(adapted[0].at("var_ratio"));
  const double hi = std::stod(adapted[0].at("ci_high"));
  const double zr = std::stod(zero[0].at("var_ratio"));
  const double zlo = std::stod(zero[0].at("ci_low"));
  const double zhi = std::stod(zero[0].at("ci_high"));
  const bool pass = hi < 1.0 && zlo <= 1.0 && 1.0 <= zhi && std::fabs(zr - 1.0) < 1e-9;
  return {pass, "adapted Var(AVF)/Var(RT) " + sci(ratio) + ", 95% CI upper " + sci(hi) +
                    " (< 1); lambda=0 ratio " + sci(zr) + " CI [" + sci(zlo) + ", " + sci(zhi) + "]"};
}

// ---------------------------------------------------------------------------

double dense_surrogate(const MvnParams& p, const AvfParams& avf, const Vector& gf, const Vector& z) {
  return (mvn_fields(p, avf, z).transpose() * gf).squaredNorm();
}

Outcome lambda_gradient_check() {
  RngStream rng(5);
  double worst = 0.0;
  int entries = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const int d = 2 + static_cast<int>(rng.uniform() * 7.0);  // 2..8
    const int rank = 1 + static_cast<int>(rng.uniform() * 3.0);
    const MvnParams p = random_mvn(d, rng);
    const AvfParams avf = AvfParams::random(rank, d, 1.0, rng);
    const TestFunction f = *make_test_function(inst % 2 ? "quartic" : "cosine", d, rng);
    const Vector z = sample(p, rng).value;
    const Vector gf = f.gradient(z);
    const LambdaGradient g = variance_grad_lambda(p, avf, f, z);
    const double scale = std::max(g.b.cwiseAbs().maxCoeff(), g.c.cwiseAbs().maxCoeff());
    for (bool in_b : {true, false}) {
      for (int l = 0; l < rank; ++l) {
        for (int a = 0; a < d; ++a) {
          const auto perturbed = [&](double x) {
            Matrix b = avf.b;
            Matrix c = avf.c;
            (in_b ? b : c)(l, a) = x;
            return dense_surrogate(p, AvfParams(b, c), gf, z);
          };
          const double x0 = in_b ? avf.b(l, a) : avf.c(l, a);
          const double fd = central_difference(perturbed, x0, 1e-5);
          const double an = in_b ? g.b(l, a) : g.c(l, a);
          // entries far below the gradient's scale are compared on that scale
          const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8 * scale, 1e-300});
          worst = std::max(worst, std::fabs(an - fd) / denom);
          ++entries;
        }
      }
    }
  }
  return {worst < 1e-4, "50 instances, " + std::to_string(entries) + " entries, worst relative error " +
                            sci(worst) + " (< 1e-4)"};
}

// ---------------------------------------------------------------------------

Outcome boundary_discrimination() {
  ExperimentConfig cfg = default_config("check-transport");
  bool positives = true;
  int n_pos = 0;
  double worst_gauss = 0.0;
  for (const auto& r : csv_rows(run_experiment(cfg).table)) {
    if (r.at("check") != "boundary") continue;
    ++n_pos;
    positives = positives && r.at("status") == "pass";
    if (r.at("family") != "student_t") worst_gauss = std::max(worst_gauss, std::stod(r.at("value")));
  }
  cfg.family = {"negative_example"};
  cfg.dim_sweep = {1, 2};
  cfg.component_sweep = {2, 3};
  bool d1_pass = true;
  bool d2_fail = true;
  int n_neg = 0;
  std::string neg;
  for (const auto& r : csv_rows(run_experiment(cfg).table)) {
    if (r.at("check") != "boundary") continue;
    ++n_neg;
    const bool ok = r.at("status") == "pass";
    if (r.at("D") == "1") d1_pass = d1_pass && ok;
    if (r.at("D") == "2") d2_fail = d2_fail && !ok;
    neg += " D=" + r.at("D") + "/K=" + r.at("K") + ":" + sci(std::stod(r.at("value")));
  }
  const bool pass = positives && n_pos > 0 && n_neg == 4 && d1_pass && d2_fail;
  return {pass, std::to_string(n_pos) + " shipped-field instances pass (Gaussian-tailed worst " +
                    sci(worst_gauss) + " < 1e-8, Student-t on its power-law envelope); negative example" +
                    neg};
}

// ---------------------------------------------------------------------------

double radial_cdf_quadrature(double z, int dim) {
  boost::math::quadrature::exp_sinh<double> integrator;
  const auto g = [z, dim](double u) {
    const double t = z + u;
    const double log_g = (dim - 1) * std::log(t / z) - 0.5 * u * (t + z);
    return log_g < -700.0 ? 0.0 : std::exp(log_g);
  };
  const double v = integrator.integrate(g, 1e-15);
  return v * std::exp(-0.5 * z * z) * std::pow(2.0 * kPi, -0.5 * dim);
}

Outcome special_functions() {
  double worst_radial = 0.0;
  for (int dim = 1; dim <= 10; ++dim) {
    for (double z = 0.05; z <= 12.0; z += 0.11) {
      const double ref = radial_cdf_quadrature(z, dim);
      worst_radial = std::max(worst_radial, std::fabs(radial_cdf(z, dim) - ref) / ref);
    }
  }
  double worst_reflection = 0.0;
  for (double x = 0.0; x <= 27.0; x += 0.013) {
    worst_reflection = std::max(worst_reflection, std::fabs(tg::erfc(x) + tg::erfc(-x) - 2.0) / 2.0);
  }
  return {worst_radial < 1e-10 && worst_reflection < 1e-13,
          "radial_cdf vs quadrature worst " + sci(worst_radial) + " (< 1e-10), erfc reflection " +
              sci(worst_reflection) + " (< 1e-13)"};
}

// ---------------------------------------------------------------------------

Outcome toy_sgvi() {
  ExperimentConfig cfg = default_config("sgvi-toy");
  cfg.seeds = 20;
  const auto rows = csv_rows(run_experiment(cfg).table);
  int final_step = 0;
  for (const auto& r : rows) final_step = std::max(final_step, std::stoi(r.at("step")));
  std::map<std::string, double> kl, elbo;
  std::map<std::string, int> count;
  for (const auto& r : rows) {
    if (std::stoi(r.at("step")) != final_step) continue;
    kl[r.at("estimator")] += std::stod(r.at("kl_to_target"));
    elbo[r.at("estimator")] += std::stod(r.at("elbo"));
    ++count[r.at("estimator")];
  }
  if (count["pathwise"] != 20 || count["score"] != 20) return {false, "missing seeds"};
  const double kl_p = kl["pathwise"] / 20.0;
  const double elbo_p = elbo["pathwise"] / 20.0;
  const double elbo_s = elbo["score"] / 20.0;
  return {kl_p < 0.05 && elbo_p >= elbo_s,
          "20 seeds, step " + std::to_string(final_step) + ": pathwise mean KL " + sci(kl_p) +
              " (< 0.05), mean ELBO pathwise " + sci(elbo_p) + " >= score " + sci(elbo_s)};
}

// ---------------------------------------------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism() {
  const std::vector<std::string> commands{"check-transport", "bench-mvn", "bench-mixture",
                                          "sgvi-toy", "adapt-avf"};
  const char* tmp = std::getenv("TMPDIR");
  const std::string dir = tmp && *tmp ? tmp : "/tmp";
  bool pass = true;
  std::string detail;
  for (const auto& c : commands) {
    std::string outputs[2];
    bool ok = true;
    for (int run = 0; run < 2; ++run) {
      const std::string path = dir + "/tg_accept_" + c + "_" + std::to_string(run) + ".csv";
      std::remove(path.c_str());
      const std::string cmd = std::string("\"") + TGBENCH_PATH + "\" " + c + " --seed 3 --out \"" +
                              path + "\" 2>/dev/null";
      ok = ok && std::system(cmd.c_str()) == 0;
      outputs[run] = slurp(path);
      std::remove(path.c_str());
    }
    const bool same = ok && !outputs[0].empty() && outputs[0] == outputs[1];
    pass = pass && same;
    detail += " " + c + (same ? " identical" : " DIFFERS") + " (" + std::to_string(outputs[0].size()) + " B)";
  }
  return {pass, "two processes per command, seed 3:" + detail};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "transport residuals", 120, transport_residuals_suite},
      {2, "estimator unbiasedness", 180, unbiasedness_suite},
      {3, "mixture logit variance", 120, mixture_logit_variance},
      {4, "mvn avf variance ratio", 180, mvn_avf_variance},
      {5, "lambda gradient", 30, lambda_gradient_check},
      {6, "boundary discrimination", 30, boundary_discrimination},
      {7, "special functions", 10, special_functions},
      {8, "toy sgvi", 300, toy_sgvi},
      {9, "cli determinism", 0, cli_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = c.budget_seconds <= 0 || secs < c.budget_seconds;
    const bool pass = o.pass && in_budget;
    if (!pass) ++failed;
    char timing[64];
    if (c.budget_seconds > 0) {
      std::snprintf(timing, sizeof timing, "%.1f s / %.0f s", secs, c.budget_seconds);
    } else {
      std::snprintf(timing, sizeof timing, "%.1f s", secs);
    }
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (" << timing
              << "): " << o.detail << (in_budget ? "" : " [over time budget]") << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
