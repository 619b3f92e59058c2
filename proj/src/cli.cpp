#include "transportgrad/cli.hpp"

#include "transportgrad/bench.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>

namespace tg {

namespace {

const std::vector<std::string> kCommands{"check-transport", "bench-mvn", "bench-mixture",
                                         "sgvi-toy", "adapt-avf"};
const std::vector<std::string> kTestFunctions{"cosine", "quadratic", "quartic", "sq_norm"};
const std::vector<std::string> kTransportFamilies{"mvn",         "mvn_avf",       "student_t",
                                                  "shared_cov",  "zero_mean_gsm", "gsm",
                                                  "diag_normals", "negative_example"};
const std::vector<std::string> kMixtureFamilies{"shared_cov", "zero_mean_gsm", "gsm",
                                                "diag_normals"};
const std::vector<std::string> kMixtureEstimators{"pathwise", "score", "hybrid", "gs_soft",
                                                  "gs_hard"};
const std::vector<std::string> kMvnEstimators{"rt", "avf"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split_list(std::string s) {
  s = trim(s);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated list '" + s + "'");
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (item.empty()) throw ConfigError("empty list element in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string fmt_exact(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

long long parse_integer(const std::string& key, const std::string& text) {
  const std::string s = unquote(trim(text));
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || errno != 0) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + text + "'");
  }
  return v;
}

int parse_int(const std::string& key, const std::string& text) {
  const long long v = parse_integer(key, text);
  if (v < -1000000000LL || v > 1000000000LL) {
    throw ConfigError("key '" + key + "': value out of range");
  }
  return static_cast<int>(v);
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string s = unquote(trim(text));
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v)) {
    throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string s = unquote(trim(text));
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + text + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += f(v[i]);
  }
  return out;
}

std::string join_strings(const std::vector<std::string>& v) {
  return join(v, [](const std::string& s) { return s; });
}

// Quotes fields containing separators, e.g. chol[1,0].
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string csv_row(const std::vector<std::string>& v) { return join(v, csv_field); }

struct KeySpec {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define TG_INT_KEY(field)                                                              \
  KeySpec {                                                                            \
    #field, [](ExperimentConfig& c, const std::string& v) { c.field = parse_int(#field, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }             \
  }
#define TG_DOUBLE_KEY(field)                                                              \
  KeySpec {                                                                               \
    #field, [](ExperimentConfig& c, const std::string& v) { c.field = parse_double(#field, v); }, \
        [](const ExperimentConfig& c) { return fmt_exact(c.field); }                     \
  }
#define TG_STRING_KEY(field)                                                             \
  KeySpec {                                                                              \
    #field, [](ExperimentConfig& c, const std::string& v) { c.field = unquote(trim(v)); }, \
        [](const ExperimentConfig& c) { return "\"" + c.field + "\""; }                  \
  }
#define TG_LIST_KEY(field)                                                                 \
  KeySpec {                                                                                \
    #field, [](ExperimentConfig& c, const std::string& v) { c.field = split_list(v); },    \
        [](const ExperimentConfig& c) { return "[" + join_strings(c.field) + "]"; }       \
  }

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs{
      TG_STRING_KEY(experiment),
      TG_INT_KEY(dim),
      TG_INT_KEY(components),
      TG_LIST_KEY(family),
      TG_LIST_KEY(estimators),
      TG_LIST_KEY(test_function),
      TG_INT_KEY(samples),
      KeySpec{"seed",
              [](ExperimentConfig& c, const std::string& v) {
                const long long s = parse_integer("seed", v);
                if (s < 0) throw ConfigError("key 'seed': must be non-negative");
                c.seed = static_cast<std::uint64_t>(s);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      TG_INT_KEY(rank),
      KeySpec{"r_sweep",
              [](ExperimentConfig& c, const std::string& v) {
                c.r_sweep.clear();
                for (const auto& s : split_list(v)) c.r_sweep.push_back(parse_double("r_sweep", s));
              },
              [](const ExperimentConfig& c) { return "[" + join(c.r_sweep, fmt_exact) + "]"; }},
      TG_INT_KEY(steps),
      TG_STRING_KEY(out),
      KeySpec{"dim_sweep",
              [](ExperimentConfig& c, const std::string& v) {
                c.dim_sweep.clear();
                for (const auto& s : split_list(v)) c.dim_sweep.push_back(parse_int("dim_sweep", s));
              },
              [](const ExperimentConfig& c) {
                return "[" + join(c.dim_sweep, [](int x) { return std::to_string(x); }) + "]";
              }},
      KeySpec{"component_sweep",
              [](ExperimentConfig& c, const std::string& v) {
                c.component_sweep.clear();
                for (const auto& s : split_list(v))
                  c.component_sweep.push_back(parse_int("component_sweep", s));
              },
              [](const ExperimentConfig& c) {
                return "[" + join(c.component_sweep, [](int x) { return std::to_string(x); }) + "]";
              }},
      TG_INT_KEY(points),
      TG_INT_KEY(avf_instances),
      TG_DOUBLE_KEY(step_size_theta),
      TG_DOUBLE_KEY(step_size_lambda),
      TG_STRING_KEY(optimizer),
      KeySpec{"freeze_theta",
              [](ExperimentConfig& c, const std::string& v) {
                c.freeze_theta = parse_bool("freeze_theta", v);
              },
              [](const ExperimentConfig& c) { return std::string(c.freeze_theta ? "true" : "false"); }},
      TG_INT_KEY(samples_per_step),
      TG_INT_KEY(window),
      TG_DOUBLE_KEY(radius),
      TG_DOUBLE_KEY(spread),
      TG_DOUBLE_KEY(temperature),
      TG_INT_KEY(bootstrap),
      TG_INT_KEY(seeds),
      TG_DOUBLE_KEY(learning_rate),
      TG_INT_KEY(log_every),
      TG_INT_KEY(eval_samples),
      TG_STRING_KEY(target),
  };
  return specs;
}

#undef TG_INT_KEY
#undef TG_DOUBLE_KEY
#undef TG_STRING_KEY
#undef TG_LIST_KEY

const KeySpec* find_key(const std::string& key) {
  for (const auto& spec : key_specs())
    if (spec.name == key) return &spec;
  return nullptr;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& spec : key_specs()) out.push_back(spec.name);
    return out;
  }();
  return keys;
}

ExperimentConfig default_config(const std::string& experiment) {
  ExperimentConfig c;
  c.experiment = experiment;
  if (experiment == "check-transport") {
    c.dim_sweep = {1, 2, 3, 5, 8};
  } else if (experiment == "bench-mvn") {
    c.estimators = kMvnEstimators;
    c.r_sweep = {0.0, 0.25, 0.5, 0.75, 1.0};
  } else if (experiment == "bench-mixture") {
    c.estimators = kMixtureEstimators;
    c.test_function = {"sq_norm"};
  } else if (experiment == "sgvi-toy") {
    c.dim = 2;
    c.components = 2;
    c.steps = 5000;
    c.estimators = {"pathwise", "hybrid", "score", "gs_soft", "gs_hard"};
  } else if (experiment == "adapt-avf") {
    c.r_sweep = {1.0};
    c.log_every = 10;
  }
  return c;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    // strip comments outside quotes
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (value.empty()) throw ConfigError(where + ": missing value for '" + key + "'");
    if (quoted) throw ConfigError(where + ": unterminated string");
    if (out.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    out[key] = value;
  }
  return out;
}

void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (!spec) throw ConfigError("unknown config key '" + key + "'");
  spec->set(cfg, value);
}

void validate(const ExperimentConfig& c) {
  require(contains(kCommands, c.experiment), "unknown experiment '" + c.experiment + "'");
  require(c.dim >= 1 && c.dim <= 1000, "dim must be in [1, 1000]");
  require(c.components >= 1 && c.components <= 100, "components must be in [1, 100]");
  require(c.samples >= 1 && c.samples <= 100000000, "samples must be in [1, 1e8]");
  require(c.rank >= 1 && c.rank <= 64, "rank must be in [1, 64]");
  require(!c.r_sweep.empty(), "r_sweep must not be empty");
  for (double r : c.r_sweep) require(r >= 0.0 && r <= 100.0, "r_sweep values must be in [0, 100]");
  require(c.steps >= 0 && c.steps <= 10000000, "steps must be in [0, 1e7]");
  for (int d : c.dim_sweep) require(d >= 1 && d <= 1000, "dim_sweep values must be in [1, 1000]");
  for (int k : c.component_sweep)
    require(k >= 1 && k <= 100, "component_sweep values must be in [1, 100]");
  require(c.points >= 1, "points must be positive");
  require(c.avf_instances >= 1, "avf_instances must be positive");
  require(c.step_size_theta >= 0.0, "step_size_theta must be non-negative");
  require(c.step_size_lambda >= 0.0, "step_size_lambda must be non-negative");
  require(c.optimizer == "adam" || c.optimizer == "sgd", "optimizer must be adam or sgd");
  require(c.samples_per_step >= 1, "samples_per_step must be positive");
  require(c.window >= 1, "window must be positive");
  require(c.radius > 0.0, "radius must be positive");
  require(c.spread >= 0.0, "spread must be non-negative");
  require(c.temperature > 0.0, "temperature must be positive");
  require(c.bootstrap >= 0, "bootstrap must be non-negative");
  require(c.seeds >= 1, "seeds must be positive");
  require(c.learning_rate > 0.0, "learning_rate must be positive");
  require(c.log_every >= 1, "log_every must be positive");
  require(c.eval_samples >= 1, "eval_samples must be positive");
  require(c.target == "default" || c.target == "initial", "target must be default or initial");
  require(!c.test_function.empty(), "test_function must not be empty");
  for (const auto& f : c.test_function)
    require(contains(kTestFunctions, f), "unknown test function '" + f + "'");

  if (c.experiment == "check-transport") {
    require(!c.dim_sweep.empty(), "dim_sweep must not be empty");
    for (const auto& f : c.family)
      require(f == "all" || contains(kTransportFamilies, f), "unknown family '" + f + "'");
  } else if (c.experiment == "bench-mixture") {
    for (const auto& f : c.family)
      require(f == "all" || contains(kMixtureFamilies, f), "unknown family '" + f + "'");
    for (const auto& e : c.estimators)
      require(contains(kMixtureEstimators, e), "unknown estimator '" + e + "'");
    for (const auto& f : c.test_function)
      require(f == "sq_norm" || f == "quadratic", "bench-mixture supports sq_norm and quadratic");
  } else if (c.experiment == "bench-mvn") {
    for (const auto& e : c.estimators)
      require(contains(kMvnEstimators, e), "unknown estimator '" + e + "'");
  } else if (c.experiment == "sgvi-toy") {
    for (const auto& e : c.estimators)
      require(parse_sgvi_estimator(e).has_value(), "unknown estimator '" + e + "'");
  }
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& spec : key_specs()) {
    if (spec.name == "out") continue;  // the destination does not change the results
    out += spec.name + " = " + spec.get(cfg) + "\n";
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : canonical_config(cfg)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

void write_csv(std::ostream& os, const ExperimentConfig& cfg, const CsvTable& table) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "# tgbench %s config_hash=%016" PRIx64 " seed=%" PRIu64 " experiment=%s",
                kToolVersion, config_hash(cfg), cfg.seed, cfg.experiment.c_str());
  os << buf << "\n";
  os << csv_row(table.header) << "\n";
  for (const auto& row : table.rows) os << csv_row(row) << "\n";
}

// ---------------------------------------------------------------------------
// check-transport

namespace {

struct Worst {
  double value = 0.0;
  std::string coordinate;
};

std::vector<Vector> sample_points(const TransportProblem& prob, int n, RngStream& rng) {
  std::vector<Vector> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pts.push_back(prob.sampler(rng));
  return pts;
}

Worst worst_residual(const TransportProblem& prob, const std::vector<Vector>& pts) {
  Worst w;
  if (prob.coordinates.empty()) return w;
  for (const auto& z : pts) {
    for (const auto& r : transport_residuals(prob, z)) {
      if (!(r.relative_residual <= w.value)) {
        w.value = r.relative_residual;
        w.coordinate = r.coordinate;
      }
    }
  }
  return w;
}

std::vector<Vector> decay_rays(int dim, RngStream& rng) {
  std::vector<Vector> rays;
  for (int i = 0; i < dim; ++i) {
    rays.push_back(Vector::Unit(dim, i));
    rays.push_back(-Vector::Unit(dim, i));
  }
  for (int n = 0; n < 4; ++n) rays.push_back(rng.normal_vector(dim).normalized());
  return rays;
}

/// Far-field flux along each ray relative to the largest near-field flux of
/// the same coordinate over all rays. Normalising per coordinate rather than
/// per ray keeps rays on which a field vanishes identically (w_b = 0 on an
/// axis) from producing 0/0 ratios.
struct DecayWorst {
  double ratio = 0.0;
  std::string coordinate;
};

DecayWorst worst_decay(const TransportProblem& prob, const std::vector<Vector>& rays) {
  DecayWorst w;
  for (int c = 0; c < static_cast<int>(prob.coordinates.size()); ++c) {
    double near = 0.0;
    double far = 0.0;
    for (const auto& ray : rays) {
      const Vector v = boundary_decay_probe(prob, c, ray, {1.0, 10.0});
      near = std::max(near, v[0]);
      far = std::max(far, v[1]);
    }
    double ratio = 0.0;
    if (far > 0.0) ratio = near > 0.0 ? far / near : std::numeric_limits<double>::infinity();
    if (!(ratio <= w.ratio)) {
      w.ratio = ratio;
      w.coordinate = prob.coordinates[static_cast<std::size_t>(c)].label();
    }
  }
  return w;
}

/// Power-law envelope for Student-t fields: |q v| at radius 10 relative to
/// radius 1 for a density ~ (1 + r^2/nu)^{-(nu+D)/2} and a field growing at
/// most linearly, with one decade of slack.
double student_t_decay_bound(double dof, int dim) {
  const double q_ratio = std::pow((1.0 + 100.0 / dof) / (1.0 + 1.0 / dof), -(dof + dim) / 2.0);
  return 100.0 * q_ratio;
}

struct TransportSuite {
  const ExperimentConfig& cfg;
  CsvTable table;
  bool pass = true;

  void row(const std::string& check, const std::string& family, int d, int k, int instance,
           const std::string& coordinate, double value, double threshold, bool ok) {
    table.rows.push_back({check, family, std::to_string(d), std::to_string(k),
                          std::to_string(instance), coordinate.empty() ? "-" : coordinate,
                          fmt(value), fmt(threshold), ok ? "pass" : "fail"});
    pass = pass && ok;
  }

  void residual(const TransportProblem& prob, const std::string& family, int d, int k,
                int instance, const std::vector<Vector>& pts, const std::string& check = "residual") {
    const Worst w = worst_residual(prob, pts);
    row(check, family, d, k, instance, w.coordinate, w.value, 1e-5, w.value < 1e-5);
  }

  void decay(const TransportProblem& prob, const std::string& family, int d, int k, int instance,
             const std::vector<Vector>& rays, double bound) {
    const DecayWorst w = worst_decay(prob, rays);
    row("boundary", family, d, k, instance, w.coordinate, w.ratio, bound, w.ratio < bound);
  }

  void mixture_identities(const MixtureParams& p, const std::string& family, int d, int k,
                          int instance, const std::vector<Vector>& pts, bool negative) {
    double worst_sum = 0.0;
    double worst_anti = 0.0;
    const bool pairwise = p.family() == MixtureFamily::SharedDiagCov || p.family() == MixtureFamily::Gsm;
    for (const auto& z : pts) {
      const Matrix v = negative ? negative_example_cdf_field(p, z) : logit_fields(p, z);
      const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
      worst_sum = std::max(worst_sum, v.rowwise().sum().cwiseAbs().maxCoeff() / scale);
      if (pairwise && !negative) {
        for (int j = 0; j < k; ++j) {
          for (int l = j + 1; l < k; ++l) {
            const Vector a = pairwise_field(p, j, l, z);
            const Vector b = pairwise_field(p, l, j, z);
            const double s = std::max(1.0, a.cwiseAbs().maxCoeff());
            worst_anti = std::max(worst_anti, (a + b).cwiseAbs().maxCoeff() / s);
          }
        }
      }
    }
    row("logit_sum", family, d, k, instance, "", worst_sum, 1e-12, worst_sum <= 1e-12);
    if (pairwise && !negative && k > 1) {
      row("antisymmetry", family, d, k, instance, "", worst_anti, 1e-12, worst_anti <= 1e-12);
    }
  }
};

bool wants(const std::vector<std::string>& families, const std::string& f) {
  if (contains(families, f)) return true;
  return f != "negative_example" && contains(families, "all");
}

CommandResult check_transport(const ExperimentConfig& cfg) {
  TransportSuite suite{cfg, {}, true};
  suite.table.header = {"check", "family", "D", "K", "instance", "coordinate", "value",
                        "threshold", "status"};
  const RngStream root(cfg.seed);
  std::uint64_t stream = 0;
  const auto next_rng = [&] { return root.split(++stream); };

  for (int d : cfg.dim_sweep) {
    if (wants(cfg.family, "mvn")) {
      RngStream rng = next_rng();
      const MvnParams p = random_mvn(d, rng);
      const TransportProblem prob = transport_problem(p);
      const auto pts = sample_points(prob, cfg.points, rng);
      suite.residual(prob, "mvn", d, 1, 0, pts);
      suite.decay(prob, "mvn", d, 1, 0, decay_rays(d, rng), 1e-8);
    }
    if (wants(cfg.family, "mvn_avf")) {
      for (int i = 0; i < cfg.avf_instances; ++i) {
        RngStream rng = next_rng();
        const MvnParams p = random_mvn(d, rng);
        const AvfParams avf = AvfParams::random(1 + i % 3, d, 1.0, rng);
        const TransportProblem prob = transport_problem(p, avf);
        const auto pts = sample_points(prob, cfg.points, rng);
        suite.residual(prob, "mvn_avf", d, 1, i, pts);
        if (d > 1) suite.residual(null_transport_problem(p, avf), "mvn_avf", d, 1, i, pts, "null_residual");
        suite.decay(prob, "mvn_avf", d, 1, i, decay_rays(d, rng), 1e-8);
      }
    }
    if (wants(cfg.family, "student_t")) {
      RngStream rng = next_rng();
      const MvnParams base = random_mvn(d, rng);
      const double dof = 3.0 + 7.0 * rng.uniform();
      const StudentTParams p(base.mean, base.chol, dof);
      const AvfParams avf = AvfParams::random(2, d, 1.0, rng);
      const TransportProblem prob = transport_problem(p, avf);
      const auto pts = sample_points(prob, cfg.points, rng);
      suite.residual(prob, "student_t", d, 1, 0, pts);
      if (d > 1) suite.residual(null_transport_problem(p, avf), "student_t", d, 1, 0, pts, "null_residual");
      suite.decay(prob, "student_t", d, 1, 0, decay_rays(d, rng), student_t_decay_bound(dof, d));
    }
    for (const auto& name : kMixtureFamilies) {
      if (!wants(cfg.family, name)) continue;
      const MixtureFamily fam = *parse_family(name);
      for (int k : cfg.component_sweep) {
        RngStream rng = next_rng();
        const MixtureParams p = random_mixture(fam, d, k, rng);
        const TransportProblem prob = transport_problem(p);
        const auto pts = sample_points(prob, cfg.points, rng);
        suite.residual(prob, name, d, k, 0, pts);
        suite.decay(prob, name, d, k, 0, decay_rays(d, rng), 1e-8);
        suite.mixture_identities(p, name, d, k, 0, pts, false);
      }
    }
    if (wants(cfg.family, "negative_example")) {
      for (int k : cfg.component_sweep) {
        if (k < 2) continue;
        RngStream rng = next_rng();
        const MixtureParams p = random_mixture(MixtureFamily::DiagNormals, d, k, rng);
        const TransportProblem prob = transport_problem(p, MixtureFieldSelection::NegativeExample);
        const auto pts = sample_points(prob, cfg.points, rng);
        suite.residual(prob, "negative_example", d, k, 0, pts);
        suite.decay(prob, "negative_example", d, k, 0, decay_rays(d, rng), 1e-8);
        suite.mixture_identities(p, "negative_example", d, k, 0, pts, true);
      }
    }
  }
  return {std::move(suite.table), suite.pass};
}

// ---------------------------------------------------------------------------
// bench-mvn

std::vector<int> off_diagonal_indices(const LocationScale& p) {
  std::vector<int> idx;
  const auto coords = p.coordinates();
  for (int n = 0; n < static_cast<int>(coords.size()); ++n) {
    const auto& c = coords[static_cast<std::size_t>(n)];
    if (c.kind == CoordKind::Chol && c.first != c.second) idx.push_back(n);
  }
  return idx;
}

Vector gather(const Vector& v, const std::vector<int>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t n = 0; n < idx.size(); ++n) out[static_cast<Eigen::Index>(n)] = v[idx[n]];
  return out;
}

AvfOptimizerConfig adaptation_config(const ExperimentConfig& cfg) {
  AvfOptimizerConfig oc;
  oc.step_size_theta = cfg.step_size_theta;
  oc.step_size_lambda = cfg.step_size_lambda;
  oc.n_steps = cfg.steps;
  oc.samples_per_step = cfg.samples_per_step;
  oc.rank = cfg.rank;
  oc.optimizer = cfg.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
  oc.freeze_theta = cfg.freeze_theta;
  oc.window = cfg.window;
  return oc;
}

CommandResult bench_mvn(const ExperimentConfig& cfg) {
  CsvTable table;
  table.header = {"r",        "test_function", "estimator", "n_samples",       "seed",
                  "var_ratio", "ci_low",       "ci_high",   "mean_coord_ratio", "steps"};
  const RngStream root(cfg.seed);
  const int d = cfg.dim;
  for (std::size_t ir = 0; ir < cfg.r_sweep.size(); ++ir) {
    const double r = cfg.r_sweep[ir];
    RngStream geometry_rng = root.split(1000 + ir);
    const MvnParams p = off_diagonal_mvn(d, r, geometry_rng);
    const std::vector<int> idx = off_diagonal_indices(p);
    for (std::size_t it = 0; it < cfg.test_function.size(); ++it) {
      RngStream f_rng = root.split(2000 + it);
      const TestFunction f = *make_test_function(cfg.test_function[it], d, f_rng);

      RngStream adapt_rng = root.split(3000 + 100 * ir + it);
      AvfParams avf = AvfParams::zeros(cfg.rank, d);
      if (cfg.steps > 0) {
        AvfOptimizerConfig oc = adaptation_config(cfg);
        oc.freeze_theta = true;
        const AvfParams init = initial_avf(cfg.rank, d, adapt_rng);
        avf = avf_optimize(p, init, f, oc, adapt_rng).avf;
      }

      const int blocks = std::min(cfg.samples, 500);
      BlockMoments rt(static_cast<int>(idx.size()), blocks);
      BlockMoments adapted(static_cast<int>(idx.size()), blocks);
      RngStream eval_rng = root.split(4000 + 100 * ir + it);
      for (int n = 0; n < cfg.samples; ++n) {
        const Vector z = sample(p, eval_rng).value;
        const Vector gf = f.gradient(z);
        rt.add(gather(location_scale_fields_dot(p, std::nullopt, gf, z), idx));
        adapted.add(gather(location_scale_fields_dot(p, avf, gf, z), idx));
      }
      if (idx.empty()) continue;  // D = 1 has no off-diagonal coordinates
      RngStream boot_rng = root.split(5000 + 100 * ir + it);
      const RatioEstimate est = paired_variance_ratio(adapted, rt, cfg.bootstrap, 0.95, boot_rng);
      for (const auto& e : cfg.estimators) {
        const bool is_rt = e == "rt";
        table.rows.push_back({fmt(r), f.name, e, std::to_string(cfg.samples),
                              std::to_string(cfg.seed), fmt(is_rt ? 1.0 : est.ratio),
                              fmt(is_rt ? 1.0 : est.ci_low), fmt(is_rt ? 1.0 : est.ci_high),
                              fmt(is_rt ? 1.0 : est.mean_coord_ratio), std::to_string(cfg.steps)});
      }
    }
  }
  return {std::move(table), true};
}

// ---------------------------------------------------------------------------
// bench-mixture

Estimator mixture_estimator(const std::string& name, const MixtureParams& p, const TestFunction& f,
                            double temperature) {
  if (name == "pathwise") return pathwise_estimator(p, f);
  if (name == "score") return score_estimator(p, f);
  if (name == "hybrid") return hybrid_estimator(p, f);
  const GumbelMode mode = name == "gs_hard" ? GumbelMode::Hard : GumbelMode::Soft;
  return gumbel_estimator(p, f, {temperature, mode});
}

CommandResult bench_mixture(const ExperimentConfig& cfg) {
  CsvTable table;
  table.header = {"family",  "D",      "K",       "estimator",      "n_samples",
                  "seed",    "var_logits", "var_ratio_vs_score", "ci_low", "ci_high",
                  "var_components", "var_ratio_vs_pathwise"};
  const RngStream root(cfg.seed);
  std::vector<std::string> families;
  for (const auto& f : cfg.family) {
    if (f == "all") {
      for (const auto& g : kMixtureFamilies)
        if (!contains(families, g)) families.push_back(g);
    } else if (!contains(families, f)) {
      families.push_back(f);
    }
  }
  const std::vector<int> dims = cfg.dim_sweep.empty() ? std::vector<int>{cfg.dim} : cfg.dim_sweep;
  const int k = cfg.components;
  std::uint64_t stream = 0;
  for (const auto& family : families) {
    const MixtureFamily fam = *parse_family(family);
    for (int d : dims) {
      ++stream;
      RngStream geometry_rng = root.split(1000 + stream);
      const MixtureParams p = sphere_mixture(fam, d, k, cfg.radius, cfg.spread, geometry_rng);
      RngStream f_rng = root.split(2000 + stream);
      const TestFunction f = *make_test_function(cfg.test_function.front(), d, f_rng);
      const int n_coords = static_cast<int>(p.coordinates().size());
      const int blocks = std::min(cfg.samples, 500);

      struct Run {
        std::string name;
        BlockMoments logits;
        BlockMoments components;
      };
      std::vector<Run> runs;
      for (const auto& name : cfg.estimators) {
        if ((name == "gs_soft" || name == "gs_hard") && fam != MixtureFamily::DiagNormals) continue;
        const Estimator est = mixture_estimator(name, p, f, cfg.temperature);
        Run run{name, BlockMoments(k, blocks), BlockMoments(n_coords - k, blocks)};
        // common random numbers: every estimator sees the same stream
        RngStream eval_rng = root.split(3000 + stream);
        for (int n = 0; n < cfg.samples; ++n) {
          const Vector g = est(eval_rng);
          run.logits.add(g.head(k));
          run.components.add(g.tail(n_coords - k));
        }
        runs.push_back(std::move(run));
      }
      const auto find_run = [&](const std::string& name) -> const Run* {
        for (const auto& r : runs)
          if (r.name == name) return &r;
        return nullptr;
      };
      const Run* score = find_run("score");
      const Run* path = find_run("pathwise");
      const double nan = std::numeric_limits<double>::quiet_NaN();
      for (const auto& run : runs) {
        RatioEstimate vs_score{nan, nan, nan, nan};
        if (score) {
          RngStream boot_rng = root.split(4000 + stream);
          vs_score = paired_variance_ratio(run.logits, score->logits, cfg.bootstrap, 0.95, boot_rng);
        }
        const double vs_path =
            path ? run.logits.total_variance() / path->logits.total_variance() : nan;
        table.rows.push_back({family, std::to_string(d), std::to_string(k), run.name,
                              std::to_string(cfg.samples), std::to_string(cfg.seed),
                              fmt(run.logits.total_variance()), fmt(vs_score.ratio),
                              fmt(vs_score.ci_low), fmt(vs_score.ci_high),
                              fmt(run.components.total_variance()), fmt(vs_path)});
      }
    }
  }
  return {std::move(table), true};
}

// ---------------------------------------------------------------------------
// sgvi-toy

CommandResult sgvi_toy(const ExperimentConfig& cfg) {
  CsvTable table;
  table.header = {"step", "estimator", "seed", "elbo", "kl_to_target"};
  SgviConfig sc;
  sc.n_steps = cfg.steps;
  sc.learning_rate = cfg.learning_rate;
  sc.samples_per_step = cfg.samples_per_step;
  sc.log_every = cfg.log_every;
  sc.eval_samples = cfg.eval_samples;
  sc.final_eval_samples = cfg.samples;
  sc.temperature = cfg.temperature;
  for (const auto& name : cfg.estimators) {
    const SgviEstimator e = *parse_sgvi_estimator(name);
    for (int s = 0; s < cfg.seeds; ++s) {
      const std::uint64_t run_seed = cfg.seed + static_cast<std::uint64_t>(s);
      RngStream rng(run_seed);
      RngStream init_rng = rng.split(7);
      const MixtureParams q0 = sgvi_initial_q(init_rng);
      const ToyTarget target = cfg.target == "initial" ? ToyTarget{q0, 0.0} : default_toy_target();
      for (const auto& row : run_sgvi(target, q0, e, sc, rng)) {
        table.rows.push_back({std::to_string(row.step), name, std::to_string(run_seed),
                              fmt(row.elbo), fmt(row.kl_to_target)});
      }
    }
  }
  return {std::move(table), true};
}

// ---------------------------------------------------------------------------
// adapt-avf

CommandResult adapt_avf(const ExperimentConfig& cfg) {
  CsvTable table;
  table.header = {"step", "surrogate_second_moment", "var_estimate_window", "theta_norm"};
  if (cfg.steps < 1) throw ConfigError("adapt-avf needs steps >= 1");
  const RngStream root(cfg.seed);
  RngStream geometry_rng = root.split(1000);
  const MvnParams p = off_diagonal_mvn(cfg.dim, cfg.r_sweep.front(), geometry_rng);
  RngStream f_rng = root.split(2000);
  const TestFunction f = *make_test_function(cfg.test_function.front(), cfg.dim, f_rng);
  RngStream rng = root.split(3000);
  const AvfParams init = initial_avf(cfg.rank, cfg.dim, rng);
  const AvfRunResult res = avf_optimize(p, init, f, adaptation_config(cfg), rng);
  for (const auto& row : res.trace) {
    if (row.step % cfg.log_every != 0 && row.step + 1 != cfg.steps) continue;
    table.rows.push_back({std::to_string(row.step), fmt(row.surrogate), fmt(row.window_variance),
                          fmt(row.theta_norm)});
  }
  return {std::move(table), true};
}

}  // namespace

CommandResult run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  if (cfg.experiment == "check-transport") return check_transport(cfg);
  if (cfg.experiment == "bench-mvn") return bench_mvn(cfg);
  if (cfg.experiment == "bench-mixture") return bench_mixture(cfg);
  if (cfg.experiment == "sgvi-toy") return sgvi_toy(cfg);
  return adapt_avf(cfg);
}

// ---------------------------------------------------------------------------
// Command line

namespace {

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transport-equation gradient estimator benchmarks", "tgbench"};
  std::string command;
  std::string config_path;
  std::map<std::string, std::string> flags;
  app.add_option("command", command, "check-transport | bench-mvn | bench-mixture | sgvi-toy | adapt-avf");
  app.add_option("--config", config_path, "flat key = value config file");
  std::vector<std::pair<std::string, CLI::Option*>> options;
  for (const auto& key : config_keys()) {
    options.emplace_back(key, app.add_option(flag_name(key), flags[key], "overrides config key " + key));
  }

  std::vector<std::string> argv_store{"tgbench"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "tgbench: " << e.what() << "\n";
    return 2;
  }

  try {
    std::map<std::string, std::string> file_values;
    if (!config_path.empty()) file_values = parse_config_text(read_file(config_path));

    std::string experiment = command;
    if (experiment.empty() && options[0].second->count() > 0) experiment = unquote(flags["experiment"]);
    if (experiment.empty() && file_values.count("experiment")) {
      experiment = unquote(trim(file_values["experiment"]));
    }
    if (experiment.empty()) throw ConfigError("no command given");
    if (!contains(kCommands, experiment)) throw ConfigError("unknown command '" + experiment + "'");

    ExperimentConfig cfg = default_config(experiment);
    for (const auto& [key, value] : file_values) apply_config_value(cfg, key, value);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) apply_config_value(cfg, key, flags[key]);
    }
    if (const char* env = std::getenv("TG_SEED"); env && *env) apply_config_value(cfg, "seed", env);
    cfg.experiment = experiment;
    validate(cfg);

    const CommandResult result = run_experiment(cfg);
    if (cfg.out.empty() || cfg.out == "-") {
      write_csv(out, cfg, result.table);
    } else {
      std::ofstream file(cfg.out);
      if (!file) throw ConfigError("cannot open output file '" + cfg.out + "'");
      write_csv(file, cfg, result.table);
    }
    if (!result.thresholds_met) {
      err << "tgbench: " << experiment << ": threshold check failed\n";
      return 1;
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "tgbench: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "tgbench: invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "tgbench: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tg
