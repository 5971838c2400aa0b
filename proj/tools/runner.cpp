#include "runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "spinesim/error.hpp"
#include "spinesim/genealogy.hpp"
#include "spinesim/many2few.hpp"
#include "spinesim/model.hpp"
#include "spinesim/model_io.hpp"
#include "spinesim/moments.hpp"
#include "spinesim/parallel.hpp"
#include "spinesim/spine.hpp"
#include "spinesim/stats.hpp"

namespace spinesim::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Thrown for config problems; maps to kExitInvalid.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& msg) : std::runtime_error(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string num(std::int64_t x) { return std::to_string(x); }
std::string num(std::uint64_t x) { return std::to_string(x); }
std::string num(int x) { return std::to_string(x); }

std::string join(const std::vector<double>& v, char sep = ';') {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += num(v[i]);
  }
  return s;
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& schema, const std::vector<std::string>& header)
      : out_(path, std::ios::binary), width_(header.size()) {
    if (!out_) throw std::runtime_error("cannot open " + path.string());
    out_ << "#schema=" << schema << '\n';
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw std::logic_error("csv row width mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
  std::size_t width_;
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::binary);
  out << j.dump(2) << '\n';
}

// Parameter access with typed errors naming the config path.
class Params {
 public:
  Params(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(prefix_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  double number(const std::string& key, std::optional<double> def = {}) const {
    if (!j_.contains(key)) {
      if (def) return *def;
      throw ConfigError(path(key), "missing");
    }
    if (!j_[key].is_number()) throw ConfigError(path(key), "expected a number");
    return j_[key].get<double>();
  }

  double positive(const std::string& key, std::optional<double> def = {}) const {
    const double v = number(key, def);
    if (!(v > 0.0)) throw ConfigError(path(key), "must be positive");
    return v;
  }

  std::uint64_t count(const std::string& key, std::optional<std::uint64_t> def = {}, std::uint64_t min = 1) const {
    if (!j_.contains(key)) {
      if (def) return *def;
      throw ConfigError(path(key), "missing");
    }
    const auto& v = j_[key];
    if (!v.is_number()) throw ConfigError(path(key), "expected an integer");
    const double d = v.get<double>();
    if (d != std::floor(d) || d < static_cast<double>(min)) throw ConfigError(path(key), "expected an integer >= " + std::to_string(min));
    return static_cast<std::uint64_t>(d);
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> def = {}) const {
    if (!j_.contains(key)) {
      if (def) return *def;
      throw ConfigError(path(key), "missing");
    }
    const auto& v = j_[key];
    if (!v.is_array() || v.empty()) throw ConfigError(path(key), "expected a nonempty list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(path(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::string string(const std::string& key, std::optional<std::string> def = {}) const {
    if (!j_.contains(key)) {
      if (def) return *def;
      throw ConfigError(path(key), "missing");
    }
    if (!j_[key].is_string()) throw ConfigError(path(key), "expected a string");
    return j_[key].get<std::string>();
  }

  const json& raw(const std::string& key) const { return j_.at(key); }
  std::string path(const std::string& key) const { return prefix_ + "." + key; }

 private:
  const json& j_;
  std::string prefix_;
};

struct Context {
  json config;
  fs::path config_dir;
  fs::path out;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  BranchingModel model;
  EigenTriple eigen;
  int x0 = 0;
  std::ostream* log = nullptr;
};

struct Outcome {
  json summary = json::object();
  bool pass = true;
};

int resolve_state(const BranchingModel& m, const json& j, const std::string& path) {
  if (j.is_string()) {
    for (int i = 0; i < m.d(); ++i)
      if (m.states[i] == j.get<std::string>()) return i;
    throw ConfigError(path, "unknown state label '" + j.get<std::string>() + "'");
  }
  if (j.is_number_integer()) {
    const int v = j.get<int>();
    if (v < 1 || v > m.d()) throw ConfigError(path, "state index out of range (1-based)");
    return v - 1;
  }
  throw ConfigError(path, "expected a state label or 1-based index");
}

// "ones", "indicator:<state>", or an explicit list of d values.
Vec resolve_function(const BranchingModel& m, const json& j, const std::string& path) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "ones") return Vec::Ones(m.d());
    if (s.rfind("indicator:", 0) == 0) {
      const std::string lab = s.substr(10);
      json key = lab;
      if (!lab.empty() && std::all_of(lab.begin(), lab.end(), ::isdigit)) {
        bool is_label = false;
        for (const auto& st : m.states) is_label |= st == lab;
        if (!is_label) key = std::stoi(lab);
      }
      Vec f = Vec::Zero(m.d());
      f[resolve_state(m, key, path)] = 1.0;
      return f;
    }
    throw ConfigError(path, "unknown function '" + s + "'");
  }
  if (j.is_array() && static_cast<int>(j.size()) == m.d()) {
    Vec f(m.d());
    for (int i = 0; i < m.d(); ++i) {
      if (!j[i].is_number()) throw ConfigError(path, "expected numbers");
      f[i] = j[i].get<double>();
    }
    return f;
  }
  throw ConfigError(path, "expected \"ones\", \"indicator:<state>\" or a list of d numbers");
}

MarkConvention resolve_convention(const Params& p) {
  const std::string c = p.string("convention", "retire");
  if (c == "retire") return MarkConvention::kRetire;
  if (c == "follow-through") return MarkConvention::kFollowThrough;
  throw ConfigError(p.path("convention"), "expected \"retire\" or \"follow-through\"");
}

json estimate_json(const Estimate& e) { return {{"mean", e.mean}, {"se", e.se}, {"n", e.n}}; }

// ---------------------------------------------------------------- experiments

Outcome run_eigen(Context& c, const Params& p) {
  const auto ts = p.numbers("mixing_t", std::vector<double>{1, 2, 4, 8, 16});
  const Mat A = mean_generator(c.model);
  const double res_r = (A * c.eigen.phi - c.eigen.lambda * c.eigen.phi).lpNorm<Eigen::Infinity>();
  const double res_l =
      (A.transpose() * c.eigen.phi_tilde - c.eigen.lambda * c.eigen.phi_tilde).lpNorm<Eigen::Infinity>();
  CsvWriter csv(c.out / "eigen.csv", "spinesim.eigen.v1", {"state", "phi", "phi_tilde"});
  for (int x = 0; x < c.model.d(); ++x) csv.row({c.model.states[x], num(c.eigen.phi[x]), num(c.eigen.phi_tilde[x])});
  CsvWriter mix(c.out / "mixing.csv", "spinesim.mixing.v1", {"t", "mixing_defect"});
  json defects = json::array();
  for (double t : ts) {
    const double dt = mixing_defect(c.model, c.eigen, t);
    mix.row({num(t), num(dt)});
    defects.push_back({{"t", t}, {"defect", dt}});
  }
  const double tol = p.number("tolerance", 1e-10);
  Outcome o;
  o.pass = res_r <= tol && res_l <= tol;
  o.summary = {{"lambda", c.eigen.lambda},   {"sigma", c.eigen.sigma},     {"mass", c.eigen.mass},
               {"residual_right", res_r},   {"residual_left", res_l},     {"mixing", defects},
               {"tolerance", tol}};
  return o;
}

std::optional<double> product_oracle(const Context& c, const FunctionalSpec& fs) {
  if (fs.kind != FunctionalSpec::Kind::kProduct) return std::nullopt;
  if (fs.k == 1) return (semigroup_matrix(c.model, fs.s_times[0]) * fs.f[0])[c.x0];
  if (fs.k == 2) {
    double v;
    if (fs.s_times[0] == fs.s_times[1])
      v = second_moment_oracle(c.model, fs.f[0], fs.f[1], fs.s_times[0])[c.x0];
    else
      v = two_time_moment_oracle(c.model, fs.f[1], fs.f[0], fs.s_times[1], fs.s_times[0])[c.x0];
    if (fs.distinct) {
      // Subtract E[sum_v f0(X_v(s1)) f1(X_v(s2))] over particles alive at both times:
      // the diagonal term equals e^{s2 A}[f1 * e^{(s1-s2)Q}... ] only for local motion, so skip.
      if (fs.s_times[0] != fs.s_times[1]) return std::nullopt;
      v -= (semigroup_matrix(c.model, fs.s_times[0]) * fs.f[0].cwiseProduct(fs.f[1]))[c.x0];
    }
    return v;
  }
  return std::nullopt;
}

Outcome run_many2few(Context& c, const Params& p) {
  const int k = static_cast<int>(p.count("k"));
  if (k > 3) throw ConfigError(p.path("k"), "k must be at most 3");
  const auto s = p.numbers("s_times");
  if (static_cast<int>(s.size()) != k) throw ConfigError(p.path("s_times"), "need k times");
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[i - 1]) throw ConfigError(p.path("s_times"), "times must be nonincreasing");
  const std::uint64_t n = p.count("n_samples", std::uint64_t{2}, 2);
  const double tol = p.number("tolerance_se", 3.0);
  std::vector<std::string> est{"lhs", "rhs"};
  if (p.has("estimators")) {
    est.clear();
    for (const auto& e : p.raw("estimators")) est.push_back(e.get<std::string>());
  }
  FunctionalSpec fs;
  const std::string kind = p.string("functional", "product");
  if (kind == "product") {
    std::vector<Vec> f;
    const json fj = p.has("f") ? p.raw("f") : json("ones");
    for (int i = 0; i < k; ++i) {
      const json& fi = fj.is_array() && fj.size() == static_cast<std::size_t>(k) && !fj[0].is_number() ? fj[i] : fj;
      f.push_back(resolve_function(c.model, fi, p.path("f")));
    }
    fs = product_functional(std::move(f), s, p.has("distinct") && p.raw("distinct").get<bool>());
  } else if (kind == "genealogy") {
    if (k != 2) throw ConfigError(p.path("k"), "genealogy functional needs k = 2");
    const double power = p.number("F_power", 1.0);
    fs = genealogy_functional([power](double u) { return std::pow(u, power); }, s[0], s[1],
                              p.has("inverse_sizes") && p.raw("inverse_sizes").get<bool>());
  } else {
    throw ConfigError(p.path("functional"), "expected \"product\" or \"genealogy\"");
  }
  fs.validate(c.model);
  EstimatorOptions opt;
  opt.seed = c.seed;
  opt.workers = c.workers;
  opt.max_population = p.count("max_population", std::uint64_t{5000});
  opt.convention = resolve_convention(p);
  const SpineModel sm(c.model, c.eigen, std::max(3, k));

  std::map<std::string, Estimate> res;
  double route = 0.0;
  for (const auto& e : est) {
    if (e == "lhs") {
      res[e] = lhs_estimate(c.model, c.x0, fs, n, opt);
    } else if (e == "rhs") {
      const auto r = rhs_estimate(sm, c.x0, fs, n, opt);
      res[e] = r.estimate;
      route = std::max(route, r.route_max_rel_diff);
    } else if (e == "separated") {
      res[e] = rhs_separated_estimate(sm, c.x0, fs, n, opt).estimate;
    } else {
      throw ConfigError(p.path("estimators"), "unknown estimator '" + e + "'");
    }
  }
  const auto oracle = product_oracle(c, fs);
  CsvWriter csv(c.out / "many2few.csv", "spinesim.many2few.v1",
                {"functional", "k", "s_times", "estimator", "mean", "se", "n", "oracle", "z_oracle"});
  Outcome o;
  json rows = json::array();
  for (const auto& e : est) {
    const auto& r = res[e];
    const double z = oracle ? z_score(r, *oracle) : NAN;
    if (oracle && !(std::fabs(z) <= tol)) o.pass = false;
    csv.row({fs.id, num(k), join(s), e, num(r.mean), num(r.se), num(r.n), oracle ? num(*oracle) : "", oracle ? num(z) : ""});
    rows.push_back({{"estimator", e}, {"estimate", estimate_json(r)}, {"z_oracle", oracle ? json(z) : json()}});
  }
  json pairs = json::array();
  for (std::size_t i = 0; i < est.size(); ++i)
    for (std::size_t j = i + 1; j < est.size(); ++j) {
      const double z = z_score(res[est[i]], res[est[j]]);
      if (!(std::fabs(z) <= tol)) o.pass = false;
      pairs.push_back({{"a", est[i]}, {"b", est[j]}, {"z", z}});
    }
  if (route > 1e-12) o.pass = false;
  o.summary = {{"functional", fs.id},     {"k", k},          {"s_times", s},
               {"estimates", rows},       {"pairwise", pairs}, {"oracle", oracle ? json(*oracle) : json()},
               {"route_max_rel_diff", route}, {"tolerance_se", tol}};
  return o;
}

Outcome run_martingale(Context& c, const Params& p) {
  const int k = static_cast<int>(p.count("k"));
  const auto s = p.numbers("s_times");
  if (static_cast<int>(s.size()) != k) throw ConfigError(p.path("s_times"), "need k times");
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[i - 1]) throw ConfigError(p.path("s_times"), "times must be nonincreasing");
  const std::uint64_t n = p.count("n_samples", std::uint64_t{2}, 2);
  const double tol = p.number("tolerance_se", 3.0);
  EstimatorOptions opt;
  opt.seed = c.seed;
  opt.workers = c.workers;
  opt.convention = resolve_convention(p);
  const std::string sampler = p.string("sampler", "conditional");
  MartingaleSampler ms;
  if (sampler == "conditional") ms = MartingaleSampler::kConditional;
  else if (sampler == "plain") ms = MartingaleSampler::kPlain;
  else throw ConfigError(p.path("sampler"), "expected \"conditional\" or \"plain\"");
  const SpineModel sm(c.model, c.eigen, std::max(3, k));
  const auto e = martingale_mean(sm, c.x0, k, s, n, opt, ms);
  const double z = z_score(e, 1.0);
  CsvWriter csv(c.out / "martingale.csv", "spinesim.martingale.v1",
                {"k", "s_times", "convention", "sampler", "mean", "se", "n", "z"});
  const std::string conv = p.string("convention", "retire");
  csv.row({num(k), join(s), conv, sampler, num(e.mean), num(e.se), num(e.n), num(z)});
  Outcome o;
  o.pass = std::fabs(z) <= tol;
  o.summary = {{"k", k},      {"s_times", s}, {"convention", conv}, {"sampler", sampler}, {"estimate", estimate_json(e)},
               {"z", z},      {"tolerance_se", tol}};
  return o;
}

ExperimentOptions experiment_options(const Context& c, const Params& p) {
  ExperimentOptions opt;
  opt.seed = c.seed;
  opt.workers = c.workers;
  opt.max_attempts = p.count("max_attempts", std::uint64_t{1'000'000});
  opt.max_nodes = p.count("max_nodes", std::uint64_t{kDefaultNodeCap});
  return opt;
}

Outcome run_split_time(Context& c, const Params& p) {
  const double a = p.number("a");
  if (!(a > 0.0 && a < 1.0)) throw ConfigError(p.path("a"), "must lie in (0, 1)");
  const auto ts = p.has("t_list") ? p.numbers("t_list") : std::vector<double>{p.positive("t")};
  const std::uint64_t n = p.count("n_samples", std::uint64_t{2}, 2);
  auto opt = experiment_options(c, p);
  CsvWriter samples(c.out / "split_samples.csv", "spinesim.split_samples.v1",
                    {"t", "index", "u", "ancestor", "n_at", "n_t", "attempts"});
  CsvWriter ks(c.out / "split_ks.csv", "spinesim.split_ks.v1",
               {"t", "n_pairs", "n_non_ancestor", "ancestor_fraction", "ks_d", "ks_p", "ks_crit_1pct", "max_u_excess"});
  json rows = json::array();
  Outcome o;
  for (double t : ts) {
    const auto ss = split_time_experiment(c.model, c.eigen, c.x0, a, t, n, opt);
    std::vector<double> u;
    std::uint64_t anc = 0;
    double excess = -INFINITY;
    for (std::size_t i = 0; i < ss.size(); ++i) {
      const auto& s = ss[i];
      samples.row({num(t), num(static_cast<std::uint64_t>(i)), num(s.u), s.ancestor ? "1" : "0", num(s.n_at), num(s.n_t),
                   num(s.attempts)});
      if (s.ancestor) {
        ++anc;
      } else {
        u.push_back(s.u);
        excess = std::max(excess, s.u - a);
      }
    }
    const auto r = ks_test(u, [a](double x) { return x <= 0.0 ? 0.0 : x >= a ? 1.0 : F_a(a, x); });
    const double crit = ks_critical_1pct(u.size());
    const double frac = static_cast<double>(anc) / static_cast<double>(n);
    ks.row({num(t), num(n), num(static_cast<std::uint64_t>(u.size())), num(frac), num(r.d), num(r.p), num(crit), num(excess)});
    rows.push_back({{"t", t}, {"ancestor_fraction", frac}, {"ks_d", r.d}, {"ks_p", r.p}, {"ks_crit_1pct", crit},
                    {"max_u_excess", excess}, {"ks_pass", r.d < crit}});
    if (!(excess <= 2.0 / t)) o.pass = false;
  }
  if (!rows.empty() && !rows.back()["ks_pass"].get<bool>()) o.pass = false;
  o.summary = {{"a", a}, {"n_samples", n}, {"rows", rows}};
  return o;
}

Outcome run_joint_law(Context& c, const Params& p) {
  const double a = p.number("a");
  if (!(a > 0.0 && a < 1.0)) throw ConfigError(p.path("a"), "must lie in (0, 1)");
  const double t = p.positive("t");
  const std::uint64_t n = p.count("n_samples", std::uint64_t{2}, 2);
  const std::uint64_t draws = p.count("mixture_draws", std::uint64_t{10'000'000}, 2);
  const auto thetas = p.numbers("thetas", std::vector<double>{0.5, 1, 2});
  const auto mus = p.numbers("mus", std::vector<double>{0.5, 1, 2});
  const double tol = p.number("tolerance_se", 3.0);
  require_positive_sigma(c.eigen);
  auto opt = experiment_options(c, p);
  const auto samples = joint_population_experiment(c.model, c.eigen, c.x0, a, t, n, opt);
  LimitLawParams lp{a, c.eigen.sigma, c.eigen.mass, c.eigen.phi[c.x0]};
  const auto mix = weighted_mixture_transform(lp, thetas, mus, draws, c.seed, c.workers);
  const auto emp = empirical_laplace(samples, thetas, mus);
  CsvWriter sc(c.out / "joint_samples.csv", "spinesim.joint_samples.v1", {"index", "n_at_over_t", "n_t_over_t"});
  for (std::size_t i = 0; i < samples.size(); ++i)
    sc.row({num(static_cast<std::uint64_t>(i)), num(samples[i][0]), num(samples[i][1])});
  CsvWriter lc(c.out / "joint_laplace.csv", "spinesim.joint_laplace.v1",
               {"theta", "mu", "empirical", "empirical_se", "mixture", "mixture_se", "z"});
  Outcome o;
  json cells = json::array();
  for (std::size_t i = 0; i < emp.size(); ++i) {
    const double z = (emp[i].value - mix[i].value) / std::hypot(emp[i].se, mix[i].se);
    if (!(std::fabs(z) <= tol)) o.pass = false;
    lc.row({num(emp[i].theta), num(emp[i].mu), num(emp[i].value), num(emp[i].se), num(mix[i].value), num(mix[i].se), num(z)});
    cells.push_back({{"theta", emp[i].theta}, {"mu", emp[i].mu}, {"empirical", emp[i].value}, {"empirical_se", emp[i].se},
                     {"mixture", mix[i].value}, {"mixture_se", mix[i].se}, {"z", z}});
  }
  o.summary = {{"a", a}, {"t", t}, {"n_samples", n}, {"mixture_draws", draws}, {"cells", cells}, {"tolerance_se", tol}};
  return o;
}

Outcome run_survival(Context& c, const Params& p) {
  const auto ts = p.has("t_list") ? p.numbers("t_list") : std::vector<double>{p.positive("t")};
  const std::uint64_t n = p.count("n_samples", std::uint64_t{2}, 2);
  const std::string method = p.string("method", "forward");
  const double tol = p.number("tolerance_se", 3.0);
  require_positive_sigma(c.eigen);
  auto opt = experiment_options(c, p);
  const double limit = 2.0 * c.eigen.phi[c.x0] / c.eigen.sigma;
  std::unique_ptr<SpineModel> sm;
  if (method == "spine") sm = std::make_unique<SpineModel>(c.model, c.eigen, 1);
  else if (method != "forward") throw ConfigError(p.path("method"), "expected \"forward\" or \"spine\"");
  CsvWriter csv(c.out / "survival.csv", "spinesim.survival.v1", {"t", "method", "t_times_survival", "se", "n", "limit"});
  json rows = json::array();
  Outcome o;
  std::optional<double> exact_ref;
  if (p.has("reference")) exact_ref = p.number("reference");
  for (double t : ts) {
    const Estimate e = sm ? survival_estimate_spine(*sm, c.x0, t, n, opt) : survival_estimate(c.model, c.eigen, c.x0, t, n, opt);
    csv.row({num(t), method, num(e.mean), num(e.se), num(e.n), num(limit)});
    rows.push_back({{"t", t}, {"estimate", estimate_json(e)}});
  }
  if (exact_ref && !rows.empty()) {
    const auto& last = rows.back()["estimate"];
    const double z = (last["mean"].get<double>() - *exact_ref) / last["se"].get<double>();
    o.pass = std::fabs(z) <= tol;
  }
  o.summary = {{"method", method}, {"limit", limit}, {"rows", rows}};
  return o;
}

Outcome run_density_tables(Context& c, const Params& p) {
  const auto as = p.numbers("a_list", std::vector<double>{0.1, 0.25, 0.5, 0.75, 0.9});
  const double res = p.positive("u_resolution", 0.01);
  for (double a : as)
    if (!(a > 0.0 && a < 1.0)) throw ConfigError(p.path("a_list"), "a values must lie in (0, 1)");
  CsvWriter csv(c.out / "density.csv", "spinesim.density.v1",
                {"a", "u", "f_a", "F_a", "theta_integral", "abs_diff", "f_limit"});
  CsvWriter norm(c.out / "density_norm.csv", "spinesim.density_norm.v1", {"a", "integral", "abs_error"});
  double worst = 0.0;
  json norms = json::array();
  for (double a : as) {
    const std::size_t steps = static_cast<std::size_t>(std::floor(a / res));
    std::vector<double> us;
    for (std::size_t i = 0; i < steps; ++i) us.push_back(static_cast<double>(i) * res);
    const double eps = res / 2.0;
    if (us.empty() || us.back() < a - eps) us.push_back(a - eps);
    for (double u : us) {
      const double fa = f_a(a, u);
      const double th = f_a_theta_integral(a, u);
      worst = std::max(worst, std::fabs(fa - th));
      csv.row({num(a), num(u), num(fa), num(F_a(a, u)), num(th), num(std::fabs(fa - th)), num(f_limit(u))});
    }
    const double in = f_a_normalization(a);
    norm.row({num(a), num(in), num(std::fabs(in - 1.0))});
    norms.push_back({{"a", a}, {"integral", in}});
  }
  Outcome o;
  o.pass = worst <= p.number("tolerance", 1e-6);
  o.summary = {{"max_theta_abs_diff", worst}, {"normalization", norms}};
  return o;
}

using Runner = std::function<Outcome(Context&, const Params&)>;

const std::map<std::string, Runner>& registry() {
  static const std::map<std::string, Runner> r{
      {"eigen", run_eigen},           {"many2few", run_many2few}, {"martingale", run_martingale},
      {"split-time", run_split_time}, {"joint-law", run_joint_law}, {"survival", run_survival},
      {"density-tables", run_density_tables}};
  return r;
}

bool needs_model(const std::string& e) { return e != "density-tables"; }

void write_error(const fs::path& out, const std::string& type, const std::string& msg, const std::string& path) {
  std::error_code ec;
  fs::create_directories(out, ec);
  json j = {{"error", {{"type", type}, {"message", msg}}}};
  if (!path.empty()) j["error"]["path"] = path;
  write_json(out / "error.json", j);
}

}  // namespace

int run(const RunRequest& req, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out = req.out_dir;
  try {
    Context c;
    c.log = &log;
    std::string text;
    if (req.config_text) {
      text = *req.config_text;
      c.config_dir = req.config_path.empty() ? fs::current_path() : fs::path(req.config_path).parent_path();
    } else {
      std::ifstream in(req.config_path, std::ios::binary);
      if (!in) throw ConfigError("config", "cannot read " + req.config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      text = ss.str();
      c.config_dir = fs::path(req.config_path).parent_path();
    }
    try {
      c.config = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    if (!c.config.is_object()) throw ConfigError("config", "expected an object");
    if (req.experiment) c.config["experiment"] = *req.experiment;
    if (req.seed) c.config["seed"] = *req.seed;
    if (!c.config.contains("experiment") || !c.config["experiment"].is_string())
      throw ConfigError("config.experiment", "missing");
    const std::string name = c.config["experiment"].get<std::string>();
    const auto it = registry().find(name);
    if (it == registry().end()) throw ConfigError("config.experiment", "unknown experiment '" + name + "'");
    const Params top(c.config, "config");
    c.seed = top.count("seed", std::uint64_t{1}, 0);
    c.workers = resolve_workers(req.workers > 0 ? req.workers : static_cast<int>(top.count("workers", std::uint64_t{0}, 0)));
    if (!c.config.contains("params")) c.config["params"] = json::object();
    const Params params(c.config["params"], "config.params");

    if (needs_model(name)) {
      if (!c.config.contains("model")) throw ConfigError("config.model", "missing");
      const json& mj = c.config["model"];
      if (mj.is_string()) {
        fs::path mp = mj.get<std::string>();
        if (mp.is_relative()) mp = c.config_dir / mp;
        c.model = load_model(mp.string());
      } else if (mj.is_object()) {
        c.model = parse_model(mj.dump());
      } else {
        throw ConfigError("config.model", "expected a path or an inline model");
      }
      c.eigen = compute_eigen(c.model);
      c.x0 = c.config.contains("x0") ? resolve_state(c.model, c.config["x0"], "config.x0") : 0;
    }

    fs::create_directories(out);
    fs::remove(out / "error.json");
    log << "spinesim: running " << name << " (seed " << c.seed << ", " << c.workers << " workers)\n";
    c.out = out;
    Outcome o = it->second(c, params);

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.summary["experiment"] = name;
    o.summary["seed"] = c.seed;
    o.summary["pass"] = o.pass;
    write_json(out / "summary.json", o.summary);
    write_json(out / "manifest.json", {{"config_hash", hex(fnv1a(c.config.dump()))},
                                       {"config", c.config},
                                       {"seed", c.seed},
                                       {"workers", c.workers},
                                       {"version", SPINESIM_VERSION},
                                       {"git_revision", SPINESIM_GIT_REV},
                                       {"wall_time_s", wall}});
    log << "spinesim: " << name << (o.pass ? " passed" : " FAILED a configured tolerance") << " in " << wall << " s\n";
    return o.pass ? kExitOk : kExitFailedCheck;
  } catch (const ConfigError& e) {
    write_error(out, "config", e.what(), e.path());
    log << "spinesim: config error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const ModelError& e) {
    write_error(out, "model", e.what(), e.path());
    log << "spinesim: model error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    write_error(out, "invalid_argument", e.what(), "");
    log << "spinesim: invalid argument: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const SimulationError& e) {
    write_error(out, "simulation", e.what(), "");
    log << "spinesim: simulation error: " << e.what() << '\n';
    return kExitBudget;
  } catch (const NumericalError& e) {
    write_error(out, "numerical", e.what(), "");
    log << "spinesim: numerical error: " << e.what() << '\n';
    return kExitBudget;
  } catch (const std::exception& e) {
    write_error(out, "internal", e.what(), "");
    log << "spinesim: error: " << e.what() << '\n';
    return kExitBudget;
  }
}

}  // namespace spinesim::cli
