#include "lamperti/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lamperti/chain_models.hpp"
#include "lamperti/exact_solver.hpp"
#include "lamperti/extensions.hpp"
#include "lamperti/io.hpp"
#include "lamperti/lyapunov.hpp"
#include "lamperti/montecarlo.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace lamperti::cli {

namespace {

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const std::exception&) {
    throw ConfigError("parameter " + key + ": expected a number, got '" + v + "'");
  }
}

long long to_integer(const std::string& key, const std::string& v) {
  const double d = to_real(key, v);
  if (!(std::fabs(d) < 9e18) || d != std::floor(d))
    throw ConfigError("parameter " + key + ": expected an integer, got '" + v + "'");
  return static_cast<long long>(d);
}

bool to_flag(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off" || v.empty()) return false;
  throw ConfigError("parameter " + key + ": expected a boolean, got '" + v + "'");
}

std::string normalise(const ParamSpec& p, const std::string& raw) {
  const std::string v = trim(raw);
  switch (p.kind) {
    case Kind::Real: return format_number(to_real(p.key, v));
    case Kind::Integer: return format_number(static_cast<std::int64_t>(to_integer(p.key, v)));
    case Kind::Flag: return to_flag(p.key, v) ? "true" : "false";
    case Kind::Text: return v;
    case Kind::RealList:
    case Kind::IntegerList: {
      std::string out;
      for (const auto& item : split_list(v)) {
        if (!out.empty()) out += ",";
        out += p.kind == Kind::RealList ? format_number(to_real(p.key, item))
                                        : format_number(static_cast<std::int64_t>(to_integer(p.key, item)));
      }
      return out;
    }
  }
  return v;
}

}  // namespace

RunConfig::RunConfig(std::string subcommand, std::vector<ParamSpec> specs)
    : subcommand_(std::move(subcommand)), specs_(std::move(specs)) {
  for (const auto& p : specs_) values_[p.key] = normalise(p, p.fallback);
}

const ParamSpec& RunConfig::find(const std::string& key) const {
  std::string k = key;
  const auto dot = key.find('.');
  std::string section;
  if (dot != std::string::npos) {
    section = key.substr(0, dot);
    k = key.substr(dot + 1);
  }
  for (const auto& p : specs_)
    if (p.key == k && (section.empty() || p.section == section)) return p;
  throw ConfigError("unknown parameter '" + key + "' for " + subcommand_);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& p = find(key);
  values_[p.key] = normalise(p, value);
}

void RunConfig::load_text(const std::string& text) {
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& p = find(section.empty() ? key : section + "." + key);
    values_[p.key] = normalise(p, value);
  }
}

void RunConfig::validate() const {
  for (const auto& p : specs_) normalise(p, values_.at(p.key));
}

std::string RunConfig::canonical() const {
  std::map<std::string, std::map<std::string, std::string>> by_section;
  for (const auto& p : specs_) by_section[p.section][p.key] = values_.at(p.key);
  std::string out;
  for (const auto& [section, kv] : by_section) {
    out += "[" + section + "]\n";
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  }
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(subcommand_ + "\n" + canonical()); }

double RunConfig::real(const std::string& key) const { return to_real(key, values_.at(find(key).key)); }
long long RunConfig::integer(const std::string& key) const { return to_integer(key, values_.at(find(key).key)); }
std::string RunConfig::text(const std::string& key) const { return values_.at(find(key).key); }
bool RunConfig::flag(const std::string& key) const { return to_flag(key, values_.at(find(key).key)); }

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : split_list(values_.at(find(key).key))) out.push_back(to_real(key, s));
  return out;
}

std::vector<long long> RunConfig::integers(const std::string& key) const {
  std::vector<long long> out;
  for (const auto& s : split_list(values_.at(find(key).key))) out.push_back(to_integer(key, s));
  return out;
}

// ---------------------------------------------------------------------------
// parameter tables

namespace {

std::vector<ParamSpec> model_params(const std::string& family = "nn", const std::string& B = "1") {
  return {
      {"model", "family", family, Kind::Text, "nn | multijump"},
      {"model", "c", "2", Kind::Real, "drift coefficient c"},
      {"model", "s2", "1", Kind::Real, "limiting second moment s^2"},
      {"model", "max_jump", B, Kind::Integer, "jump bound B"},
      {"model", "shape", "", Kind::RealList, "MultiJump base law on -B..B (default binomial)"},
      {"model", "kernel_file", "", Kind::Text, "tabulated kernel CSV (overrides the family)"},
  };
}

std::string default_betas() {
  std::string s;
  for (int k = 1; k <= 25; ++k) s += (s.empty() ? "" : ",") + format_number(k / 10.0);
  return s;
}

void append(std::vector<ParamSpec>& v, std::vector<ParamSpec> more) {
  v.insert(v.end(), more.begin(), more.end());
}

}  // namespace

std::vector<std::string> subcommands() {
  return {"solve-h", "transform", "lyapunov", "simulate", "coupling", "renewal",
          "rwalk",   "chung-fuchs", "branching", "classify", "report"};
}

std::vector<ParamSpec> params_for(const std::string& sub) {
  std::vector<ParamSpec> p;
  const ParamSpec seed{"mc", "seed", "1", Kind::Integer, "master seed"};
  if (sub == "classify") {
    p = {{"model", "c", "2", Kind::Real, "drift coefficient c"},
         {"model", "s2", "1", Kind::Real, "limiting second moment s^2"},
         {"classify", "beta", "1", Kind::Real, "moment order beta"}};
  } else if (sub == "solve-h") {
    p = model_params();
    append(p, {{"solver", "radius", "100000", Kind::Integer, "truncation radius R"},
               {"solver", "policy", "killed", Kind::Text, "killed | reflected | left-continuous"},
               {"solver", "bracket", "false", Kind::Flag, "solve both policies and bracket h"},
               {"solver", "x_lo", "100", Kind::Integer, "ratio table start"},
               {"solver", "x_hi", "2000", Kind::Integer, "ratio table end"},
               {"solver", "epsilon", "0.5", Kind::Real, "envelope exponent"}});
  } else if (sub == "transform") {
    p = model_params();
    append(p, {{"solver", "radius", "20000", Kind::Integer, "truncation radius R"},
               {"transform", "x", "1000", Kind::Integer, "state for the printed moments"},
               {"transform", "grid", "10,30,100,300", Kind::IntegerList, "extra table states"}});
  } else if (sub == "lyapunov") {
    p = model_params();
    append(p, {{"lyapunov", "nu", "0.5", Kind::Real, "log exponent nu"},
               {"lyapunov", "gamma", "", Kind::Text, "power exponent (default gamma_c)"},
               {"lyapunov", "x_max", "100000", Kind::Integer, "scan end"}});
  } else if (sub == "simulate") {
    p = model_params();
    append(p, {{"mc", "x0", "0", Kind::Integer, "start state"},
               {"mc", "betas", default_betas(), Kind::RealList, "moment orders"},
               {"mc", "n_traj", "100000", Kind::Integer, "trajectories"},
               {"mc", "n_cap", "1000000", Kind::Integer, "time cap"},
               {"mc", "escape", "0", Kind::Integer, "escape level (0: automatic)"},
               {"mc", "survivor_floor", "50", Kind::Integer, "tail window survivor floor"},
               seed});
  } else if (sub == "coupling") {
    p = model_params("multijump", "2");
    append(p, {{"coupling", "a", "50", Kind::Integer, "interval start"},
               {"coupling", "separations", "5,10,20,40", Kind::IntegerList, "separations ell"},
               {"coupling", "entries", "100000", Kind::Integer, "entries per start"},
               {"coupling", "escape_factor", "1.5", Kind::Real, "escape level / start"},
               {"coupling", "n_cap", "1000000", Kind::Integer, "time cap"},
               seed});
  } else if (sub == "renewal") {
    p = model_params();
    append(p, {{"renewal", "x_grid", "25,50,100,200", Kind::IntegerList, "levels x"},
               {"renewal", "n_traj", "2000", Kind::Integer, "trajectories"},
               {"renewal", "safety", "5", Kind::Real, "stop above safety * max x"},
               seed});
  } else if (sub == "rwalk") {
    p = {{"walk", "d", "3", Kind::Integer, "dimension"},
         {"walk", "n_max", "10000", Kind::Integer, "horizon"},
         {"walk", "n_traj", "100000", Kind::Integer, "trajectories"},
         {"walk", "beta", "1", Kind::Real, "moment order"},
         {"walk", "radii", "", Kind::RealList, "radii for the norm drift table"},
         {"walk", "n_samples", "0", Kind::Integer, "norm drift samples (0: enumerate)"},
         seed};
  } else if (sub == "chung-fuchs") {
    p = {{"walk", "d", "5", Kind::Integer, "dimension"},
         {"walk", "beta", "1", Kind::Real, "moment order"},
         {"walk", "t_grid", "0.9,0.99,0.999,0.9999", Kind::RealList, "t values"},
         {"walk", "points", "131072", Kind::Integer, "points per replicate"},
         {"walk", "replicates", "16", Kind::Integer, "randomised replicates"},
         seed};
  } else if (sub == "branching") {
    p = {{"branching", "offspring", "geometric", Kind::Text, "geometric | poisson | deterministic"},
         {"branching", "theta", "1", Kind::Real, "migration mean (zeta in {-1, 2 theta + 1})"},
         {"branching", "mode", "both", Kind::Text, "moments | extinction | both"},
         {"branching", "w", "10000", Kind::Integer, "population for one-step moments"},
         {"branching", "n_samples", "1000000", Kind::Integer, "one-step samples"},
         {"branching", "beta", "1", Kind::Real, "extinction moment order"},
         {"branching", "w0", "1", Kind::Integer, "initial population"},
         {"branching", "n_traj", "100000", Kind::Integer, "extinction runs"},
         {"branching", "n_cap", "10000", Kind::Integer, "generation cap"},
         {"branching", "escape_w", "9000", Kind::Integer, "population treated as survival"},
         seed};
  } else if (sub == "report") {
    p = {{"report", "runs", "", Kind::Text, "comma-separated run directories"},
         {"report", "beta", "1", Kind::Real, "moment order for the verdicts"}};
  } else {
    throw ConfigError("unknown subcommand '" + sub + "'");
  }
  return p;
}

// ---------------------------------------------------------------------------
// run plumbing

namespace {

struct Run {
  const RunConfig& cfg;
  fs::path dir;
  unsigned workers;
  std::ostream& out;
  std::vector<std::string> written;
  json summary = json::object();
  json censoring = json::object();
  std::optional<std::uint64_t> seed;

  std::string header() const {
    return "config_hash=" + cfg.hash() + " tool=" + kToolName + " version=" + kToolVersion +
           " command=" + cfg.subcommand();
  }
  CsvTable table(std::vector<std::string> cols) const {
    CsvTable t(std::move(cols));
    t.add_comment(header());
    return t;
  }
  void write(const std::string& name, const std::string& content) {
    atomic_write(dir / name, content);
    written.push_back(name);
  }
  void write_csv(const std::string& name, const CsvTable& t) { write(name, t.str()); }
};

JumpKernel kernel_from(const RunConfig& c, LampertiSpec& spec) {
  spec.c = c.real("c");
  spec.s2 = c.real("s2");
  spec.max_jump = static_cast<int>(c.integer("max_jump"));
  const auto fam = c.text("family");
  if (fam == "nn")
    spec.family = KernelFamily::NearestNeighbour;
  else if (fam == "multijump")
    spec.family = KernelFamily::MultiJump;
  else
    throw ConfigError("family must be nn or multijump");
  spec.shape = c.reals("shape");
  const auto file = c.text("kernel_file");
  if (!file.empty()) return load_kernel_csv(file);
  return build_lamperti_kernel(spec);
}

void cmd_classify(Run& r) {
  LampertiSpec spec;
  spec.c = r.cfg.real("c");
  spec.s2 = r.cfg.real("s2");
  const auto cls = classify_theoretical(spec, r.cfg.real("beta"));
  const auto rec = classify_recurrence(spec);
  const auto ex = critical_exponents(spec);
  json j;
  j["config_hash"] = r.cfg.hash();
  j["c"] = spec.c;
  j["s2"] = spec.s2;
  j["beta"] = cls.beta;
  j["verdict"] = to_string(cls.verdict);
  j["inequality"] = cls.rationale;
  j["recurrence"] = to_string(rec.verdict);
  j["gamma_c"] = ex.gamma_c;
  j["beta_crit"] = ex.beta_crit;
  r.write("classify.json", j.dump(2) + "\n");
  r.summary = j;
  r.out << j.dump(2) << "\n";
}

void cmd_solve_h(Run& r) {
  LampertiSpec spec;
  const auto kernel = kernel_from(r.cfg, spec);
  const State R = r.cfg.integer("radius");
  const auto pol = r.cfg.text("policy");
  const bool bracket = r.cfg.flag("bracket");
  HittingSolution h;
  if (bracket) {
    h = solve_return_prob_bracketed(kernel, R);
  } else if (pol == "killed" || pol == "reflected") {
    h = solve_return_prob(kernel, R, pol == "killed" ? BoundaryPolicy::Killed : BoundaryPolicy::Reflected);
  } else if (pol == "left-continuous") {
    h = solve_return_prob_left_continuous(kernel, R);
  } else {
    throw ConfigError("policy must be killed, reflected or left-continuous");
  }
  const double gc = critical_exponents(spec).gamma_c;

  auto ht = r.table({"x", "h", "lower", "upper", "relative_width"});
  for (State x = 0; x < R; ++x) ht.add_row(x, h.at(x), h.lower(x), h.upper(x), h.relative_width(x));
  r.write_csv("h.csv", ht);

  const State lo = std::max<State>(1, r.cfg.integer("x_lo"));
  const State hi = std::min<State>(r.cfg.integer("x_hi"), R - 2);
  if (lo >= hi) throw ConfigError("need x_lo < x_hi < radius - 1");
  auto rt = r.table({"x", "h_killed", "h_reflected", "ratio_z1", "predicted", "residual_times_x"});
  for (State x = lo; x <= hi; ++x) {
    const double hx = h.at(x);
    const double ratio = h.at(x + 1) / hx;
    const double pred = 1.0 - gc / double(x);
    const double refl = h.bracket ? (*h.bracket)[x] : std::numeric_limits<double>::quiet_NaN();
    rt.add_row(x, hx, refl, ratio, pred, double(x) * (ratio - pred));
  }
  r.write_csv("ratio.csv", rt);

  json j;
  j["config_hash"] = r.cfg.hash();
  j["radius"] = R;
  j["policy"] = bracket ? "bracketed" : pol;
  j["gamma_c"] = gc;
  j["gamma_fit"] = h.gamma_fit;
  j["max_residual"] = h.max_residual;
  j["reliable_end"] = h.reliable_end;
  j["degenerate"] = h.degenerate;
  if (bracket && hi + kernel.max_jump() < h.reliable_end) {
    const auto d = ratio_diagnostics(h, spec, lo, hi, r.cfg.real("epsilon"));
    j["slope"] = d.slope;
    j["slope_range"] = {d.slope_lo, d.slope_hi};
    if (d.envelope.threshold) j["envelope_threshold"] = *d.envelope.threshold;
    else j["envelope_threshold"] = nullptr;
    double worst = 0.0;
    for (const auto& row : d.rows)
      if (row.z == 1) worst = std::max(worst, std::fabs(row.deviation));
    j["max_abs_ratio_deviation"] = worst;
  }
  if (auto m = monotonicity_threshold(h, 1, std::max<State>(2, std::min(h.reliable_end, R) - 1)))
    j["monotonicity_threshold"] = *m;
  else
    j["monotonicity_threshold"] = nullptr;
  r.write("summary.json", j.dump(2) + "\n");
  r.summary = j;
  r.out << "h(1) = " << format_number(h.at(1)) << ", reliable window ends at " << h.reliable_end << "\n";
}

void cmd_transform(Run& r) {
  LampertiSpec spec;
  const auto kernel = kernel_from(r.cfg, spec);
  const State R = r.cfg.integer("radius");
  const auto h = solve_return_prob_bracketed(kernel, R);
  const auto ck = build_conditioned_kernel(kernel, h);
  const State x = r.cfg.integer("x");
  std::vector<State> states;
  for (auto v : r.cfg.integers("grid")) states.push_back(v);
  states.push_back(x);
  std::sort(states.begin(), states.end());
  states.erase(std::unique(states.begin(), states.end()), states.end());
  auto t = r.table({"x", "mu1", "mu2", "x_mu1", "limit_x_mu1", "row_defect"});
  double xm1 = 0, m2 = 0;
  for (State s : states) {
    if (s < 0 || s >= ck.window_end) throw ConfigError("state " + std::to_string(s) + " outside the conditioned window");
    const double a = conditioned_moments(ck, s, 1).value;
    const double b = conditioned_moments(ck, s, 2).value;
    t.add_row(s, a, b, double(s) * a, spec.s2 - spec.c, ck.row_defect[s]);
    if (s == x) {
      xm1 = double(s) * a;
      m2 = b;
    }
  }
  r.write_csv("transform.csv", t);
  json j;
  j["config_hash"] = r.cfg.hash();
  j["x"] = x;
  j["x_mu1"] = xm1;
  j["mu2"] = m2;
  j["limit_x_mu1"] = spec.s2 - spec.c;
  j["limit_mu2"] = spec.s2;
  j["reliable"] = x < ck.reliable_end;
  r.write("summary.json", j.dump(2) + "\n");
  r.summary = j;
  r.out << "x*mu1(" << x << ") = " << format_number(xm1) << "  mu2 = " << format_number(m2) << "\n";
}

void cmd_lyapunov(Run& r) {
  LampertiSpec spec;
  const auto kernel = kernel_from(r.cfg, spec);
  LyapunovFn f;
  f.nu = r.cfg.real("nu");
  const auto g = r.cfg.text("gamma");
  f.gamma = g.empty() ? critical_exponents(spec).gamma_c : to_real("gamma", g);
  const auto rep = find_drift_threshold(kernel, f, r.cfg.integer("x_max"));
  auto t = r.table({"x", "drift", "f_value", "leading_term"});
  for (const auto& p : rep.points) t.add_row(p.x, p.drift, p.f_value, p.leading_term);
  r.write_csv("drift.csv", t);
  json j;
  j["config_hash"] = r.cfg.hash();
  j["gamma"] = f.gamma;
  j["nu"] = f.nu;
  if (rep.threshold) j["threshold"] = *rep.threshold;
  else j["threshold"] = nullptr;
  j["tail_sign"] = to_string(rep.tail_sign);
  j["sign_determined"] = rep.sign_determined;
  j["note"] = rep.note;
  r.write("summary.json", j.dump(2) + "\n");
  r.summary = j;
  r.out << "drift threshold: " << (rep.threshold ? std::to_string(*rep.threshold) : "none") << " ("
        << to_string(rep.tail_sign) << ")\n";
}

void cmd_simulate(Run& r) {
  LampertiSpec spec;
  const auto kernel = kernel_from(r.cfg, spec);
  McOptions o;
  o.n_traj = r.cfg.integer("n_traj");
  o.n_cap = r.cfg.integer("n_cap");
  o.escape_level = r.cfg.integer("escape");
  o.survivor_floor = r.cfg.integer("survivor_floor");
  o.workers = r.workers;
  const auto seed = static_cast<std::uint64_t>(r.cfg.integer("seed"));
  r.seed = seed;
  const auto betas = r.cfg.reals("betas");
  const State x0 = r.cfg.integer("x0");
  const auto ec = estimate_strong_transience(kernel, x0, betas, o, seed);
  const auto m = estimate_conditional_moments(kernel, x0, 1.0, o, seed);

  auto st = r.table({"n", "survivors", "total_returns"});
  for (const auto& s : m.survival) st.add_row(s.n, s.survivors, m.returns);
  r.write_csv("survival.csv", st);
  auto mt = r.table({"beta", "T", "L", "U", "stderr"});
  for (const auto& row : ec.rows) mt.add_row(row.beta, row.T, row.L, row.U, row.T_se);
  r.write_csv("moments.csv", mt);

  json j;
  j["config_hash"] = r.cfg.hash();
  j["seed"] = seed;
  j["c"] = spec.c;
  j["s2"] = spec.s2;
  j["beta_crit_theory"] = critical_exponents(spec).beta_crit;
  if (ec.beta_crit) j["beta_crit"] = *ec.beta_crit;
  else j["beta_crit"] = nullptr;
  j["tail_exponent"] = m.tail_exponent;
  j["tail_ci"] = m.tail_ci;
  j["window"] = {ec.window_lo, ec.window_hi};
  j["h_hat"] = m.h_hat;
  j["h_se"] = m.h_se;
  j["returns"] = ec.returns;
  j["censored"] = ec.censored;
  j["escaped_without_return"] = ec.escaped;
  j["censor_rate"] = ec.censor_rate;
  json rows = json::array();
  for (const auto& row : ec.rows)
    rows.push_back({{"beta", row.beta}, {"growth_exponent", row.growth_slope}, {"saturates", row.saturates},
                    {"ordering_ok", row.ordering_ok}});
  j["saturation"] = rows;
  r.censoring["simulate"] = ec.censor_rate;
  r.write("summary.json", j.dump(2) + "\n");
  r.summary = j;
  r.out << "beta_crit estimate: " << (ec.beta_crit ? format_number(*ec.beta_crit) : std::string("none"))
        << " (theory " << format_number(critical_exponents(spec).beta_crit) << ")\n";
}

void cmd_coupling(Run& r) {
  LampertiSpec spec;
  const auto kernel = kernel_from(r.cfg, spec);
  CouplingOptions o;
  o.workers = r.workers;
  o.n_cap = r.cfg.integer("n_cap");
  o.escape_factor = r.cfg.real("escape_factor");
  std::vector<std::uint64_t> seps;
  for (auto v : r.cfg.integers("separations")) {
    if (v <= 0) throw ConfigError("separations must be positive");
    seps.push_back(static_cast<std::uint64_t>(v));
  }
  const auto seed = static_cast<std::uint64_t>(r.cfg.integer("seed"));
  r.seed = seed;
  const auto tab = coupling_experiment(kernel, r.cfg.integer("a"), seps, r.cfg.integer("entries"), seed, o);
  auto t = r.table({"ell", "tv", "fit"});
  for (const auto& row : tab.rows) t.add_row(row.ell, row.tv, row.fit);
  r.write_csv("coupling.csv", t);
  json j;
  j["config_hash"] = r.cfg.hash();
  j["seed"] = seed;
  j["b_hat"] = std::isnan(tab.b_hat) ? json(nullptr) : json(tab.b_hat);
  j["r2"] = std::isnan(tab.r2) ? json(nullptr) : json(tab.r2);
  j["unreliable"] = tab.unreliable;
  j["censor_rate"] = tab.censor_rate;
  r.censoring["coupling"] = tab.censor_rate;
  r.write("summary.json", j.dump(2) + "\n");
  r.summary = j;
  r.out << "b_hat = " << format_number(tab.b_hat) << "  R^2 = " << format_number(tab.r2) << "\n";
}

void cmd_renewal(Run& r) {
  LampertiSpec spec;
  const auto kernel = kernel_from(r.cfg, spec);
  std::vector<State> grid;
  for (auto v : r.cfg.integers("x_grid")) grid.push_back(v);
  const auto seed = static_cast<std::uint64_t>(r.cfg.integer("seed"));
  r.seed = seed;
  const auto res = estimate_renewal_function(kernel, grid, r.cfg.integer("n_traj"), seed, r.workers,
                                             r.cfg.real("safety"));
  auto t = r.table({"x", "H", "stderr", "scaled", "limit"});
  const double lim = 1.0 / (2.0 * spec.c - spec.s2);
  for (const auto& row : res.rows) t.add_row(row.x, row.H, row.H_se, row.scaled, lim);
  r.write_csv("renewal.csv", t);
  json j;
  j["config_hash"] = r.cfg.hash();
  j["seed"] = seed;
  j["limit"] = lim;
  j["censor_rate"] = res.censor_rate;
  j["flagged"] = res.flagged;
  r.censoring["renewal"] = res.censor_rate;
  r.write("summary.json", j.dump(2) + "\n");
  r.summary = j;
  r.out << "H(x)/x^2 at x = " << res.rows.back().x << ": " << format_number(res.rows.back().scaled) << " (limit "
        << format_number(lim) << ")\n";
}

void cmd_rwalk(Run& r) {
  const auto m = simple_random_walk(static_cast<int>(r.cfg.integer("d")));
  const auto seed = static_cast<std::uint64_t>(r.cfg.integer("seed"));
  r.seed = seed;
  const auto res = rwalk_return_mass(m, r.cfg.integer("n_max"), r.cfg.integer("n_traj"), seed, r.cfg.real("beta"),
                                     r.workers);
  auto t = r.table({"n", "phat", "stderr"});
  for (const auto& row : res.rows) t.add_row(row.n, row.phat, row.stderr_);
  r.write_csv("return_mass.csv", t);
  auto ps = r.table({"N", "partial_sum"});
  for (auto [n, v] : res.partial_sums) ps.add_row(n, v);
  r.write_csv("partial_sums.csv", ps);
  json j;
  j["config_hash"] = r.cfg.hash();
  j["seed"] = seed;
  j["d"] = m.d;
  j["growth_exponent"] = res.growth_exponent;
  j["decade_ratio"] = res.growth.ratio;
  j["saturates"] = res.growth.saturates;
  j["llt_slope"] = res.llt_slope;
  j["llt_predicted"] = res.llt_predicted;
  j["warnings"] = res.warnings;
  const auto radii = r.cfg.reals("radii");
  if (!radii.empty()) {
    const auto rows = norm_drift_check(m, radii, r.cfg.integer("n_samples"), seed);
    auto nt = r.table({"r", "points", "r_drift", "sq_change", "drift_target", "sq_target"});
    for (const auto& row : rows)
      nt.add_row(row.r, row.points, row.r_drift, row.sq_change, row.drift_target, row.sq_target);
    r.write_csv("norm_drift.csv", nt);
  }
  r.write("summary.json", j.dump(2) + "\n");
  r.summary = j;
  r.out << "partial sums: exponent " << format_number(res.growth_exponent)
        << (res.growth.saturates ? " (saturates)" : " (grows)") << "\n";
}

void cmd_chung_fuchs(Run& r) {
  const auto m = simple_random_walk(static_cast<int>(r.cfg.integer("d")));
  const auto seed = static_cast<std::uint64_t>(r.cfg.integer("seed"));
  r.seed = seed;
  QmcOptions o;
  o.points = r.cfg.integer("points");
  o.replicates = static_cast<int>(r.cfg.integer("replicates"));
  o.workers = r.workers;
  const auto tab = chung_fuchs_table(m, r.cfg.real("beta"), r.cfg.reals("t_grid"), seed, o);
  auto t = r.table({"t", "integral", "stderr"});
  for (const auto& row : tab.rows) t.add_row(row.t, row.value, row.stderr_);
  r.write_csv("chung_fuchs.csv", t);
  json j;
  j["config_hash"] = r.cfg.hash();
  j["seed"] = seed;
  j["d"] = m.d;
  j["beta"] = tab.beta;
  j["increment_ratio"] = tab.growth.ratio;
  j["monotone"] = tab.growth.monotone;
  j["saturates"] = tab.growth.saturates;
  r.write("summary.json", j.dump(2) + "\n");
  r.summary = j;
  for (const auto& row : tab.rows)
    r.out << "t = " << format_number(row.t) << "  integral = " << format_number(row.value) << " +- "
          << format_number(row.stderr_) << "\n";
  r.out << (tab.growth.saturates ? "saturates" : "grows") << "\n";
}

void cmd_branching(Run& r) {
  const auto kind = r.cfg.text("offspring");
  OffspringKind k;
  if (kind == "geometric") k = OffspringKind::ShiftedGeometric;
  else if (kind == "poisson") k = OffspringKind::Poisson;
  else if (kind == "deterministic") k = OffspringKind::Deterministic;
  else throw ConfigError("offspring must be geometric, poisson or deterministic");
  const auto model = make_branching(k, two_point_migration(r.cfg.real("theta")));
  const auto mode = r.cfg.text("mode");
  if (mode != "moments" && mode != "extinction" && mode != "both")
    throw ConfigError("mode must be moments, extinction or both");
  const auto seed = static_cast<std::uint64_t>(r.cfg.integer("seed"));
  r.seed = seed;
  json j;
  j["config_hash"] = r.cfg.hash();
  j["seed"] = seed;
  j["theta"] = model.theta;
  j["sigma2"] = model.sigma2;
  if (mode != "extinction") {
    const auto sm = branching_sqrt_moments(model, r.cfg.integer("w"), r.cfg.integer("n_samples"), seed, r.workers);
    auto t = r.table({"quantity", "estimate", "stderr", "target"});
    t.add_row(std::string("8x_mu1"), sm.scaled_mu1, 8.0 * sm.x * sm.mu1_se, sm.target_mu1);
    t.add_row(std::string("4_mu2"), sm.scaled_mu2, 4.0 * sm.mu2_se, sm.target_mu2);
    t.add_row(std::string("8x_mu1_raw"), 8.0 * sm.x * sm.mu1_raw, 8.0 * sm.x * sm.mu1_raw_se, sm.target_mu1);
    t.add_row(std::string("4_mu2_raw"), 4.0 * sm.mu2_raw, 4.0 * sm.mu2_raw_se, sm.target_mu2);
    r.write_csv("branching_moments.csv", t);
    j["scaled_mu1"] = sm.scaled_mu1;
    j["scaled_mu2"] = sm.scaled_mu2;
    j["sqrt_bound_excess"] = sm.max_bound_excess;
    r.out << "8x mu1 = " << format_number(sm.scaled_mu1) << " (target " << format_number(sm.target_mu1)
          << "), 4 mu2 = " << format_number(sm.scaled_mu2) << " (target " << format_number(sm.target_mu2) << ")\n";
  }
  if (mode != "moments") {
    ExtinctionOptions o;
    o.w0 = r.cfg.integer("w0");
    o.n_traj = r.cfg.integer("n_traj");
    o.n_cap = r.cfg.integer("n_cap");
    o.escape_w = r.cfg.integer("escape_w");
    o.workers = r.workers;
    const double beta = r.cfg.real("beta");
    const auto ex = branching_extinction_experiment(model, beta, o, seed);
    auto t = r.table({"beta", "growth_exponent", "saturates", "predicted_saturates", "label"});
    const auto& row = ex.cls.rows.front();
    t.add_row(beta, row.growth_slope, row.saturates, ex.predicted_saturates, ex.cls.label);
    r.write_csv("extinction.csv", t);
    j["extinction"] = {{"label", ex.cls.label},
                       {"growth_exponent", row.growth_slope},
                       {"saturates", row.saturates},
                       {"predicted_saturates", ex.predicted_saturates},
                       {"agrees", ex.agrees},
                       {"extinct", ex.extinct},
                       {"escaped", ex.escaped},
                       {"censored", ex.censored},
                       {"window", {ex.cls.window_lo, ex.cls.window_hi}}};
    r.censoring["extinction"] = ex.cls.censor_rate;
    r.out << "extinction moment beta=" << format_number(beta) << ": "
          << (row.saturates ? "saturates" : "grows") << " [" << ex.cls.label << "]\n";
  }
  r.write("summary.json", j.dump(2) + "\n");
  r.summary = j;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("malformed " + p.string() + ": " + e.what());
  }
}

void cmd_report(Run& r, const std::vector<std::string>& extra) {
  auto runs = split_list(r.cfg.text("runs"));
  runs.insert(runs.end(), extra.begin(), extra.end());
  if (runs.empty()) throw ConfigError("report needs at least one run directory");
  const double beta = r.cfg.real("beta");
  auto t = r.table({"run", "c", "s2", "beta", "beta_crit_theory", "beta_crit_empirical", "verdict_theory",
                    "verdict_empirical", "agree"});
  std::size_t used = 0;
  for (const auto& dir : runs) {
    const auto man = read_json(fs::path(dir) / "manifest.json");
    if (man.value("tool", "") != kToolName || man.value("tool_version", "") != kToolVersion)
      throw ConfigError("run " + dir + " was produced by " + man.value("tool", "?") + " " +
                        man.value("tool_version", "?") + ", expected " + kToolName + " " + kToolVersion);
    if (man.value("command", "") != "simulate") continue;
    const auto sum = read_json(fs::path(dir) / "summary.json");
    LampertiSpec spec;
    spec.c = sum.at("c").get<double>();
    spec.s2 = sum.at("s2").get<double>();
    const auto theory = classify_theoretical(spec, beta);
    std::string emp = "undetermined";
    double bc = std::numeric_limits<double>::quiet_NaN();
    if (!sum.at("beta_crit").is_null()) {
      bc = sum.at("beta_crit").get<double>();
      emp = to_string(beta < bc ? Verdict::StrongTransient : Verdict::NotStrongTransient);
    }
    t.add_row(fs::path(dir).filename().string(), spec.c, spec.s2, beta, critical_exponents(spec).beta_crit, bc,
              to_string(theory.verdict), emp, emp == to_string(theory.verdict));
    ++used;
  }
  if (used == 0) throw ConfigError("no simulate runs among the report inputs");
  r.write_csv("report.csv", t);
  r.out << t.str();
}

}  // namespace

// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lamperti-chain experiments: exact solves, Monte Carlo and comparison settings", kToolName};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);

  struct Sub {
    std::string name;
    CLI::App* app;
    std::map<std::string, std::string> flags;
    std::map<std::string, bool> switches;
    std::string config_file, out_dir;
    unsigned workers = 1;
    bool print_config = false;
    std::vector<std::string> positional;
  };
  const std::map<std::string, std::string> about = {
      {"solve-h", "exact return probability h on a truncated chain"},
      {"transform", "Doob h-transform and its increment moments"},
      {"lyapunov", "drift of x^-gamma log^nu x and its sign threshold"},
      {"simulate", "Monte Carlo excursion moments and empirical beta_crit"},
      {"coupling", "entrance-law coupling decay on an interval"},
      {"renewal", "renewal function H(x): expected time spent in [0, x] from 0"},
      {"rwalk", "lattice walk return masses and norm drift"},
      {"chung-fuchs", "Chung-Fuchs integral growth as t -> 1"},
      {"branching", "branching process with migration"},
      {"classify", "theoretical verdict for c, s2 and beta"},
      {"report", "compare saved runs against theory"}};
  std::vector<std::unique_ptr<Sub>> subs;
  for (const auto& name : subcommands()) {
    auto s = std::make_unique<Sub>();
    s->name = name;
    s->app = app.add_subcommand(name, about.count(name) ? about.at(name) : "");
    s->app->add_option("--config", s->config_file, "key=value config file with [section] headers");
    s->app->add_option("--out", s->out_dir, std::string("output root (default $") + kOutputEnv + " or ./lamperti_out)");
    s->app->add_option("--workers", s->workers, "worker threads")->check(CLI::PositiveNumber);
    s->app->add_flag("--print-config", s->print_config, "print the canonical config and exit");
    for (const auto& p : params_for(name)) {
      const std::string flag = "--" + p.key;
      if (p.kind == Kind::Flag) {
        s->app->add_flag(flag, s->switches[p.key], p.help);
      } else {
        s->app->add_option(flag, s->flags[p.key], p.help);
      }
    }
    if (name == "report") s->app->add_option("dirs", s->positional, "run directories");
    subs.push_back(std::move(s));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  Sub* sub = nullptr;
  for (auto& s : subs)
    if (s->app->parsed()) sub = s.get();
  if (!sub) return kUsageError;

  std::optional<RunConfig> cfg;
  try {
    cfg.emplace(sub->name, params_for(sub->name));
    if (!sub->config_file.empty()) {
      std::ifstream in(sub->config_file);
      if (!in) throw ConfigError("cannot open config file " + sub->config_file);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg->load_text(ss.str());
    }
    for (const auto& [k, v] : sub->flags)
      if (sub->app->count("--" + k) > 0) cfg->set(k, v);
    for (const auto& [k, v] : sub->switches)
      if (sub->app->count("--" + k) > 0) cfg->set(k, v ? "true" : "false");
    cfg->validate();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsageError;
  }
  if (sub->print_config) {
    out << cfg->canonical();
    return kOk;
  }

  fs::path root = sub->out_dir;
  if (root.empty()) {
    const char* env = std::getenv(kOutputEnv);
    root = env && *env ? fs::path(env) : fs::path("lamperti_out");
  }
  Run r{*cfg, root / (sub->name + "-" + cfg->hash().substr(0, 12)), sub->workers, out, {}, json::object(), json::object(), std::nullopt};
  const auto t0 = std::chrono::steady_clock::now();
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& f : r.written) fs::remove(r.dir / f, ec);
    fs::remove(r.dir / "manifest.json", ec);
    if (fs::exists(r.dir, ec) && fs::is_empty(r.dir, ec)) fs::remove(r.dir, ec);
  };
  try {
    const auto& n = sub->name;
    if (n == "classify") cmd_classify(r);
    else if (n == "solve-h") cmd_solve_h(r);
    else if (n == "transform") cmd_transform(r);
    else if (n == "lyapunov") cmd_lyapunov(r);
    else if (n == "simulate") cmd_simulate(r);
    else if (n == "coupling") cmd_coupling(r);
    else if (n == "renewal") cmd_renewal(r);
    else if (n == "rwalk") cmd_rwalk(r);
    else if (n == "chung-fuchs") cmd_chung_fuchs(r);
    else if (n == "branching") cmd_branching(r);
    else if (n == "report") cmd_report(r, sub->positional);

    json man;
    man["tool"] = kToolName;
    man["tool_version"] = kToolVersion;
    man["command"] = n;
    man["config_hash"] = cfg->hash();
    man["config"] = cfg->canonical();
    if (r.seed) man["seed"] = *r.seed;
    else man["seed"] = nullptr;
    man["workers"] = r.workers;
    man["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json files = json::array();
    for (const auto& f : r.written) {
      std::ifstream in(r.dir / f, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      files.push_back({{"file", f}, {"sha256", sha256_hex(ss.str())}});
    }
    man["outputs"] = files;
    man["censoring_rates"] = r.censoring;
    atomic_write(r.dir / "manifest.json", man.dump(2) + "\n");
    err << "wrote " << r.dir.string() << "\n";
    return kOk;
  } catch (const ConfigError& e) {
    cleanup();
    err << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    cleanup();
    err << "invalid parameters: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    cleanup();
    err << "computation failed: " << e.what() << "\n";
    return kComputeFailure;
  }
}

}  // namespace lamperti::cli
