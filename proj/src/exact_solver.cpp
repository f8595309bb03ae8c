#include "lamperti/exact_solver.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "lamperti/lyapunov.hpp"

namespace lamperti {

namespace {

// Banded matrix with equal lower/upper bandwidth, factorised without pivoting.
// The hitting systems are nonsingular M-matrices, for which this is stable.
class BandLU {
 public:
  BandLU(std::size_t n, int bw) : n_(n), bw_(bw), w_(2 * bw + 1), a_(n * w_, 0.0L) {}

  long double& at(std::size_t i, std::size_t j) { return a_[i * w_ + (j + bw_ - i)]; }
  long double get(std::size_t i, std::size_t j) const { return a_[i * w_ + (j + bw_ - i)]; }

  void factor() {
    orig_ = a_;
    for (std::size_t k = 0; k < n_; ++k) {
      const long double piv = get(k, k);
      if (!(std::fabs(piv) > 1e-300L)) throw std::runtime_error("singular system: kernel defect");
      const std::size_t iend = std::min(n_, k + bw_ + 1);
      for (std::size_t i = k + 1; i < iend; ++i) {
        const long double l = get(i, k) / piv;
        if (l == 0.0L) continue;
        at(i, k) = l;
        for (std::size_t j = k + 1; j < iend; ++j) at(i, j) -= l * get(k, j);
      }
    }
  }

  std::vector<long double> solve(const std::vector<long double>& b) const {
    std::vector<long double> x = substitute(b);
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<long double> r(n_);
      long double rmax = 0.0L;
      for (std::size_t i = 0; i < n_; ++i) {
        long double s = b[i];
        const std::size_t j0 = i >= static_cast<std::size_t>(bw_) ? i - bw_ : 0;
        const std::size_t j1 = std::min(n_, i + bw_ + 1);
        for (std::size_t j = j0; j < j1; ++j) s -= orig_[i * w_ + (j + bw_ - i)] * x[j];
        r[i] = s;
        rmax = std::max(rmax, std::fabs(s));
      }
      if (rmax == 0.0L) break;
      auto d = substitute(r);
      for (std::size_t i = 0; i < n_; ++i) x[i] += d[i];
    }
    return x;
  }

 private:
  std::vector<long double> substitute(std::vector<long double> y) const {
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t j0 = i >= static_cast<std::size_t>(bw_) ? i - bw_ : 0;
      for (std::size_t j = j0; j < i; ++j) y[i] -= get(i, j) * y[j];
    }
    for (std::size_t ii = n_; ii-- > 0;) {
      const std::size_t j1 = std::min(n_, ii + bw_ + 1);
      for (std::size_t j = ii + 1; j < j1; ++j) y[ii] -= get(ii, j) * y[j];
      y[ii] /= get(ii, ii);
    }
    return y;
  }

  std::size_t n_;
  int bw_;
  std::size_t w_;
  std::vector<long double> a_;
  std::vector<long double> orig_;
};

double continuation(State R, State j, double g) {
  return std::pow(static_cast<double>(R - 1) / static_cast<double>(j), g);
}

double local_exponent(const JumpKernel& kernel, State x) {
  const double m1 = increment_moment(kernel, x, 1).value;
  const double m2 = increment_moment(kernel, x, 2).value;
  if (m2 <= 0.0) return 0.0;
  return (2.0 * static_cast<double>(x) * m1 - m2) / m2;
}

// Exponent of the power-law continuation used by the Reflected policy. The
// 0.75 safety factor keeps the continuation above the true decay at finite R.
double reflected_exponent(const JumpKernel& kernel, State R) {
  return 0.75 * std::max(0.0, local_exponent(kernel, R - 1));
}

std::vector<double> row_table(const JumpKernel& kernel, State n) {
  const int w = kernel.width();
  std::vector<double> t(static_cast<std::size_t>(n) * w);
  for (State x = 0; x < n; ++x) kernel.row_into(x, t.data() + x * w);
  return t;
}

void finish_solution(HittingSolution& s) {
  const State R = s.radius;
  s.degenerate = false;
  for (State x = 1; x < R; ++x)
    if (!(s.values[x] > 0.0)) s.degenerate = true;
  if (s.bracket) {
    State end = 1;
    while (end < R - s.max_jump && s.lower(end) > 0.0 && s.relative_width(end) < kReliableWidth)
      ++end;
    s.reliable_end = end;
  } else {
    s.reliable_end = 0;
  }
  const State top = s.bracket ? s.reliable_end - 1 : (R - s.max_jump) / 10;
  const State bottom = std::max<State>(2, top / 10);
  s.gamma_fit = (!s.degenerate && top >= 20) ? -loglog_slope(s, bottom, top)
                                               : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

std::string to_string(BoundaryPolicy p) {
  return p == BoundaryPolicy::Killed ? "Killed" : "Reflected";
}

double HittingSolution::extended(State x) const {
  if (x < 0) throw std::invalid_argument("negative state");
  if (x < radius) return values[x];
  if (policy == BoundaryPolicy::Killed) return 0.0;
  return values[radius - 1] * continuation(radius, x, boundary_exponent);
}

double HittingSolution::lower(State x) const {
  const double v = at(x);
  return bracket ? std::min(v, (*bracket)[x]) : v;
}

double HittingSolution::upper(State x) const {
  const double v = at(x);
  return bracket ? std::max(v, (*bracket)[x]) : v;
}

double HittingSolution::relative_width(State x) const {
  const double lo = lower(x);
  return lo > 0.0 ? (upper(x) - lo) / lo : std::numeric_limits<double>::infinity();
}

std::vector<double> solve_absorbing(const AbsorbingProblem& prob, double* max_residual) {
  const State lo = prob.lo, R = prob.R;
  const int B = prob.max_jump, w = 2 * B + 1;
  if (R <= lo) throw std::invalid_argument("empty window");
  const std::size_t n = static_cast<std::size_t>(R - lo);
  BandLU lu(n, B);
  std::vector<long double> b(n, 0.0L);
  std::vector<double> r(w);
  std::vector<double> rows(n * w);
  for (State j = lo; j < R; ++j) {
    const std::size_t i = static_cast<std::size_t>(j - lo);
    if (prob.absorbing(j)) {
      lu.at(i, i) = 1.0L;
      b[i] = prob.fixed(j);
      continue;
    }
    prob.row(j, rows.data() + i * w);
    const double* p = rows.data() + i * w;
    lu.at(i, i) += 1.0L;
    if (prob.source) b[i] = prob.source(j);
    for (int k = 0; k < w; ++k) {
      if (p[k] == 0.0) continue;
      const State t = j + k - B;
      if (t < lo) throw std::logic_error("transition leaves the solve window from below");
      if (t >= R) {
        if (prob.boundary_exponent >= 0.0)
          lu.at(i, n - 1) -= p[k] * continuation(R, t, prob.boundary_exponent);
      } else {
        lu.at(i, static_cast<std::size_t>(t - lo)) -= p[k];
      }
    }
  }
  lu.factor();
  const auto xs = lu.solve(b);
  std::vector<double> out(xs.begin(), xs.end());

  if (max_residual) {
    double worst = 0.0;
    for (State j = lo; j < R; ++j) {
      if (prob.absorbing(j)) continue;
      const std::size_t i = static_cast<std::size_t>(j - lo);
      const double* p = rows.data() + i * w;
      long double s = prob.source ? prob.source(j) : 0.0;
      for (int k = 0; k < w; ++k) {
        const State t = j + k - B;
        if (p[k] == 0.0) continue;
        if (t >= R) {
          if (prob.boundary_exponent >= 0.0)
            s += p[k] * out[n - 1] * continuation(R, t, prob.boundary_exponent);
        } else {
          s += p[k] * static_cast<long double>(out[t - lo]);
        }
      }
      worst = std::max(worst, static_cast<double>(std::fabs(out[i] - s)));
    }
    *max_residual = worst;
  }
  return out;
}

HittingSolution solve_return_prob(const JumpKernel& kernel, State R, BoundaryPolicy policy) {
  const int B = kernel.max_jump();
  if (R < 10 * B) throw std::invalid_argument("truncation radius must be >= 10 B");
  HittingSolution s;
  s.radius = R;
  s.max_jump = B;
  s.policy = policy;
  s.boundary_exponent = policy == BoundaryPolicy::Reflected ? reflected_exponent(kernel, R) : 0.0;
  AbsorbingProblem p;
  p.lo = 0;
  p.R = R;
  p.max_jump = B;
  p.row = [&kernel](State x, double* out) { kernel.row_into(x, out); };
  p.absorbing = [](State x) { return x == 0; };
  p.fixed = [](State) { return 1.0; };
  p.boundary_exponent = policy == BoundaryPolicy::Reflected ? s.boundary_exponent : -1.0;
  s.values = solve_absorbing(p, &s.max_residual);
  s.values[0] = 1.0;
  for (auto& v : s.values) v = std::clamp(v, 0.0, 1.0);
  finish_solution(s);
  return s;
}

HittingSolution solve_return_prob_bracketed(const JumpKernel& kernel, State R) {
  HittingSolution s = solve_return_prob(kernel, R, BoundaryPolicy::Killed);
  HittingSolution u = solve_return_prob(kernel, R, BoundaryPolicy::Reflected);
  s.bracket = std::move(u.values);
  s.bracket_exponent = u.boundary_exponent;
  s.max_residual = std::max(s.max_residual, u.max_residual);
  finish_solution(s);
  return s;
}

HittingSolution solve_return_prob_left_continuous(const JumpKernel& kernel, State R,
                                                  BoundaryPolicy policy) {
  const int B = kernel.max_jump();
  if (R < 10 * B) throw std::invalid_argument("truncation radius must be >= 10 B");
  const int w = kernel.width();
  const auto table = row_table(kernel, R + B);
  for (State x = 0; x < R + B; ++x)
    for (int z = -B; z < -1; ++z)
      if (table[x * w + z + B] > 0.0)
        throw std::invalid_argument("kernel is not left-continuous (mass below -1)");

  HittingSolution s;
  s.radius = R;
  s.max_jump = B;
  s.policy = policy;
  s.boundary_exponent = policy == BoundaryPolicy::Reflected ? reflected_exponent(kernel, R) : 0.0;

  // d(x) = P_x(tau_{x-1} < inf); descent from x needs each level above to be descended in turn.
  std::vector<long double> d(R + B + 1, 0.0L);
  for (State j = R; j <= R + B; ++j)
    d[j] = policy == BoundaryPolicy::Killed
               ? 0.0L
               : std::pow(static_cast<long double>(j - 1) / j, s.boundary_exponent);
  for (State x = R - 1; x >= 1; --x) {
    const double* p = table.data() + x * w;
    long double up = 0.0L, prod = 1.0L;
    for (int z = 1; z <= B; ++z) {
      prod *= d[x + z];
      up += p[z + B] * prod;
    }
    const long double denom = 1.0L - p[B] - up;
    d[x] = p[B - 1] == 0.0 ? 0.0L : (denom > 0.0L ? p[B - 1] / denom : 1.0L);
    if (d[x] > 1.0L) d[x] = 1.0L;
  }
  s.values.assign(R, 0.0);
  long double h = 1.0L;
  s.values[0] = 1.0;
  for (State x = 1; x < R; ++x) {
    h *= d[x];
    s.values[x] = static_cast<double>(h);
  }
  double worst = 0.0;
  for (State x = 1; x + B < R; ++x) {
    const double* p = table.data() + x * w;
    long double acc = 0.0L;
    for (int k = 0; k < w; ++k) acc += p[k] * s.values[x + k - B];
    worst = std::max(worst, static_cast<double>(std::fabs(acc - s.values[x])));
  }
  s.max_residual = worst;
  finish_solution(s);
  return s;
}

double loglog_slope(const HittingSolution& h, State lo, State hi) {
  if (lo < 1 || hi <= lo) throw std::invalid_argument("bad slope range");
  std::vector<State> xs;
  const int npts = 200;
  for (int i = 0; i <= npts; ++i) {
    const double t = static_cast<double>(i) / npts;
    const State x = static_cast<State>(
        std::llround(std::exp(std::log(double(lo)) + t * (std::log(double(hi)) - std::log(double(lo))))));
    if (xs.empty() || x != xs.back()) xs.push_back(x);
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(xs.size());
  for (State x : xs) {
    const double lx = std::log(double(x)), ly = std::log(h.at(x));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::optional<State> monotonicity_threshold(const HittingSolution& h, State lo, State hi) {
  if (hi >= h.radius) hi = h.radius - 1;
  if (hi <= lo) return std::nullopt;
  if (!(h.at(hi) < h.at(hi - 1))) return std::nullopt;
  State x = hi - 1;
  while (x > lo && h.at(x) < h.at(x - 1)) --x;
  return x;
}

EnvelopeReport envelope_flags(const HittingSolution& h, double gamma, double epsilon, State x_lo,
                              State x_hi) {
  if (x_lo < 2 || x_hi < x_lo || x_hi >= h.radius)
    throw std::invalid_argument("envelope range must lie in [2, R)");
  EnvelopeReport rep{gamma, epsilon, {}, std::nullopt};
  for (State x = x_lo; x <= x_hi; ++x) {
    const double lx = std::log(double(x));
    const double base = std::pow(double(x), -gamma);
    const double lo = base * std::pow(lx, -epsilon), up = base * std::pow(lx, epsilon);
    const double v = h.at(x);
    rep.rows.push_back({x, v, lo, up, lo <= v, v <= up});
  }
  std::size_t i = rep.rows.size();
  while (i > 0 && rep.rows[i - 1].lower_ok && rep.rows[i - 1].upper_ok) --i;
  if (i < rep.rows.size()) rep.threshold = rep.rows[i].x;
  return rep;
}

RatioDiagnostics ratio_diagnostics(const HittingSolution& h, const LampertiSpec& spec, State x_lo,
                                   State x_hi, double epsilon) {
  if (!h.bracket) throw std::domain_error("ratio diagnostics need a bracketed solution");
  const int B = h.max_jump;
  if (x_lo < std::max<State>(B, 2) || x_hi < x_lo)
    throw std::invalid_argument("bad x range");
  if (x_hi + B >= h.reliable_end)
    throw std::domain_error("x range overlaps the truncation contamination zone (reliable end " +
                            std::to_string(h.reliable_end) + ")");
  const double gc = critical_exponents(spec).gamma_c;
  RatioDiagnostics d;
  d.gamma_c = gc;
  d.x_lo = x_lo;
  d.x_hi = x_hi;
  const LyapunovFn f{gc, epsilon};
  for (State x = x_lo; x <= x_hi; ++x) {
    const double hx = h.at(x), xd = double(x);
    for (int z = -B; z <= B; ++z) {
      RatioRow r;
      r.x = x;
      r.z = z;
      r.ratio = h.at(x + z) / hx;
      r.predicted = 1.0 - gc * z / xd;
      r.scaled = z == 0 ? gc : xd * (1.0 - r.ratio) / z;
      r.deviation = r.scaled - gc;
      r.residual_times_x = xd * (r.ratio - r.predicted);
      r.r_nu = lyapunov_value(f, xd + z) / lyapunov_value(f, xd);
      d.rows.push_back(r);
    }
  }
  d.slope_hi = x_hi;
  d.slope_lo = std::max(x_lo, x_hi / 10);
  d.slope = d.slope_hi > d.slope_lo ? loglog_slope(h, d.slope_lo, d.slope_hi)
                                    : std::numeric_limits<double>::quiet_NaN();
  d.envelope = envelope_flags(h, gc, epsilon, x_lo, x_hi);
  return d;
}

ConditionedKernel build_conditioned_kernel(const JumpKernel& kernel, const HittingSolution& h) {
  const int B = kernel.max_jump(), w = kernel.width();
  const State R = h.radius;
  ConditionedKernel ck{kernel, {}, R, h.reliable_end, {}, {}};
  ck.h.resize(R + B);
  for (State j = 0; j < R + B; ++j) ck.h[j] = h.extended(j);
  ck.rows.resize(static_cast<std::size_t>(R) * w);
  ck.row_defect.resize(R);
  std::vector<double> p(w);
  for (State i = 0; i < R; ++i) {
    kernel.row_into(i, p.data());
    double* out = ck.rows.data() + i * w;
    if (i == 0) {
      std::copy(p.begin(), p.end(), out);
    } else {
      const double hi = ck.h[i];
      if (!(hi > 0.0))
        throw std::domain_error("h(" + std::to_string(i) + ") = 0: degenerate kernel upstream");
      for (int k = 0; k < w; ++k) {
        const State j = i + k - B;
        out[k] = p[k] == 0.0 ? 0.0 : p[k] * ck.h[j] / hi;
      }
    }
    long double s = 0.0L;
    for (int k = 0; k < w; ++k) s += out[k];
    ck.row_defect[i] = static_cast<double>(std::fabs(s - 1.0L));
  }
  return ck;
}

MomentProfile conditioned_moments(const ConditionedKernel& ck, State x, int k) {
  if (x < 0 || x >= ck.window_end) throw std::domain_error("state outside conditioned window");
  if (k < 1) throw std::invalid_argument("moment order must be >= 1");
  const int B = ck.max_jump();
  const double* r = ck.row(x);
  long double v = 0.0L;
  for (int i = 0; i <= 2 * B; ++i) v += std::pow(static_cast<long double>(i - B), k) * r[i];
  return {x, k, static_cast<double>(v), MomentTag::Conditioned};
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("support mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - q[i]);
  return 0.5 * s;
}

std::vector<EntranceDistribution> solve_interval_hitting(const JumpKernel& kernel, State a,
                                                         const std::vector<State>& starts,
                                                         State R) {
  const int B = kernel.max_jump();
  if (a < 0) throw std::invalid_argument("interval base must be >= 0");
  State top = a + B;
  for (State x : starts) {
    if (x < a) throw std::invalid_argument("start below the interval");
    top = std::max(top, x);
  }
  if (R <= top + B) throw std::invalid_argument("truncation radius too small for the starts");

  std::vector<std::vector<double>> absorb(B + 1);
  bool need_solve = false;
  for (State x : starts) need_solve = need_solve || x > a + B;
  if (need_solve) {
    for (int u = 0; u <= B; ++u) {
      AbsorbingProblem p;
      p.lo = a;
      p.R = R;
      p.max_jump = B;
      p.row = [&kernel](State x, double* out) { kernel.row_into(x, out); };
      p.absorbing = [a, B](State x) { return x <= a + B; };
      p.fixed = [a, u](State x) { return x == a + u ? 1.0 : 0.0; };
      absorb[u] = solve_absorbing(p);
    }
  }
  std::vector<EntranceDistribution> out;
  for (State x : starts) {
    EntranceDistribution e{a, B, x, std::vector<double>(B + 1, 0.0), 1.0};
    if (x <= a + B) {
      e.probs[x - a] = 1.0;
    } else {
      double g = 0.0;
      for (int u = 0; u <= B; ++u) {
        e.probs[u] = std::max(0.0, absorb[u][x - a]);
        g += e.probs[u];
      }
      e.reach_prob = g;
      if (g > 0.0)
        for (auto& v : e.probs) v /= g;
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

double normalised(double diff, std::initializer_list<double> sides) {
  double m = 1.0;
  for (double s : sides) m = std::max(m, std::fabs(s));
  return diff / m;
}

AbsorbingProblem killed_problem(const JumpKernel& kernel, State R) {
  AbsorbingProblem p;
  p.lo = 0;
  p.R = R;
  p.max_jump = kernel.max_jump();
  p.row = [&kernel](State x, double* out) { kernel.row_into(x, out); };
  return p;
}

}  // namespace

std::vector<ExactMoments> exact_first_moments(const JumpKernel& kernel, State R,
                                              const std::vector<std::pair<State, State>>& pairs) {
  const int B = kernel.max_jump(), w = kernel.width();
  if (R < 10 * B) throw std::invalid_argument("truncation radius must be >= 10 B");
  for (auto [x, y] : pairs)
    if (x < 0 || y < 0 || x >= R - B || y >= R - B)
      throw std::invalid_argument("states must lie below R - B");
  const auto table = row_table(kernel, R);
  auto step_sum = [&](State x, const std::vector<double>& f) {
    long double s = 0.0L;
    const double* p = table.data() + x * w;
    for (int k = 0; k < w; ++k) {
      const State t = x + k - B;
      if (p[k] != 0.0 && t < R) s += p[k] * static_cast<long double>(f[t]);
    }
    return static_cast<double>(s);
  };

  std::map<State, std::vector<std::size_t>> by_y;
  for (std::size_t i = 0; i < pairs.size(); ++i) by_y[pairs[i].second].push_back(i);
  std::vector<ExactMoments> out(pairs.size());

  for (const auto& [y, idx] : by_y) {
    auto phi_p = killed_problem(kernel, R);
    phi_p.absorbing = [y](State j) { return j == y; };
    phi_p.fixed = [](State) { return 1.0; };
    const auto phi = solve_absorbing(phi_p);
    auto psi_p = killed_problem(kernel, R);
    psi_p.absorbing = [y](State j) { return j == y; };
    psi_p.fixed = [](State) { return 0.0; };
    psi_p.source = [&phi](State j) { return phi[j]; };
    const auto psi = solve_absorbing(psi_p);
    std::vector<double> phi_psi(R);
    for (State j = 0; j < R; ++j) phi_psi[j] = phi[j] + psi[j];

    // U_1(., y) = sum_n n P^n e_y, iterated on the whole column at once.
    std::vector<double> v(R, 0.0), nv(R);
    std::vector<long double> U(R, 0.0L);
    v[y] = 1.0;
    int quiet = 0;
    long n = 0;
    const long cap = 10000000;
    while (quiet < 50) {
      if (++n > cap) throw std::runtime_error("U_1 series did not converge within 1e7 steps");
      for (State x = 0; x < R; ++x) nv[x] = step_sum(x, v);
      v.swap(nv);
      bool small = true;
      for (State x = 0; x < R; ++x) {
        const long double inc = static_cast<long double>(n) * v[x];
        U[x] += inc;
        if (inc > 1e-14L * U[x]) small = false;
      }
      quiet = small ? quiet + 1 : 0;
    }

    const double ret_y = step_sum(y, phi);
    const double escape = 1.0 - ret_y;
    const double T_y = step_sum(y, phi_psi);
    const double U_y = static_cast<double>(U[y]);
    for (std::size_t i : idx) {
      const State x = pairs[i].first;
      ExactMoments& m = out[i];
      m.x = x;
      m.y = y;
      m.radius = R;
      m.escape_y = escape;
      m.N = 1.0 / escape;
      m.T1 = step_sum(x, phi_psi);
      m.T1_y = T_y;
      m.hit = step_sum(x, phi);
      m.U1 = static_cast<double>(U[x]);
      m.U1_y = U_y;
      m.L1 = m.U1 * escape;
      m.iterations = n;
      if (x == y) {
        m.x_before_y = 0.0;
      } else {
        auto wp = killed_problem(kernel, R);
        wp.absorbing = [x, y](State j) { return j == x || j == y; };
        wp.fixed = [x](State j) { return j == x ? 1.0 : 0.0; };
        m.x_before_y = step_sum(y, solve_absorbing(wp));
      }
      const double lhs_t = m.T1 * m.x_before_y;
      const double sandwich = m.N * m.T1 + (1.0 + m.U1_y) * m.hit;
      const double identity = m.N * m.T1 + m.U1_y * m.hit;
      m.slack.t_ineq = normalised(m.T1_y - lhs_t, {m.T1_y, lhs_t});
      m.slack.last_exit_low = normalised(m.L1 - m.T1, {m.L1, m.T1});
      m.slack.last_exit_high = normalised(m.U1 - m.L1, {m.U1, m.L1});
      m.slack.ut_lower = normalised(m.U1 - sandwich, {m.U1, sandwich});
      m.slack.ut_upper = normalised(sandwich - m.U1, {m.U1, sandwich});
      m.slack.ut_identity = normalised(m.U1 - identity, {m.U1, identity});
      m.t_ineq_ok = m.slack.t_ineq >= -kMomentTolerance;
      m.last_exit_ok = m.slack.last_exit_low >= -kMomentTolerance &&
                       m.slack.last_exit_high >= -kMomentTolerance;
      m.ut_lower_ok = m.slack.ut_lower >= -kMomentTolerance;
      m.ut_upper_ok = m.slack.ut_upper >= -kMomentTolerance;
    }
  }
  return out;
}

ExactMoments exact_first_moments(const JumpKernel& kernel, State R, State x, State y) {
  return exact_first_moments(kernel, R, std::vector<std::pair<State, State>>{{x, y}}).front();
}

ConditioningCheck conditioning_identity_check(const JumpKernel& kernel, const HittingSolution& h,
                                              State x, State R) {
  if (x < 0 || x >= h.radius) throw std::invalid_argument("state outside the solution window");
  if (x >= R - kernel.max_jump()) throw std::invalid_argument("state too close to R");
  const HittingSolution hR = solve_return_prob(kernel, R, BoundaryPolicy::Killed);

  auto lp = killed_problem(kernel, R);
  lp.absorbing = [](State j) { return j == 0; };
  lp.fixed = [](State) { return 0.0; };
  lp.source = [&hR](State j) { return hR.values[j]; };
  const auto lhs = solve_absorbing(lp);

  const ConditionedKernel ck = build_conditioned_kernel(kernel, hR);
  const int w = kernel.width();
  AbsorbingProblem rp;
  rp.lo = 0;
  rp.R = R;
  rp.max_jump = kernel.max_jump();
  rp.row = [&ck, w](State i, double* out) { std::copy(ck.row(i), ck.row(i) + w, out); };
  rp.absorbing = [](State j) { return j == 0; };
  rp.fixed = [](State) { return 0.0; };
  rp.source = [](State) { return 1.0; };
  const auto mtilde = solve_absorbing(rp);

  ConditioningCheck c{x, R, lhs[x], h.at(x) * mtilde[x], 0.0};
  if (c.lhs != 0.0 || c.rhs != 0.0)
    c.residual = std::fabs(c.lhs - c.rhs) / std::max(std::fabs(c.lhs), std::fabs(c.rhs));
  return c;
}

}  // namespace lamperti
