#include "lamperti/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lamperti {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t trajectory_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(master) ^ stream) + index);
}

KernelSampler::KernelSampler(const JumpKernel& kernel, State table_size)
    : kernel_(&kernel), B_(kernel.max_jump()), w_(kernel.width()), table_size_(table_size) {
  cum_.resize(static_cast<std::size_t>(table_size_) * w_);
  std::vector<double> r(w_);
  for (State x = 0; x < table_size_; ++x) {
    kernel.row_into(x, r.data());
    double* c = cum_.data() + x * w_;
    int last = w_ - 1;
    while (last > 0 && r[last] == 0.0) --last;
    double s = 0.0;
    for (int k = 0; k < w_; ++k) {
      s += r[k];
      c[k] = k >= last ? std::numeric_limits<double>::infinity() : s;
    }
  }
}

int KernelSampler::step(State x, Rng& rng) const {
  const double u = rng.uniform();
  if (x < table_size_) {
    const double* c = cum_.data() + x * w_;
    int k = 0;
    while (u >= c[k]) ++k;
    return k - B_;
  }
  double r[64];
  std::vector<double> big;
  double* p = r;
  if (w_ > 64) {
    big.resize(w_);
    p = big.data();
  }
  kernel_->row_into(x, p);
  int last = w_ - 1;
  while (last > 0 && p[last] == 0.0) --last;
  double s = 0.0;
  for (int k = 0; k < last; ++k) {
    s += p[k];
    if (u < s) return k - B_;
  }
  return last - B_;
}

namespace {

// Runs one path from x0, calling on_visit(n) at every n >= 1 with X_n = 0.
template <typename OnVisit>
ReturnRecord run_path(const KernelSampler& s, State x0, Rng& rng, std::uint64_t n_cap,
                      State escape, OnVisit&& on_visit) {
  ReturnRecord rec;
  rec.start = x0;
  rec.horizon = n_cap;
  State x = x0;
  for (std::uint64_t n = 1; n <= n_cap; ++n) {
    x += s.step(x, rng);
    if (x == 0) {
      if (!rec.returned) rec.tau = n;
      rec.returned = true;
      rec.lambda = n;
      ++rec.visits;
      on_visit(n);
    } else if (escape > 0 && x >= escape) {
      rec.escaped = true;
      rec.sigma = n;
      return rec;
    }
  }
  rec.censored = true;
  return rec;
}

State table_limit(State escape, int B) { return std::max<State>(escape, 64) + 2 * B + 1; }

struct MomentAcc {
  std::uint64_t n = 0, returns = 0, escaped = 0, censored = 0;
  std::map<std::uint64_t, std::uint64_t> tau;
  std::vector<double> T, T2, L, L2, U, U2;
};

MomentAcc simulate_moments(const JumpKernel& kernel, State x0, const std::vector<double>& betas,
                           const McOptions& opt, std::uint64_t seed) {
  if (opt.n_traj < 1000) throw std::invalid_argument("n_traj must be >= 1000");
  if (x0 < 0) throw std::invalid_argument("negative start state");
  const State esc = opt.escape_level > 0 ? opt.escape_level : default_escape_level(opt.n_cap);
  if (x0 >= esc) throw std::invalid_argument("start state above the escape level");
  const KernelSampler sampler(kernel, table_limit(esc, kernel.max_jump()));
  const std::size_t nb = betas.size();

  auto blocks = run_blocks<MomentAcc>(
      opt.n_traj, 4096, opt.workers, [&](std::uint64_t, std::uint64_t i0, std::uint64_t i1) {
        MomentAcc a;
        a.T.assign(nb, 0.0);
        a.T2 = a.L = a.L2 = a.U = a.U2 = a.T;
        std::vector<double> u(nb);
        for (std::uint64_t i = i0; i < i1; ++i) {
          Rng rng(trajectory_seed(seed, 0, i));
          std::fill(u.begin(), u.end(), 0.0);
          auto rec = run_path(sampler, x0, rng, opt.n_cap, esc, [&](std::uint64_t n) {
            for (std::size_t b = 0; b < nb; ++b) u[b] += std::pow(double(n), betas[b]);
          });
          ++a.n;
          if (rec.censored) {
            ++a.censored;
            continue;
          }
          if (rec.escaped && !rec.returned) ++a.escaped;
          if (!rec.returned) continue;
          ++a.returns;
          ++a.tau[rec.tau];
          for (std::size_t b = 0; b < nb; ++b) {
            const double t = std::pow(double(rec.tau), betas[b]);
            const double l = std::pow(double(rec.lambda), betas[b]);
            a.T[b] += t;
            a.T2[b] += t * t;
            a.L[b] += l;
            a.L2[b] += l * l;
            a.U[b] += u[b];
            a.U2[b] += u[b] * u[b];
          }
        }
        return a;
      });

  MomentAcc tot;
  tot.T.assign(nb, 0.0);
  tot.T2 = tot.L = tot.L2 = tot.U = tot.U2 = tot.T;
  for (const auto& a : blocks) {
    tot.n += a.n;
    tot.returns += a.returns;
    tot.escaped += a.escaped;
    tot.censored += a.censored;
    for (auto [k, v] : a.tau) tot.tau[k] += v;
    for (std::size_t b = 0; b < nb; ++b) {
      tot.T[b] += a.T[b];
      tot.T2[b] += a.T2[b];
      tot.L[b] += a.L[b];
      tot.L2[b] += a.L2[b];
      tot.U[b] += a.U[b];
      tot.U2[b] += a.U2[b];
    }
  }
  return tot;
}

std::pair<double, double> mean_se(double sum, double sum2, double n) {
  if (n <= 0) return {0.0, 0.0};
  const double m = sum / n;
  const double var = std::max(0.0, sum2 / n - m * m);
  return {m, std::sqrt(var / n)};
}

std::uint64_t survivors_above(const std::map<std::uint64_t, std::uint64_t>& hist, std::uint64_t n) {
  std::uint64_t s = 0;
  for (auto it = hist.upper_bound(n); it != hist.end(); ++it) s += it->second;
  return s;
}

std::vector<std::uint64_t> log_grid(std::uint64_t lo, std::uint64_t hi, int per_decade) {
  std::vector<std::uint64_t> g;
  if (lo < 1) lo = 1;
  for (int k = 0;; ++k) {
    const double v = double(lo) * std::pow(10.0, double(k) / per_decade);
    const auto n = static_cast<std::uint64_t>(std::llround(v));
    if (n > hi) break;
    if (g.empty() || n != g.back()) g.push_back(n);
  }
  return g;
}

}  // namespace

State default_escape_level(std::uint64_t n_cap) {
  return static_cast<State>(std::ceil(5.0 * std::sqrt(double(n_cap) / 10.0)));
}

std::uint64_t usable_horizon(const McOptions& opt) {
  const State esc = opt.escape_level > 0 ? opt.escape_level : default_escape_level(opt.n_cap);
  const double r = double(esc) / 5.0;
  return std::min<std::uint64_t>(opt.n_cap / 10, static_cast<std::uint64_t>(r * r));
}

ReturnRecord sample_excursion(const JumpKernel& kernel, State x0, std::uint64_t seed,
                              std::uint64_t n_cap, State escape_level) {
  if (n_cap < 1) throw std::invalid_argument("n_cap must be >= 1");
  if (x0 < 0) throw std::invalid_argument("negative start state");
  const KernelSampler sampler(kernel, table_limit(std::max(escape_level, x0), kernel.max_jump()));
  Rng rng(seed);
  std::vector<std::uint64_t> times;
  auto rec = run_path(sampler, x0, rng, n_cap, escape_level,
                      [&](std::uint64_t n) { times.push_back(n); });
  rec.visit_times = std::move(times);
  return rec;
}

LinearFit ols(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("ols needs >= 2 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - f.intercept - f.slope * x[i];
    sse += e * e;
  }
  f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
  f.slope_se = n > 2 ? std::sqrt(sse / double(n - 2) / sxx) : 0.0;
  return f;
}

std::optional<std::pair<std::uint64_t, std::uint64_t>> tail_window(
    const std::map<std::uint64_t, std::uint64_t>& hist, std::uint64_t max_n, std::uint64_t floor) {
  std::optional<std::pair<std::uint64_t, std::uint64_t>> best;
  for (std::uint64_t n : log_grid(10, max_n, 20))
    if (survivors_above(hist, n) >= floor) best = std::make_pair(std::max<std::uint64_t>(1, n / 10), n);
  return best;
}

SaturationResult saturation_test(const std::map<std::uint64_t, std::uint64_t>& hist, double beta,
                                 std::uint64_t lo, std::uint64_t hi) {
  // E[tau^beta; tau <= n] grows like n^(beta - alpha) when P(tau > n) ~ n^-alpha
  std::vector<double> xs, ys;
  for (std::uint64_t n : log_grid(lo, hi, 20)) {
    const auto s = survivors_above(hist, n);
    if (s == 0) continue;
    xs.push_back(std::log(double(n)));
    ys.push_back(std::log(double(s)));
  }
  if (xs.size() < 3) throw std::runtime_error("too few populated points for the saturation test");
  const double alpha = -ols(xs, ys).slope;
  return {beta - alpha, beta < alpha};
}

std::optional<double> crossover(const std::vector<double>& betas, const std::vector<double>& slopes) {
  for (std::size_t k = 0; k + 1 < betas.size(); ++k)
    if (slopes[k] < 0.0 && slopes[k + 1] >= 0.0)
      return betas[k] + (betas[k + 1] - betas[k]) * (-slopes[k]) / (slopes[k + 1] - slopes[k]);
  return std::nullopt;
}

MomentEstimate estimate_conditional_moments(const JumpKernel& kernel, State x0, double beta,
                                            const McOptions& opt, std::uint64_t seed) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  const MomentAcc a = simulate_moments(kernel, x0, {beta}, opt, seed);
  if (a.returns < 100) throw std::runtime_error("insufficient uncensored returns");
  MomentEstimate m;
  m.beta = beta;
  m.n_traj = a.n;
  m.returns = a.returns;
  m.escaped = a.escaped;
  m.censored = a.censored;
  const double neff = double(a.n - a.censored);
  std::tie(m.T, m.T_se) = mean_se(a.T[0], a.T2[0], neff);
  std::tie(m.L, m.L_se) = mean_se(a.L[0], a.L2[0], neff);
  std::tie(m.U, m.U_se) = mean_se(a.U[0], a.U2[0], neff);
  m.h_hat = double(a.returns) / neff;
  m.h_se = std::sqrt(m.h_hat * (1.0 - m.h_hat) / neff);
  m.censor_rate = double(a.censored) / double(a.n);
  m.escape_rate = double(a.escaped) / double(a.n);
  m.tau_hist = a.tau;
  const std::uint64_t horizon = usable_horizon(opt);
  for (std::uint64_t n : log_grid(1, horizon, 20)) m.survival.push_back({n, survivors_above(a.tau, n)});

  if (auto w = tail_window(a.tau, horizon, opt.survivor_floor)) {
    m.window_lo = w->first;
    m.window_hi = w->second;
    std::vector<double> xs, ys;
    for (std::uint64_t n : log_grid(w->first, w->second, 20)) {
      const auto s = survivors_above(a.tau, n);
      if (s == 0) continue;
      xs.push_back(std::log(double(n)));
      ys.push_back(std::log(double(s) / double(a.returns)));
    }
    if (xs.size() >= 3) {
      const auto f = ols(xs, ys);
      m.tail_exponent = -f.slope;
      m.tail_ci = 1.96 * f.slope_se;
    }
  }
  return m;
}

EmpiricalClassification estimate_strong_transience(const JumpKernel& kernel, State x0,
                                                   const std::vector<double>& beta_grid,
                                                   const McOptions& opt, std::uint64_t seed) {
  if (beta_grid.empty()) throw std::invalid_argument("empty beta grid");
  for (double b : beta_grid)
    if (!(b > 0.0)) throw std::invalid_argument("beta must be positive");
  const MomentAcc a = simulate_moments(kernel, x0, beta_grid, opt, seed);
  if (a.returns < 100) throw std::runtime_error("insufficient uncensored returns");
  EmpiricalClassification ec;
  ec.n_traj = a.n;
  ec.returns = a.returns;
  ec.censored = a.censored;
  ec.escaped = a.escaped;
  ec.censor_rate = double(a.censored) / double(a.n);
  const auto w = tail_window(a.tau, usable_horizon(opt), opt.survivor_floor);
  if (!w) throw std::runtime_error("no usable tail window");
  ec.window_lo = w->first;
  ec.window_hi = w->second;
  const double neff = double(a.n - a.censored);
  std::vector<double> slopes;
  for (std::size_t b = 0; b < beta_grid.size(); ++b) {
    MomentRow r;
    r.beta = beta_grid[b];
    std::tie(r.T, r.T_se) = mean_se(a.T[b], a.T2[b], neff);
    std::tie(r.L, r.L_se) = mean_se(a.L[b], a.L2[b], neff);
    std::tie(r.U, r.U_se) = mean_se(a.U[b], a.U2[b], neff);
    const auto sat = saturation_test(a.tau, r.beta, w->first, w->second);
    r.growth_slope = sat.slope;
    r.saturates = sat.saturates;
    r.ordering_ok = r.T <= r.L + 2.0 * std::hypot(r.T_se, r.L_se) &&
                    r.L <= r.U + 2.0 * std::hypot(r.L_se, r.U_se);
    slopes.push_back(sat.slope);
    ec.rows.push_back(r);
  }
  ec.beta_crit = crossover(beta_grid, slopes);
  return ec;
}

CouplingTable coupling_experiment(const JumpKernel& kernel, State a,
                                  const std::vector<std::uint64_t>& separations,
                                  std::uint64_t n_entries, std::uint64_t seed,
                                  const CouplingOptions& opt) {
  if (separations.empty()) throw std::invalid_argument("no separations");
  if (n_entries == 0) throw std::invalid_argument("n_entries must be positive");
  const int B = kernel.max_jump();
  auto seps = separations;
  std::sort(seps.begin(), seps.end());
  if (seps.front() == 0) throw std::invalid_argument("starts must lie above a + B");

  CouplingTable table{a, B, {}, 0, 0, 0, false, 0};
  std::uint64_t total_traj = 0, total_cens = 0;
  for (std::uint64_t ell : seps) {
    const State start = a + B + static_cast<State>(ell);
    const State esc = std::max<State>(start + 30, static_cast<State>(std::ceil(opt.escape_factor * start)));
    const KernelSampler sampler(kernel, table_limit(esc, B));
    struct Acc {
      std::vector<std::uint64_t> hits;
      std::uint64_t entries = 0, escaped = 0, censored = 0, n = 0;
    };
    CouplingRow row{ell, start, {}, 0, 0, 0, 0, 0.0, 0.0};
    std::vector<std::uint64_t> hits(B + 1, 0);
    std::uint64_t next = 0;
    const std::uint64_t max_traj = std::max<std::uint64_t>(n_entries * 1000, 1000000);
    while (row.entries < n_entries && next < max_traj) {
      const std::uint64_t base = next;
      auto blocks = run_blocks<Acc>(opt.round, 256, opt.workers,
                                    [&](std::uint64_t, std::uint64_t i0, std::uint64_t i1) {
        Acc acc;
        acc.hits.assign(B + 1, 0);
        for (std::uint64_t i = i0; i < i1; ++i) {
          Rng rng(trajectory_seed(seed, ell, base + i));
          State x = start;
          ++acc.n;
          bool done = false;
          for (std::uint64_t n = 1; n <= opt.n_cap; ++n) {
            x += sampler.step(x, rng);
            if (x <= a + B) {
              ++acc.hits[x - a];
              ++acc.entries;
              done = true;
              break;
            }
            if (x >= esc) {
              ++acc.escaped;
              done = true;
              break;
            }
          }
          if (!done) ++acc.censored;
        }
        return acc;
      });
      for (const auto& b : blocks) {
        for (int u = 0; u <= B; ++u) hits[u] += b.hits[u];
        row.entries += b.entries;
        row.escaped += b.escaped;
        row.censored += b.censored;
        row.trajectories += b.n;
      }
      next += opt.round;
    }
    row.law.resize(B + 1);
    for (int u = 0; u <= B; ++u)
      row.law[u] = row.entries ? double(hits[u]) / double(row.entries) : 0.0;
    total_traj += row.trajectories;
    total_cens += row.censored;
    if (row.censored * 2 > row.trajectories || row.entries < n_entries) table.unreliable = true;
    table.rows.push_back(std::move(row));
  }
  table.censor_rate = total_traj ? double(total_cens) / double(total_traj) : 0.0;

  const auto& ref = table.rows.back().law;
  std::vector<double> xs, ys;
  for (auto& r : table.rows) {
    double s = 0.0;
    for (int u = 0; u <= B; ++u) s += std::fabs(r.law[u] - ref[u]);
    r.tv = 0.5 * s;
    if (&r != &table.rows.back() && r.tv > 0.0) {
      xs.push_back(double(r.ell));
      ys.push_back(std::log(r.tv));
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (xs.size() >= 2) {
    const auto f = ols(xs, ys);
    table.b_hat = -f.slope;
    table.log_c = f.intercept;
    table.r2 = f.r2;
    for (auto& r : table.rows) r.fit = std::exp(table.log_c - table.b_hat * double(r.ell));
  } else {
    table.b_hat = table.log_c = table.r2 = nan;
    for (auto& r : table.rows) r.fit = nan;
  }
  return table;
}

namespace {
double local_gamma(const JumpKernel& kernel, State x) {
  const double m1 = increment_moment(kernel, x, 1).value;
  const double m2 = increment_moment(kernel, x, 2).value;
  return m2 > 0.0 ? (2.0 * double(x) * m1 - m2) / m2 : 0.0;
}
}  // namespace

RenewalResult estimate_renewal_function(const JumpKernel& kernel, const std::vector<State>& x_grid,
                                        std::uint64_t n_traj, std::uint64_t seed, unsigned workers,
                                        double safety, std::uint64_t n_cap) {
  if (x_grid.empty()) throw std::invalid_argument("empty x grid");
  if (n_traj == 0) throw std::invalid_argument("n_traj must be positive");
  auto grid = x_grid;
  std::sort(grid.begin(), grid.end());
  if (grid.front() < 0) throw std::invalid_argument("negative grid point");
  const State xmax = grid.back();
  if (local_gamma(kernel, std::max<State>(10 * xmax, 1000)) <= 0.0)
    throw std::invalid_argument("renewal function needs a transient kernel (2c > s2)");
  const State level = static_cast<State>(std::ceil(safety * double(std::max<State>(xmax, 1))));
  const KernelSampler sampler(kernel, table_limit(level, kernel.max_jump()));
  const std::size_t ng = grid.size();

  struct Acc {
    std::vector<double> s, s2;
    std::uint64_t n = 0, censored = 0;
  };
  auto blocks = run_blocks<Acc>(n_traj, 64, workers, [&](std::uint64_t, std::uint64_t i0, std::uint64_t i1) {
    Acc acc;
    acc.s.assign(ng, 0.0);
    acc.s2.assign(ng, 0.0);
    std::vector<std::uint64_t> occ(xmax + 1);
    for (std::uint64_t i = i0; i < i1; ++i) {
      Rng rng(trajectory_seed(seed, 0, i));
      std::fill(occ.begin(), occ.end(), 0);
      State x = 0;
      bool out = false;
      ++occ[0];
      for (std::uint64_t n = 1; n <= n_cap; ++n) {
        x += sampler.step(x, rng);
        if (x > level) {
          out = true;
          break;
        }
        if (x <= xmax) ++occ[x];
      }
      ++acc.n;
      if (!out) {
        ++acc.censored;
        continue;
      }
      std::uint64_t cum = 0;
      State k = 0;
      for (std::size_t g = 0; g < ng; ++g) {
        for (; k <= grid[g]; ++k) cum += occ[k];
        acc.s[g] += double(cum);
        acc.s2[g] += double(cum) * double(cum);
      }
    }
    return acc;
  });
  Acc tot;
  tot.s.assign(ng, 0.0);
  tot.s2.assign(ng, 0.0);
  for (const auto& b : blocks) {
    tot.n += b.n;
    tot.censored += b.censored;
    for (std::size_t g = 0; g < ng; ++g) {
      tot.s[g] += b.s[g];
      tot.s2[g] += b.s2[g];
    }
  }
  RenewalResult res;
  res.censor_rate = double(tot.censored) / double(tot.n);
  res.flagged = res.censor_rate > 0.05;
  const double neff = double(tot.n - tot.censored);
  for (std::size_t g = 0; g < ng; ++g) {
    auto [m, se] = mean_se(tot.s[g], tot.s2[g], neff);
    const double x = double(grid[g]);
    res.rows.push_back({grid[g], m, se, x > 0 ? m / (x * x) : std::numeric_limits<double>::quiet_NaN()});
  }
  return res;
}

}  // namespace lamperti
