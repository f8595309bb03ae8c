#include "lamperti/extensions.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <boost/random/binomial_distribution.hpp>
#include <boost/random/negative_binomial_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

namespace lamperti {

namespace {

int matrix_rank(std::vector<std::vector<double>> a) {
  int rank = 0;
  const int cols = a.empty() ? 0 : static_cast<int>(a[0].size());
  for (int c = 0; c < cols && rank < static_cast<int>(a.size()); ++c) {
    int piv = rank;
    for (int r = rank; r < static_cast<int>(a.size()); ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    if (std::fabs(a[piv][c]) < 1e-12) continue;
    std::swap(a[piv], a[rank]);
    for (int r = 0; r < static_cast<int>(a.size()); ++r) {
      if (r == rank) continue;
      const double f = a[r][c] / a[rank][c];
      for (int k = c; k < cols; ++k) a[r][k] -= f * a[rank][k];
    }
    ++rank;
  }
  return rank;
}

// Unbiased integer in [0, n) from 32-bit halves of the generator output.
class SmallChoice {
 public:
  explicit SmallChoice(std::uint32_t n) : n_(n), threshold_((0u - n) % n) {}
  std::uint32_t operator()(Rng& rng) {
    for (;;) {
      if (!have_) {
        buf_ = rng();
        have_ = 2;
      }
      const auto r = static_cast<std::uint32_t>(buf_);
      buf_ >>= 32;
      --have_;
      const std::uint64_t m = std::uint64_t(r) * n_;
      if (static_cast<std::uint32_t>(m) >= threshold_) return static_cast<std::uint32_t>(m >> 32);
    }
  }

 private:
  std::uint32_t n_, threshold_;
  std::uint64_t buf_ = 0;
  int have_ = 0;
};

double radical_inverse(std::uint64_t i, unsigned base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19};

}  // namespace

RWalkModel make_rwalk(int d, std::vector<std::vector<int>> steps, std::vector<double> probs) {
  if (d < 1) throw std::invalid_argument("dimension must be >= 1");
  if (steps.empty() || steps.size() != probs.size()) throw std::invalid_argument("steps/probs mismatch");
  double s = 0.0;
  std::vector<std::vector<double>> support;
  bool odd = true;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (static_cast<int>(steps[k].size()) != d) throw std::invalid_argument("step of wrong dimension");
    if (probs[k] < 0.0) throw std::invalid_argument("negative probability");
    s += probs[k];
    if (probs[k] > 0.0) {
      support.emplace_back(steps[k].begin(), steps[k].end());
      int sum = 0;
      for (int v : steps[k]) sum += v;
      if (sum % 2 == 0) odd = false;
    }
  }
  if (std::fabs(s - 1.0) > 1e-12) throw std::invalid_argument("increment law does not sum to 1");
  if (matrix_rank(support) != d) throw std::invalid_argument("increment law is not genuinely d-dimensional");
  RWalkModel m;
  m.d = d;
  m.steps = std::move(steps);
  m.probs = std::move(probs);
  m.period = odd ? 2 : 1;
  return m;
}

RWalkModel simple_random_walk(int d) {
  std::vector<std::vector<int>> steps;
  std::vector<double> probs;
  for (int j = 0; j < d; ++j)
    for (int sgn : {1, -1}) {
      std::vector<int> e(d, 0);
      e[j] = sgn;
      steps.push_back(e);
      probs.push_back(1.0 / (2.0 * d));
    }
  auto m = make_rwalk(d, std::move(steps), std::move(probs));
  m.simple = true;
  return m;
}

double chung_fuchs_integrand(const RWalkModel& m, double beta, double t, const std::vector<double>& u) {
  std::complex<double> phi;
  if (m.simple) {
    double s = 0.0;
    for (double v : u) s += std::cos(v);
    phi = s / m.d;
  } else {
    for (std::size_t k = 0; k < m.steps.size(); ++k) {
      double a = 0.0;
      for (int j = 0; j < m.d; ++j) a += u[j] * m.steps[k][j];
      phi += m.probs[k] * std::complex<double>(std::cos(a), std::sin(a));
    }
  }
  const std::complex<double> w = 1.0 - t * phi;
  const double e = -(1.0 + beta);
  return std::pow(std::abs(w), e) * std::cos(e * std::arg(w));
}

IntegralEstimate chung_fuchs_integral(const RWalkModel& m, double beta, double t, std::uint64_t seed,
                                      const QmcOptions& opt) {
  if (!(t >= 0.0 && t < 1.0)) throw std::invalid_argument("t must lie in [0, 1)");
  if (m.d > 8) throw std::invalid_argument("dimension too large for the Halton sequence");
  if (opt.replicates < 2) throw std::invalid_argument("need at least two replicates");
  const double vol = std::pow(2.0 * std::numbers::pi, m.d);
  if (t == 0.0) return {t, vol, 0.0};
  const int d = m.d;
  auto reps = run_blocks<double>(opt.replicates, 1, opt.workers, [&](std::uint64_t r, std::uint64_t, std::uint64_t) {
    Rng rng(trajectory_seed(seed, 1, r));
    std::vector<double> shift(d), u(d);
    for (auto& s : shift) s = rng.uniform();
    long double acc = 0.0L;
    for (std::uint64_t i = 1; i <= opt.points; ++i) {
      double jac = 1.0;
      for (int j = 0; j < d; ++j) {
        double w = radical_inverse(i, kPrimes[j]) + shift[j];
        if (w >= 1.0) w -= 1.0;
        const double v = 2.0 * w - 1.0;
        u[j] = std::numbers::pi * v * std::fabs(v);
        jac *= 4.0 * std::numbers::pi * std::fabs(v);
      }
      if (jac == 0.0) continue;
      acc += chung_fuchs_integrand(m, beta, t, u) * jac;
    }
    return static_cast<double>(acc / opt.points);
  });
  double mean = 0.0;
  for (double v : reps) mean += v;
  mean /= reps.size();
  double var = 0.0;
  for (double v : reps) var += (v - mean) * (v - mean);
  var /= (reps.size() - 1);
  return {t, mean, std::sqrt(var / reps.size())};
}

GrowthVerdict increment_growth(const std::vector<double>& values) {
  if (values.size() < 3) throw std::invalid_argument("need at least three values");
  GrowthVerdict g;
  for (std::size_t k = 1; k < values.size(); ++k)
    if (!(values[k] > values[k - 1])) g.monotone = false;
  g.first_increment = values[1] - values[0];
  g.last_increment = values.back() - values[values.size() - 2];
  if (g.first_increment != 0.0)
    g.ratio = g.last_increment / g.first_increment;
  else
    g.ratio = g.last_increment == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  g.saturates = g.ratio <= kSaturationRatio;
  return g;
}

std::vector<double> default_t_grid() { return {0.9, 0.99, 0.999, 0.9999}; }

ChungFuchsTable chung_fuchs_table(const RWalkModel& m, double beta, const std::vector<double>& t_grid,
                                  std::uint64_t seed, const QmcOptions& opt) {
  ChungFuchsTable tab;
  tab.beta = beta;
  std::vector<double> vals;
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    tab.rows.push_back(chung_fuchs_integral(m, beta, t_grid[k], seed, opt));
    vals.push_back(tab.rows.back().value);
  }
  tab.growth = increment_growth(vals);
  return tab;
}

ReturnMassResult rwalk_return_mass(const RWalkModel& m, std::uint64_t n_max, std::uint64_t n_traj,
                                   std::uint64_t seed, double beta, unsigned workers) {
  if (n_max < 2) throw std::invalid_argument("n_max must be >= 2");
  if (n_traj < 1) throw std::invalid_argument("n_traj must be >= 1");
  const int d = m.d;
  std::vector<double> cum(m.probs.size());
  std::partial_sum(m.probs.begin(), m.probs.end(), cum.begin());
  cum.back() = 2.0;

  using Counts = std::vector<std::uint64_t>;
  auto blocks = run_blocks<Counts>(n_traj, 1024, workers, [&](std::uint64_t, std::uint64_t i0, std::uint64_t i1) {
    Counts c(n_max + 1, 0);
    std::vector<long> s(d);
    SmallChoice pick(static_cast<std::uint32_t>(2 * d));
    for (std::uint64_t i = i0; i < i1; ++i) {
      Rng rng(trajectory_seed(seed, 2, i));
      std::fill(s.begin(), s.end(), 0);
      int nonzero = 0;
      for (std::uint64_t n = 1; n <= n_max; ++n) {
        if (m.simple) {
          const std::uint32_t k = pick(rng);
          long& v = s[k >> 1];
          const long before = v;
          v += (k & 1) ? -1 : 1;
          nonzero += (v != 0) - (before != 0);
        } else {
          const double u = rng.uniform();
          std::size_t k = 0;
          while (u >= cum[k]) ++k;
          for (int j = 0; j < d; ++j) {
            const long before = s[j];
            s[j] += m.steps[k][j];
            nonzero += (s[j] != 0) - (before != 0);
          }
        }
        if (nonzero == 0) ++c[n];
      }
    }
    return c;
  });
  Counts tot(n_max + 1, 0);
  for (const auto& b : blocks)
    for (std::uint64_t n = 0; n <= n_max; ++n) tot[n] += b[n];

  ReturnMassResult res;
  res.beta = beta;
  const double N = static_cast<double>(n_traj);
  bool floor_warned = false;
  for (std::uint64_t n = 1; n <= n_max; ++n) {
    double p = double(tot[n]) / N;
    if (m.period == 2 && n % 2 == 1) p = 0.0;  // parity forbids odd returns
    res.rows.push_back({n, p, std::sqrt(p * (1.0 - p) / N)});
    if (!floor_warned && !(m.period == 2 && n % 2 == 1) && p * N < 10.0) {
      res.warnings.push_back("statistical floor: P(S_n = 0) n_traj < 10 from n = " + std::to_string(n));
      floor_warned = true;
    }
  }

  // partial sums on a log grid
  long double acc = 0.0L;
  std::vector<std::uint64_t> marks;
  for (int k = 0;; ++k) {
    const auto v = static_cast<std::uint64_t>(std::llround(std::pow(10.0, k / 10.0)));
    if (v > n_max) break;
    if (marks.empty() || v != marks.back()) marks.push_back(v);
  }
  if (marks.back() != n_max) marks.push_back(n_max);
  std::size_t next = 0;
  for (std::uint64_t n = 1; n <= n_max && next < marks.size(); ++n) {
    acc += std::pow(double(n), beta) * res.rows[n - 1].phat;
    if (n == marks[next]) {
      res.partial_sums.emplace_back(n, static_cast<double>(acc));
      ++next;
    }
  }
  std::vector<double> xs, ys;
  for (auto [n, v] : res.partial_sums)
    if (n * 10 >= n_max && v > 0.0) {
      xs.push_back(std::log(double(n)));
      ys.push_back(std::log(v));
    }
  if (xs.size() >= 2) res.growth_exponent = ols(xs, ys).slope;

  auto sum_at = [&](std::uint64_t N) {
    long double a = 0.0L;
    for (std::uint64_t n = 1; n <= std::min(N, n_max); ++n) a += std::pow(double(n), beta) * res.rows[n - 1].phat;
    return static_cast<double>(a);
  };
  std::vector<double> decades;
  for (std::uint64_t N = n_max; N >= 1 && decades.size() < 3; N /= 10) decades.insert(decades.begin(), sum_at(N));
  if (decades.size() == 3) res.growth = increment_growth(decades);

  // local-limit slope: log-binned mean return probability at admissible times
  xs.clear();
  ys.clear();
  for (std::uint64_t b0 = 10; b0 <= n_max;) {
    const std::uint64_t b1 = std::min<std::uint64_t>(n_max + 1, std::max<std::uint64_t>(b0 + 2, b0 * 5 / 4));
    std::uint64_t hits = 0, times = 0;
    long double logsum = 0.0L;
    for (std::uint64_t n = b0; n < b1; ++n) {
      if (m.period == 2 && n % 2 == 1) continue;
      hits += tot[n];
      ++times;
      logsum += std::log(double(n));
    }
    if (times > 0 && hits >= 100) {
      xs.push_back(static_cast<double>(logsum / times));
      ys.push_back(std::log(double(hits) / (N * times)));
    }
    b0 = b1;
  }
  if (xs.size() >= 2) res.llt_slope = ols(xs, ys).slope;
  res.llt_predicted = -0.5 * d;
  return res;
}

std::vector<NormDriftRow> norm_drift_check(const RWalkModel& m, const std::vector<double>& radii,
                                           std::uint64_t n_samples, std::uint64_t seed) {
  if (!m.simple) throw std::invalid_argument("norm_drift_check needs the simple random walk");
  const int d = m.d;
  std::vector<NormDriftRow> out;
  for (double r : radii) {
    if (!(r >= 1.0)) throw std::invalid_argument("radius must be >= 1");
    long double sum_drift = 0.0L, sum_sq = 0.0L;
    std::uint64_t count = 0;
    auto visit = [&](const std::vector<long>& z) {
      long double n2 = 0.0L;
      for (long v : z) n2 += static_cast<long double>(v) * v;
      const long double nz = std::sqrt(n2);
      long double dsum = 0.0L, qsum = 0.0L;
      for (int j = 0; j < d; ++j)
        for (int sgn : {1, -1}) {
          const long double m2 = n2 + 2.0L * sgn * z[j] + 1.0L;
          const long double delta = (m2 - n2) / (std::sqrt(m2) + nz);
          dsum += delta;
          qsum += delta * delta;
        }
      sum_drift += nz * dsum / (2 * d);
      sum_sq += qsum / (2 * d);
      ++count;
    };
    const double lo = r - 0.5, hi = r + 0.5;
    const long R = static_cast<long>(std::ceil(hi));
    if (n_samples == 0) {
      if (d > 3) throw std::invalid_argument("shell enumeration only for d <= 3; pass n_samples");
      std::vector<long> z(d, 0);
      auto in_shell = [&](long double n2) { return n2 >= (long double)lo * lo && n2 < (long double)hi * hi; };
      if (d == 1) {
        for (long a = -R; a <= R; ++a) {
          z[0] = a;
          if (in_shell((long double)a * a)) visit(z);
        }
      } else if (d == 2) {
        for (long a = -R; a <= R; ++a)
          for (long b = -R; b <= R; ++b) {
            z[0] = a;
            z[1] = b;
            if (in_shell((long double)a * a + (long double)b * b)) visit(z);
          }
      } else {
        for (long a = -R; a <= R; ++a)
          for (long b = -R; b <= R; ++b) {
            const long double ab = (long double)a * a + (long double)b * b;
            if (ab >= (long double)hi * hi) continue;
            for (long c = -R; c <= R; ++c) {
              z[0] = a;
              z[1] = b;
              z[2] = c;
              if (in_shell(ab + (long double)c * c)) visit(z);
            }
          }
      }
    } else {
      Rng rng(trajectory_seed(seed, 3, static_cast<std::uint64_t>(r * 1000)));
      std::normal_distribution<double> g;
      std::vector<long> z(d);
      std::vector<double> dir(d);
      while (count < n_samples) {
        double nn = 0.0;
        for (auto& v : dir) {
          v = g(rng);
          nn += v * v;
        }
        nn = std::sqrt(nn);
        const double rad = lo + (hi - lo) * rng.uniform();
        long double n2 = 0.0L;
        for (int j = 0; j < d; ++j) {
          z[j] = std::lround(dir[j] / nn * rad);
          n2 += (long double)z[j] * z[j];
        }
        if (n2 >= (long double)lo * lo && n2 < (long double)hi * hi) visit(z);
      }
    }
    NormDriftRow row;
    row.r = r;
    row.points = count;
    row.r_drift = count ? static_cast<double>(sum_drift / count) : 0.0;
    row.sq_change = count ? static_cast<double>(sum_sq / count) : 0.0;
    row.drift_target = (d - 1.0) / (2.0 * d);
    row.sq_target = 1.0 / d;
    out.push_back(row);
  }
  return out;
}

// ---- branching ----

double offspring_mean(const BranchingModel& m) {
  switch (m.offspring) {
    case OffspringKind::ShiftedGeometric:
    case OffspringKind::Poisson:
    case OffspringKind::Deterministic:
      return 1.0;
    case OffspringKind::Finite: {
      double s = 0.0;
      for (std::size_t k = 0; k < m.offspring_probs.size(); ++k) s += k * m.offspring_probs[k];
      return s;
    }
  }
  return 0.0;
}

BranchingModel make_branching(OffspringKind kind, std::vector<std::pair<int, double>> migration,
                              std::vector<double> offspring_probs) {
  BranchingModel m;
  m.offspring = kind;
  if (migration.empty()) throw std::invalid_argument("empty migration law");
  double s = 0.0;
  for (auto [v, p] : migration) {
    if (p < 0.0) throw std::invalid_argument("negative migration probability");
    s += p;
    m.theta += v * p;
    m.migration_m2 += double(v) * v * p;
  }
  if (std::fabs(s - 1.0) > 1e-12) throw std::invalid_argument("migration law does not sum to 1");
  m.migration = std::move(migration);
  switch (kind) {
    case OffspringKind::ShiftedGeometric: m.sigma2 = 2.0; break;
    case OffspringKind::Poisson: m.sigma2 = 1.0; break;
    case OffspringKind::Deterministic: m.sigma2 = 0.0; break;
    case OffspringKind::Finite: {
      double t = 0.0, m1 = 0.0, m2 = 0.0;
      for (std::size_t k = 0; k < offspring_probs.size(); ++k) {
        if (offspring_probs[k] < 0.0) throw std::invalid_argument("negative offspring probability");
        t += offspring_probs[k];
        m1 += k * offspring_probs[k];
        m2 += double(k) * k * offspring_probs[k];
      }
      if (std::fabs(t - 1.0) > 1e-12) throw std::invalid_argument("offspring law does not sum to 1");
      m.offspring_probs = std::move(offspring_probs);
      m.sigma2 = m2 - m1 * m1;
      break;
    }
  }
  return m;
}

std::vector<std::pair<int, double>> two_point_migration(double theta) {
  const double hi = 2.0 * theta + 1.0;
  if (std::fabs(hi - std::round(hi)) > 1e-12 || hi < -1.0)
    throw std::invalid_argument("two-point migration needs 2 theta + 1 to be an integer >= -1");
  return {{-1, 0.5}, {static_cast<int>(std::lround(hi)), 0.5}};
}

double aggregate_offspring_mean(const BranchingModel& m, std::uint64_t w) {
  switch (m.offspring) {
    case OffspringKind::ShiftedGeometric: {
      boost::random::negative_binomial_distribution<std::uint64_t, double> nb(w, 0.5);
      return double(nb.k()) * (1.0 - nb.p()) / nb.p();
    }
    case OffspringKind::Poisson: {
      boost::random::poisson_distribution<std::uint64_t, double> po{double(w)};
      return po.mean();
    }
    case OffspringKind::Deterministic:
      return double(w);
    case OffspringKind::Finite: {
      // sequential binomial splitting: E[N_k] = remaining * p_k / tail_k telescopes to w p_k
      double remaining = double(w), tail = 1.0, mean = 0.0;
      for (std::size_t k = 0; k < m.offspring_probs.size(); ++k) {
        const double p = tail > 0.0 ? std::min(1.0, m.offspring_probs[k] / tail) : 0.0;
        const double nk = remaining * p;
        mean += k * nk;
        remaining -= nk;
        tail -= m.offspring_probs[k];
      }
      return mean;
    }
  }
  return 0.0;
}

std::uint64_t sample_offspring_sum(const BranchingModel& m, std::uint64_t w, Rng& rng) {
  if (w == 0) return 0;
  switch (m.offspring) {
    case OffspringKind::ShiftedGeometric: {
      boost::random::negative_binomial_distribution<std::uint64_t, double> nb(w, 0.5);
      return nb(rng);
    }
    case OffspringKind::Poisson: {
      boost::random::poisson_distribution<std::uint64_t, double> po{double(w)};
      return po(rng);
    }
    case OffspringKind::Deterministic:
      return w;
    case OffspringKind::Finite: {
      std::uint64_t remaining = w, total = 0;
      double tail = 1.0;
      for (std::size_t k = 0; k < m.offspring_probs.size() && remaining > 0; ++k) {
        const double pk = m.offspring_probs[k];
        std::uint64_t nk;
        if (k + 1 == m.offspring_probs.size() || pk >= tail) {
          nk = remaining;
        } else {
          boost::random::binomial_distribution<std::int64_t, double> bin(
              static_cast<std::int64_t>(remaining), std::clamp(pk / tail, 0.0, 1.0));
          nk = static_cast<std::uint64_t>(bin(rng));
        }
        total += k * nk;
        remaining -= nk;
        tail -= pk;
      }
      return total;
    }
  }
  return 0;
}

int sample_migration(const BranchingModel& m, Rng& rng) {
  if (m.migration.size() == 1) return m.migration[0].first;
  double u = rng.uniform();
  for (std::size_t k = 0; k + 1 < m.migration.size(); ++k) {
    if (u < m.migration[k].second) return m.migration[k].first;
    u -= m.migration[k].second;
  }
  return m.migration.back().first;
}

namespace {
std::uint64_t branching_step(const BranchingModel& m, std::uint64_t w, Rng& rng) {
  const auto s = static_cast<std::int64_t>(sample_offspring_sum(m, w, rng));
  const std::int64_t next = s + sample_migration(m, rng);
  return next > 0 ? static_cast<std::uint64_t>(next) : 0;
}
}  // namespace

BranchingPath simulate_branching(const BranchingModel& m, std::uint64_t w0, std::uint64_t horizon,
                                 std::uint64_t seed, bool keep_path) {
  if (w0 < 1) throw std::invalid_argument("w0 must be >= 1");
  BranchingPath p;
  Rng rng(seed);
  std::uint64_t w = w0;
  if (keep_path) p.w.push_back(w);
  for (std::uint64_t n = 1; n <= horizon; ++n) {
    w = branching_step(m, w, rng);
    if (keep_path) p.w.push_back(w);
    if (w == 0) {
      p.tau_e = n;
      return p;
    }
    if (double(w) > kPopulationGuard) {
      p.overflow = true;
      p.censored = true;
      return p;
    }
  }
  p.censored = true;
  return p;
}

SqrtMoments branching_sqrt_moments(const BranchingModel& m, std::uint64_t w, std::uint64_t n_samples,
                                   std::uint64_t seed, unsigned workers) {
  if (w < 1) throw std::invalid_argument("w must be >= 1");
  if (n_samples < 100) throw std::invalid_argument("insufficient samples for a standard error");
  struct Acc {
    long double y = 0, y2 = 0, q = 0, q2 = 0;  // raw increments and squares
    long double a = 0, a2 = 0, b = 0, b2 = 0;  // control-variate residuals
    double excess = -std::numeric_limits<double>::infinity();
  };
  const double sw = std::sqrt(double(w));
  auto blocks = run_blocks<Acc>(n_samples, 4096, workers, [&](std::uint64_t, std::uint64_t i0, std::uint64_t i1) {
    Acc acc;
    for (std::uint64_t i = i0; i < i1; ++i) {
      Rng rng(trajectory_seed(seed, 4, i));
      const auto s = static_cast<std::int64_t>(sample_offspring_sum(m, w, rng));
      const std::int64_t raw = s + sample_migration(m, rng) - static_cast<std::int64_t>(w);
      const std::int64_t delta = std::max<std::int64_t>(raw, -static_cast<std::int64_t>(w));
      const double y = std::sqrt(double(std::int64_t(w) + delta)) - sw;
      const double q = y * y;
      // control variates use the untruncated increment, whose mean is exact
      const double a = y - double(raw) / (2.0 * sw);
      const double b = q - double(raw) * double(raw) / (4.0 * double(w));
      acc.y += y;
      acc.y2 += (long double)y * y;
      acc.q += q;
      acc.q2 += (long double)q * q;
      acc.a += a;
      acc.a2 += (long double)a * a;
      acc.b += b;
      acc.b2 += (long double)b * b;
      acc.excess = std::max(acc.excess, std::fabs(y) - std::fabs(double(delta)) / sw);
    }
    return acc;
  });
  Acc t;
  for (const auto& b : blocks) {
    t.y += b.y;
    t.y2 += b.y2;
    t.q += b.q;
    t.q2 += b.q2;
    t.a += b.a;
    t.a2 += b.a2;
    t.b += b.b;
    t.b2 += b.b2;
    t.excess = std::max(t.excess, b.excess);
  }
  const double n = double(n_samples);
  auto ms = [n](long double s, long double s2) {
    const double mean = static_cast<double>(s / n);
    const double var = std::max(0.0, static_cast<double>(s2 / n) - mean * mean);
    return std::make_pair(mean, std::sqrt(var / n));
  };
  SqrtMoments r;
  r.x = sw;
  std::tie(r.mu1_raw, r.mu1_raw_se) = ms(t.y, t.y2);
  std::tie(r.mu2_raw, r.mu2_raw_se) = ms(t.q, t.q2);
  auto [a, a_se] = ms(t.a, t.a2);
  auto [b, b_se] = ms(t.b, t.b2);
  const double wd = double(w);
  r.mu1 = a + m.theta / (2.0 * sw);
  r.mu1_se = a_se;
  r.mu2 = b + (wd * m.sigma2 + m.migration_m2) / (4.0 * wd);
  r.mu2_se = b_se;
  r.scaled_mu1 = 8.0 * sw * r.mu1;
  r.target_mu1 = 4.0 * m.theta - m.sigma2;
  r.scaled_mu2 = 4.0 * r.mu2;
  r.target_mu2 = m.sigma2;
  r.max_bound_excess = t.excess;
  return r;
}

ExtinctionResult branching_extinction_experiment(const BranchingModel& m, double beta,
                                                 const ExtinctionOptions& opt, std::uint64_t seed) {
  if (std::fabs(offspring_mean(m) - 1.0) > 1e-12) throw std::invalid_argument("offspring mean must be 1");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (opt.w0 < 1 || opt.w0 >= opt.escape_w) throw std::invalid_argument("need 1 <= w0 < escape_w");
  if (opt.n_traj < 1000) throw std::invalid_argument("n_traj must be >= 1000");
  struct Acc {
    std::map<std::uint64_t, std::uint64_t> tau;
    std::uint64_t extinct = 0, escaped = 0, censored = 0;
    double s = 0, s2 = 0;
  };
  auto blocks = run_blocks<Acc>(opt.n_traj, 1024, opt.workers, [&](std::uint64_t, std::uint64_t i0, std::uint64_t i1) {
    Acc acc;
    for (std::uint64_t i = i0; i < i1; ++i) {
      Rng rng(trajectory_seed(seed, 5, i));
      std::uint64_t w = opt.w0;
      bool done = false;
      for (std::uint64_t n = 1; n <= opt.n_cap; ++n) {
        w = branching_step(m, w, rng);
        if (w == 0) {
          ++acc.tau[n];
          ++acc.extinct;
          const double t = std::pow(double(n), beta);
          acc.s += t;
          acc.s2 += t * t;
          done = true;
          break;
        }
        if (w >= opt.escape_w) {
          ++acc.escaped;
          done = true;
          break;
        }
      }
      if (!done) ++acc.censored;
    }
    return acc;
  });
  ExtinctionResult res;
  std::map<std::uint64_t, std::uint64_t> hist;
  double s = 0, s2 = 0;
  for (const auto& b : blocks) {
    for (auto [k, v] : b.tau) hist[k] += v;
    res.extinct += b.extinct;
    res.escaped += b.escaped;
    res.censored += b.censored;
    s += b.s;
    s2 += b.s2;
  }
  auto& c = res.cls;
  c.n_traj = opt.n_traj;
  c.returns = res.extinct;
  c.escaped = res.escaped;
  c.censored = res.censored;
  c.censor_rate = double(res.censored) / double(opt.n_traj);
  if (res.extinct < 100) throw std::runtime_error("insufficient extinctions");
  const std::uint64_t horizon = std::min<std::uint64_t>(opt.n_cap / 10, opt.escape_w / 9);
  const auto win = tail_window(hist, horizon, opt.survivor_floor);
  if (!win) throw std::runtime_error("no usable tail window");
  c.window_lo = win->first;
  c.window_hi = win->second;
  const auto sat = saturation_test(hist, beta, win->first, win->second);
  const double neff = double(opt.n_traj - res.censored);
  const double mean = s / neff;
  const double se = std::sqrt(std::max(0.0, s2 / neff - mean * mean) / neff);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  c.rows.push_back({beta, mean, nan, nan, se, nan, nan, sat.slope, sat.saturates, true});
  c.label = m.offspring == OffspringKind::ShiftedGeometric ? "ESTABLISHED" : "CONJECTURED";
  res.predicted_lhs = 2.0 * m.theta;
  res.predicted_rhs = (beta + 1.0) * m.sigma2;
  res.predicted_saturates = res.predicted_lhs > res.predicted_rhs;
  res.agrees = res.predicted_saturates == sat.saturates;
  return res;
}

}  // namespace lamperti
